//! `atlas run` and `atlas calibrate`.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use liverfat_core::atlas::{atlas_measure, fit_calibration, AtlasSubject, CalibrationModel, Template};
use liverfat_core::rvf;
use liverfat_core::volume::{BinaryMask, Volume3};
use rayon::prelude::*;

use crate::config::{Entries, Settings};
use crate::files::{self, Manifest, Table, ATLAS_CSV, CALIBRATION_TXT, TRUTH_CSV};

fn three_channels(path: &Path) -> Result<[Volume3; 3]> {
    let vols = rvf::read_volumes(path).with_context(|| format!("reading {}", path.display()))?;
    <[Volume3; 3]>::try_from(vols).map_err(|v| anyhow!("{}: expected 3 channels, found {}", path.display(), v.len()))
}

pub fn load_templates(cohort: &Path) -> Result<Vec<Template>> {
    let dir = cohort.join("templates");
    let names = if dir.is_dir() {
        files::list_dir(&dir, |p| p.extension().is_some_and(|e| e == "rvf"))?
    } else {
        Vec::new()
    };
    if names.is_empty() {
        bail!("no templates in {}", dir.display());
    }
    names
        .iter()
        .map(|name| {
            let [water, fat, liver] = three_channels(&dir.join(name))?;
            let liver_seg = BinaryMask::from_volume(&liver);
            if liver_seg.is_empty() {
                bail!("template {name} has an empty liver label");
            }
            Ok(Template {
                id: name.trim_end_matches(".rvf").to_string(),
                channels: [water, fat],
                liver_seg,
            })
        })
        .collect()
}

fn load_subject(work: &Path, id: &str) -> Result<AtlasSubject> {
    let [water, fat, body] = three_channels(&files::fractions_rvf(work, id))?;
    Ok(AtlasSubject::from_fractions(water, fat, BinaryMask::from_volume(&body))?)
}

pub fn read_calibration(path: &Path) -> Result<CalibrationModel> {
    let mut e = Entries::parse(&files::read_text(path)?).with_context(|| format!("parsing {}", path.display()))?;
    let model = CalibrationModel {
        slope: e.require("slope")?,
        intercept: e.require("intercept")?,
    };
    e.finish()?;
    Ok(model)
}

pub fn calibration_text(model: &CalibrationModel) -> String {
    format!("slope = {}\nintercept = {}\n", model.slope, model.intercept)
}

pub fn run(settings: &Settings, calibration: Option<&Path>) -> Result<()> {
    let work = &settings.work_dir;
    let templates = load_templates(&settings.cohort_dir)?;
    let model = match calibration {
        Some(p) => read_calibration(p)?,
        None => CalibrationModel::IDENTITY,
    };
    let ids = files::list_dir(&work.join("fractions"), |p| p.extension().is_some_and(|e| e == "rvf"))
        .with_context(|| "atlas run needs preprocessed subjects")?
        .into_iter()
        .map(|n| n.trim_end_matches(".rvf").to_string())
        .collect::<Vec<_>>();
    if ids.is_empty() {
        bail!("no preprocessed subjects in {}", work.join("fractions").display());
    }
    let cfg = &settings.study.atlas;
    let results: Vec<(String, Result<_>)> = ids
        .par_iter()
        .map(|id| {
            let m = load_subject(work, id).and_then(|s| Ok(atlas_measure(&s, &templates, cfg)?));
            (id.clone(), m)
        })
        .collect();

    let mut csv = String::from("subject_id,raw_ff,corrected_ff,surviving_voxels\n");
    let mut failures = Vec::new();
    for (id, m) in results {
        match m {
            Ok(m) => {
                let raw = m.raw_ff_points();
                csv.push_str(&format!("{id},{raw},{},{}\n", model.apply(raw), m.surviving_voxels));
            }
            Err(e) => {
                eprintln!("{id}: FAILED: {e:#}");
                failures.push(id);
            }
        }
    }
    let mut manifest = Manifest::new(work);
    manifest.put(ATLAS_CSV, csv)?;
    manifest.write("manifest_atlas.sha256")?;
    println!(
        "atlas readout for {} of {} subjects with {} templates",
        ids.len() - failures.len(),
        ids.len(),
        templates.len()
    );
    if !failures.is_empty() {
        bail!("atlas measurement failed for {} subject(s): {}", failures.len(), failures.join(", "));
    }
    Ok(())
}

fn mean_abs(pairs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = pairs.fold((0.0, 0usize), |(s, n), v| (s + v.abs(), n + 1));
    sum / n as f64
}

/// Fit the linear correction on dataset A against the reference values and
/// apply it to every atlas readout.
pub fn calibrate(settings: &Settings) -> Result<()> {
    let work = &settings.work_dir;
    let raw = files::read_column(&work.join(ATLAS_CSV), "raw_ff")?;
    let reference = files::read_column(&settings.cohort_dir.join(TRUTH_CSV), "reference_roi_ff")?;
    let split = files::read_splits(&settings.cohort_dir)?;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for id in &split.a {
        if let (Some(&r), Some(&f)) = (raw.get(id), reference.get(id)) {
            x.push(r);
            y.push(f);
        }
    }
    let model = fit_calibration(&x, &y).context("fitting the calibration on dataset A")?;
    let before = mean_abs(x.iter().zip(&y).map(|(r, f)| r - f));
    let after = mean_abs(x.iter().zip(&y).map(|(r, f)| model.apply(*r) - f));

    let corrected: BTreeMap<&String, f64> = raw.iter().map(|(id, &r)| (id, model.apply(r))).collect();
    let mut csv = String::from("subject_id,raw_ff,corrected_ff\n");
    for (id, c) in &corrected {
        csv.push_str(&format!("{id},{},{c}\n", raw[*id]));
    }
    let mut manifest = Manifest::new(work);
    manifest.put(CALIBRATION_TXT, calibration_text(&model))?;
    manifest.put("atlas_calibrated.csv", csv)?;
    manifest.write("manifest_calibration.sha256")?;
    println!(
        "calibration on {} subjects of A: slope {:.4}, intercept {:.4}; MAE vs reference {before:.3} -> {after:.3}",
        x.len(),
        model.slope,
        model.intercept
    );
    Ok(())
}

/// Calibrated atlas values from `atlas.csv` and `calibration.txt`.
pub fn corrected_values(work: &Path) -> Result<BTreeMap<String, f64>> {
    let model = read_calibration(&work.join(CALIBRATION_TXT))?;
    let raw = Table::read(&work.join(ATLAS_CSV))?.column("raw_ff")?;
    Ok(raw.into_iter().map(|(id, r)| (id, model.apply(r))).collect())
}
