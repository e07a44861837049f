//! `preprocess run`: fuse stations, compute fractions and the body mask,
//! and compose the network input of every subject.

use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use liverfat_core::rvf;
use liverfat_core::study::prepare_subject;
use liverfat_core::volume::StationStack;
use rayon::prelude::*;

use crate::config::Settings;
use crate::files::{self, Manifest};

/// Stations `<prefix>_0.rvf, <prefix>_1.rvf, ...` of one subject.
fn read_stations(dir: &Path, prefix: &str) -> Result<StationStack> {
    let names = files::list_dir(dir, |p| {
        p.file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with(&format!("{prefix}_")) && n.ends_with(".rvf"))
    })?;
    if names.is_empty() {
        bail!("no {prefix} stations in {}", dir.display());
    }
    let stations = (0..names.len())
        .map(|s| {
            let path = dir.join(format!("{prefix}_{s}.rvf"));
            let mut vols = rvf::read_volumes(&path).with_context(|| format!("reading {}", path.display()))?;
            vols.pop().ok_or_else(|| anyhow!("{} has no channels", path.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StationStack::new(stations)?)
}

/// Subject ids present under `cohort/subjects`.
pub fn cohort_subjects(cohort: &Path) -> Result<Vec<String>> {
    let ids = files::list_dir(&cohort.join("subjects"), Path::is_dir)?;
    if ids.is_empty() {
        bail!("no subjects under {}", cohort.join("subjects").display());
    }
    Ok(ids)
}

fn process(settings: &Settings, id: &str) -> Result<Vec<String>> {
    let dir = files::subject_dir(&settings.cohort_dir, id);
    let water = read_stations(&dir, "water")?;
    let fat = read_stations(&dir, "fat")?;
    let p = prepare_subject(id, &water, &fat, &settings.study.layout)?;
    let g = &p.geometry;
    let sidecar = format!(
        "key,value\ncoronal_y,{}\nsagittal_x,{}\nkept_rows,{}\ncoronal_x0,{}\ncoronal_x1,{}\n\
         sagittal_y0,{}\nsagittal_y1,{}\nwidth,{}\nheight,{}\n",
        g.selection.coronal_y,
        g.selection.sagittal_x,
        g.kept_rows,
        g.coronal_bounds.0,
        g.coronal_bounds.1,
        g.sagittal_bounds.0,
        g.sagittal_bounds.1,
        p.image.width,
        p.image.height
    );
    let body = rvf::mask_channel(&p.atlas.body_mask);
    let fractions = rvf::encode(
        p.atlas.fat_frac.grid(),
        &[p.atlas.water_frac.data(), p.atlas.fat_frac.data(), &body],
    )?;
    let work = &settings.work_dir;
    Ok(vec![
        files::put(work, &format!("inputs/{id}.pgm"), p.image.to_pgm())?,
        files::put(work, &format!("inputs/{id}.csv"), sidecar)?,
        files::put(work, &format!("fractions/{id}.rvf"), fractions)?,
    ])
}

pub fn run(settings: &Settings) -> Result<()> {
    let ids = cohort_subjects(&settings.cohort_dir)?;
    let results: Vec<(String, f64, Result<Vec<String>>)> = ids
        .par_iter()
        .map(|id| {
            let start = Instant::now();
            let out = process(settings, id);
            (id.clone(), start.elapsed().as_secs_f64(), out)
        })
        .collect();

    let mut manifest = Manifest::new(&settings.work_dir);
    let mut failures = Vec::new();
    let mut total = 0.0;
    for (id, secs, out) in results {
        total += secs;
        match out {
            Ok(written) => {
                eprintln!("{id}: {secs:.2} s");
                written.into_iter().for_each(|rel| manifest.record(rel));
            }
            Err(e) => {
                eprintln!("{id}: FAILED: {e:#}");
                failures.push(id);
            }
        }
    }
    manifest.write("manifest_preprocess.sha256")?;
    let done = ids.len() - failures.len();
    println!(
        "preprocessed {done} of {} subjects into {} (mean {:.2} s per subject)",
        ids.len(),
        settings.work_dir.display(),
        total / ids.len() as f64
    );
    if !failures.is_empty() {
        bail!("preprocessing failed for {} subject(s): {}", failures.len(), failures.join(", "));
    }
    Ok(())
}
