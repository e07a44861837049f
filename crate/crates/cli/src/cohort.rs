//! `cohort generate`: phantom stations, templates, truth and the A/B/C split.

use std::collections::BTreeMap;

use anyhow::{Context, Result};
use liverfat_core::phantom::generate_phantom;
use liverfat_core::rvf;
use liverfat_core::study::{prepare_subject, reference_value, template_cohort, template_from_phantom, template_id};
use liverfat_core::volume::StationStack;
use rayon::prelude::*;

use crate::config::Settings;
use crate::files::{self, Manifest, SPLITS_CSV, TRUTH_CSV};

/// Per-station RVF files named `<prefix>_<station>.rvf`.
fn station_files(dir: &str, prefix: &str, stack: &StationStack) -> Result<Vec<(String, Vec<u8>)>> {
    stack
        .stations()
        .iter()
        .enumerate()
        .map(|(s, v)| Ok((format!("{dir}/{prefix}_{s}.rvf"), rvf::encode(v.grid(), &[v.data()])?)))
        .collect()
}

pub fn generate(settings: &Settings) -> Result<()> {
    let study = &settings.study;
    let root = &settings.cohort_dir;
    let mut manifest = Manifest::new(root);
    manifest.put("config.txt", settings.to_text())?;

    let specs = study.cohort.subject_specs()?;
    let rows = specs
        .par_iter()
        .map(|(id, spec)| -> Result<(String, [f64; 2], Vec<String>)> {
            let phantom = generate_phantom(spec).with_context(|| format!("generating {id}"))?;
            let prepared = prepare_subject(id.as_str(), &phantom.water, &phantom.fat, &study.layout)?;
            let reference =
                reference_value(&prepared, &phantom, spec, &study.roi).with_context(|| format!("reference ROIs of {id}"))?;
            let dir = format!("subjects/{id}");
            let mut written = Vec::new();
            for (rel, bytes) in station_files(&dir, "water", &phantom.water)?
                .into_iter()
                .chain(station_files(&dir, "fat", &phantom.fat)?)
            {
                written.push(files::put(root, &rel, bytes)?);
            }
            Ok((id.clone(), [100.0 * spec.liver_ff, 100.0 * reference], written))
        })
        .collect::<Result<Vec<_>>>()?;

    let template_specs = template_cohort(&study.cohort, study.n_templates).subject_specs()?;
    let templates = template_specs
        .par_iter()
        .enumerate()
        .map(|(i, (_, spec))| -> Result<String> {
            let t = template_from_phantom(template_id(i), &generate_phantom(spec)?)?;
            let liver = rvf::mask_channel(&t.liver_seg);
            let bytes = rvf::encode(t.channels[0].grid(), &[t.channels[0].data(), t.channels[1].data(), &liver])?;
            files::put(root, &format!("templates/{}.rvf", t.id), bytes)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut truth = String::from("subject_id,liver_ff,reference_roi_ff\n");
    let mut drawn = BTreeMap::new();
    for (id, [liver, reference], written) in rows {
        truth.push_str(&format!("{id},{liver},{reference}\n"));
        drawn.insert(id, liver);
        written.into_iter().for_each(|rel| manifest.record(rel));
    }
    templates.into_iter().for_each(|rel| manifest.record(rel));
    manifest.put(TRUTH_CSV, truth)?;

    let ids: Vec<String> = drawn.keys().cloned().collect();
    let split = study.split(&ids)?;
    manifest.put(SPLITS_CSV, files::splits_csv(&ids, &split))?;
    manifest.write("manifest.sha256")?;

    let mut ffs: Vec<f64> = drawn.into_values().collect();
    ffs.sort_by(f64::total_cmp);
    println!(
        "generated {} subjects and {} templates in {}; liver FF {:.2} to {:.2} points, A={} B={} C={}",
        ids.len(),
        study.n_templates,
        root.display(),
        ffs[0],
        ffs[ffs.len() - 1],
        split.a.len(),
        split.b.len(),
        split.c.len()
    );
    Ok(())
}
