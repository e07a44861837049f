//! `report compare`: the three-way method comparison on A, B and C.

use std::collections::BTreeMap;

use anyhow::{Context, Result};
use liverfat_core::stats::{bland_altman_data, bland_altman_svg, metrics_csv, top_outliers, MetricsReport, PairedMeasurements, NAFLD_THRESHOLD};

use crate::atlas::corrected_values;
use crate::config::Settings;
use crate::files::{self, Manifest, CV_PREDICTIONS_CSV, PREDICTIONS_CSV, TRUTH_CSV};
use crate::net::read_predictions;

/// One comparison row: label, file slug, method names, subjects, values.
struct Row<'a> {
    label: &'static str,
    slug: &'static str,
    names: [&'static str; 2],
    ids: &'a [String],
    a: &'a BTreeMap<String, f64>,
    b: &'a BTreeMap<String, f64>,
}

/// Pairs for `ids` with values in both maps, in id order.
pub fn pair(ids: &[String], a: &BTreeMap<String, f64>, b: &BTreeMap<String, f64>) -> Result<(PairedMeasurements, usize)> {
    let (mut kept, mut va, mut vb) = (Vec::new(), Vec::new(), Vec::new());
    for id in ids {
        if let (Some(&x), Some(&y)) = (a.get(id), b.get(id)) {
            kept.push(id.clone());
            va.push(x);
            vb.push(y);
        }
    }
    let skipped = ids.len() - kept.len();
    Ok((PairedMeasurements::new(kept, va, vb)?, skipped))
}

pub fn compare(settings: &Settings) -> Result<()> {
    let (cohort, work) = (&settings.cohort_dir, &settings.work_dir);
    let split = files::read_splits(cohort)?;
    let reference = files::read_column(&cohort.join(TRUTH_CSV), "reference_roi_ff")?;
    let atlas = corrected_values(work)?;
    let cv = read_predictions(&work.join(CV_PREDICTIONS_CSV))?;
    let inferred = read_predictions(&work.join(PREDICTIONS_CSV))?;

    let rows = [
        Row {
            label: "Reference vs Network (A)",
            slug: "reference_network_a",
            names: ["Reference", "Network"],
            ids: &split.a,
            a: &reference,
            b: &cv,
        },
        Row {
            label: "Reference vs Atlas (A)",
            slug: "reference_atlas_a",
            names: ["Reference", "Atlas"],
            ids: &split.a,
            a: &reference,
            b: &atlas,
        },
        Row {
            label: "Atlas vs Network (B)",
            slug: "atlas_network_b",
            names: ["Atlas", "Network"],
            ids: &split.b,
            a: &atlas,
            b: &inferred,
        },
        Row {
            label: "Atlas vs Network (C)",
            slug: "atlas_network_c",
            names: ["Atlas", "Network"],
            ids: &split.c,
            a: &atlas,
            b: &inferred,
        },
    ];

    let mut manifest = Manifest::new(&settings.report_dir);
    let mut reports = Vec::new();
    let mut outliers = String::from("comparison,rank,subject_id,abs_difference\n");
    for row in &rows {
        let (p, skipped) = pair(row.ids, row.a, row.b).with_context(|| format!("pairing {}", row.label))?;
        if skipped > 0 {
            eprintln!("{}: {skipped} subject(s) without both values", row.label);
        }
        let report = MetricsReport::compute(row.label, &p, NAFLD_THRESHOLD)?;
        println!("{}", report.display_row());
        let svg = bland_altman_svg(&bland_altman_data(&p), row.label, row.names[0], row.names[1]);
        manifest.put(&format!("bland_altman_{}.svg", row.slug), svg)?;
        for (rank, (id, d)) in top_outliers(&p, 5).into_iter().enumerate() {
            outliers.push_str(&format!("{},{},{id},{d}\n", row.label, rank + 1));
        }
        reports.push(report);
    }
    manifest.put("metrics.csv", metrics_csv(&reports))?;
    let table: String = reports.iter().map(|r| r.display_row() + "\n").collect();
    manifest.put("metrics.txt", table)?;
    manifest.put("outliers.csv", outliers)?;
    manifest.write("manifest.sha256")?;
    Ok(())
}
