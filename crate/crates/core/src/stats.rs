//! Agreement and screening statistics between two measurement methods.
//!
//! Values are in fat fraction points. Differences are always `a - b`, and the
//! first method (`a`) serves as ground truth for R² and screening.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// NAFLD screening threshold, FF points.
pub const NAFLD_THRESHOLD: f64 = 5.5;

/// z-value of the 95% limits of agreement.
pub const LOA_Z: f64 = 1.96;

/// Paired per-subject values of two methods.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedMeasurements {
    pub ids: Vec<String>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl PairedMeasurements {
    pub fn new(ids: Vec<String>, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if ids.len() != a.len() || a.len() != b.len() {
            return Err(Error::Shape(format!(
                "paired series lengths differ: {} ids, {} a, {} b",
                ids.len(),
                a.len(),
                b.len()
            )));
        }
        if a.len() < 2 {
            return Err(Error::InvalidParameter("need at least two pairs".into()));
        }
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("paired values must be finite".into()));
        }
        Ok(PairedMeasurements { ids, a, b })
    }

    /// Pairs with generated ids `0..n`.
    pub fn unnamed(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let ids = (0..a.len()).map(|i| i.to_string()).collect();
        PairedMeasurements::new(ids, a, b)
    }

    /// Join two id-keyed series on their common ids, in the order of `a`.
    pub fn join(a: &[(String, f64)], b: &[(String, f64)]) -> Result<Self> {
        let lookup: std::collections::HashMap<&str, f64> =
            b.iter().map(|(id, v)| (id.as_str(), *v)).collect();
        let (mut ids, mut va, mut vb) = (Vec::new(), Vec::new(), Vec::new());
        for (id, v) in a {
            if let Some(&w) = lookup.get(id.as_str()) {
                ids.push(id.clone());
                va.push(*v);
                vb.push(w);
            }
        }
        PairedMeasurements::new(ids, va, vb)
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn differences(&self) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(a, b)| a - b).collect()
    }

    /// Swap the roles of the two methods.
    pub fn swapped(&self) -> Self {
        PairedMeasurements {
            ids: self.ids.clone(),
            a: self.b.clone(),
            b: self.a.clone(),
        }
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn mae(p: &PairedMeasurements) -> f64 {
    mean(&p.a.iter().zip(&p.b).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>())
}

/// Coefficient of determination of `b` as a prediction of `a`.
///
/// Returns NaN when `a` is constant.
pub fn r2(p: &PairedMeasurements) -> f64 {
    let ma = mean(&p.a);
    let ss_res: f64 = p.a.iter().zip(&p.b).map(|(a, b)| (a - b).powi(2)).sum();
    let ss_tot: f64 = p.a.iter().map(|a| (a - ma).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

/// Returns NaN when either series is constant.
pub fn pearson_r(p: &PairedMeasurements) -> f64 {
    let (ma, mb) = (mean(&p.a), mean(&p.b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in p.a.iter().zip(&p.b) {
        let (da, db) = (a - ma, b - mb);
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    sab / (saa * sbb).sqrt()
}

/// 95% limits of agreement `(low, high)` of `a - b`.
pub fn loa(p: &PairedMeasurements) -> (f64, f64) {
    let d = p.differences();
    let m = mean(&d);
    let var = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
    let sd = var.sqrt();
    (m - LOA_Z * sd, m + LOA_Z * sd)
}

/// ROC area under the curve: probability that a random positive outscores a
/// random negative, ties counted one half.
///
/// Returns NaN if either class is empty.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape("scores and labels differ in length".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    // Midranks (1-based) over tie groups.
    let mut rank_sum_pos = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let midrank = (start + end + 1) as f64 / 2.0;
        let pos = order[start..end].iter().filter(|&&i| labels[i]).count();
        rank_sum_pos += midrank * pos as f64;
        start = end;
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as f64;
    let n_neg = labels.len() as f64 - n_pos;
    Ok((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

/// Sensitivity and specificity of `b > threshold` against `a > threshold`.
///
/// A rate is NaN when its denominator class is empty.
pub fn screen_at_threshold(p: &PairedMeasurements, threshold: f64) -> (f64, f64) {
    let (mut tp, mut fn_, mut tn, mut fp) = (0u64, 0u64, 0u64, 0u64);
    for (&a, &b) in p.a.iter().zip(&p.b) {
        match (a > threshold, b > threshold) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, false) => tn += 1,
            (false, true) => fp += 1,
        }
    }
    (
        tp as f64 / (tp + fn_) as f64,
        tn as f64 / (tn + fp) as f64,
    )
}

/// Bland–Altman scatter: per-subject `(mean, difference)` plus agreement lines.
#[derive(Debug, Clone, PartialEq)]
pub struct BlandAltman {
    pub points: Vec<(f64, f64)>,
    pub mean_difference: f64,
    pub loa: (f64, f64),
}

pub fn bland_altman_data(p: &PairedMeasurements) -> BlandAltman {
    let points = p
        .a
        .iter()
        .zip(&p.b)
        .map(|(a, b)| (0.5 * (a + b), a - b))
        .collect();
    BlandAltman {
        points,
        mean_difference: mean(&p.differences()),
        loa: loa(p),
    }
}

/// Up to `k` subjects ranked by `|a - b|` descending, ties by id.
pub fn top_outliers(p: &PairedMeasurements, k: usize) -> Vec<(String, f64)> {
    let mut ranked: Vec<(String, f64)> = p
        .ids
        .iter()
        .zip(p.differences())
        .map(|(id, d)| (id.clone(), d.abs()))
        .collect();
    ranked.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
    ranked.truncate(k);
    ranked
}

/// One row of a method comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub label: String,
    pub n: usize,
    pub mae: f64,
    pub r2: f64,
    pub pearson_r: f64,
    pub loa_low: f64,
    pub loa_high: f64,
    pub roc_auc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub threshold: f64,
}

impl MetricsReport {
    /// Compare `b` against `a` taken as ground truth. The AUC scores `b`
    /// against the labels `a > threshold`.
    pub fn compute(label: impl Into<String>, p: &PairedMeasurements, threshold: f64) -> Result<Self> {
        let labels: Vec<bool> = p.a.iter().map(|&a| a > threshold).collect();
        let (loa_low, loa_high) = loa(p);
        let (sensitivity, specificity) = screen_at_threshold(p, threshold);
        Ok(MetricsReport {
            label: label.into(),
            n: p.len(),
            mae: mae(p),
            r2: r2(p),
            pearson_r: pearson_r(p),
            loa_low,
            loa_high,
            roc_auc: roc_auc(&p.b, &labels)?,
            sensitivity,
            specificity,
            threshold,
        })
    }

    pub fn loa_width(&self) -> f64 {
        self.loa_high - self.loa_low
    }

    pub const CSV_HEADER: &'static str =
        "comparison,n,mae,r2,loa_low,loa_high,roc_auc,sensitivity,specificity,pearson_r,threshold";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.label,
            self.n,
            self.mae,
            self.r2,
            self.loa_low,
            self.loa_high,
            self.roc_auc,
            self.sensitivity,
            self.specificity,
            self.pearson_r,
            self.threshold
        )
    }

    /// Human-readable row, rates as percentages.
    pub fn display_row(&self) -> String {
        format!(
            "{:<24} n={:<5} MAE {:.2}  R2 {:.3}  LoA {:.2} to {:.2}  AUC {:.3}  Sens {:.1}%  Spec {:.1}%",
            self.label,
            self.n,
            self.mae,
            self.r2,
            self.loa_low,
            self.loa_high,
            self.roc_auc,
            100.0 * self.sensitivity,
            100.0 * self.specificity
        )
    }
}

/// Metrics table as CSV, columns in comparison-table order.
pub fn metrics_csv(rows: &[MetricsReport]) -> String {
    let mut out = String::from(MetricsReport::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Parse a `subject_id,method_a,method_b` CSV with a header line.
pub fn parse_paired_csv(text: &str) -> Result<PairedMeasurements> {
    let (mut ids, mut a, mut b) = (Vec::new(), Vec::new(), Vec::new());
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(Error::Format(format!("line {}: expected 3 fields", n + 1)));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|_| Error::Format(format!("line {}: bad number {s:?}", n + 1)))
        };
        ids.push(f[0].to_string());
        a.push(num(f[1])?);
        b.push(num(f[2])?);
    }
    PairedMeasurements::new(ids, a, b)
}

fn svg_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Bland–Altman scatter with a solid mean line and dashed agreement limits.
pub fn bland_altman_svg(data: &BlandAltman, title: &str, a_name: &str, b_name: &str) -> String {
    let (w, h, m) = (640.0, 420.0, 60.0);
    let xs = data.points.iter().map(|p| p.0);
    let ys = data
        .points
        .iter()
        .map(|p| p.1)
        .chain([data.loa.0, data.loa.1, data.mean_difference]);
    let range = |it: &mut dyn Iterator<Item = f64>| {
        let (lo, hi) = it.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
        let pad = ((hi - lo) * 0.08).max(0.5);
        (lo - pad, hi + pad)
    };
    let (x0, x1) = range(&mut xs.into_iter());
    let (y0, y1) = range(&mut ys.into_iter());
    let px = |x: f64| m + (x - x0) / (x1 - x0) * (w - 2.0 * m);
    let py = |y: f64| h - m - (y - y0) / (y1 - y0) * (h - 2.0 * m);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        w / 2.0,
        svg_escape(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{m}" y="{m}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        w - 2.0 * m,
        h - 2.0 * m
    );
    for &(x, y) in &data.points {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="steelblue" fill-opacity="0.7"/>"#,
            px(x),
            py(y)
        );
    }
    let hline = |s: &mut String, y: f64, dash: bool, label: String| {
        let dash = if dash { r#" stroke-dasharray="6,4""# } else { "" };
        let _ = writeln!(
            s,
            r#"<line x1="{m}" x2="{}" y1="{:.2}" y2="{:.2}" stroke="black"{dash}/>"#,
            w - m,
            py(y),
            py(y)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" font-family="sans-serif" font-size="11">{label}</text>"#,
            w - m + 4.0,
            py(y) + 4.0
        );
    };
    hline(&mut s, data.mean_difference, false, format!("{:.2}", data.mean_difference));
    hline(&mut s, data.loa.0, true, format!("{:.2}", data.loa.0));
    hline(&mut s, data.loa.1, true, format!("{:.2}", data.loa.1));
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">Mean of {} and {} (FF)</text>"#,
        w / 2.0,
        h - 20.0,
        svg_escape(a_name),
        svg_escape(b_name)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">{} - {} (FF)</text>"#,
        h / 2.0,
        h / 2.0,
        svg_escape(a_name),
        svg_escape(b_name)
    );
    s.push_str("</svg>\n");
    s
}
