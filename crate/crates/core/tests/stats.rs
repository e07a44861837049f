mod common;

use common::*;
use liverfat_core::stats::*;
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

#[test]
fn metrics_match_oracles_on_random_series() {
    let mut r = rng(1);
    for case in 0..40 {
        let (a, b) = random_series(&mut r, 1000);
        let p = PairedMeasurements::unnamed(a.clone(), b.clone()).unwrap();
        assert!(close(mae(&p), mae_oracle(&a, &b), 1e-10), "case {case}");
        assert!(close(r2(&p), r2_oracle(&a, &b), 1e-10));
        assert!(close(pearson_r(&p), pearson_oracle(&a, &b), 1e-10));
        let (lo, hi) = loa(&p);
        let (olo, ohi) = loa_oracle(&a, &b);
        assert!(close(lo, olo, 1e-10) && close(hi, ohi, 1e-10));
        let labels: Vec<bool> = a.iter().map(|&v| v > NAFLD_THRESHOLD).collect();
        assert!((roc_auc(&b, &labels).unwrap() - auc_oracle(&b, &labels)).abs() <= 1e-12);
        let (se, sp) = screen_at_threshold(&p, NAFLD_THRESHOLD);
        let (ose, osp) = screen_oracle(&a, &b, NAFLD_THRESHOLD);
        assert!((se - ose).abs() <= 1e-12 && (sp - osp).abs() <= 1e-12);
    }
}

#[test]
fn bland_altman_consistent_with_loa() {
    let mut r = rng(2);
    let (a, b) = random_series(&mut r, 300);
    let p = PairedMeasurements::unnamed(a.clone(), b.clone()).unwrap();
    let ba = bland_altman_data(&p);
    assert_eq!(ba.points.len(), a.len());
    assert_eq!(ba.loa, loa(&p));
    for ((m, d), (x, y)) in ba.points.iter().zip(a.iter().zip(&b)) {
        assert_eq!(*m, 0.5 * (x + y));
        assert_eq!(*d, x - y);
    }
}

#[test]
fn outliers_match_full_sort() {
    let mut r = rng(3);
    let (a, b) = random_series(&mut r, 200);
    let ids: Vec<String> = (0..a.len()).map(|i| format!("s{i:04}")).collect();
    let p = PairedMeasurements::new(ids.clone(), a.clone(), b.clone()).unwrap();
    let mut all: Vec<(String, f64)> = ids.iter().cloned().zip(a.iter().zip(&b).map(|(x, y)| (x - y).abs())).collect();
    all.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    let top = top_outliers(&p, 10);
    assert_eq!(top.len(), 10);
    for (got, want) in top.iter().zip(&all) {
        assert_eq!(got.0, want.0);
    }
}

#[test]
fn report_matches_direct_calls() {
    let mut r = rng(4);
    let (a, b) = random_series(&mut r, 100);
    let p = PairedMeasurements::unnamed(a, b).unwrap();
    let rep = MetricsReport::compute("x", &p, NAFLD_THRESHOLD).unwrap();
    assert_eq!(rep.mae, mae(&p));
    assert_eq!(rep.r2, r2(&p));
    assert_eq!((rep.loa_low, rep.loa_high), loa(&p));
    assert_eq!((rep.sensitivity, rep.specificity), screen_at_threshold(&p, NAFLD_THRESHOLD));
    let csv = metrics_csv(&[rep.clone(), rep]);
    assert_eq!(csv.lines().count(), 3);
}

fn series() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3usize..60).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0f64..30.0, n),
            prop::collection::vec(0.0f64..30.0, n),
        )
    })
}

proptest! {
    #[test]
    fn auc_complement(scores in prop::collection::vec(-5.0f64..5.0, 4..80), seed in any::<u64>()) {
        use rand::Rng;
        let mut r = rng(seed);
        let labels: Vec<bool> = scores.iter().map(|_| r.random_bool(0.5)).collect();
        prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
        let neg: Vec<f64> = scores.iter().map(|v| -v).collect();
        let s = roc_auc(&scores, &labels).unwrap() + roc_auc(&neg, &labels).unwrap();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn agreement_invariants((a, b) in series(), c in -5.0f64..5.0, seed in any::<u64>()) {
        let p = PairedMeasurements::unnamed(a.clone(), b.clone()).unwrap();
        prop_assert!(r2(&p) <= 1.0 + 1e-12);
        let d = p.differences();
        let max_abs = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(mae(&p) <= max_abs + 1e-12);
        prop_assert!(mae(&p) >= mean(&d).abs() - 1e-12);

        let shifted = PairedMeasurements::unnamed(a.clone(), b.iter().map(|v| v + c).collect()).unwrap();
        let (lo, hi) = loa(&p);
        let (slo, shi) = loa(&shifted);
        prop_assert!((slo - (lo - c)).abs() < 1e-9 && (shi - (hi - c)).abs() < 1e-9);

        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..a.len()).collect();
        idx.shuffle(&mut rng(seed));
        let perm = PairedMeasurements::unnamed(idx.iter().map(|&i| a[i]).collect(), idx.iter().map(|&i| b[i]).collect()).unwrap();
        prop_assert!((mae(&perm) - mae(&p)).abs() < 1e-9);
        prop_assert!((r2(&perm) - r2(&p)).abs() < 1e-9);
        let (plo, phi) = loa(&perm);
        prop_assert!((plo - lo).abs() < 1e-9 && (phi - hi).abs() < 1e-9);
    }
}
