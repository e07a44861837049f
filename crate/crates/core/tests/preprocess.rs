mod common;

use common::*;
use liverfat_core::phantom::{generate_phantom, CohortSpec, Phantom, PhantomSpec};
use liverfat_core::preprocess::*;
use liverfat_core::volume::{fuse_stations, BinaryMask, Grid, Volume3};
use proptest::prelude::*;
use rand::Rng;

fn signals(p: &Phantom) -> (Volume3, Volume3) {
    (fuse_stations(&p.water).unwrap(), fuse_stations(&p.fat).unwrap())
}

fn noise_free(liver_ff: f64, seed: u64) -> PhantomSpec {
    PhantomSpec {
        liver_ff,
        bias_amplitude: 0.2,
        seed,
        ..PhantomSpec::desk_scale()
    }
}

/// Shift a volume by whole voxels along x, filling with `fill`.
fn shift_x<T: Copy>(dims: [usize; 3], data: &[T], dx: i64, fill: T) -> Vec<T> {
    let [nx, ny, nz] = dims;
    let mut out = vec![fill; data.len()];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let src = i as i64 - dx;
                if (0..nx as i64).contains(&src) {
                    out[i + nx * (j + ny * k)] = data[src as usize + nx * (j + ny * k)];
                }
            }
        }
    }
    out
}

#[test]
fn otsu_matches_exhaustive_scan() {
    let mut r = rng(5);
    for case in 0..60 {
        let n = r.random_range(2..3000);
        let bimodal = case % 2 == 0;
        let values: Vec<f32> = (0..n)
            .map(|_| {
                let v: f32 = r.random_range(0.0..1.0);
                if bimodal && r.random_bool(0.4) { v + 3.0 } else { v * r.random_range(0.5..2.0) }
            })
            .collect();
        let bins = [2, 7, 64, 256][case % 4];
        let got = otsu_threshold(&values, bins).unwrap();
        let want = otsu_oracle(&values, bins);
        assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "case {case}: {got} vs {want}");
    }
}

#[test]
fn fat_fraction_matches_scalar_oracle() {
    let g = Grid::new([9, 7, 5], [1.0; 3], [0.0; 3]).unwrap();
    let mut r = rng(11);
    let w = Volume3::from_fn(g, |_, _, _| if r.random_bool(0.1) { 0.0 } else { r.random_range(0.0..2.0) });
    let f = Volume3::from_fn(g, |_, _, _| if r.random_bool(0.1) { 0.0 } else { r.random_range(0.0..2.0) });
    let ff = fat_fraction(&w, &f).unwrap();
    let wf = water_fraction(&w, &f).unwrap();
    for i in 0..g.len() {
        let (a, b) = (w.data()[i] as f64, f.data()[i] as f64);
        let want = if a + b < 1e-6 { 0.0 } else { b / (a + b) };
        assert!((ff.data()[i] as f64 - want).abs() < 1e-7);
        assert!((0.0..=1.0).contains(&ff.data()[i]));
        if a + b >= 1e-6 {
            assert!((ff.data()[i] + wf.data()[i] - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn body_mask_matches_truth_on_noise_free_phantoms() {
    let cohort = CohortSpec::new(4, 31);
    for (id, spec) in cohort.subject_specs().unwrap() {
        let p = generate_phantom(&spec).unwrap();
        let (w, f) = signals(&p);
        let m = body_mask(&w, &f).unwrap();
        let dice = m.dice(&p.truth.body_mask_truth).unwrap();
        assert!(dice >= 0.98, "{id}: dice {dice}");
        let doubled = body_mask(&w.map(|v| 2.0 * v), &f.map(|v| 2.0 * v)).unwrap();
        assert_eq!(doubled, m);
    }
}

#[test]
fn sagittal_slice_lands_in_right_leg() {
    for seed in 0..4 {
        let spec = PhantomSpec {
            seed,
            ..PhantomSpec::desk_scale()
        };
        let p = generate_phantom(&spec).unwrap();
        let (w, f) = signals(&p);
        let sel = select_slices(&body_mask(&w, &f).unwrap()).unwrap();
        let x_mm = spec.grid().voxel_center(sel.sagittal_x, 0, 0)[0];
        let leg_axis = spec.torso_center[0] - 0.5 * spec.leg_separation;
        assert!((x_mm - leg_axis).abs() < spec.leg_radius, "x {x_mm} leg axis {leg_axis}");
        let y_mm = spec.grid().voxel_center(0, sel.coronal_y, 0)[1];
        assert!((y_mm - spec.torso_center[1]).abs() <= spec.grid.target_spacing[1]);
    }
}

/// Image pixels whose every interpolation neighbor lies inside the liver.
fn liver_pixels(liver: &BinaryMask, geom: &CropGeometry, layout: &LayoutConfig) -> Vec<usize> {
    compose_planes(&liver.to_volume(), geom, layout)
        .unwrap()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= 1.0 - 1e-9)
        .map(|(i, _)| i)
        .collect()
}

#[test]
fn liver_pixels_decode_to_liver_ff() {
    let layout = LayoutConfig::desk_scale();
    for (seed, liver_ff) in [(1, 0.0), (2, 0.037), (3, 0.155), (4, 0.31)] {
        let p = generate_phantom(&noise_free(liver_ff, seed)).unwrap();
        let (w, f) = signals(&p);
        let ff = fat_fraction(&w, &f).unwrap();
        let mask = body_mask(&w, &f).unwrap();
        let composed = compose_input_detailed(&ff, &mask, &layout, &EncodingSpec::default()).unwrap();
        assert_eq!((composed.image.width, composed.image.height), (layout.width, layout.height));
        let pixels = liver_pixels(&p.truth.liver_mask, &composed.geometry, &layout);
        assert!(pixels.len() > 50, "only {} liver pixels", pixels.len());
        let decoded = composed.image.decoded();
        let step = EncodingSpec::default().step();
        for i in pixels {
            assert!((decoded[i] as f64 - liver_ff).abs() <= step, "pixel {i}: {}", decoded[i]);
        }
        let again = compose_input(&ff, &mask, &layout).unwrap();
        assert_eq!(again, composed.image);
    }
}

#[test]
fn body_translation_moves_only_the_window() {
    let layout = LayoutConfig::desk_scale();
    let spec = noise_free(0.12, 8);
    let p = generate_phantom(&spec).unwrap();
    let (w, f) = signals(&p);
    let ff = fat_fraction(&w, &f).unwrap();
    let mask = body_mask(&w, &f).unwrap();
    let base = compose_input_detailed(&ff, &mask, &layout, &EncodingSpec::default()).unwrap();
    let pixels = liver_pixels(&p.truth.liver_mask, &base.geometry, &layout);
    let g = *ff.grid();
    for dx in [-2i64, 1, 3] {
        let ff_s = Volume3::new(g, shift_x(g.dims, ff.data(), dx, 0.0)).unwrap();
        let mask_s = BinaryMask::new(g, shift_x(g.dims, mask.data(), dx, false)).unwrap();
        let moved = compose_input_detailed(&ff_s, &mask_s, &layout, &EncodingSpec::default()).unwrap();
        let shift = |b: (usize, usize)| ((b.0 as i64 + dx) as usize, (b.1 as i64 + dx) as usize);
        assert_eq!(moved.geometry.coronal_bounds, shift(base.geometry.coronal_bounds));
        assert_eq!(moved.geometry.selection.sagittal_x as i64, base.geometry.selection.sagittal_x as i64 + dx);
        let (a, b) = (base.image.decoded(), moved.image.decoded());
        for &i in &pixels {
            assert!((a[i] - b[i]).abs() as f64 <= EncodingSpec::default().step(), "dx {dx} pixel {i}");
        }
    }
}

proptest! {
    #[test]
    fn encode_is_monotone(mut v in prop::collection::vec(-0.2f64..0.8, 2..200)) {
        let spec = EncodingSpec::default();
        v.sort_by(f64::total_cmp);
        for w in v.windows(2) {
            prop_assert!(encode8(w[0], &spec) <= encode8(w[1], &spec));
        }
    }

    #[test]
    fn decode_encode_error_bounded(ff in 0.0f64..=0.5) {
        let spec = EncodingSpec::default();
        let back = decode8(encode8(ff, &spec), &spec);
        prop_assert!((back - ff).abs() <= 0.5 * spec.step() + 1e-12);
    }
}
