//! Synthetic water/fat phantoms with known liver fat fraction.
//!
//! A phantom is an ellipsoidal torso with two leg cylinders, wrapped in a
//! subcutaneous fat layer, with an ellipsoidal liver inside the torso. Every
//! tissue compartment has a configured fat fraction `f`; its fat signal is
//! `f * S` and its water signal `(1 - f) * S` with `S = 1`, both multiplied by
//! a smooth bias field and perturbed with clamped Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::volume::{
    ball_offsets, erode_spherical, BinaryMask, Grid, ResampleSpec, StationStack, Volume3,
};

/// Mix a base seed with a stream index. Pure function of both inputs, so
/// per-subject seeds do not depend on generation order.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    splitmix(base ^ splitmix(stream.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub grid: ResampleSpec,
    /// Torso ellipsoid center and half-axes (mm).
    pub torso_center: [f64; 3],
    pub torso_half_axes: [f64; 3],
    /// z (mm) where the legs start; legs run to the inferior end of the grid.
    pub leg_top: f64,
    pub leg_radius: f64,
    /// Distance (mm) between the two leg axes.
    pub leg_separation: f64,
    pub subcutaneous_thickness: f64,
    pub liver_center: [f64; 3],
    pub liver_half_axes: [f64; 3],
    /// Visceral fat envelope around the liver (mm).
    pub visceral_thickness: f64,
    pub liver_ff: f64,
    pub subcutaneous_ff: f64,
    pub visceral_ff: f64,
    pub lean_ff: f64,
    pub noise_sigma: f64,
    pub bias_amplitude: f64,
    pub station_count: usize,
    pub station_overlap: usize,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec::desk_scale()
    }
}

impl PhantomSpec {
    /// 64 x 48 x 96 voxels at 4 mm.
    pub fn desk_scale() -> Self {
        PhantomSpec {
            grid: ResampleSpec::desk_scale(),
            torso_center: [126.0, 94.0, 140.0],
            torso_half_axes: [100.0, 70.0, 170.0],
            leg_top: 230.0,
            leg_radius: 38.0,
            leg_separation: 96.0,
            subcutaneous_thickness: 10.0,
            liver_center: [104.0, 94.0, 120.0],
            liver_half_axes: [34.0, 30.0, 38.0],
            visceral_thickness: 5.0,
            liver_ff: 0.05,
            subcutaneous_ff: 0.85,
            visceral_ff: 0.75,
            lean_ff: 0.03,
            noise_sigma: 0.0,
            bias_amplitude: 0.0,
            station_count: 4,
            station_overlap: 4,
            seed: 0,
        }
    }

    /// The desk geometry stretched onto the full-size common grid.
    pub fn paper_scale() -> Self {
        let desk = PhantomSpec::desk_scale();
        let grid = ResampleSpec::paper_scale();
        let extent = |g: &ResampleSpec, a: usize| g.target_dims[a] as f64 * g.target_spacing[a];
        let ratio = [0, 1, 2].map(|a| extent(&grid, a) / extent(&desk.grid, a));
        let scale3 = |v: [f64; 3]| [v[0] * ratio[0], v[1] * ratio[1], v[2] * ratio[2]];
        let lateral = 0.5 * (ratio[0] + ratio[1]);
        PhantomSpec {
            grid,
            torso_center: scale3(desk.torso_center),
            torso_half_axes: scale3(desk.torso_half_axes),
            leg_top: desk.leg_top * ratio[2],
            leg_radius: desk.leg_radius * lateral,
            leg_separation: desk.leg_separation * ratio[0],
            subcutaneous_thickness: desk.subcutaneous_thickness,
            liver_center: scale3(desk.liver_center),
            liver_half_axes: scale3(desk.liver_half_axes),
            station_count: 6,
            station_overlap: 8,
            ..desk
        }
    }

    pub fn grid(&self) -> Grid {
        self.grid.grid_at([0.0; 3])
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        for (name, f) in [
            ("liver_ff", self.liver_ff),
            ("subcutaneous_ff", self.subcutaneous_ff),
            ("visceral_ff", self.visceral_ff),
            ("lean_ff", self.lean_ff),
        ] {
            if !(0.0..1.0).contains(&f) {
                return bad(format!("{name} must be in [0, 1), got {f}"));
            }
        }
        if self.liver_ff > 0.5 {
            return bad(format!("liver_ff must be <= 0.5, got {}", self.liver_ff));
        }
        if !(self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if !(0.0..1.0).contains(&self.bias_amplitude) {
            return bad(format!("bias_amplitude must be in [0, 1), got {}", self.bias_amplitude));
        }
        let positive = self
            .torso_half_axes
            .iter()
            .chain(&self.liver_half_axes)
            .chain([&self.leg_radius])
            .all(|&v| v > 0.0);
        if !positive || self.subcutaneous_thickness < 0.0 || self.visceral_thickness < 0.0 {
            return bad("half-axes and radii must be positive".into());
        }
        if self.station_count == 0 {
            return bad("station_count must be >= 1".into());
        }
        // The liver and its envelope must sit strictly inside the lean torso
        // core: sample the envelope surface densely and test every point.
        let inner = self.torso_inner_half_axes();
        let envelope = self.envelope_half_axes();
        for a in 0..24 {
            let theta = std::f64::consts::PI * a as f64 / 23.0;
            for b in 0..48 {
                let phi = 2.0 * std::f64::consts::PI * b as f64 / 48.0;
                let d = [
                    theta.sin() * phi.cos(),
                    theta.sin() * phi.sin(),
                    theta.cos(),
                ];
                let p: [f64; 3] =
                    std::array::from_fn(|i| self.liver_center[i] + envelope[i] * d[i]);
                if ellipsoid_level(p, self.torso_center, inner) >= 1.0 {
                    return bad("liver ellipsoid is not strictly inside the body".into());
                }
            }
        }
        Ok(())
    }

    fn envelope_half_axes(&self) -> [f64; 3] {
        self.liver_half_axes.map(|h| h + self.visceral_thickness)
    }

    fn torso_inner_half_axes(&self) -> [f64; 3] {
        self.torso_half_axes
            .map(|h| (h - self.subcutaneous_thickness).max(1e-3))
    }
}

fn ellipsoid_level(p: [f64; 3], center: [f64; 3], half: [f64; 3]) -> f64 {
    (0..3)
        .map(|a| ((p[a] - center[a]) / half[a]).powi(2))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tissue {
    Background,
    Subcutaneous,
    Visceral,
    Lean,
    Liver,
}

fn classify(spec: &PhantomSpec, p: [f64; 3]) -> Tissue {
    let t = spec.subcutaneous_thickness;
    let inner = spec.torso_inner_half_axes();
    if ellipsoid_level(p, spec.liver_center, spec.liver_half_axes) <= 1.0 {
        return Tissue::Liver;
    }
    if ellipsoid_level(p, spec.liver_center, spec.envelope_half_axes()) <= 1.0 {
        return Tissue::Visceral;
    }
    let torso = ellipsoid_level(p, spec.torso_center, spec.torso_half_axes) <= 1.0;
    let torso_core = ellipsoid_level(p, spec.torso_center, inner) <= 1.0;
    let (mut leg, mut leg_core) = (false, false);
    if p[2] >= spec.leg_top {
        for side in [-0.5, 0.5] {
            let cx = spec.torso_center[0] + side * spec.leg_separation;
            let r = ((p[0] - cx).powi(2) + (p[1] - spec.torso_center[1]).powi(2)).sqrt();
            leg |= r <= spec.leg_radius;
            leg_core |= r <= spec.leg_radius - t && p[2] >= spec.leg_top + t;
        }
    }
    if torso_core || leg_core {
        Tissue::Lean
    } else if torso || leg {
        Tissue::Subcutaneous
    } else {
        Tissue::Background
    }
}

/// Ground truth of one phantom.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomTruth {
    pub liver_ff: f64,
    pub liver_mask: BinaryMask,
    pub body_mask_truth: BinaryMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub water: StationStack,
    pub fat: StationStack,
    pub truth: PhantomTruth,
}

/// Low-order multiplicative bias field in `[1 - a, 1 + a]`.
fn bias_field(spec: &PhantomSpec, grid: &Grid) -> impl Fn([f64; 3]) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0xB1A5));
    let raw: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
    let norm: f64 = raw.iter().map(|c| c.abs()).sum::<f64>().max(1e-12);
    let c = raw.map(|v| v / norm);
    let amp = spec.bias_amplitude;
    let extent: [f64; 3] = std::array::from_fn(|a| {
        ((grid.dims[a] - 1) as f64 * grid.spacing[a]).max(1e-9)
    });
    let origin = grid.origin;
    move |p: [f64; 3]| {
        let n: [f64; 3] = std::array::from_fn(|a| 2.0 * (p[a] - origin[a]) / extent[a] - 1.0);
        1.0 + amp * (c[0] * n[0] + c[1] * n[1] + c[2] * n[2] + c[3] * n[0] * n[2])
    }
}

/// Render a phantom and split it into overlapping stations.
pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let grid = spec.grid();
    let bias = bias_field(spec, &grid);
    let noise = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma checked positive"));
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0x0004_015E));

    let n = grid.len();
    let mut water = Vec::with_capacity(n);
    let mut fat = Vec::with_capacity(n);
    let mut liver = Vec::with_capacity(n);
    let mut body = Vec::with_capacity(n);
    for k in 0..grid.dims[2] {
        for j in 0..grid.dims[1] {
            for i in 0..grid.dims[0] {
                let p = grid.voxel_center(i, j, k);
                let tissue = classify(spec, p);
                let ff = match tissue {
                    Tissue::Background => None,
                    Tissue::Subcutaneous => Some(spec.subcutaneous_ff),
                    Tissue::Visceral => Some(spec.visceral_ff),
                    Tissue::Lean => Some(spec.lean_ff),
                    Tissue::Liver => Some(spec.liver_ff),
                };
                let (mut w, mut f) = match ff {
                    Some(ff) => {
                        let s = bias(p);
                        ((1.0 - ff) * s, ff * s)
                    }
                    None => (0.0, 0.0),
                };
                if let Some(dist) = &noise {
                    w = (w + dist.sample(&mut rng)).max(0.0);
                    f = (f + dist.sample(&mut rng)).max(0.0);
                }
                water.push(w as f32);
                fat.push(f as f32);
                liver.push(tissue == Tissue::Liver);
                body.push(tissue != Tissue::Background);
            }
        }
    }
    let liver_mask = BinaryMask::new(grid, liver)?;
    let body_mask_truth = BinaryMask::new(grid, body)?;
    if liver_mask.is_empty() {
        return Err(Error::InvalidParameter("liver covers no voxel centers".into()));
    }
    let water = StationStack::split(&Volume3::new(grid, water)?, spec.station_count, spec.station_overlap)?;
    let fat = StationStack::split(&Volume3::new(grid, fat)?, spec.station_count, spec.station_overlap)?;
    Ok(Phantom {
        water,
        fat,
        truth: PhantomTruth {
            liver_ff: spec.liver_ff,
            liver_mask,
            body_mask_truth,
        },
    })
}

/// Population of phantoms with uniformly drawn liver fat fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct CohortSpec {
    pub n_subjects: usize,
    pub ff_low: f64,
    pub ff_high: f64,
    pub seed: u64,
    /// Geometry, noise and tissue settings shared by every subject.
    pub base: PhantomSpec,
    /// Relative body size jitter (uniform in `1 +- body_jitter`).
    pub body_jitter: f64,
    /// Liver center jitter per axis (mm).
    pub liver_shift_mm: f64,
    /// Relative liver half-axis jitter.
    pub liver_scale_jitter: f64,
}

impl CohortSpec {
    pub fn new(n_subjects: usize, seed: u64) -> Self {
        CohortSpec {
            n_subjects,
            ff_low: 0.0,
            ff_high: 0.20,
            seed,
            base: PhantomSpec::desk_scale(),
            body_jitter: 0.05,
            liver_shift_mm: 8.0,
            liver_scale_jitter: 0.10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 {
            return Err(Error::InvalidParameter("n_subjects must be >= 1".into()));
        }
        if !(0.0 <= self.ff_low && self.ff_low <= self.ff_high && self.ff_high <= 0.5) {
            return Err(Error::InvalidParameter(format!(
                "fat fraction bounds must satisfy 0 <= low <= high <= 0.5, got ({}, {})",
                self.ff_low, self.ff_high
            )));
        }
        if !(0.0..0.5).contains(&self.body_jitter)
            || !(0.0..0.5).contains(&self.liver_scale_jitter)
            || self.liver_shift_mm < 0.0
        {
            return Err(Error::InvalidParameter("jitter out of range".into()));
        }
        self.base.validate()
    }

    /// Per-subject phantom specs, drawn independently from derived seeds.
    pub fn subject_specs(&self) -> Result<Vec<(String, PhantomSpec)>> {
        self.validate()?;
        (0..self.n_subjects)
            .map(|idx| {
                let spec = self.subject_spec(idx);
                spec.validate()?;
                Ok((subject_id(idx), spec))
            })
            .collect()
    }

    fn subject_spec(&self, idx: usize) -> PhantomSpec {
        let seed = derive_seed(self.seed, idx as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = self.base.clone();
        spec.seed = derive_seed(seed, 1);
        spec.liver_ff = if self.ff_high > self.ff_low {
            rng.random_range(self.ff_low..self.ff_high)
        } else {
            self.ff_low
        };
        let mut jitter = |w: f64| if w > 0.0 { rng.random_range(-w..w) } else { 0.0 };
        let size = 1.0 + jitter(self.body_jitter);
        spec.torso_half_axes[0] *= size;
        spec.torso_half_axes[1] *= size;
        spec.leg_radius *= size;
        for a in 0..3 {
            spec.liver_center[a] += jitter(self.liver_shift_mm);
        }
        for a in 0..3 {
            spec.liver_half_axes[a] *= 1.0 + jitter(self.liver_scale_jitter);
        }
        spec
    }
}

pub fn subject_id(idx: usize) -> String {
    format!("sub-{idx:04}")
}

#[derive(Debug, Clone)]
pub struct CohortSubject {
    pub id: String,
    pub spec: PhantomSpec,
    pub phantom: Phantom,
}

/// Materialize every subject of a cohort. Subjects are rendered in parallel;
/// results are identical to sequential generation.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Vec<CohortSubject>> {
    spec.subject_specs()?
        .into_par_iter()
        .map(|(id, spec)| {
            let phantom = generate_phantom(&spec)?;
            Ok(CohortSubject { id, spec, phantom })
        })
        .collect()
}

/// Placement rules for the simulated reference measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiConfig {
    pub roi_radius: usize,
    pub erosion_diameter: usize,
    pub roi_count: usize,
}

impl Default for RoiConfig {
    fn default() -> Self {
        RoiConfig {
            roi_radius: 2,
            erosion_diameter: 5,
            roi_count: 3,
        }
    }
}

/// Mean fat fraction of three randomly placed, disjoint spherical ROIs inside
/// the eroded liver, mimicking manual ROI placement away from the boundary.
pub fn reference_roi_measurement(
    ff: &Volume3,
    liver_mask: &BinaryMask,
    seed: u64,
    cfg: &RoiConfig,
) -> Result<f64> {
    ff.grid().ensure_same(liver_mask.grid())?;
    let core = erode_spherical(liver_mask, cfg.erosion_diameter)?;
    let ball_diameter = 2 * cfg.roi_radius + 1;
    let centers = erode_spherical(&core, ball_diameter)?;
    let mut candidates: Vec<usize> = centers
        .data()
        .iter()
        .enumerate()
        .filter_map(|(i, &b)| b.then_some(i))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets = ball_offsets(ball_diameter)?;
    let grid = *ff.grid();
    let mut used = vec![false; grid.len()];
    let mut roi_means = Vec::with_capacity(cfg.roi_count);
    // Partial Fisher-Yates: draw candidates until enough disjoint balls fit.
    let mut remaining = candidates.len();
    while roi_means.len() < cfg.roi_count && remaining > 0 {
        let pick = rng.random_range(0..remaining);
        candidates.swap(pick, remaining - 1);
        remaining -= 1;
        let c = grid.coords(candidates[remaining]);
        let voxels: Vec<usize> = offsets
            .iter()
            .map(|o| {
                grid.index(
                    (c[0] as i64 + o[0]) as usize,
                    (c[1] as i64 + o[1]) as usize,
                    (c[2] as i64 + o[2]) as usize,
                )
            })
            .collect();
        if voxels.iter().any(|&v| used[v]) {
            continue;
        }
        let mean = voxels.iter().map(|&v| ff.data()[v] as f64).sum::<f64>() / voxels.len() as f64;
        for v in voxels {
            used[v] = true;
        }
        roi_means.push(mean);
    }
    if roi_means.len() < cfg.roi_count {
        return Err(Error::RoiPlacement(format!(
            "liver admits only {} disjoint ROI(s) of radius {} after erosion",
            roi_means.len(),
            cfg.roi_radius
        )));
    }
    Ok(roi_means.iter().sum::<f64>() / roi_means.len() as f64)
}
