//! Multi-atlas liver fat readout.
//!
//! Each template (water and fat fraction channels plus a liver segmentation)
//! is registered to the subject with a coarse-to-fine discrete optimizer:
//! control points on every pyramid level try integer displacements within a
//! small search radius, scored by `1 - NCC` over a local window on both
//! channels plus a quadratic smoothness penalty to the six control-grid
//! neighbors. The three warped liver masks are intersected, eroded, and the
//! median subject fat fraction inside the result is the raw measurement. A
//! linear calibration fitted on labeled data maps raw values to the reference
//! scale.
//!
//! Displacements follow the pull convention: the warped moving image is
//! `moving(x + u(x))`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::preprocess::{body_mask, fat_fraction, water_fraction};
use crate::volume::{erode_spherical, intersect_masks, BinaryMask, Grid, Volume3};

/// Pearson correlation of two volumes over `region` (whole grid if `None`).
pub fn ncc(a: &Volume3, b: &Volume3, region: Option<&BinaryMask>) -> Result<f64> {
    a.grid().ensure_same(b.grid())?;
    if let Some(r) = region {
        a.grid().ensure_same(r.grid())?;
    }
    let inside = |i: usize| region.is_none_or(|r| r.data()[i]);
    let (mut n, mut sa, mut sb) = (0usize, 0.0f64, 0.0f64);
    for (i, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
        if inside(i) {
            n += 1;
            sa += x as f64;
            sb += y as f64;
        }
    }
    if n < 2 {
        return Err(Error::ZeroVariance);
    }
    let (ma, mb) = (sa / n as f64, sb / n as f64);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (i, (&x, &y)) in a.data().iter().zip(b.data()).enumerate() {
        if inside(i) {
            let (dx, dy) = (x as f64 - ma, y as f64 - mb);
            sab += dx * dy;
            saa += dx * dx;
            sbb += dy * dy;
        }
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

fn downsample2(vol: &Volume3) -> Volume3 {
    let g = vol.grid();
    let dims = g.dims.map(|d| d / 2);
    let spacing = g.spacing.map(|s| 2.0 * s);
    let origin = [0, 1, 2].map(|a| g.origin[a] + 0.5 * g.spacing[a]);
    let grid = Grid {
        dims,
        spacing,
        origin,
    };
    Volume3::from_fn(grid, |i, j, k| {
        let mut s = 0.0f64;
        for dk in 0..2 {
            for dj in 0..2 {
                for di in 0..2 {
                    s += vol.get(2 * i + di, 2 * j + dj, 2 * k + dk) as f64;
                }
            }
        }
        (s / 8.0) as f32
    })
}

/// Mean-pooled resolution pyramid, finest first.
///
/// Stops early once halving would leave fewer than 2 voxels on some axis, so
/// the result may hold fewer than `levels` volumes.
pub fn build_pyramid(vol: &Volume3, levels: usize) -> Result<Vec<Volume3>> {
    if levels == 0 {
        return Err(Error::InvalidParameter("pyramid needs at least one level".into()));
    }
    let mut out = vec![vol.clone()];
    while out.len() < levels {
        let last = out.last().unwrap();
        if last.dims().iter().any(|&d| d / 2 < 2) {
            break;
        }
        out.push(downsample2(last));
    }
    Ok(out)
}

/// Displacements (mm) on a regular control grid, interpolated trilinearly and
/// clamped to the grid's extent.
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    pub control_dims: [usize; 3],
    pub control_spacing: [f64; 3],
    /// Position of control point (0, 0, 0), mm.
    pub origin: [f64; 3],
    pub displacements: Vec<[f64; 3]>,
}

impl DeformationField {
    pub fn zeros(control_dims: [usize; 3], control_spacing: [f64; 3], origin: [f64; 3]) -> Self {
        let n = control_dims.iter().product();
        DeformationField {
            control_dims,
            control_spacing,
            origin,
            displacements: vec![[0.0; 3]; n],
        }
    }

    /// A field that is `u` everywhere.
    pub fn constant(u: [f64; 3]) -> Self {
        DeformationField {
            control_dims: [1, 1, 1],
            control_spacing: [1.0; 3],
            origin: [0.0; 3],
            displacements: vec![u],
        }
    }

    #[inline]
    fn at(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let [nx, ny, _] = self.control_dims;
        self.displacements[i + nx * (j + ny * k)]
    }

    /// Displacement at a physical point, mm.
    pub fn eval(&self, p: [f64; 3]) -> [f64; 3] {
        let mut lo = [0usize; 3];
        let mut t = [0.0f64; 3];
        for a in 0..3 {
            let n = self.control_dims[a];
            let c = ((p[a] - self.origin[a]) / self.control_spacing[a]).clamp(0.0, (n - 1) as f64);
            let f = (c.floor() as usize).min(n.saturating_sub(2));
            lo[a] = f;
            t[a] = if n > 1 { c - f as f64 } else { 0.0 };
        }
        let hi = [0, 1, 2].map(|a| (lo[a] + 1).min(self.control_dims[a] - 1));
        let mut out = [0.0; 3];
        for (dk, wk) in [(lo[2], 1.0 - t[2]), (hi[2], t[2])] {
            for (dj, wj) in [(lo[1], 1.0 - t[1]), (hi[1], t[1])] {
                for (di, wi) in [(lo[0], 1.0 - t[0]), (hi[0], t[0])] {
                    let w = wi * wj * wk;
                    if w != 0.0 {
                        let d = self.at(di, dj, dk);
                        for a in 0..3 {
                            out[a] += w * d[a];
                        }
                    }
                }
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.displacements.iter().all(|d| d.iter().all(|v| v.is_finite()))
    }

    /// Mean displacement (mm) over the voxels of `mask`.
    pub fn mean_over(&self, mask: &BinaryMask) -> [f64; 3] {
        let g = mask.grid();
        let mut sum = [0.0; 3];
        let mut n = 0usize;
        for (idx, _) in mask.data().iter().enumerate().filter(|(_, &b)| b) {
            let [i, j, k] = g.coords(idx);
            let u = self.eval(g.voxel_center(i, j, k));
            for a in 0..3 {
                sum[a] += u[a];
            }
            n += 1;
        }
        sum.map(|s| s / n.max(1) as f64)
    }

    /// Mean displacement magnitude (mm) over the voxels of `grid`.
    pub fn mean_magnitude(&self, grid: &Grid) -> f64 {
        let mut s = 0.0;
        for idx in 0..grid.len() {
            let [i, j, k] = grid.coords(idx);
            let u = self.eval(grid.voxel_center(i, j, k));
            s += (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
        }
        s / grid.len() as f64
    }
}

/// Discrete registration parameters. Distances are in voxels of the current
/// pyramid level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationConfig {
    pub pyramid_levels: usize,
    pub search_radius: usize,
    pub displacement_step: usize,
    /// Weight of the squared neighbor displacement differences, measured per
    /// control spacing.
    pub regularization_weight: f64,
    pub sweeps_per_level: usize,
    /// Control point spacing; the similarity window is a cube of twice this
    /// edge centered on each control point.
    pub control_stride: usize,
    /// Subsampling of the similarity window.
    pub window_sample_stride: usize,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            pyramid_levels: 6,
            search_radius: 2,
            displacement_step: 1,
            regularization_weight: 0.1,
            sweeps_per_level: 3,
            control_stride: 3,
            window_sample_stride: 2,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.into()));
        if self.pyramid_levels == 0 {
            return bad("pyramid_levels must be >= 1");
        }
        if self.search_radius == 0 || self.displacement_step == 0 {
            return bad("search radius and displacement step must be >= 1");
        }
        if !(self.regularization_weight >= 0.0 && self.regularization_weight.is_finite()) {
            return bad("regularization weight must be finite and >= 0");
        }
        if self.control_stride == 0 || self.window_sample_stride == 0 {
            return bad("control and window strides must be >= 1");
        }
        Ok(())
    }

    fn candidates(&self) -> Vec<[i64; 3]> {
        let r = self.search_radius as i64;
        let mut c = Vec::new();
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    c.push([dx, dy, dz]);
                }
            }
        }
        // Smallest moves first so equal-energy ties favor staying put.
        c.sort_by_key(|d| (d[0] * d[0] + d[1] * d[1] + d[2] * d[2], d[2], d[1], d[0]));
        c
    }
}

/// Result of [`register`].
#[derive(Debug, Clone)]
pub struct Registration {
    pub field: DeformationField,
    pub realized_levels: usize,
}

fn control_dims_for(dims: [usize; 3], stride: usize) -> [usize; 3] {
    dims.map(|n| if n <= 1 { 1 } else { (n - 1).div_ceil(stride) + 1 })
}

/// Resample `vol` through `field` on its own grid.
pub fn warp_volume(vol: &Volume3, field: &DeformationField) -> Volume3 {
    let g = *vol.grid();
    let mut out = Volume3::filled(g, 0.0);
    for idx in 0..g.len() {
        let [i, j, k] = g.coords(idx);
        let p = g.voxel_center(i, j, k);
        let u = field.eval(p);
        let q = [p[0] + u[0], p[1] + u[1], p[2] + u[2]];
        out.data_mut()[idx] = vol.sample(q) as f32;
    }
    out
}

/// Warp `seg` through `field` onto `target`: a voxel is set iff the
/// trilinearly sampled 0/1 segmentation at its displaced position is >= 0.5.
pub fn warp_mask(seg: &BinaryMask, field: &DeformationField, target: &Grid) -> Result<BinaryMask> {
    target.validate()?;
    let vol = seg.to_volume();
    let data = (0..target.len())
        .map(|idx| {
            let [i, j, k] = target.coords(idx);
            let p = target.voxel_center(i, j, k);
            let u = field.eval(p);
            vol.sample([p[0] + u[0], p[1] + u[1], p[2] + u[2]]) >= 0.5
        })
        .collect();
    BinaryMask::new(*target, data)
}

struct LevelProblem<'a> {
    fixed: Vec<&'a Volume3>,
    warped: Vec<Volume3>,
    cfg: &'a RegistrationConfig,
    candidates: &'a [[i64; 3]],
}

impl LevelProblem<'_> {
    /// Data cost per control point and candidate; `None` for control points
    /// whose fixed window is flat in every channel.
    fn unary(&self, cdims: [usize; 3]) -> Vec<Option<Vec<f32>>> {
        let g = self.fixed[0].grid();
        let [nx, ny, nz] = g.dims.map(|d| d as i64);
        let c = self.cfg.control_stride as i64;
        let s = self.cfg.window_sample_stride as i64;
        let step = self.cfg.displacement_step as i64;
        let offsets: Vec<i64> = (-c..=c).step_by(s as usize).collect();
        let n_ctrl = cdims.iter().product::<usize>();
        let in_grid = |p: [i64; 3]| {
            p[0] >= 0 && p[1] >= 0 && p[2] >= 0 && p[0] < nx && p[1] < ny && p[2] < nz
        };
        (0..n_ctrl)
            .into_par_iter()
            .map(|ci| {
                let cx = (ci % cdims[0]) as i64 * c;
                let cy = ((ci / cdims[0]) % cdims[1]) as i64 * c;
                let cz = (ci / (cdims[0] * cdims[1])) as i64 * c;
                let mut pos = Vec::new();
                for &oz in &offsets {
                    for &oy in &offsets {
                        for &ox in &offsets {
                            let p = [cx + ox, cy + oy, cz + oz];
                            if in_grid(p) {
                                pos.push(p);
                            }
                        }
                    }
                }
                if pos.len() < 2 {
                    return None;
                }
                let n = pos.len() as f64;
                // Centered fixed samples per channel, None when flat.
                let fixed: Vec<Option<(Vec<f64>, f64)>> = self
                    .fixed
                    .iter()
                    .map(|f| {
                        let v: Vec<f64> = pos
                            .iter()
                            .map(|p| f.get(p[0] as usize, p[1] as usize, p[2] as usize) as f64)
                            .collect();
                        let m = v.iter().sum::<f64>() / n;
                        let centered: Vec<f64> = v.iter().map(|x| x - m).collect();
                        let ss: f64 = centered.iter().map(|x| x * x).sum();
                        (ss > 1e-10).then_some((centered, ss))
                    })
                    .collect();
                if fixed.iter().all(Option::is_none) {
                    return None;
                }
                let lin: Vec<i64> = pos.iter().map(|p| p[0] + nx * (p[1] + ny * p[2])).collect();
                let lo = [0, 1, 2].map(|a| pos.iter().map(|p| p[a]).min().unwrap());
                let hi = [0, 1, 2].map(|a| pos.iter().map(|p| p[a]).max().unwrap());
                let costs = self
                    .candidates
                    .iter()
                    .map(|d| {
                        let d = d.map(|v| v * step);
                        let inside = in_grid([lo[0] + d[0], lo[1] + d[1], lo[2] + d[2]])
                            && in_grid([hi[0] + d[0], hi[1] + d[1], hi[2] + d[2]]);
                        let dl = d[0] + nx * (d[1] + ny * d[2]);
                        let mut cost = 0.0f64;
                        for (ch, fx) in fixed.iter().enumerate() {
                            let Some((fc, fss)) = fx else { continue };
                            let w = self.warped[ch].data();
                            let (mut sw, mut sww, mut sfw) = (0.0f64, 0.0f64, 0.0f64);
                            for (k, fv) in fc.iter().enumerate() {
                                let mv = if inside {
                                    w[(lin[k] + dl) as usize] as f64
                                } else {
                                    let p = pos[k];
                                    let q = [p[0] + d[0], p[1] + d[1], p[2] + d[2]];
                                    if in_grid(q) {
                                        w[(q[0] + nx * (q[1] + ny * q[2])) as usize] as f64
                                    } else {
                                        0.0
                                    }
                                };
                                sw += mv;
                                sww += mv * mv;
                                sfw += fv * mv;
                            }
                            let var_w = sww - sw * sw / n;
                            let r = if var_w > 1e-10 { sfw / (fss * var_w).sqrt() } else { 0.0 };
                            cost += 1.0 - r.clamp(-1.0, 1.0);
                        }
                        cost as f32
                    })
                    .collect();
                Some(costs)
            })
            .collect()
    }
}

fn optimize_level(
    base: &[[f64; 3]],
    unary: &[Option<Vec<f32>>],
    cdims: [usize; 3],
    cfg: &RegistrationConfig,
    candidates: &[[i64; 3]],
) -> Vec<[f64; 3]> {
    let step = cfg.displacement_step as f64;
    // Differences between neighbors are taken per control spacing, so the
    // penalty acts on the displacement gradient.
    let lambda = cfg.regularization_weight / (cfg.control_stride * cfg.control_stride) as f64;
    let n = base.len();
    let mut label = vec![0usize; n];
    let total = |p: usize, l: usize| {
        let d = candidates[l];
        [0, 1, 2].map(|a| base[p][a] + d[a] as f64 * step)
    };
    let [nx, ny, nz] = cdims;
    let neighbors = |p: usize| {
        let (i, j, k) = (p % nx, (p / nx) % ny, p / (nx * ny));
        let mut out = Vec::with_capacity(6);
        if i > 0 {
            out.push(p - 1);
        }
        if i + 1 < nx {
            out.push(p + 1);
        }
        if j > 0 {
            out.push(p - nx);
        }
        if j + 1 < ny {
            out.push(p + nx);
        }
        if k > 0 {
            out.push(p - nx * ny);
        }
        if k + 1 < nz {
            out.push(p + nx * ny);
        }
        out
    };
    for _ in 0..cfg.sweeps_per_level {
        let mut changed = false;
        for p in 0..n {
            let Some(costs) = &unary[p] else { continue };
            let nbrs: Vec<[f64; 3]> = neighbors(p).into_iter().map(|q| total(q, label[q])).collect();
            let energy = |l: usize| {
                let t = total(p, l);
                let smooth: f64 = nbrs
                    .iter()
                    .map(|u| (0..3).map(|a| (t[a] - u[a]).powi(2)).sum::<f64>())
                    .sum();
                costs[l] as f64 + lambda * smooth
            };
            let mut best = (label[p], energy(label[p]));
            for l in 0..candidates.len() {
                let e = energy(l);
                if e < best.1 - 1e-12 {
                    best = (l, e);
                }
            }
            if best.0 != label[p] {
                label[p] = best.0;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    (0..n).map(|p| total(p, label[p])).collect()
}

/// Register `moving` channels onto `fixed` channels (same grid, same channel
/// order) and return the pull field `u` with `warped(x) = moving(x + u(x))`.
pub fn register(fixed: &[&Volume3], moving: &[&Volume3], cfg: &RegistrationConfig) -> Result<Registration> {
    cfg.validate()?;
    if fixed.is_empty() || fixed.len() != moving.len() {
        return Err(Error::InvalidParameter(
            "registration needs matching, non-empty channel lists".into(),
        ));
    }
    let grid = *fixed[0].grid();
    for v in fixed.iter().chain(moving) {
        grid.ensure_same(v.grid())?;
    }
    let fixed_pyr: Vec<Vec<Volume3>> = fixed
        .iter()
        .map(|v| build_pyramid(v, cfg.pyramid_levels))
        .collect::<Result<_>>()?;
    let moving_pyr: Vec<Vec<Volume3>> = moving
        .iter()
        .map(|v| build_pyramid(v, cfg.pyramid_levels))
        .collect::<Result<_>>()?;
    let levels = fixed_pyr[0].len();
    let candidates = cfg.candidates();
    let stride = cfg.control_stride as f64;

    let mut field: Option<DeformationField> = None;
    for level in (0..levels).rev() {
        let lg = *fixed_pyr[0][level].grid();
        let cdims = control_dims_for(lg.dims, cfg.control_stride);
        let mut next = DeformationField::zeros(cdims, lg.spacing.map(|s| s * stride), lg.origin);
        if let Some(prev) = &field {
            for (idx, d) in next.displacements.iter_mut().enumerate() {
                let (i, j, k) = (idx % cdims[0], (idx / cdims[0]) % cdims[1], idx / (cdims[0] * cdims[1]));
                let p = [0, 1, 2].map(|a| lg.origin[a] + [i, j, k][a] as f64 * next.control_spacing[a]);
                *d = prev.eval(p);
            }
        }
        let warped: Vec<Volume3> = moving_pyr.iter().map(|m| warp_volume(&m[level], &next)).collect();
        let problem = LevelProblem {
            fixed: fixed_pyr.iter().map(|f| &f[level]).collect(),
            warped,
            cfg,
            candidates: &candidates,
        };
        let unary = problem.unary(cdims);
        let base: Vec<[f64; 3]> = next
            .displacements
            .iter()
            .map(|d| [0, 1, 2].map(|a| d[a] / lg.spacing[a]))
            .collect();
        let solved = optimize_level(&base, &unary, cdims, cfg, &candidates);
        next.displacements = solved
            .into_iter()
            .map(|t| [0, 1, 2].map(|a| t[a] * lg.spacing[a]))
            .collect();
        field = Some(next);
    }
    Ok(Registration {
        field: field.expect("at least one level"),
        realized_levels: levels,
    })
}

/// Registration target: body-masked water and fat fraction channels.
#[derive(Debug, Clone)]
pub struct AtlasSubject {
    pub water_frac: Volume3,
    pub fat_frac: Volume3,
    pub body_mask: BinaryMask,
}

impl AtlasSubject {
    /// Fractions and body mask from raw water/fat signals.
    pub fn from_signals(water: &Volume3, fat: &Volume3) -> Result<Self> {
        let body = body_mask(water, fat)?;
        Self::from_fractions(water_fraction(water, fat)?, fat_fraction(water, fat)?, body)
    }

    pub fn from_fractions(water_frac: Volume3, fat_frac: Volume3, body_mask: BinaryMask) -> Result<Self> {
        water_frac.grid().ensure_same(fat_frac.grid())?;
        water_frac.grid().ensure_same(body_mask.grid())?;
        Ok(AtlasSubject {
            water_frac,
            fat_frac,
            body_mask,
        })
    }

    /// Channels with everything outside the body zeroed.
    pub fn masked_channels(&self) -> Result<[Volume3; 2]> {
        Ok([
            self.water_frac.masked(&self.body_mask)?,
            self.fat_frac.masked(&self.body_mask)?,
        ])
    }
}

/// A labeled registration source.
#[derive(Debug, Clone)]
pub struct Template {
    pub id: String,
    /// Body-masked water and fat fractions.
    pub channels: [Volume3; 2],
    pub liver_seg: BinaryMask,
}

impl Template {
    pub fn new(id: impl Into<String>, subject: &AtlasSubject, liver_seg: BinaryMask) -> Result<Self> {
        subject.water_frac.grid().ensure_same(liver_seg.grid())?;
        if liver_seg.is_empty() {
            return Err(Error::EmptyMask);
        }
        Ok(Template {
            id: id.into(),
            channels: subject.masked_channels()?,
            liver_seg,
        })
    }
}

/// Registration settings plus the erosion applied to the fused liver mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtlasConfig {
    pub registration: RegistrationConfig,
    pub erosion_diameter: usize,
}

impl AtlasConfig {
    pub fn desk_scale() -> Self {
        AtlasConfig {
            registration: RegistrationConfig::default(),
            erosion_diameter: 3,
        }
    }

    pub fn paper_scale() -> Self {
        AtlasConfig {
            registration: RegistrationConfig::default(),
            erosion_diameter: 7,
        }
    }
}

impl Default for AtlasConfig {
    fn default() -> Self {
        AtlasConfig::desk_scale()
    }
}

/// Raw atlas readout with voxel counts at each stage.
#[derive(Debug, Clone, PartialEq)]
pub struct AtlasMeasurement {
    /// Median fat fraction (0..1) over the surviving voxels.
    pub median_ff: f64,
    pub warped_counts: Vec<usize>,
    pub intersection: usize,
    pub surviving_voxels: usize,
}

impl AtlasMeasurement {
    pub fn raw_ff_points(&self) -> f64 {
        100.0 * self.median_ff
    }
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Warped liver masks of every template on the subject grid.
pub fn propagate_templates(
    subject: &AtlasSubject,
    templates: &[Template],
    cfg: &RegistrationConfig,
) -> Result<Vec<BinaryMask>> {
    let fixed = subject.masked_channels()?;
    let grid = *subject.fat_frac.grid();
    templates
        .par_iter()
        .map(|t| {
            let reg = register(
                &[&fixed[0], &fixed[1]],
                &[&t.channels[0], &t.channels[1]],
                cfg,
            )?;
            warp_mask(&t.liver_seg, &reg.field, &grid)
        })
        .collect()
}

/// Fuse the propagated liver masks and read out the median fat fraction.
pub fn atlas_measure(subject: &AtlasSubject, templates: &[Template], cfg: &AtlasConfig) -> Result<AtlasMeasurement> {
    if templates.is_empty() {
        return Err(Error::InvalidParameter("atlas needs at least one template".into()));
    }
    let warped = propagate_templates(subject, templates, &cfg.registration)?;
    let refs: Vec<&BinaryMask> = warped.iter().collect();
    let fused = intersect_masks(&refs)?;
    let eroded = erode_spherical(&fused, cfg.erosion_diameter)?;
    let mut values: Vec<f64> = subject
        .fat_frac
        .data()
        .iter()
        .zip(eroded.data())
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v as f64)
        .collect();
    let warped_counts: Vec<usize> = warped.iter().map(BinaryMask::count).collect();
    let median_ff = median(&mut values).ok_or_else(|| Error::MeasurementFailure {
        warped: warped_counts.clone(),
        intersection: fused.count(),
        eroded: 0,
    })?;
    Ok(AtlasMeasurement {
        median_ff,
        warped_counts,
        intersection: fused.count(),
        surviving_voxels: values.len(),
    })
}

/// Linear map from raw atlas values to the reference scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationModel {
    pub slope: f64,
    pub intercept: f64,
}

impl CalibrationModel {
    pub const IDENTITY: CalibrationModel = CalibrationModel {
        slope: 1.0,
        intercept: 0.0,
    };

    pub fn apply(&self, raw: f64) -> f64 {
        self.slope * raw + self.intercept
    }
}

/// Ordinary least squares of `reference` on `raw`.
pub fn fit_calibration(raw: &[f64], reference: &[f64]) -> Result<CalibrationModel> {
    if raw.len() != reference.len() || raw.len() < 2 {
        return Err(Error::DegenerateDesign(format!(
            "need two or more paired values, got {} raw and {} reference",
            raw.len(),
            reference.len()
        )));
    }
    let n = raw.len() as f64;
    let mx = raw.iter().sum::<f64>() / n;
    let my = reference.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in raw.iter().zip(reference) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    if !(sxx > 0.0) {
        return Err(Error::DegenerateDesign("raw values are all equal".into()));
    }
    let slope = sxy / sxx;
    let model = CalibrationModel {
        slope,
        intercept: my - slope * mx,
    };
    if !(model.slope.is_finite() && model.intercept.is_finite()) {
        return Err(Error::DegenerateDesign("non-finite fit".into()));
    }
    Ok(model)
}

pub fn apply_calibration(model: &CalibrationModel, raw: f64) -> f64 {
    model.apply(raw)
}
