//! Three-dimensional scalar grids and binary masks.
//!
//! Axis convention used throughout the crate: `x` runs from the subject's
//! right (index 0) to the subject's left, `y` from anterior to posterior and
//! `z` from superior to inferior. Data is stored row-major with `x` fastest.

mod fusion;
mod mass;
mod morphology;
mod resample;

pub use fusion::{fuse_stations, StationStack};
pub use mass::{center_of_mass_index, quantile_of_mass_index};
pub use morphology::{ball_offsets, erode_spherical, intersect_masks};
pub use resample::{resample, ResampleSpec};

use crate::error::{Error, Result};

/// Axis selector under the project axis convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Geometry shared by volumes and masks: voxel counts, voxel size in mm and
/// the physical position of voxel `(0, 0, 0)`'s center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self> {
        let grid = Grid {
            dims,
            spacing,
            origin,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) {
            return Err(Error::InvalidGrid(format!("dims must be >= 1, got {:?}", self.dims)));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidGrid(format!(
                "spacing must be positive, got {:?}",
                self.spacing
            )));
        }
        if self.origin.iter().any(|o| !o.is_finite()) {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let rest = idx / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Physical position (mm) of a voxel center.
    #[inline]
    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + i as f64 * self.spacing[0],
            self.origin[1] + j as f64 * self.spacing[1],
            self.origin[2] + k as f64 * self.spacing[2],
        ]
    }

    /// Continuous voxel index of a physical point.
    #[inline]
    pub fn continuous_index(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.origin[0]) / self.spacing[0],
            (p[1] - self.origin[1]) / self.spacing[1],
            (p[2] - self.origin[2]) / self.spacing[2],
        ]
    }

    /// Grids agree on dims exactly and on spacing/origin to 1e-6 mm.
    pub fn same_as(&self, other: &Grid) -> bool {
        self.dims == other.dims
            && (0..3).all(|a| {
                (self.spacing[a] - other.spacing[a]).abs() <= 1e-6
                    && (self.origin[a] - other.origin[a]).abs() <= 1e-6
            })
    }

    pub fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

/// A scalar volume.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3 {
    grid: Grid,
    data: Vec<f32>,
}

impl Volume3 {
    pub fn new(grid: Grid, data: Vec<f32>) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "data length {} does not match dims {:?}",
                data.len(),
                grid.dims
            )));
        }
        Ok(Volume3 { grid, data })
    }

    pub fn filled(grid: Grid, value: f32) -> Self {
        Volume3 {
            grid,
            data: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for k in 0..grid.dims[2] {
            for j in 0..grid.dims[1] {
                for i in 0..grid.dims[0] {
                    data.push(f(i, j, k));
                }
            }
        }
        Volume3 { grid, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.grid.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: f32) {
        let idx = self.grid.index(i, j, k);
        self.data[idx] = v;
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Volume3 {
        Volume3 {
            grid: self.grid,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Zero every voxel outside `mask`.
    pub fn masked(&self, mask: &BinaryMask) -> Result<Volume3> {
        self.grid.ensure_same(mask.grid())?;
        Ok(Volume3 {
            grid: self.grid,
            data: self
                .data
                .iter()
                .zip(mask.data())
                .map(|(&v, &m)| if m { v } else { 0.0 })
                .collect(),
        })
    }

    /// Trilinear interpolation at a physical point (mm).
    ///
    /// Points outside the hull of voxel centers return 0.
    pub fn sample(&self, p: [f64; 3]) -> f64 {
        let g = self.grid.continuous_index(p);
        self.sample_index(g)
    }

    /// Trilinear interpolation at a continuous voxel index.
    pub fn sample_index(&self, g: [f64; 3]) -> f64 {
        const TOL: f64 = 1e-6;
        let dims = self.grid.dims;
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for a in 0..3 {
            let hi = (dims[a] - 1) as f64;
            let mut c = g[a];
            if !(c >= -TOL && c <= hi + TOL) {
                return 0.0;
            }
            c = c.clamp(0.0, hi);
            let f = c.floor();
            let mut b = f as usize;
            let mut t = c - f;
            if b >= dims[a] - 1 {
                b = dims[a] - 1;
                t = 0.0;
            }
            base[a] = b;
            frac[a] = t;
        }
        let nx = dims[0];
        let nxy = dims[0] * dims[1];
        let step = [
            usize::from(frac[0] > 0.0),
            usize::from(frac[1] > 0.0) * nx,
            usize::from(frac[2] > 0.0) * nxy,
        ];
        let i0 = base[0] + nx * base[1] + nxy * base[2];
        let d = &self.data;
        let v = |off: usize| d[i0 + off] as f64;
        let (tx, ty, tz) = (frac[0], frac[1], frac[2]);
        let c00 = v(0) * (1.0 - tx) + v(step[0]) * tx;
        let c10 = v(step[1]) * (1.0 - tx) + v(step[1] + step[0]) * tx;
        let c01 = v(step[2]) * (1.0 - tx) + v(step[2] + step[0]) * tx;
        let c11 = v(step[2] + step[1]) * (1.0 - tx) + v(step[2] + step[1] + step[0]) * tx;
        let c0 = c00 * (1.0 - ty) + c10 * ty;
        let c1 = c01 * (1.0 - ty) + c11 * ty;
        c0 * (1.0 - tz) + c1 * tz
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Free-function form of [`Volume3::sample`].
pub fn trilinear_sample(vol: &Volume3, point: [f64; 3]) -> f64 {
    vol.sample(point)
}

/// A binary mask on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    grid: Grid,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(grid: Grid, data: Vec<bool>) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.len() {
            return Err(Error::InvalidGrid(format!(
                "mask length {} does not match dims {:?}",
                data.len(),
                grid.dims
            )));
        }
        Ok(BinaryMask { grid, data })
    }

    pub fn empty(grid: Grid) -> Self {
        BinaryMask {
            grid,
            data: vec![false; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for k in 0..grid.dims[2] {
            for j in 0..grid.dims[1] {
                for i in 0..grid.dims[0] {
                    data.push(f(i, j, k));
                }
            }
        }
        BinaryMask { grid, data }
    }

    /// Voxels with value >= 0.5 are set.
    pub fn from_volume(vol: &Volume3) -> Self {
        BinaryMask {
            grid: *vol.grid(),
            data: vol.data().iter().map(|&v| v >= 0.5).collect(),
        }
    }

    pub fn to_volume(&self) -> Volume3 {
        Volume3 {
            grid: self.grid,
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> bool {
        self.data[self.grid.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, v: bool) {
        let idx = self.grid.index(i, j, k);
        self.data[idx] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            grid: self.grid,
            data: self.data.iter().map(|&b| !b).collect(),
        }
    }

    /// True when every set voxel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.data.len() == other.data.len()
            && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    /// Sørensen–Dice overlap with another mask on the same grid.
    pub fn dice(&self, other: &BinaryMask) -> Result<f64> {
        self.grid.ensure_same(&other.grid)?;
        let (mut both, mut total) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            both += usize::from(a && b);
            total += usize::from(a) + usize::from(b);
        }
        if total == 0 {
            return Ok(1.0);
        }
        Ok(2.0 * both as f64 / total as f64)
    }

    /// Inclusive index bounding box of set voxels, or `None` when empty.
    pub fn bounding_box(&self) -> Option<([usize; 3], [usize; 3])> {
        let mut lo = [usize::MAX; 3];
        let mut hi = [0usize; 3];
        let mut any = false;
        for (idx, _) in self.data.iter().enumerate().filter(|(_, &b)| b) {
            let c = self.grid.coords(idx);
            for a in 0..3 {
                lo[a] = lo[a].min(c[a]);
                hi[a] = hi[a].max(c[a]);
            }
            any = true;
        }
        any.then_some((lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(dims: [usize; 3]) -> Grid {
        Grid::new(dims, [1.0, 1.0, 1.0], [0.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn rejects_invalid_grids() {
        assert!(Grid::new([0, 1, 1], [1.0; 3], [0.0; 3]).is_err());
        assert!(Grid::new([1, 1, 1], [1.0, 0.0, 1.0], [0.0; 3]).is_err());
        assert!(Volume3::new(grid([2, 2, 2]), vec![0.0; 7]).is_err());
    }

    #[test]
    fn sample_at_voxel_center_is_identity() {
        let g = Grid::new([4, 3, 5], [2.0, 1.5, 3.0], [-1.0, 4.0, 10.0]).unwrap();
        let vol = Volume3::from_fn(g, |i, j, k| (i * 100 + j * 10 + k) as f32);
        for k in 0..5 {
            for j in 0..3 {
                for i in 0..4 {
                    let p = g.voxel_center(i, j, k);
                    assert_eq!(vol.sample(p), vol.get(i, j, k) as f64);
                }
            }
        }
    }

    #[test]
    fn sample_constant_volume() {
        let vol = Volume3::filled(grid([5, 5, 5]), 3.25);
        for p in [[0.3, 1.7, 2.2], [4.0, 0.0, 3.999], [2.5, 2.5, 2.5]] {
            assert!((vol.sample(p) - 3.25).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_midpoint_between_two_values() {
        // Values 2 and 4 along x, constant along y and z.
        let vol = Volume3::from_fn(grid([2, 2, 2]), |i, _, _| if i == 0 { 2.0 } else { 4.0 });
        assert!((vol.sample([0.5, 0.3, 0.8]) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn sample_outside_returns_zero() {
        let vol = Volume3::filled(grid([3, 3, 3]), 1.0);
        assert_eq!(vol.sample([-0.5, 1.0, 1.0]), 0.0);
        assert_eq!(vol.sample([1.0, 2.5, 1.0]), 0.0);
        assert_eq!(vol.sample([1.0, 1.0, 100.0]), 0.0);
    }

    #[test]
    fn sample_matches_hand_formula() {
        let vol = Volume3::from_fn(grid([2, 2, 2]), |i, j, k| (1 + i + 2 * j + 4 * k) as f32);
        // f is affine in the index, so trilinear reproduces it exactly.
        let p = [0.25, 0.6, 0.9];
        let expect = 1.0 + 0.25 + 2.0 * 0.6 + 4.0 * 0.9;
        assert!((vol.sample(p) - expect).abs() < 1e-12);
    }

    #[test]
    fn dice_and_subset() {
        let g = grid([4, 1, 1]);
        let a = BinaryMask::new(g, vec![true, true, false, false]).unwrap();
        let b = BinaryMask::new(g, vec![true, false, false, false]).unwrap();
        assert!(b.is_subset_of(&a));
        assert!(!a.is_subset_of(&b));
        assert!((a.dice(&b).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(a.bounding_box(), Some(([0, 0, 0], [1, 0, 0])));
    }
}
