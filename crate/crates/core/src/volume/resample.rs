use super::{Grid, Volume3};
use crate::error::{Error, Result};

/// Target voxel size and voxel counts for [`resample`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResampleSpec {
    pub target_spacing: [f64; 3],
    pub target_dims: [usize; 3],
}

impl ResampleSpec {
    pub fn new(target_spacing: [f64; 3], target_dims: [usize; 3]) -> Result<Self> {
        let spec = ResampleSpec {
            target_spacing,
            target_dims,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Common grid of the full-size study: 2.23 x 2.23 x 3 mm with 224 x 174
    /// x 370 voxels (x, y, z).
    pub fn paper_scale() -> Self {
        ResampleSpec {
            target_spacing: [2.23, 2.23, 3.0],
            target_dims: [224, 174, 370],
        }
    }

    /// Desk-scale grid: 64 x 48 x 96 voxels at 4 mm isotropic.
    pub fn desk_scale() -> Self {
        ResampleSpec {
            target_spacing: [4.0, 4.0, 4.0],
            target_dims: [64, 48, 96],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_dims.contains(&0)
            || self
                .target_spacing
                .iter()
                .any(|&s| !(s > 0.0) || !s.is_finite())
        {
            return Err(Error::InvalidParameter(format!("invalid resample spec {self:?}")));
        }
        Ok(())
    }

    /// Output grid when resampling a volume whose origin is `origin`.
    pub fn grid_at(&self, origin: [f64; 3]) -> Grid {
        Grid {
            dims: self.target_dims,
            spacing: self.target_spacing,
            origin,
        }
    }
}

/// Resample onto the grid described by `spec`, keeping the origin.
///
/// Every output voxel is the trilinear sample of `vol` at its center.
pub fn resample(vol: &Volume3, spec: &ResampleSpec) -> Result<Volume3> {
    spec.validate()?;
    let out = spec.grid_at(vol.grid().origin);
    if out.same_as(vol.grid()) {
        return Ok(vol.clone());
    }
    Ok(Volume3::from_fn(out, |i, j, k| {
        vol.sample(out.voxel_center(i, j, k)) as f32
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_spec_is_voxelwise_equal() {
        let g = Grid::new([5, 4, 3], [1.5, 2.0, 3.0], [1.0, 2.0, 3.0]).unwrap();
        let vol = Volume3::from_fn(g, |i, j, k| (i * j + k) as f32 * 0.7);
        let spec = ResampleSpec::new(g.spacing, g.dims).unwrap();
        assert_eq!(resample(&vol, &spec).unwrap(), vol);
    }

    #[test]
    fn constant_volume_stays_constant() {
        let g = Grid::new([10, 8, 6], [1.0, 1.0, 1.0], [0.0; 3]).unwrap();
        let vol = Volume3::filled(g, 4.5);
        let spec = ResampleSpec::new([1.7, 0.6, 2.5], [5, 12, 3]).unwrap();
        let out = resample(&vol, &spec).unwrap();
        assert!(out.data().iter().all(|&v| (v - 4.5).abs() < 1e-6));
    }

    #[test]
    fn downsampled_ramp_doubles_increment() {
        let g = Grid::new([16, 6, 4], [1.0; 3], [0.0; 3]).unwrap();
        let ramp = Volume3::from_fn(g, |i, _, _| 0.5 * i as f32);
        let spec = ResampleSpec::new([2.0, 1.0, 1.0], [8, 6, 4]).unwrap();
        let out = resample(&ramp, &spec).unwrap();
        let mut max_dev = 0.0f64;
        for k in 0..4 {
            for j in 0..6 {
                for i in 0..8 {
                    let expect = 1.0 * i as f64; // 0.5 per input voxel, 2 voxels per step
                    max_dev = max_dev.max((out.get(i, j, k) as f64 - expect).abs());
                }
            }
        }
        assert!(max_dev < 1e-5, "max deviation {max_dev}");
    }

    #[test]
    fn invalid_spec_rejected() {
        assert!(ResampleSpec::new([0.0, 1.0, 1.0], [1, 1, 1]).is_err());
        assert!(ResampleSpec::new([1.0, 1.0, 1.0], [1, 0, 1]).is_err());
    }

    #[test]
    fn presets() {
        let paper = ResampleSpec::paper_scale();
        assert_eq!(paper.target_dims, [224, 174, 370]);
        assert_eq!(paper.target_spacing, [2.23, 2.23, 3.0]);
        assert!(ResampleSpec::desk_scale().validate().is_ok());
    }
}
