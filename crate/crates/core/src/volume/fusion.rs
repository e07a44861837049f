use super::{Grid, Volume3};
use crate::error::{Error, Result};

/// Ordered acquisition stations, superior first.
///
/// Each station is a volume sharing the x/y geometry of the others; its z
/// position comes from the station's own origin.
#[derive(Debug, Clone, PartialEq)]
pub struct StationStack {
    stations: Vec<Volume3>,
}

impl StationStack {
    pub fn new(stations: Vec<Volume3>) -> Result<Self> {
        let stack = StationStack { stations };
        stack.validate()?;
        Ok(stack)
    }

    pub fn stations(&self) -> &[Volume3] {
        &self.stations
    }

    /// Superior edge (mm) of every station.
    pub fn z_offsets(&self) -> Vec<f64> {
        self.stations
            .iter()
            .map(|s| s.grid().origin[2] - 0.5 * s.grid().spacing[2])
            .collect()
    }

    /// Split a volume into `count` stations along z that overlap by
    /// `overlap` slices.
    pub fn split(vol: &Volume3, count: usize, overlap: usize) -> Result<Self> {
        let nz = vol.dims()[2];
        if count == 0 {
            return Err(Error::Stations("station count must be >= 1".into()));
        }
        let len = (nz + (count - 1) * overlap).div_ceil(count);
        if count > 1 && len <= overlap {
            return Err(Error::Stations(format!(
                "{count} stations with overlap {overlap} do not fit in {nz} slices"
            )));
        }
        let g = vol.grid();
        let plane = g.dims[0] * g.dims[1];
        let mut stations = Vec::with_capacity(count);
        for s in 0..count {
            let start = s * (len - overlap.min(len - 1));
            if start >= nz {
                return Err(Error::Stations(format!(
                    "station {s} starts beyond the volume ({start} >= {nz})"
                )));
            }
            let end = if s + 1 == count { nz } else { (start + len).min(nz) };
            let grid = Grid {
                dims: [g.dims[0], g.dims[1], end - start],
                spacing: g.spacing,
                origin: [
                    g.origin[0],
                    g.origin[1],
                    g.origin[2] + start as f64 * g.spacing[2],
                ],
            };
            let data = vol.data()[start * plane..end * plane].to_vec();
            stations.push(Volume3::new(grid, data)?);
        }
        StationStack::new(stations)
    }

    fn validate(&self) -> Result<()> {
        let first = self
            .stations
            .first()
            .ok_or_else(|| Error::Stations("empty station list".into()))?
            .grid();
        for (n, st) in self.stations.iter().enumerate().skip(1) {
            let g = st.grid();
            let same_xy = g.dims[0] == first.dims[0]
                && g.dims[1] == first.dims[1]
                && (0..3).all(|a| (g.spacing[a] - first.spacing[a]).abs() <= 1e-6)
                && (0..2).all(|a| (g.origin[a] - first.origin[a]).abs() <= 1e-6);
            if !same_xy {
                return Err(Error::Stations(format!(
                    "station {n} has mismatched x/y geometry or spacing"
                )));
            }
            let shift = (g.origin[2] - first.origin[2]) / first.spacing[2];
            if (shift - shift.round()).abs() > 1e-4 {
                return Err(Error::Stations(format!(
                    "station {n} is not aligned to the slice lattice"
                )));
            }
        }
        let offsets = self.z_offsets();
        for n in 1..self.stations.len() {
            let prev = self.stations[n - 1].grid();
            let prev_end = offsets[n - 1] + prev.dims[2] as f64 * prev.spacing[2];
            if offsets[n] < offsets[n - 1] - 1e-6 || offsets[n] > prev_end + 1e-6 {
                return Err(Error::Stations(format!(
                    "station {n} neither overlaps nor abuts station {}",
                    n - 1
                )));
            }
        }
        Ok(())
    }
}

/// Fuse stations into one volume covering their union z extent.
///
/// Slices covered by several stations take the unweighted mean.
pub fn fuse_stations(stack: &StationStack) -> Result<Volume3> {
    stack.validate()?;
    let first = *stack.stations[0].grid();
    let sz = first.spacing[2];
    let z0 = first.origin[2];
    let slice_of = |g: &Grid| ((g.origin[2] - z0) / sz).round() as i64;
    let mut lo = i64::MAX;
    let mut hi = i64::MIN;
    for st in &stack.stations {
        let s = slice_of(st.grid());
        lo = lo.min(s);
        hi = hi.max(s + st.dims()[2] as i64);
    }
    let nz = (hi - lo) as usize;
    let grid = Grid {
        dims: [first.dims[0], first.dims[1], nz],
        spacing: first.spacing,
        origin: [first.origin[0], first.origin[1], z0 + lo as f64 * sz],
    };
    let plane = first.dims[0] * first.dims[1];
    let mut sum = vec![0.0f64; grid.len()];
    let mut cover = vec![0u32; nz];
    for st in &stack.stations {
        let start = (slice_of(st.grid()) - lo) as usize;
        for (local, chunk) in st.data().chunks_exact(plane).enumerate() {
            let k = start + local;
            cover[k] += 1;
            let dst = &mut sum[k * plane..(k + 1) * plane];
            for (d, &v) in dst.iter_mut().zip(chunk) {
                *d += v as f64;
            }
        }
    }
    let mut data = vec![0.0f32; grid.len()];
    for k in 0..nz {
        let c = cover[k].max(1) as f64;
        for idx in k * plane..(k + 1) * plane {
            data[idx] = (sum[idx] / c) as f32;
        }
    }
    Volume3::new(grid, data)
}
