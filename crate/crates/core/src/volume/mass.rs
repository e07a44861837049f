use super::{Axis, BinaryMask};
use crate::error::{Error, Result};

fn slab_counts(mask: &BinaryMask, axis: Axis) -> Vec<u64> {
    let g = mask.grid();
    let a = axis.index();
    let mut counts = vec![0u64; g.dims[a]];
    for (idx, _) in mask.data().iter().enumerate().filter(|(_, &b)| b) {
        counts[g.coords(idx)[a]] += 1;
    }
    counts
}

/// Index of the mask's center of mass along `axis`, rounded half away from
/// zero and clamped to the grid.
pub fn center_of_mass_index(mask: &BinaryMask, axis: Axis) -> Result<usize> {
    let counts = slab_counts(mask, axis);
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyMask);
    }
    let weighted: f64 = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| i as f64 * c as f64)
        .sum();
    let mean = weighted / total as f64;
    let last = counts.len() - 1;
    Ok((mean.round().max(0.0) as usize).min(last))
}

/// Smallest index `k` such that slabs `0..=k` along `axis` hold at least a
/// fraction `q` of the set voxels. Counting starts at index 0.
pub fn quantile_of_mass_index(mask: &BinaryMask, axis: Axis, q: f64) -> Result<usize> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::InvalidParameter(format!("mass quantile must be in (0, 1), got {q}")));
    }
    let counts = slab_counts(mask, axis);
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyMask);
    }
    let target = q * total as f64;
    let mut cum = 0u64;
    for (k, &c) in counts.iter().enumerate() {
        cum += c;
        if cum as f64 >= target {
            return Ok(k);
        }
    }
    Ok(counts.len() - 1)
}
