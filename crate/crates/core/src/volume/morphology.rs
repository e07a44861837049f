use super::BinaryMask;
use crate::error::{Error, Result};

/// Voxel offsets inside a ball of the given odd diameter, measured in voxel
/// indices regardless of physical spacing.
pub fn ball_offsets(diameter: usize) -> Result<Vec<[i64; 3]>> {
    if diameter == 0 || diameter.is_multiple_of(2) {
        return Err(Error::EvenDiameter(diameter));
    }
    let r = ((diameter - 1) / 2) as i64;
    let mut out = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy + dz * dz <= r * r {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    Ok(out)
}

/// Binary erosion with a spherical structuring element.
///
/// A voxel survives iff every voxel within radius `(diameter - 1) / 2` of it
/// is set. Voxels outside the grid count as unset.
pub fn erode_spherical(mask: &BinaryMask, diameter: usize) -> Result<BinaryMask> {
    let offsets = ball_offsets(diameter)?;
    if diameter == 1 {
        return Ok(mask.clone());
    }
    let g = *mask.grid();
    let r = ((diameter - 1) / 2) as i64;
    let [nx, ny, nz] = g.dims.map(|d| d as i64);
    let src = mask.data();
    let linear: Vec<i64> = offsets
        .iter()
        .map(|o| o[0] + nx * (o[1] + ny * o[2]))
        .collect();
    let mut out = vec![false; g.len()];
    for (idx, _) in src.iter().enumerate().filter(|(_, &b)| b) {
        let c = g.coords(idx).map(|v| v as i64);
        let interior = (0..3).all(|a| c[a] >= r && c[a] + r < [nx, ny, nz][a]);
        let keep = if interior {
            linear.iter().all(|&d| src[(idx as i64 + d) as usize])
        } else {
            offsets.iter().all(|o| {
                let p = [c[0] + o[0], c[1] + o[1], c[2] + o[2]];
                p[0] >= 0
                    && p[1] >= 0
                    && p[2] >= 0
                    && p[0] < nx
                    && p[1] < ny
                    && p[2] < nz
                    && src[(p[0] + nx * (p[1] + ny * p[2])) as usize]
            })
        };
        out[idx] = keep;
    }
    BinaryMask::new(g, out)
}

/// Voxelwise logical AND of one or more masks on the same grid.
pub fn intersect_masks(masks: &[&BinaryMask]) -> Result<BinaryMask> {
    let (first, rest) = masks
        .split_first()
        .ok_or_else(|| Error::InvalidParameter("intersect_masks needs at least one mask".into()))?;
    let mut data = first.data().to_vec();
    for m in rest {
        first.grid().ensure_same(m.grid())?;
        for (d, &b) in data.iter_mut().zip(m.data()) {
            *d &= b;
        }
    }
    BinaryMask::new(*first.grid(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    fn grid(n: usize) -> Grid {
        Grid::new([n, n, n], [1.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn ball_sizes() {
        assert_eq!(ball_offsets(1).unwrap().len(), 1);
        assert_eq!(ball_offsets(3).unwrap().len(), 7);
        assert_eq!(ball_offsets(5).unwrap().len(), 33);
        assert_eq!(ball_offsets(7).unwrap().len(), 123);
        assert!(matches!(ball_offsets(4), Err(Error::EvenDiameter(4))));
        assert!(ball_offsets(0).is_err());
    }

    #[test]
    fn single_voxel_vanishes() {
        let mut m = BinaryMask::empty(grid(11));
        m.set(5, 5, 5, true);
        assert!(erode_spherical(&m, 7).unwrap().is_empty());
    }

    #[test]
    fn diameter_one_is_identity() {
        let m = BinaryMask::from_fn(grid(6), |i, j, k| (i * 7 + j * 3 + k) % 4 != 0);
        assert_eq!(erode_spherical(&m, 1).unwrap(), m);
    }

    #[test]
    fn cube_shrinks_by_one() {
        let inside = |i: usize, lo: usize, hi: usize| i >= lo && i <= hi;
        let m = BinaryMask::from_fn(grid(13), |i, j, k| {
            inside(i, 2, 10) && inside(j, 2, 10) && inside(k, 2, 10)
        });
        let expect = BinaryMask::from_fn(grid(13), |i, j, k| {
            inside(i, 3, 9) && inside(j, 3, 9) && inside(k, 3, 9)
        });
        assert_eq!(erode_spherical(&m, 3).unwrap(), expect);
    }

    #[test]
    fn grid_border_counts_as_unset() {
        let full = BinaryMask::from_fn(grid(5), |_, _, _| true);
        let e = erode_spherical(&full, 3).unwrap();
        assert_eq!(e.count(), 27);
        assert!(e.get(2, 2, 2) && !e.get(0, 2, 2));
    }

    #[test]
    fn intersection_basics() {
        let m = BinaryMask::from_fn(grid(4), |i, j, _| (i + j) % 3 == 0);
        assert_eq!(intersect_masks(&[&m]).unwrap(), m);
        assert!(intersect_masks(&[&m, &m.complement()]).unwrap().is_empty());
        assert!(intersect_masks(&[]).is_err());
        let other = BinaryMask::empty(grid(5));
        assert!(intersect_masks(&[&m, &other]).is_err());
    }
}
