//! Raw volume file (RVF) reading and writing.
//!
//! Layout, all little-endian:
//!
//! ```text
//! b"RVF1"
//! u32 dims[3]        (x, y, z)
//! f32 spacing[3]     (mm)
//! f32 origin[3]      (mm, center of voxel 0,0,0)
//! u32 channel count
//! channel 0 .. n-1   (dims product f32 values each, x fastest)
//! ```
//!
//! Masks are stored as 0.0 / 1.0.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{BinaryMask, Grid, Volume3};

pub const MAGIC: &[u8; 4] = b"RVF1";

/// Serialize channels sharing `grid`.
pub fn encode(grid: &Grid, channels: &[&[f32]]) -> Result<Vec<u8>> {
    grid.validate()?;
    let n = grid.len();
    if let Some(bad) = channels.iter().find(|c| c.len() != n) {
        return Err(Error::Format(format!(
            "channel length {} does not match grid size {n}",
            bad.len()
        )));
    }
    let mut out = Vec::with_capacity(44 + 4 * n * channels.len());
    out.extend_from_slice(MAGIC);
    for d in grid.dims {
        let d = u32::try_from(d).map_err(|_| Error::Format("dimension exceeds u32".into()))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for s in grid.spacing {
        out.extend_from_slice(&(s as f32).to_le_bytes());
    }
    for o in grid.origin {
        out.extend_from_slice(&(o as f32).to_le_bytes());
    }
    out.extend_from_slice(&(channels.len() as u32).to_le_bytes());
    for ch in channels {
        for v in *ch {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parse an RVF byte buffer into its grid and channels.
pub fn decode(bytes: &[u8]) -> Result<(Grid, Vec<Vec<f32>>)> {
    if bytes.len() < 44 || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing RVF1 header".into()));
    }
    let word = |i: usize| -> [u8; 4] { bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap() };
    let dims = [0, 1, 2].map(|i| u32::from_le_bytes(word(i)) as usize);
    let spacing = [3, 4, 5].map(|i| f32::from_le_bytes(word(i)) as f64);
    let origin = [6, 7, 8].map(|i| f32::from_le_bytes(word(i)) as f64);
    let count = u32::from_le_bytes(word(9)) as usize;
    let grid = Grid::new(dims, spacing, origin)?;
    let n = grid.len();
    let expected = 44 + 4 * n * count;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} bytes for {count} channel(s) of {dims:?}, found {}",
            bytes.len()
        )));
    }
    let channels = (0..count)
        .map(|c| {
            bytes[44 + 4 * n * c..44 + 4 * n * (c + 1)]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect();
    Ok((grid, channels))
}

/// Grid as it survives an RVF roundtrip (spacing and origin stored as f32).
pub fn stored_grid(grid: &Grid) -> Grid {
    Grid {
        dims: grid.dims,
        spacing: grid.spacing.map(|s| s as f32 as f64),
        origin: grid.origin.map(|o| o as f32 as f64),
    }
}

pub fn write(path: impl AsRef<Path>, grid: &Grid, channels: &[&[f32]]) -> Result<()> {
    fs::write(path, encode(grid, channels)?)?;
    Ok(())
}

pub fn read(path: impl AsRef<Path>) -> Result<(Grid, Vec<Vec<f32>>)> {
    decode(&fs::read(path)?)
}

/// Write volumes that share a grid as channels of one file.
pub fn write_volumes(path: impl AsRef<Path>, volumes: &[&Volume3]) -> Result<()> {
    let grid = volumes
        .first()
        .ok_or_else(|| Error::Format("no channels to write".into()))?
        .grid();
    for v in volumes {
        grid.ensure_same(v.grid())?;
    }
    let channels: Vec<&[f32]> = volumes.iter().map(|v| v.data()).collect();
    write(path, grid, &channels)
}

pub fn read_volumes(path: impl AsRef<Path>) -> Result<Vec<Volume3>> {
    let (grid, channels) = read(path)?;
    channels.into_iter().map(|c| Volume3::new(grid, c)).collect()
}

pub fn mask_channel(mask: &BinaryMask) -> Vec<f32> {
    mask.data().iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

pub fn write_mask(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    write(path, mask.grid(), &[&mask_channel(mask)])
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let vols = read_volumes(path)?;
    let vol = vols
        .first()
        .ok_or_else(|| Error::Format("mask file has no channels".into()))?;
    Ok(BinaryMask::from_volume(vol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn roundtrip(nx in 1usize..5, ny in 1usize..5, nz in 1usize..5, nch in 0usize..3,
                     sx in 0.1f32..5.0, oz in -100.0f32..100.0, seed in any::<u32>()) {
            let grid = Grid::new([nx, ny, nz], [sx as f64, 1.0, 2.5], [0.0, -3.0, oz as f64]).unwrap();
            let chans: Vec<Vec<f32>> = (0..nch)
                .map(|c| (0..grid.len()).map(|i| (i as u32 ^ seed ^ c as u32) as f32 * 0.25).collect())
                .collect();
            let refs: Vec<&[f32]> = chans.iter().map(|c| c.as_slice()).collect();
            let bytes = encode(&grid, &refs).unwrap();
            let (g2, c2) = decode(&bytes).unwrap();
            prop_assert_eq!(g2, stored_grid(&grid));
            prop_assert_eq!(c2, chans);
        }
    }

    #[test]
    fn header_layout_is_fixed() {
        let grid = Grid::new([2, 1, 1], [1.0, 2.0, 3.0], [0.5, 0.0, -1.0]).unwrap();
        let bytes = encode(&grid, &[&[1.0, 0.0]]).unwrap();
        assert_eq!(&bytes[..4], b"RVF1");
        assert_eq!(&bytes[4..8], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[28..32], &0.5f32.to_le_bytes());
        assert_eq!(&bytes[40..44], &1u32.to_le_bytes());
        assert_eq!(&bytes[44..48], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 52);
    }

    #[test]
    fn rejects_truncated_and_bad_magic() {
        let grid = Grid::new([2, 2, 2], [1.0; 3], [0.0; 3]).unwrap();
        let bytes = encode(&grid, &[&[0.0; 8]]).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        assert!(encode(&grid, &[&[0.0; 7]]).is_err());
    }
}
