//! Fat fraction maps, body masking and the two-dimensional network input.
//!
//! The network input stacks the superior half of a coronal fat-fraction
//! slice (taken at the body's center of mass along y) above the superior half
//! of a sagittal slice (taken at a quarter of the body mass along x, counted
//! from the subject's right), then quantizes fat fractions 0..0.5 to 8 bits.
//! The body mask only guides slice selection and cropping; it is not applied
//! to the pixel data.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{
    center_of_mass_index, quantile_of_mass_index, Axis, BinaryMask, Volume3,
};

/// Signal sums below this are treated as empty voxels.
pub const SIGNAL_EPSILON: f64 = 1e-6;

fn ratio_volume(num: &Volume3, other: &Volume3) -> Result<Volume3> {
    num.grid().ensure_same(other.grid())?;
    let data = num
        .data()
        .iter()
        .zip(other.data())
        .map(|(&a, &b)| {
            let (a, b) = (a as f64, b as f64);
            let sum = a + b;
            if sum < SIGNAL_EPSILON {
                0.0
            } else {
                (a / sum) as f32
            }
        })
        .collect();
    Volume3::new(*num.grid(), data)
}

/// Voxelwise `fat / (water + fat)`, 0 where the summed signal is below
/// [`SIGNAL_EPSILON`].
pub fn fat_fraction(water: &Volume3, fat: &Volume3) -> Result<Volume3> {
    ratio_volume(fat, water)
}

/// Voxelwise `water / (water + fat)`, same guard as [`fat_fraction`].
pub fn water_fraction(water: &Volume3, fat: &Volume3) -> Result<Volume3> {
    ratio_volume(water, fat)
}

fn summed(water: &Volume3, fat: &Volume3) -> Result<Volume3> {
    water.grid().ensure_same(fat.grid())?;
    let data = water
        .data()
        .iter()
        .zip(fat.data())
        .map(|(&w, &f)| ((w as f64) + (f as f64)) as f32)
        .collect();
    Volume3::new(*water.grid(), data)
}

/// Bin index of each value over `bins` equal bins spanning `[lo, hi]`.
pub fn histogram_bin(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let t = (v - lo) / (hi - lo) * bins as f64;
    (t.floor().max(0.0) as usize).min(bins - 1)
}

/// Between-class variance for a split after bin `k`, with bin indices as the
/// class values. Proportional to the value-space variance.
pub(crate) fn between_class_variance(n0: u64, s0: u64, n1: u64, s1: u64) -> f64 {
    if n0 == 0 || n1 == 0 {
        return 0.0;
    }
    let n = (n0 + n1) as f64;
    let (w0, w1) = (n0 as f64 / n, n1 as f64 / n);
    let d = s0 as f64 / n0 as f64 - s1 as f64 / n1 as f64;
    w0 * w1 * d * d
}

/// Otsu threshold over a `bins`-bin histogram spanning the data range.
///
/// The split maximizing between-class variance wins, ties going to the lowest
/// bin. The threshold is the upper edge of the last bin of the lower class.
pub fn otsu_threshold(values: &[f32], bins: usize) -> Result<f64> {
    if bins < 2 {
        return Err(Error::InvalidParameter("otsu needs at least 2 bins".into()));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v as f64), hi.max(v as f64))
        });
    if !(hi > lo) {
        return Err(Error::ConstantInput("otsu needs at least two distinct values".into()));
    }
    let mut hist = vec![0u64; bins];
    for &v in values {
        hist[histogram_bin(v as f64, lo, hi, bins)] += 1;
    }
    let total_n: u64 = hist.iter().sum();
    let total_s: u64 = hist.iter().enumerate().map(|(b, &c)| b as u64 * c).sum();
    let (mut n0, mut s0) = (0u64, 0u64);
    let mut best = (0usize, f64::NEG_INFINITY);
    for (k, &c) in hist.iter().enumerate().take(bins - 1) {
        n0 += c;
        s0 += k as u64 * c;
        let var = between_class_variance(n0, s0, total_n - n0, total_s - s0);
        if var > best.1 {
            best = (k, var);
        }
    }
    Ok(lo + (best.0 + 1) as f64 * (hi - lo) / bins as f64)
}

/// Number of histogram bins used for body masking.
pub const OTSU_BINS: usize = 256;

/// Body mask from the summed water+fat signal.
///
/// The threshold is the mean of per-coronal-slice (fixed y) Otsu thresholds,
/// skipping slices with a single distinct value.
pub fn body_mask(water: &Volume3, fat: &Volume3) -> Result<BinaryMask> {
    let sum = summed(water, fat)?;
    let threshold = body_threshold(&sum)?;
    BinaryMask::new(
        *sum.grid(),
        sum.data().iter().map(|&v| v as f64 > threshold).collect(),
    )
}

fn body_threshold(sum: &Volume3) -> Result<f64> {
    let [nx, ny, nz] = sum.dims();
    let mut plane = Vec::with_capacity(nx * nz);
    let mut thresholds = Vec::new();
    for j in 0..ny {
        plane.clear();
        for k in 0..nz {
            for i in 0..nx {
                plane.push(sum.get(i, j, k));
            }
        }
        match otsu_threshold(&plane, OTSU_BINS) {
            Ok(t) => thresholds.push(t),
            Err(Error::ConstantInput(_)) => {}
            Err(e) => return Err(e),
        }
    }
    if thresholds.is_empty() {
        return Err(Error::ConstantInput("every coronal slice is constant".into()));
    }
    Ok(thresholds.iter().sum::<f64>() / thresholds.len() as f64)
}

/// Indices of the coronal and sagittal planes fed to the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SliceSelection {
    pub coronal_y: usize,
    pub sagittal_x: usize,
}

/// Fraction of body mass (from the subject's right) locating the sagittal
/// slice.
pub const SAGITTAL_MASS_QUANTILE: f64 = 0.25;

pub fn select_slices(mask: &BinaryMask) -> Result<SliceSelection> {
    Ok(SliceSelection {
        coronal_y: center_of_mass_index(mask, Axis::Y)?,
        sagittal_x: quantile_of_mass_index(mask, Axis::X, SAGITTAL_MASS_QUANTILE)?,
    })
}

/// Fat fraction window and quantization levels of the 8-bit input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodingSpec {
    pub ff_min: f64,
    pub ff_max: f64,
    pub levels: u32,
}

impl Default for EncodingSpec {
    fn default() -> Self {
        EncodingSpec {
            ff_min: 0.0,
            ff_max: 0.5,
            levels: 256,
        }
    }
}

impl EncodingSpec {
    pub fn step(&self) -> f64 {
        (self.ff_max - self.ff_min) / (self.levels - 1) as f64
    }
}

/// Quantize a fat fraction, clamping to the window and rounding half up.
pub fn encode8(ff: f64, spec: &EncodingSpec) -> u8 {
    let top = (spec.levels - 1) as f64;
    let t = (ff.clamp(spec.ff_min, spec.ff_max) - spec.ff_min) / (spec.ff_max - spec.ff_min);
    let code = (t * top + 0.5).floor();
    if code.is_nan() {
        0
    } else {
        code.clamp(0.0, top.min(255.0)) as u8
    }
}

pub fn decode8(code: u8, spec: &EncodingSpec) -> f64 {
    spec.ff_min + code as f64 / (spec.levels - 1) as f64 * (spec.ff_max - spec.ff_min)
}

/// An 8-bit single-channel image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
    pub encoding: EncodingSpec,
}

impl SliceImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>, encoding: EncodingSpec) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "image data length {} does not match {width}x{height}",
                data.len()
            )));
        }
        Ok(SliceImage {
            width,
            height,
            data,
            encoding,
        })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    /// Pixels decoded back to fat fractions.
    pub fn decoded(&self) -> Vec<f32> {
        let lut: Vec<f32> = (0..=255u8).map(|c| decode8(c, &self.encoding) as f32).collect();
        self.data.iter().map(|&c| lut[c as usize]).collect()
    }

    /// Binary PGM (P5) encoding.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn from_pgm(bytes: &[u8], encoding: EncodingSpec) -> Result<Self> {
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Format("truncated PGM header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P5" || fields[3] != "255" {
            return Err(Error::Format("expected an 8-bit P5 PGM".into()));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad PGM dimension {s:?}")))
        };
        let (width, height) = (parse(&fields[1])?, parse(&fields[2])?);
        let data = bytes
            .get(pos + 1..)
            .ok_or_else(|| Error::Format("missing PGM pixel data".into()))?;
        SliceImage::new(width, height, data.to_vec(), encoding)
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_pgm())?;
        Ok(())
    }

    pub fn read_pgm(path: impl AsRef<Path>, encoding: EncodingSpec) -> Result<Self> {
        SliceImage::from_pgm(&std::fs::read(path)?, encoding)
    }
}

/// Crop and concatenation geometry of the network input.
///
/// Each crop keeps the superior half of z and a fixed-width lateral window
/// centered on the body's extent in that plane; both crops are resampled to
/// `width` x `height / 2` and stacked, coronal on top.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayoutConfig {
    pub width: usize,
    pub height: usize,
    /// Lateral (x) window of the coronal crop, mm.
    pub coronal_window_mm: f64,
    /// Lateral (y) window of the sagittal crop, mm.
    pub sagittal_window_mm: f64,
}

impl LayoutConfig {
    /// 96 rows x 44 columns over a 64 x 48 x 96 grid at 4 mm.
    pub fn desk_scale() -> Self {
        LayoutConfig {
            width: 44,
            height: 96,
            coronal_window_mm: 256.0,
            sagittal_window_mm: 192.0,
        }
    }

    /// 376 rows x 176 columns over the 2.23 mm common grid.
    pub fn paper_scale() -> Self {
        LayoutConfig {
            width: 176,
            height: 376,
            coronal_window_mm: 224.0 * 2.23,
            sagittal_window_mm: 174.0 * 2.23,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height < 2 || !self.height.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "layout needs width >= 1 and an even height >= 2, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.coronal_window_mm > 0.0 && self.sagittal_window_mm > 0.0) {
            return Err(Error::InvalidParameter("crop windows must be positive".into()));
        }
        Ok(())
    }

    pub fn crop_height(&self) -> usize {
        self.height / 2
    }
}

impl Default for LayoutConfig {
    fn default() -> Self {
        LayoutConfig::desk_scale()
    }
}

/// Where the two crops were taken from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropGeometry {
    pub selection: SliceSelection,
    /// Superior rows kept (z indices `0..kept_rows`).
    pub kept_rows: usize,
    /// Inclusive x interval of the body in the coronal plane.
    pub coronal_bounds: (usize, usize),
    /// Inclusive y interval of the body in the sagittal plane.
    pub sagittal_bounds: (usize, usize),
}

fn interval(mut it: impl Iterator<Item = usize>) -> Option<(usize, usize)> {
    let first = it.next()?;
    Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
}

/// Select slices and crop bounds from the body mask.
pub fn crop_geometry(mask: &BinaryMask) -> Result<CropGeometry> {
    let selection = select_slices(mask)?;
    let [nx, ny, nz] = mask.dims();
    let kept_rows = nz.div_ceil(2);
    let coronal = interval((0..kept_rows).flat_map(|k| {
        (0..nx).filter(move |&i| mask.get(i, selection.coronal_y, k))
    }));
    let sagittal = interval((0..kept_rows).flat_map(|k| {
        (0..ny).filter(move |&j| mask.get(selection.sagittal_x, j, k))
    }));
    // An empty plane (body entirely inferior) falls back to the whole axis.
    Ok(CropGeometry {
        selection,
        kept_rows,
        coronal_bounds: coronal.unwrap_or((0, nx - 1)),
        sagittal_bounds: sagittal.unwrap_or((0, ny - 1)),
    })
}

/// Resample both crops of `vol` into one `height x width` buffer.
pub fn compose_planes(vol: &Volume3, geom: &CropGeometry, layout: &LayoutConfig) -> Result<Vec<f64>> {
    layout.validate()?;
    let g = vol.grid();
    let crop_h = layout.crop_height();
    let w = layout.width;
    let mut out = vec![0.0f64; layout.height * w];
    let z_of = |r: usize| (r as f64 + 0.5) * geom.kept_rows as f64 / crop_h as f64 - 0.5;
    let lateral = |bounds: (usize, usize), window_vox: f64, c: usize| {
        let center = 0.5 * (bounds.0 + bounds.1) as f64;
        center + ((c as f64 + 0.5) / w as f64 - 0.5) * window_vox
    };
    let cor_window = layout.coronal_window_mm / g.spacing[0];
    let sag_window = layout.sagittal_window_mm / g.spacing[1];
    let y = geom.selection.coronal_y as f64;
    let x = geom.selection.sagittal_x as f64;
    for r in 0..crop_h {
        let z = z_of(r);
        for c in 0..w {
            let xc = lateral(geom.coronal_bounds, cor_window, c);
            out[r * w + c] = vol.sample_index([xc, y, z]);
            let yc = lateral(geom.sagittal_bounds, sag_window, c);
            out[(crop_h + r) * w + c] = vol.sample_index([x, yc, z]);
        }
    }
    Ok(out)
}

/// Network input plus the geometry it was cut from.
#[derive(Debug, Clone, PartialEq)]
pub struct ComposedInput {
    pub image: SliceImage,
    pub geometry: CropGeometry,
}

pub fn compose_input_detailed(
    ff: &Volume3,
    mask: &BinaryMask,
    layout: &LayoutConfig,
    encoding: &EncodingSpec,
) -> Result<ComposedInput> {
    ff.grid().ensure_same(mask.grid())?;
    let geometry = crop_geometry(mask)?;
    let pixels = compose_planes(ff, &geometry, layout)?;
    let data = pixels.iter().map(|&v| encode8(v, encoding)).collect();
    Ok(ComposedInput {
        image: SliceImage::new(layout.width, layout.height, data, *encoding)?,
        geometry,
    })
}

/// Compose the 8-bit coronal/sagittal network input.
pub fn compose_input(ff: &Volume3, mask: &BinaryMask, layout: &LayoutConfig) -> Result<SliceImage> {
    Ok(compose_input_detailed(ff, mask, layout, &EncodingSpec::default())?.image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    fn grid(dims: [usize; 3]) -> Grid {
        Grid::new(dims, [1.0; 3], [0.0; 3]).unwrap()
    }

    #[test]
    fn fat_fraction_basics() {
        let g = grid([2, 1, 1]);
        let w = Volume3::new(g, vec![1.0, 0.0]).unwrap();
        let f = Volume3::new(g, vec![1.0, 0.0]).unwrap();
        let ff = fat_fraction(&w, &f).unwrap();
        assert_eq!(ff.data(), &[0.5, 0.0]);
        let other = Volume3::filled(grid([1, 2, 1]), 1.0);
        assert!(matches!(fat_fraction(&w, &other), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn otsu_separates_bimodal() {
        let mut v = vec![0.0f32; 100];
        v.extend(std::iter::repeat_n(10.0f32, 100));
        let t = otsu_threshold(&v, 256).unwrap();
        assert!(t > 0.0 && t < 10.0);
        assert!(matches!(otsu_threshold(&[3.0; 10], 256), Err(Error::ConstantInput(_))));
    }

    #[test]
    fn otsu_scales_with_data() {
        let v: Vec<f32> = (0..500).map(|i| ((i * 37) % 101) as f32 * 0.3 + (i % 2) as f32 * 20.0).collect();
        let t = otsu_threshold(&v, 256).unwrap();
        for c in [0.5f32, 2.0, 4.0] {
            let scaled: Vec<f32> = v.iter().map(|x| x * c).collect();
            let ts = otsu_threshold(&scaled, 256).unwrap();
            assert!((ts - c as f64 * t).abs() <= 1e-9 * ts.abs(), "{ts} vs {}", c as f64 * t);
        }
    }

    #[test]
    fn body_mask_of_background_only_errors() {
        let z = Volume3::filled(grid([4, 4, 4]), 0.0);
        assert!(matches!(body_mask(&z, &z), Err(Error::ConstantInput(_))));
    }

    #[test]
    fn encode_endpoints_and_clamp() {
        let e = EncodingSpec::default();
        assert_eq!(encode8(0.0, &e), 0);
        assert_eq!(encode8(0.5, &e), 255);
        assert_eq!(encode8(0.7, &e), 255);
        assert_eq!(encode8(-0.1, &e), 0);
        // Half-way between codes 1 and 2 rounds up.
        assert_eq!(encode8(1.5 * e.step(), &e), 2);
    }

    #[test]
    fn exhaustive_code_roundtrip() {
        let e = EncodingSpec::default();
        for v in 0..=255u8 {
            let d = decode8(v, &e);
            assert_eq!(encode8(d, &e), v);
            assert_eq!(decode8(encode8(d, &e), &e), d);
        }
    }

    #[test]
    fn single_column_selection() {
        let g = grid([9, 7, 5]);
        let m = BinaryMask::from_fn(g, |i, j, _| i == 3 && j == 5);
        let s = select_slices(&m).unwrap();
        assert_eq!(s, SliceSelection { coronal_y: 5, sagittal_x: 3 });
        assert!(select_slices(&BinaryMask::empty(g)).is_err());
    }

    #[test]
    fn pgm_roundtrip() {
        let img = SliceImage::new(3, 2, vec![0, 1, 2, 250, 254, 255], EncodingSpec::default()).unwrap();
        let bytes = img.to_pgm();
        assert!(bytes.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(SliceImage::from_pgm(&bytes, EncodingSpec::default()).unwrap(), img);
        assert!(SliceImage::from_pgm(b"P2\n1 1\n255\n\x00", EncodingSpec::default()).is_err());
    }

    #[test]
    fn layout_presets() {
        let paper = LayoutConfig::paper_scale();
        assert_eq!((paper.height, paper.width), (376, 176));
        assert!(paper.validate().is_ok());
        let bad = LayoutConfig { height: 5, ..LayoutConfig::desk_scale() };
        assert!(bad.validate().is_err());
    }
}
