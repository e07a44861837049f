use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// One layer of a [`NetworkConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// Square kernel, zero padding `kernel / 2`.
    Conv2d {
        kernel: usize,
        stride: usize,
        out_channels: usize,
    },
    Relu,
    /// 2x2 window, stride 2, odd edges dropped.
    MaxPool2,
    GlobalAvgPool,
    /// Fully connected over the flattened input.
    Linear { out: usize },
}

impl LayerSpec {
    /// Output shape (without batch) for an input shape `[C, H, W]` or `[F]`.
    pub fn out_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let spatial = || -> Result<[usize; 3]> {
            match input {
                &[c, h, w] => Ok([c, h, w]),
                _ => Err(Error::Shape(format!("{self} needs a [C, H, W] input, got {input:?}"))),
            }
        };
        match *self {
            LayerSpec::Conv2d {
                kernel,
                stride,
                out_channels,
            } => {
                let [_, h, w] = spatial()?;
                if kernel == 0 || stride == 0 || out_channels == 0 {
                    return Err(Error::Shape(format!("{self} has a zero parameter")));
                }
                let pad = kernel / 2;
                if h + 2 * pad < kernel || w + 2 * pad < kernel {
                    return Err(Error::Shape(format!("{self} kernel exceeds input {input:?}")));
                }
                Ok(vec![
                    out_channels,
                    (h + 2 * pad - kernel) / stride + 1,
                    (w + 2 * pad - kernel) / stride + 1,
                ])
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::MaxPool2 => {
                let [c, h, w] = spatial()?;
                if h < 2 || w < 2 {
                    return Err(Error::Shape(format!("maxpool needs at least 2x2, got {input:?}")));
                }
                Ok(vec![c, h / 2, w / 2])
            }
            LayerSpec::GlobalAvgPool => {
                let [c, _, _] = spatial()?;
                Ok(vec![c])
            }
            LayerSpec::Linear { out } => {
                if out == 0 {
                    return Err(Error::Shape("linear layer needs out >= 1".into()));
                }
                Ok(vec![out])
            }
        }
    }

    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::Linear { .. })
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Conv2d {
                kernel,
                stride,
                out_channels,
            } => write!(f, "conv({kernel},{stride},{out_channels})"),
            LayerSpec::Relu => write!(f, "relu"),
            LayerSpec::MaxPool2 => write!(f, "maxpool"),
            LayerSpec::GlobalAvgPool => write!(f, "gap"),
            LayerSpec::Linear { out } => write!(f, "linear({out})"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    /// Parses `conv(k,stride,out)`, `relu`, `maxpool`, `gap`, `linear(out)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || Error::Format(format!("unrecognized layer {s:?}"));
        let args = |name: &str| -> Option<Vec<usize>> {
            let inner = s.strip_prefix(name)?.strip_prefix('(')?.strip_suffix(')')?;
            inner.split(',').map(|a| a.trim().parse().ok()).collect()
        };
        match s {
            "relu" => return Ok(LayerSpec::Relu),
            "maxpool" => return Ok(LayerSpec::MaxPool2),
            "gap" => return Ok(LayerSpec::GlobalAvgPool),
            _ => {}
        }
        if let Some(a) = args("conv") {
            if let [kernel, stride, out_channels] = a[..] {
                return Ok(LayerSpec::Conv2d {
                    kernel,
                    stride,
                    out_channels,
                });
            }
        }
        if let Some(a) = args("linear") {
            if let [out] = a[..] {
                return Ok(LayerSpec::Linear { out });
            }
        }
        Err(bad())
    }
}

/// Ordered layer list ending in a single scalar output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub layers: Vec<LayerSpec>,
}

impl NetworkConfig {
    /// Four stride-2 convolutions, global average pooling and a linear head.
    pub fn desk() -> Self {
        use LayerSpec::*;
        NetworkConfig {
            layers: vec![
                Conv2d { kernel: 3, stride: 2, out_channels: 8 },
                Relu,
                Conv2d { kernel: 3, stride: 2, out_channels: 12 },
                Relu,
                Conv2d { kernel: 3, stride: 2, out_channels: 16 },
                Relu,
                Conv2d { kernel: 3, stride: 1, out_channels: 16 },
                Relu,
                GlobalAvgPool,
                Linear { out: 1 },
            ],
        }
    }

    /// Shapes after each layer, starting with `input`.
    pub fn shapes(&self, input: &[usize]) -> Result<Vec<Vec<usize>>> {
        let mut out = vec![input.to_vec()];
        for l in &self.layers {
            let next = l.out_shape(out.last().unwrap())?;
            out.push(next);
        }
        if out.last().map(|s| s.iter().product::<usize>()) != Some(1) {
            return Err(Error::Shape(format!(
                "network must end in a single scalar, ends in {:?}",
                out.last().unwrap()
            )));
        }
        Ok(out)
    }

    pub fn validate(&self, input: &[usize]) -> Result<()> {
        self.shapes(input).map(|_| ())
    }
}

impl fmt::Display for NetworkConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.layers.iter().map(ToString::to_string).collect();
        write!(f, "{}", parts.join(" "))
    }
}

impl FromStr for NetworkConfig {
    type Err = Error;

    /// Whitespace-separated layers, e.g. `conv(3,2,8) relu gap linear(1)`.
    fn from_str(s: &str) -> Result<Self> {
        let layers = s
            .split_whitespace()
            .map(str::parse)
            .collect::<Result<Vec<_>>>()?;
        if layers.is_empty() {
            return Err(Error::Format("empty network description".into()));
        }
        Ok(NetworkConfig { layers })
    }
}

/// `out[o, p] (+)= sum_r a[o, r] * b[r, p]` for row-major `a: [m, k]`,
/// `b: [k, n]`.
pub(crate) fn matmul_acc(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    for o in 0..m {
        let row = &mut out[o * n..(o + 1) * n];
        for r in 0..k {
            let w = a[o * k + r];
            if w == 0.0 {
                continue;
            }
            let src = &b[r * n..(r + 1) * n];
            for (y, &x) in row.iter_mut().zip(src) {
                *y += w * x;
            }
        }
    }
}

/// Convolution geometry for one layer.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn rows(&self) -> usize {
        self.in_c * self.k * self.k
    }

    pub fn cols(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Unfold one sample `[C, H, W]` into `[C*k*k, out_h*out_w]`.
    pub fn im2col(&self, input: &[f32], cols: &mut [f32]) {
        let n = self.cols();
        for c in 0..self.in_c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let r = (c * self.k + ky) * self.k + kx;
                    let dst = &mut cols[r * n..(r + 1) * n];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            dst[oy * self.out_w + ox] = if iy >= 0
                                && ix >= 0
                                && (iy as usize) < self.in_h
                                && (ix as usize) < self.in_w
                            {
                                input[(c * self.in_h + iy as usize) * self.in_w + ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add columns back onto one sample's input gradient.
    pub fn col2im(&self, cols: &[f32], grad: &mut [f32]) {
        let n = self.cols();
        for c in 0..self.in_c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let r = (c * self.k + ky) * self.k + kx;
                    let src = &cols[r * n..(r + 1) * n];
                    for oy in 0..self.out_h {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.in_h {
                            continue;
                        }
                        for ox in 0..self.out_w {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < self.in_w {
                                grad[(c * self.in_h + iy as usize) * self.in_w + ix as usize] +=
                                    src[oy * self.out_w + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}
