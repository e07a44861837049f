use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::{matmul_acc, ConvGeom, LayerSpec, NetworkConfig};
use super::Tensor;
use crate::error::{Error, Result};

/// Per-layer data kept by the forward pass for backpropagation.
#[derive(Debug, Clone)]
enum LayerCache {
    Conv { cols: Vec<f32> },
    Relu { active: Vec<bool> },
    Pool { argmax: Vec<u32> },
    Gap,
    Linear { input: Vec<f32> },
}

/// Everything [`Network::backward`] needs from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    layers: Vec<LayerCache>,
}

/// Weights of a [`NetworkConfig`] bound to an input shape, plus the affine map
/// from the raw scalar output to fat fraction points.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub input_shape: [usize; 3],
    /// `(weight, bias)` for layers with parameters, `None` otherwise.
    pub params: Vec<Option<(Tensor, Tensor)>>,
    pub out_shift: f32,
    pub out_scale: f32,
    shapes: Vec<Vec<usize>>,
}

fn param_shapes(spec: &LayerSpec, input: &[usize]) -> Option<(Vec<usize>, Vec<usize>)> {
    match *spec {
        LayerSpec::Conv2d {
            kernel,
            out_channels,
            ..
        } => Some((vec![out_channels, input[0], kernel, kernel], vec![out_channels])),
        LayerSpec::Linear { out } => Some((vec![out, input.iter().product()], vec![out])),
        _ => None,
    }
}

impl Network {
    /// All-zero parameters, identity output map.
    pub fn zeros(config: NetworkConfig, input_shape: [usize; 3]) -> Result<Self> {
        let shapes = config.shapes(&input_shape)?;
        let params = config
            .layers
            .iter()
            .zip(&shapes)
            .map(|(l, s)| param_shapes(l, s).map(|(w, b)| (Tensor::zeros(w), Tensor::zeros(b))))
            .collect();
        Ok(Network {
            config,
            input_shape,
            params,
            out_shift: 0.0,
            out_scale: 1.0,
            shapes,
        })
    }

    /// He-style fan-in initialization for convolutions, `1 / fan_in`
    /// variance for linear layers, zero biases.
    pub fn init(config: NetworkConfig, input_shape: [usize; 3], seed: u64) -> Result<Self> {
        let mut net = Network::zeros(config, input_shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (spec, p) in net.config.layers.iter().zip(&mut net.params) {
            let Some((w, _)) = p else { continue };
            let fan_in: usize = w.shape[1..].iter().product();
            let gain = if matches!(spec, LayerSpec::Conv2d { .. }) { 2.0 } else { 1.0 };
            let dist = Normal::new(0.0f32, (gain / fan_in as f32).sqrt())
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            for v in &mut w.data {
                *v = dist.sample(&mut rng);
            }
        }
        Ok(net)
    }

    /// Rebuild from stored parts, checking every tensor shape.
    pub fn from_parts(
        config: NetworkConfig,
        input_shape: [usize; 3],
        weights: Vec<Vec<f32>>,
        out_shift: f32,
        out_scale: f32,
    ) -> Result<Self> {
        let mut net = Network::zeros(config, input_shape)?;
        let mut it = weights.into_iter();
        for t in net.parameters_mut() {
            let data = it
                .next()
                .ok_or_else(|| Error::Shape("too few parameter blobs".into()))?;
            if data.len() != t.len() {
                return Err(Error::Shape(format!(
                    "parameter blob of {} values for shape {:?}",
                    data.len(),
                    t.shape
                )));
            }
            t.data = data;
        }
        if it.next().is_some() {
            return Err(Error::Shape("too many parameter blobs".into()));
        }
        net.out_shift = out_shift;
        net.out_scale = out_scale;
        Ok(net)
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    /// Parameter tensors in layer order, weight before bias.
    pub fn parameters(&self) -> Vec<&Tensor> {
        self.params
            .iter()
            .flatten()
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.params
            .iter_mut()
            .flatten()
            .flat_map(|(w, b)| [w, b])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for t in self.parameters_mut() {
            t.zero_grad();
        }
    }

    fn conv_geom(&self, layer: usize) -> ConvGeom {
        let LayerSpec::Conv2d { kernel, stride, .. } = self.config.layers[layer] else {
            unreachable!("conv_geom on a non-convolution layer")
        };
        let (i, o) = (&self.shapes[layer], &self.shapes[layer + 1]);
        ConvGeom {
            in_c: i[0],
            in_h: i[1],
            in_w: i[2],
            k: kernel,
            stride,
            pad: kernel / 2,
            out_h: o[1],
            out_w: o[2],
        }
    }

    fn run(&self, input: &[f32], batch: usize, keep: bool) -> Result<(Vec<f32>, Vec<LayerCache>)> {
        if batch == 0 || input.len() != batch * self.input_len() {
            return Err(Error::Shape(format!(
                "expected {batch} inputs of shape {:?}, got {} values",
                self.input_shape,
                input.len()
            )));
        }
        let mut x = input.to_vec();
        let mut caches = Vec::new();
        for (li, spec) in self.config.layers.iter().enumerate() {
            let in_len: usize = self.shapes[li].iter().product();
            let out_len: usize = self.shapes[li + 1].iter().product();
            let mut y = vec![0.0f32; batch * out_len];
            let cache = match *spec {
                LayerSpec::Conv2d { out_channels, .. } => {
                    let g = self.conv_geom(li);
                    let (w, b) = self.params[li].as_ref().unwrap();
                    let (rows, cols) = (g.rows(), g.cols());
                    let mut all_cols = if keep { vec![0.0; batch * rows * cols] } else { Vec::new() };
                    let mut scratch = vec![0.0; rows * cols];
                    for n in 0..batch {
                        let buf = if keep {
                            &mut all_cols[n * rows * cols..(n + 1) * rows * cols]
                        } else {
                            &mut scratch[..]
                        };
                        g.im2col(&x[n * in_len..(n + 1) * in_len], buf);
                        let out = &mut y[n * out_len..(n + 1) * out_len];
                        for o in 0..out_channels {
                            out[o * cols..(o + 1) * cols].fill(b.data[o]);
                        }
                        matmul_acc(&w.data, buf, out, out_channels, rows, cols);
                    }
                    LayerCache::Conv { cols: all_cols }
                }
                LayerSpec::Relu => {
                    let active: Vec<bool> = x.iter().map(|&v| v > 0.0).collect();
                    for (o, (&v, &a)) in y.iter_mut().zip(x.iter().zip(&active)) {
                        *o = if a { v } else { 0.0 };
                    }
                    LayerCache::Relu {
                        active: if keep { active } else { Vec::new() },
                    }
                }
                LayerSpec::MaxPool2 => {
                    let (c, h, w) = (self.shapes[li][0], self.shapes[li][1], self.shapes[li][2]);
                    let (oh, ow) = (h / 2, w / 2);
                    let mut argmax = vec![0u32; if keep { y.len() } else { 0 }];
                    for n in 0..batch {
                        for ch in 0..c {
                            let base = n * in_len + ch * h * w;
                            for oy in 0..oh {
                                for ox in 0..ow {
                                    let mut best = base + 2 * oy * w + 2 * ox;
                                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                                        if x[idx] > x[best] {
                                            best = idx;
                                        }
                                    }
                                    let o = n * out_len + (ch * oh + oy) * ow + ox;
                                    y[o] = x[best];
                                    if keep {
                                        argmax[o] = best as u32;
                                    }
                                }
                            }
                        }
                    }
                    LayerCache::Pool { argmax }
                }
                LayerSpec::GlobalAvgPool => {
                    let c = self.shapes[li][0];
                    let hw = in_len / c;
                    for n in 0..batch {
                        for ch in 0..c {
                            let s: f32 = x[n * in_len + ch * hw..n * in_len + (ch + 1) * hw].iter().sum();
                            y[n * out_len + ch] = s / hw as f32;
                        }
                    }
                    LayerCache::Gap
                }
                LayerSpec::Linear { out } => {
                    let (w, b) = self.params[li].as_ref().unwrap();
                    for n in 0..batch {
                        let xi = &x[n * in_len..(n + 1) * in_len];
                        for o in 0..out {
                            let row = &w.data[o * in_len..(o + 1) * in_len];
                            let dot: f32 = row.iter().zip(xi).map(|(a, b)| a * b).sum();
                            y[n * out + o] = dot + b.data[o];
                        }
                    }
                    LayerCache::Linear {
                        input: if keep { std::mem::take(&mut x) } else { Vec::new() },
                    }
                }
            };
            if keep {
                caches.push(cache);
            }
            x = y;
        }
        Ok((x, caches))
    }

    /// Raw scalar outputs for a batch of `[C, H, W]` inputs laid out back to
    /// back.
    pub fn forward(&self, input: &[f32], batch: usize) -> Result<Vec<f32>> {
        Ok(self.run(input, batch, false)?.0)
    }

    pub fn forward_train(&self, input: &[f32], batch: usize) -> Result<(Vec<f32>, ForwardCache)> {
        let (y, layers) = self.run(input, batch, true)?;
        Ok((y, ForwardCache { batch, layers }))
    }

    /// Map raw outputs to fat fraction points.
    pub fn to_points(&self, raw: f32) -> f64 {
        self.out_shift as f64 + self.out_scale as f64 * raw as f64
    }

    /// Accumulate parameter gradients for `d loss / d output` and return the
    /// gradient with respect to the input.
    pub fn backward(&mut self, cache: &ForwardCache, grad_out: &[f32]) -> Result<Vec<f32>> {
        let batch = cache.batch;
        if grad_out.len() != batch || cache.layers.len() != self.config.layers.len() {
            return Err(Error::Shape("backward does not match the cached forward pass".into()));
        }
        let mut g = grad_out.to_vec();
        for li in (0..self.config.layers.len()).rev() {
            let in_len: usize = self.shapes[li].iter().product();
            let out_len: usize = self.shapes[li + 1].iter().product();
            let mut gin = vec![0.0f32; batch * in_len];
            match (&self.config.layers[li], &cache.layers[li]) {
                (&LayerSpec::Conv2d { out_channels, .. }, LayerCache::Conv { cols }) => {
                    let geom = self.conv_geom(li);
                    let (rows, ncols) = (geom.rows(), geom.cols());
                    let (w, b) = self.params[li].as_mut().unwrap();
                    let wdata = w.data.clone();
                    let mut dcols = vec![0.0f32; rows * ncols];
                    for n in 0..batch {
                        let go = &g[n * out_len..(n + 1) * out_len];
                        let cn = &cols[n * rows * ncols..(n + 1) * rows * ncols];
                        let bg = b.grad_mut();
                        for o in 0..out_channels {
                            bg[o] += go[o * ncols..(o + 1) * ncols].iter().sum::<f32>();
                        }
                        let wg = w.grad_mut();
                        for o in 0..out_channels {
                            let gro = &go[o * ncols..(o + 1) * ncols];
                            for r in 0..rows {
                                let cr = &cn[r * ncols..(r + 1) * ncols];
                                wg[o * rows + r] += gro.iter().zip(cr).map(|(a, b)| a * b).sum::<f32>();
                            }
                        }
                        dcols.fill(0.0);
                        for o in 0..out_channels {
                            let gro = &go[o * ncols..(o + 1) * ncols];
                            for r in 0..rows {
                                let wv = wdata[o * rows + r];
                                if wv == 0.0 {
                                    continue;
                                }
                                for (d, &gv) in dcols[r * ncols..(r + 1) * ncols].iter_mut().zip(gro) {
                                    *d += wv * gv;
                                }
                            }
                        }
                        geom.col2im(&dcols, &mut gin[n * in_len..(n + 1) * in_len]);
                    }
                }
                (LayerSpec::Relu, LayerCache::Relu { active }) => {
                    for ((d, &gv), &a) in gin.iter_mut().zip(&g).zip(active) {
                        *d = if a { gv } else { 0.0 };
                    }
                }
                (LayerSpec::MaxPool2, LayerCache::Pool { argmax }) => {
                    for (&src, &gv) in argmax.iter().zip(&g) {
                        gin[src as usize] += gv;
                    }
                }
                (LayerSpec::GlobalAvgPool, LayerCache::Gap) => {
                    let c = self.shapes[li][0];
                    let hw = in_len / c;
                    for n in 0..batch {
                        for ch in 0..c {
                            let v = g[n * out_len + ch] / hw as f32;
                            gin[n * in_len + ch * hw..n * in_len + (ch + 1) * hw].fill(v);
                        }
                    }
                }
                (&LayerSpec::Linear { out }, LayerCache::Linear { input }) => {
                    let (w, b) = self.params[li].as_mut().unwrap();
                    let wdata = w.data.clone();
                    for n in 0..batch {
                        let xi = &input[n * in_len..(n + 1) * in_len];
                        let go = &g[n * out..(n + 1) * out];
                        let bg = b.grad_mut();
                        for o in 0..out {
                            bg[o] += go[o];
                        }
                        let wg = w.grad_mut();
                        for o in 0..out {
                            for (wgi, &xv) in wg[o * in_len..(o + 1) * in_len].iter_mut().zip(xi) {
                                *wgi += go[o] * xv;
                            }
                        }
                        let gi = &mut gin[n * in_len..(n + 1) * in_len];
                        for o in 0..out {
                            for (d, &wv) in gi.iter_mut().zip(&wdata[o * in_len..(o + 1) * in_len]) {
                                *d += go[o] * wv;
                            }
                        }
                    }
                }
                _ => return Err(Error::Shape("layer cache does not match layer".into())),
            }
            g = gin;
        }
        Ok(g)
    }
}
