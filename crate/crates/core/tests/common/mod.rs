//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use liverfat_core::nn::{LayerSpec, Network, NetworkConfig};
use liverfat_core::volume::{BinaryMask, Grid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- network

/// Straightforward per-element forward pass over nested `[C][H][W]` arrays,
/// written without im2col or flat indexing tricks.
pub fn forward_oracle(net: &Network, input: &[f32]) -> f64 {
    oracle_pass(net, input).0
}

/// Which side of every ReLU kink and which max-pool winner a single sample
/// lands on. Within one pattern the network is linear in any single
/// parameter or input value.
pub fn activation_pattern(net: &Network, input: &[f32], batch: usize) -> Vec<u32> {
    let len = input.len() / batch;
    input.chunks(len).flat_map(|x| oracle_pass(net, x).1).collect()
}

fn oracle_pass(net: &Network, input: &[f32]) -> (f64, Vec<u32>) {
    let mut pattern = Vec::new();
    let [c0, h0, w0] = net.input_shape;
    let mut act: Vec<Vec<Vec<f64>>> = (0..c0)
        .map(|c| {
            (0..h0)
                .map(|y| (0..w0).map(|x| input[(c * h0 + y) * w0 + x] as f64).collect())
                .collect()
        })
        .collect();
    let mut flat: Option<Vec<f64>> = None;
    for (li, spec) in net.config.layers.iter().enumerate() {
        match *spec {
            LayerSpec::Conv2d { kernel, stride, out_channels } => {
                let (w, b) = net.params[li].as_ref().unwrap();
                let cin = act.len();
                let (h, wd) = (act[0].len(), act[0][0].len());
                let pad = (kernel / 2) as i64;
                let oh = (h + 2 * (kernel / 2) - kernel) / stride + 1;
                let ow = (wd + 2 * (kernel / 2) - kernel) / stride + 1;
                let mut out = vec![vec![vec![0.0; ow]; oh]; out_channels];
                for o in 0..out_channels {
                    for y in 0..oh {
                        for x in 0..ow {
                            let mut s = b.data[o] as f64;
                            for c in 0..cin {
                                for ky in 0..kernel {
                                    for kx in 0..kernel {
                                        let iy = (y * stride + ky) as i64 - pad;
                                        let ix = (x * stride + kx) as i64 - pad;
                                        if iy < 0 || ix < 0 || iy >= h as i64 || ix >= wd as i64 {
                                            continue;
                                        }
                                        let wi = ((o * cin + c) * kernel + ky) * kernel + kx;
                                        s += w.data[wi] as f64 * act[c][iy as usize][ix as usize];
                                    }
                                }
                            }
                            out[o][y][x] = s;
                        }
                    }
                }
                act = out;
            }
            LayerSpec::Relu => {
                let mut relu = |v: &mut f64| {
                    pattern.push(u32::from(*v > 0.0));
                    *v = v.max(0.0);
                };
                if let Some(f) = &mut flat {
                    f.iter_mut().for_each(&mut relu);
                } else {
                    act.iter_mut().flatten().flatten().for_each(&mut relu);
                }
            }
            LayerSpec::MaxPool2 => {
                act = act
                    .iter()
                    .map(|plane| {
                        (0..plane.len() / 2)
                            .map(|y| {
                                (0..plane[0].len() / 2)
                                    .map(|x| {
                                        let window = [
                                            plane[2 * y][2 * x],
                                            plane[2 * y][2 * x + 1],
                                            plane[2 * y + 1][2 * x],
                                            plane[2 * y + 1][2 * x + 1],
                                        ];
                                        let (arg, best) = window
                                            .iter()
                                            .enumerate()
                                            .fold((0, f64::NEG_INFINITY), |m, (i, &v)| if v > m.1 { (i, v) } else { m });
                                        pattern.push(arg as u32);
                                        best
                                    })
                                    .collect()
                            })
                            .collect()
                    })
                    .collect();
            }
            LayerSpec::GlobalAvgPool => {
                flat = Some(
                    act.iter()
                        .map(|p| {
                            let n = (p.len() * p[0].len()) as f64;
                            p.iter().flatten().sum::<f64>() / n
                        })
                        .collect(),
                );
            }
            LayerSpec::Linear { out } => {
                let x: Vec<f64> = flat.take().unwrap_or_else(|| act.iter().flatten().flatten().copied().collect());
                let (w, b) = net.params[li].as_ref().unwrap();
                flat = Some(
                    (0..out)
                        .map(|o| {
                            b.data[o] as f64
                                + x.iter()
                                    .enumerate()
                                    .map(|(i, v)| w.data[o * x.len() + i] as f64 * v)
                                    .sum::<f64>()
                        })
                        .collect(),
                );
            }
        }
    }
    (flat.expect("scalar output")[0], pattern)
}

/// Network with every parameter drawn uniformly from `[-0.5, 0.5)`.
pub fn random_network(cfg: NetworkConfig, shape: [usize; 3], seed: u64) -> Network {
    let mut net = Network::zeros(cfg, shape).unwrap();
    let mut r = rng(seed);
    for t in net.parameters_mut() {
        for v in &mut t.data {
            *v = r.random_range(-0.5..0.5);
        }
    }
    net
}

pub fn random_input(len: usize, seed: u64) -> Vec<f32> {
    let mut r = rng(seed);
    (0..len).map(|_| r.random_range(-1.0..1.0)).collect()
}

/// `||a - b|| / max(||a||, ||b||)`, 0 when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let denom = na.max(nb);
    if denom < 1e-12 {
        0.0
    } else {
        diff / denom
    }
}

/// Result of a finite-difference gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    /// Worst relative error over the parameter tensors and the input.
    pub worst: f64,
    pub compared: usize,
    /// Coordinates whose +-h probe straddles a ReLU or max-pool kink; the
    /// central difference does not estimate a derivative there.
    pub kinks: usize,
}

/// Compare analytic and central-difference gradients of
/// `L = sum_n c_n * out_n` over every parameter tensor and the input.
pub fn gradient_check(net: &mut Network, input: &[f32], batch: usize, h: f32) -> GradCheck {
    let weights: Vec<f32> = (0..batch).map(|n| 1.0 + 0.5 * n as f32).collect();
    let loss = |net: &Network, x: &[f32]| -> f64 {
        net.forward(x, batch)
            .unwrap()
            .iter()
            .zip(&weights)
            .map(|(o, c)| (*o as f64) * (*c as f64))
            .sum()
    };
    net.zero_grad();
    let (_, cache) = net.forward_train(input, batch).unwrap();
    let grad_in = net.backward(&cache, &weights).unwrap();
    let analytic: Vec<Vec<f64>> = net
        .parameters()
        .iter()
        .map(|t| {
            t.grad
                .clone()
                .unwrap_or_else(|| vec![0.0; t.len()])
                .into_iter()
                .map(f64::from)
                .collect()
        })
        .collect();
    let mut out = GradCheck { worst: 0.0, compared: 0, kinks: 0 };
    let record = |out: &mut GradCheck, expect: &[f64], probes: Vec<Option<f64>>| {
        let (mut a, mut n) = (Vec::new(), Vec::new());
        for (e, p) in expect.iter().zip(probes) {
            match p {
                Some(v) => {
                    a.push(*e);
                    n.push(v);
                }
                None => out.kinks += 1,
            }
        }
        out.compared += a.len();
        out.worst = out.worst.max(relative_error(&a, &n));
    };
    for (ti, expect) in analytic.iter().enumerate() {
        let mut probes = Vec::with_capacity(expect.len());
        for i in 0..expect.len() {
            let orig = net.parameters()[ti].data[i];
            net.parameters_mut()[ti].data[i] = orig + h;
            let up = loss(net, input);
            let up_pattern = activation_pattern(net, input, batch);
            net.parameters_mut()[ti].data[i] = orig - h;
            let down = loss(net, input);
            let down_pattern = activation_pattern(net, input, batch);
            net.parameters_mut()[ti].data[i] = orig;
            probes.push((up_pattern == down_pattern).then(|| (up - down) / (2.0 * h as f64)));
        }
        record(&mut out, expect, probes);
    }
    let mut x = input.to_vec();
    let mut probes = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = loss(net, &x);
        let up_pattern = activation_pattern(net, &x, batch);
        x[i] = orig - h;
        let down = loss(net, &x);
        let down_pattern = activation_pattern(net, &x, batch);
        x[i] = orig;
        probes.push((up_pattern == down_pattern).then(|| (up - down) / (2.0 * h as f64)));
    }
    let gi: Vec<f64> = grad_in.iter().map(|&v| v as f64).collect();
    record(&mut out, &gi, probes);
    out
}

/// Small networks covering every layer type.
pub fn layer_probe_configs() -> Vec<(&'static str, NetworkConfig)> {
    let parse = |s: &str| s.parse::<NetworkConfig>().unwrap();
    vec![
        ("conv", parse("conv(3,1,2) gap linear(1)")),
        ("conv-stride", parse("conv(3,2,3) gap linear(1)")),
        ("relu", parse("linear(6) relu linear(1)")),
        ("maxpool", parse("conv(1,1,2) maxpool gap linear(1)")),
        ("gap", parse("gap linear(1)")),
        ("linear", parse("linear(1)")),
    ]
}

// ----------------------------------------------------------- morphology

pub fn random_mask(dims: [usize; 3], density: f64, seed: u64) -> BinaryMask {
    let g = Grid::new(dims, [1.0; 3], [0.0; 3]).unwrap();
    let mut r = rng(seed);
    BinaryMask::from_fn(g, |_, _, _| r.random_bool(density))
}

/// Erosion by brute force: every voxel within Euclidean radius `(d-1)/2`
/// must be set and inside the grid.
pub fn erode_oracle(mask: &BinaryMask, diameter: usize) -> BinaryMask {
    let r = ((diameter - 1) / 2) as i64;
    let [nx, ny, nz] = mask.dims().map(|d| d as i64);
    BinaryMask::from_fn(*mask.grid(), |i, j, k| {
        for dz in -r..=r {
            for dy in -r..=r {
                for dx in -r..=r {
                    if dx * dx + dy * dy + dz * dz > r * r {
                        continue;
                    }
                    let (x, y, z) = (i as i64 + dx, j as i64 + dy, k as i64 + dz);
                    if x < 0 || y < 0 || z < 0 || x >= nx || y >= ny || z >= nz {
                        return false;
                    }
                    if !mask.get(x as usize, y as usize, z as usize) {
                        return false;
                    }
                }
            }
        }
        true
    })
}

/// Otsu by exhaustive search: expand the histogram into per-bin value lists
/// and evaluate the between-class variance of every split directly.
pub fn otsu_oracle(values: &[f32], bins: usize) -> f64 {
    let lo = values.iter().map(|&v| v as f64).fold(f64::INFINITY, f64::min);
    let hi = values.iter().map(|&v| v as f64).fold(f64::NEG_INFINITY, f64::max);
    let bin_of = |v: f64| (((v - lo) / (hi - lo) * bins as f64).floor() as usize).min(bins - 1);
    let labels: Vec<usize> = values.iter().map(|&v| bin_of(v as f64)).collect();
    let mut best_k = 0;
    let mut best = f64::NEG_INFINITY;
    for k in 0..bins - 1 {
        let low: Vec<f64> = labels.iter().filter(|&&b| b <= k).map(|&b| b as f64).collect();
        let high: Vec<f64> = labels.iter().filter(|&&b| b > k).map(|&b| b as f64).collect();
        let var = if low.is_empty() || high.is_empty() {
            0.0
        } else {
            let n = labels.len() as f64;
            let m0 = low.iter().sum::<f64>() / low.len() as f64;
            let m1 = high.iter().sum::<f64>() / high.len() as f64;
            (low.len() as f64 / n) * (high.len() as f64 / n) * (m0 - m1).powi(2)
        };
        if var > best {
            best = var;
            best_k = k;
        }
    }
    lo + (best_k + 1) as f64 * (hi - lo) / bins as f64
}

// ----------------------------------------------------------- statistics

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Brute-force AUC: count concordant positive/negative pairs, ties one half.
pub fn auc_oracle(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            den += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / den
}

pub fn mae_oracle(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

pub fn r2_oracle(a: &[f64], b: &[f64]) -> f64 {
    let m = mean(a);
    let ss_res: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let ss_tot: f64 = a.iter().map(|x| (x - m) * (x - m)).sum();
    1.0 - ss_res / ss_tot
}

pub fn pearson_oracle(a: &[f64], b: &[f64]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let n = a.len() as f64;
    let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
    let sa = (a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n).sqrt();
    let sb = (b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / n).sqrt();
    cov / (sa * sb)
}

pub fn loa_oracle(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = mean(&d);
    let sd = (d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64).sqrt();
    (m - 1.96 * sd, m + 1.96 * sd)
}

/// Sensitivity and specificity from an explicit confusion-matrix loop.
pub fn screen_oracle(a: &[f64], b: &[f64], threshold: f64) -> (f64, f64) {
    let (mut tp, mut fn_, mut tn, mut fp) = (0.0, 0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        match (x > threshold, y > threshold) {
            (true, true) => tp += 1.0,
            (true, false) => fn_ += 1.0,
            (false, false) => tn += 1.0,
            (false, true) => fp += 1.0,
        }
    }
    (tp / (tp + fn_), tn / (tn + fp))
}

/// Paired series in FF points with a spread of values around 5.5 and
/// occasional exact ties.
pub fn random_series(r: &mut ChaCha8Rng, max_n: usize) -> (Vec<f64>, Vec<f64>) {
    let n = r.random_range(10..=max_n);
    let a: Vec<f64> = (0..n)
        .map(|_| {
            let v = r.random_range(0.0..20.0);
            if r.random_bool(0.05) { 5.5 } else { v }
        })
        .collect();
    let b = a
        .iter()
        .map(|&x| {
            if r.random_bool(0.05) {
                (x * 2.0).round() / 2.0
            } else {
                x + r.random_range(-3.0..3.0)
            }
        })
        .collect();
    (a, b)
}
