use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::NetworkConfig;
use super::network::Network;
use super::Tensor;
use crate::error::{Error, Result};
use crate::phantom::derive_seed;
use crate::preprocess::SliceImage;

/// Optimization schedule and augmentation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub total_iterations: usize,
    pub base_lr: f64,
    pub lr_drop_factor: f64,
    /// The learning rate is divided by `lr_drop_factor` for this many final
    /// iterations.
    pub lr_drop_window: usize,
    /// Maximum integer shift (pixels) per axis.
    pub translation_range: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Batch 32, 6,000 iterations, lr 1e-4 divided by ten for the final 1,000.
    pub fn paper() -> Self {
        TrainConfig {
            batch_size: 32,
            total_iterations: 6000,
            base_lr: 1e-4,
            lr_drop_factor: 10.0,
            lr_drop_window: 1000,
            translation_range: 5,
            seed: 0,
        }
    }

    /// Shorter schedule with a larger step for a small network trained from
    /// scratch; the drop window keeps the same one-sixth proportion.
    pub fn desk() -> Self {
        TrainConfig {
            batch_size: 32,
            total_iterations: 1200,
            base_lr: 3e-3,
            lr_drop_factor: 10.0,
            lr_drop_window: 200,
            translation_range: 3,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        if self.lr_drop_window > self.total_iterations {
            return Err(Error::InvalidParameter(
                "lr_drop_window cannot exceed total_iterations".into(),
            ));
        }
        if !(self.base_lr > 0.0 && self.lr_drop_factor > 0.0) {
            return Err(Error::InvalidParameter("learning rates must be positive".into()));
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk()
    }
}

/// Learning rate at zero-based `iteration`.
pub fn lr_schedule(iteration: usize, cfg: &TrainConfig) -> f64 {
    if iteration >= cfg.total_iterations - cfg.lr_drop_window {
        cfg.base_lr / cfg.lr_drop_factor
    } else {
        cfg.base_lr
    }
}

pub fn mse_loss(pred: &[f32], target: &[f32]) -> Result<f32> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::Shape("mse needs equal, non-empty lists".into()));
    }
    let s: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| ((p - t) as f64).powi(2))
        .sum();
    Ok((s / pred.len() as f64) as f32)
}

/// Adam moments for a parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }
}

/// One bias-corrected Adam update using each tensor's `grad` (missing
/// gradients count as zero).
pub fn adam_step(params: &mut [&mut Tensor], state: &mut AdamState, lr: f64) -> Result<()> {
    if params.len() != state.m.len() || params.iter().zip(&state.m).any(|(p, m)| p.len() != m.len()) {
        return Err(Error::Shape("adam state does not match parameters".into()));
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let g = p.grad.clone().unwrap_or_else(|| vec![0.0; p.len()]);
        for (i, gi) in g.iter().enumerate() {
            let gi = *gi as f64;
            let mi = b1 * m[i] as f64 + (1.0 - b1) * gi;
            let vi = b2 * v[i] as f64 + (1.0 - b2) * gi * gi;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let upd = lr * (mi / c1) / ((vi / c2).sqrt() + state.eps);
            p.data[i] -= upd as f32;
        }
    }
    Ok(())
}

/// Shift an image by whole pixels (`dx` columns, `dy` rows), filling vacated
/// pixels with code 0.
pub fn translate(img: &SliceImage, dx: i64, dy: i64) -> SliceImage {
    let (w, h) = (img.width as i64, img.height as i64);
    let mut data = vec![0u8; img.data.len()];
    for r in 0..h {
        let sr = r - dy;
        if sr < 0 || sr >= h {
            continue;
        }
        for c in 0..w {
            let sc = c - dx;
            if sc >= 0 && sc < w {
                data[(r * w + c) as usize] = img.data[(sr * w + sc) as usize];
            }
        }
    }
    SliceImage {
        data,
        ..img.clone()
    }
}

/// Random integer translation, uniform in `-range..=range` per axis (columns
/// drawn first).
pub fn augment_translate(img: &SliceImage, range: usize, rng: &mut impl Rng) -> SliceImage {
    let r = range as i64;
    let dx = rng.random_range(-r..=r);
    let dy = rng.random_range(-r..=r);
    translate(img, dx, dy)
}

/// Labeled network input; `target` in fat fraction points.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    pub id: String,
    pub image: SliceImage,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub iteration: usize,
    pub lr: f64,
    pub loss: f32,
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub network: Network,
    pub log: Vec<LogEntry>,
}

impl Trained {
    pub fn log_csv(&self) -> String {
        let mut s = String::from("iteration,lr,loss\n");
        for e in &self.log {
            s.push_str(&format!("{},{},{}\n", e.iteration, e.lr, e.loss));
        }
        s
    }
}

fn input_shape(img: &SliceImage) -> [usize; 3] {
    [1, img.height, img.width]
}

/// Train on `samples` for exactly `cfg.total_iterations` mini-batches drawn
/// with replacement.
///
/// Samples are ordered by id before drawing, so the result depends on the
/// seed and the sample set, not on the input order. Targets are standardized
/// by their mean and standard deviation; the network's output map undoes it.
pub fn train(samples: &[TrainSample], net_cfg: &NetworkConfig, cfg: &TrainConfig) -> Result<Trained> {
    cfg.validate()?;
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidParameter("training needs at least one sample".into()))?;
    let shape = input_shape(&first.image);
    if samples.iter().any(|s| input_shape(&s.image) != shape) {
        return Err(Error::Shape("training images differ in size".into()));
    }
    let mut order: Vec<&TrainSample> = samples.iter().collect();
    order.sort_by(|a, b| a.id.cmp(&b.id).then(a.target.total_cmp(&b.target)));

    let n = order.len() as f64;
    let mean = order.iter().map(|s| s.target).sum::<f64>() / n;
    let var = order.iter().map(|s| (s.target - mean).powi(2)).sum::<f64>() / n;
    let scale = if var.sqrt() > 1e-6 { var.sqrt() } else { 1.0 };

    let mut net = Network::init(net_cfg.clone(), shape, derive_seed(cfg.seed, 1))?;
    net.out_shift = mean as f32;
    net.out_scale = scale as f32;
    let targets: Vec<f32> = order.iter().map(|s| ((s.target - mean) / scale) as f32).collect();

    let mut adam = AdamState::new(&net.parameters());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 2));
    let len = net.input_len();
    let mut batch = vec![0.0f32; cfg.batch_size * len];
    let mut batch_targets = vec![0.0f32; cfg.batch_size];
    let mut log = Vec::with_capacity(cfg.total_iterations);
    for it in 0..cfg.total_iterations {
        for b in 0..cfg.batch_size {
            let idx = rng.random_range(0..order.len());
            let img = if cfg.translation_range > 0 {
                augment_translate(&order[idx].image, cfg.translation_range, &mut rng)
            } else {
                order[idx].image.clone()
            };
            batch[b * len..(b + 1) * len].copy_from_slice(&img.decoded());
            batch_targets[b] = targets[idx];
        }
        let (pred, cache) = net.forward_train(&batch, cfg.batch_size)?;
        let loss = mse_loss(&pred, &batch_targets)?;
        let scale = 2.0 / cfg.batch_size as f32;
        let grad: Vec<f32> = pred.iter().zip(&batch_targets).map(|(p, t)| scale * (p - t)).collect();
        net.zero_grad();
        net.backward(&cache, &grad)?;
        let lr = lr_schedule(it, cfg);
        adam_step(&mut net.parameters_mut(), &mut adam, lr)?;
        log.push(LogEntry {
            iteration: it,
            lr,
            loss,
        });
    }
    Ok(Trained { network: net, log })
}

/// Predicted fat fraction points for one image.
pub fn predict(net: &Network, img: &SliceImage) -> Result<f64> {
    Ok(predict_batch(net, std::slice::from_ref(img))?[0])
}

/// Predictions for several images, evaluated in chunks.
pub fn predict_batch(net: &Network, imgs: &[SliceImage]) -> Result<Vec<f64>> {
    let len = net.input_len();
    let mut out = Vec::with_capacity(imgs.len());
    for chunk in imgs.chunks(32) {
        let mut input = Vec::with_capacity(chunk.len() * len);
        for img in chunk {
            if input_shape(img) != net.input_shape {
                return Err(Error::Shape(format!(
                    "image {}x{} does not match network input {:?}",
                    img.height, img.width, net.input_shape
                )));
            }
            input.extend(img.decoded());
        }
        out.extend(net.forward(&input, chunk.len())?.into_iter().map(|r| net.to_points(r)));
    }
    Ok(out)
}
