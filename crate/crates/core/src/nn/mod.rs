//! A small convolutional regressor with hand-written reverse-mode gradients.
//!
//! Activations are `f32` in NCHW layout. Each layer caches what its backward
//! pass needs during [`Network::forward_train`]; [`Network::backward`] walks
//! the layers in reverse, accumulating parameter gradients into each
//! [`Tensor`]'s `grad` buffer.

mod checkpoint;
mod cv;
mod layers;
mod network;
mod train;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use cv::{make_cv_plan, CvPlan};
pub use layers::{LayerSpec, NetworkConfig};
pub use network::{ForwardCache, Network};
pub use train::{
    adam_step, augment_translate, lr_schedule, mse_loss, predict, predict_batch, train, translate,
    AdamState, LogEntry, TrainConfig, TrainSample, Trained,
};

use crate::error::{Error, Result};

/// Dense `f32` array with an optional gradient buffer of the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub grad: Option<Vec<f32>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "tensor shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            grad: None,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Gradient buffer, allocated as zeros on first use.
    pub fn grad_mut(&mut self) -> &mut [f32] {
        let n = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = &mut self.grad {
            g.fill(0.0);
        }
    }
}
