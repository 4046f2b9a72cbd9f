//! Differentiable building blocks: LSTM cell and layer, bidirectional
//! wrapper, batch normalization, temporal attention, global average pooling
//! and dense heads. Every block has an exact hand-written backward pass;
//! caches carry whatever the backward needs.

mod attention;
mod batchnorm;
mod dense;
mod init;
mod lstm;
mod pooling;

pub use attention::{Attention, AttentionCache};
pub use batchnorm::{BatchNorm, BatchNormCache, RunningUpdate};
pub use dense::{Activation, Dense, DenseCache};
pub use init::{glorot_uniform, orthogonal};
pub use lstm::{
    bilstm_backward, bilstm_forward, lstm_cell_forward, lstm_layer_backward, lstm_layer_forward,
    BiLstm, BiLstmCache, LstmLayerCache, LstmParams, LstmStepCache,
};
pub use pooling::{gap_backward, gap_forward};

use crate::error::Result;
use crate::tensor::Tensor;

/// Forward-pass mode. Train-mode batch norm uses batch statistics and emits
/// a running-statistics update; infer mode is a pure function of the stored
/// parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// One named parameter tensor paired with a same-shaped gradient slot.
#[derive(Debug, Clone)]
pub struct ParamBlock {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    /// Non-trainable blocks (batch-norm running statistics) are serialized
    /// and restored but skipped by the optimizer.
    pub trainable: bool,
}

impl ParamBlock {
    pub fn new(name: impl Into<String>, value: Tensor, trainable: bool) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
            trainable,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data_mut().fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// ReLU with the mask kept for the backward pass.
pub fn relu_forward(x: &Tensor) -> (Tensor, Vec<bool>) {
    let mask: Vec<bool> = x.data().iter().map(|&v| v > 0.0).collect();
    (x.relu(), mask)
}

pub fn relu_backward(upstream: &Tensor, mask: &[bool]) -> Result<Tensor> {
    let data: Vec<f64> = upstream
        .data()
        .iter()
        .zip(mask)
        .map(|(&g, &m)| if m { g } else { 0.0 })
        .collect();
    Tensor::new(upstream.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relu_mask_gates_upstream_gradient() {
        let x = Tensor::new(&[4], vec![-1.0, 0.0, 0.5, 2.0]).unwrap();
        let (y, mask) = relu_forward(&x);
        assert_eq!(y.data(), &[0.0, 0.0, 0.5, 2.0]);
        let g = Tensor::filled(&[4], 1.0);
        let dx = relu_backward(&g, &mask).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 1.0, 1.0]);
    }
}
