//! Dense layer `y = activation(x . W^T + b)` over `[B x in]` inputs.

use rand::Rng;

use super::{init, ParamBlock};
use crate::error::{Error, Result};
use crate::tensor::{gemm_nn_acc, gemm_nt_acc, gemm_tn_acc, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Softmax,
}

#[derive(Debug, Clone)]
pub struct Dense {
    pub in_size: usize,
    pub out_size: usize,
    pub activation: Activation,
    pub w: ParamBlock,
    pub b: ParamBlock,
}

#[derive(Debug, Clone)]
pub struct DenseCache {
    x: Tensor,
    y: Tensor,
}

impl Dense {
    pub fn init(
        prefix: &str,
        in_size: usize,
        out_size: usize,
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        Self {
            in_size,
            out_size,
            activation,
            w: ParamBlock::new(
                format!("{prefix}.w"),
                init::glorot_uniform(rng, out_size, in_size),
                true,
            ),
            b: ParamBlock::new(format!("{prefix}.b"), Tensor::zeros(&[out_size]), true),
        }
    }

    pub fn blocks(&self) -> Vec<&ParamBlock> {
        vec![&self.w, &self.b]
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut ParamBlock> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, DenseCache)> {
        if x.rank() != 2 || x.shape()[1] != self.in_size {
            return Err(Error::Shape(format!(
                "dense expects [B x {}], got {:?}",
                self.in_size,
                x.shape()
            )));
        }
        let batch = x.shape()[0];
        let mut z = vec![0.0; batch * self.out_size];
        for row in z.chunks_mut(self.out_size) {
            row.copy_from_slice(self.b.value.data());
        }
        gemm_nt_acc(
            &mut z,
            x.data(),
            batch,
            self.in_size,
            self.w.value.data(),
            self.out_size,
        );
        let y = match self.activation {
            Activation::Linear => z,
            Activation::Relu => z.into_iter().map(|v| v.max(0.0)).collect(),
            Activation::Softmax => {
                let mut out = z;
                for row in out.chunks_mut(self.out_size) {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        sum += *v;
                    }
                    for v in row.iter_mut() {
                        *v /= sum;
                    }
                }
                out
            }
        };
        let y = Tensor::new(&[batch, self.out_size], y)?;
        let cache = DenseCache {
            x: x.clone(),
            y: y.clone(),
        };
        Ok((y, cache))
    }

    pub fn backward(&mut self, cache: &DenseCache, upstream: &Tensor) -> Result<Tensor> {
        if upstream.shape() != cache.y.shape() {
            return Err(Error::Shape(format!(
                "dense upstream shape {:?} does not match output {:?}",
                upstream.shape(),
                cache.y.shape()
            )));
        }
        let batch = cache.x.shape()[0];
        let out = self.out_size;
        // gradient w.r.t. the pre-activation
        let dz: Vec<f64> = match self.activation {
            Activation::Linear => upstream.data().to_vec(),
            Activation::Relu => upstream
                .data()
                .iter()
                .zip(cache.y.data())
                .map(|(&g, &y)| if y > 0.0 { g } else { 0.0 })
                .collect(),
            Activation::Softmax => {
                let mut dz = vec![0.0; batch * out];
                for bi in 0..batch {
                    let y = &cache.y.data()[bi * out..(bi + 1) * out];
                    let dy = &upstream.data()[bi * out..(bi + 1) * out];
                    let pivot: f64 = y.iter().zip(dy).map(|(a, b)| a * b).sum();
                    for j in 0..out {
                        dz[bi * out + j] = y[j] * (dy[j] - pivot);
                    }
                }
                dz
            }
        };

        gemm_tn_acc(
            self.w.grad.data_mut(),
            &dz,
            batch,
            out,
            cache.x.data(),
            self.in_size,
        );
        {
            let db = self.b.grad.data_mut();
            for bi in 0..batch {
                for j in 0..out {
                    db[j] += dz[bi * out + j];
                }
            }
        }
        let mut dx = vec![0.0; batch * self.in_size];
        gemm_nn_acc(&mut dx, &dz, batch, out, self.w.value.data(), self.in_size);
        Tensor::new(cache.x.shape(), dx)
    }
}
