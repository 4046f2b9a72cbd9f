//! Temporal attention: one scalar score per time step from a dense map,
//! softmax over the sequence, then a scalar-broadcast multiply with the
//! per-step features.

use rand::Rng;

use super::{init, ParamBlock};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Attention {
    pub feature_size: usize,
    pub score_w: ParamBlock,
    pub score_b: ParamBlock,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    h: Tensor,
    alpha: Vec<f64>,
}

impl Attention {
    pub fn init(prefix: &str, feature_size: usize, rng: &mut impl Rng) -> Self {
        let w = init::glorot_uniform(rng, 1, feature_size)
            .reshape(&[feature_size])
            .expect("same element count");
        Self {
            feature_size,
            score_w: ParamBlock::new(format!("{prefix}.w"), w, true),
            score_b: ParamBlock::new(format!("{prefix}.b"), Tensor::zeros(&[1]), true),
        }
    }

    pub fn blocks(&self) -> Vec<&ParamBlock> {
        vec![&self.score_w, &self.score_b]
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut ParamBlock> {
        vec![&mut self.score_w, &mut self.score_b]
    }

    /// Returns the reweighted sequence `[B x T x H']`, the attention
    /// weights `[B x T]`, and the backward cache.
    pub fn forward(&self, h: &Tensor) -> Result<(Tensor, Tensor, AttentionCache)> {
        if h.rank() != 3 || h.shape()[2] != self.feature_size {
            return Err(Error::Shape(format!(
                "attention expects [B x T x {}], got {:?}",
                self.feature_size,
                h.shape()
            )));
        }
        let (b, t, f) = (h.shape()[0], h.shape()[1], h.shape()[2]);
        let w = self.score_w.value.data();
        let bias = self.score_b.value.data()[0];

        let mut alpha = vec![0.0; b * t];
        for bi in 0..b {
            let scores: Vec<f64> = (0..t)
                .map(|ti| {
                    let row = &h.data()[(bi * t + ti) * f..(bi * t + ti + 1) * f];
                    bias + row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for (ti, e) in exps.iter().enumerate() {
                alpha[bi * t + ti] = e / sum;
            }
        }

        let mut weighted = vec![0.0; b * t * f];
        for bi in 0..b {
            for ti in 0..t {
                let a = alpha[bi * t + ti];
                let src = &h.data()[(bi * t + ti) * f..(bi * t + ti + 1) * f];
                let dst = &mut weighted[(bi * t + ti) * f..(bi * t + ti + 1) * f];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = a * s;
                }
            }
        }
        let cache = AttentionCache {
            h: h.clone(),
            alpha: alpha.clone(),
        };
        Ok((
            Tensor::new(&[b, t, f], weighted)?,
            Tensor::new(&[b, t], alpha)?,
            cache,
        ))
    }

    /// Backward through the multiply and the softmax-over-time.
    pub fn backward(&mut self, cache: &AttentionCache, upstream: &Tensor) -> Result<Tensor> {
        let h = &cache.h;
        if upstream.shape() != h.shape() {
            return Err(Error::Shape(format!(
                "attention upstream shape {:?} does not match {:?}",
                upstream.shape(),
                h.shape()
            )));
        }
        let (b, t, f) = (h.shape()[0], h.shape()[1], h.shape()[2]);
        let w = self.score_w.value.data().to_vec();
        let mut dh = vec![0.0; b * t * f];
        let mut dw = vec![0.0; f];
        let mut db = 0.0;

        for bi in 0..b {
            // gradient w.r.t. the attention weights
            let mut dalpha = vec![0.0; t];
            for ti in 0..t {
                let up = &upstream.data()[(bi * t + ti) * f..(bi * t + ti + 1) * f];
                let hs = &h.data()[(bi * t + ti) * f..(bi * t + ti + 1) * f];
                dalpha[ti] = up.iter().zip(hs).map(|(a, b)| a * b).sum();
                // direct path through the multiply
                let a = cache.alpha[bi * t + ti];
                let dst = &mut dh[(bi * t + ti) * f..(bi * t + ti + 1) * f];
                for (d, &u) in dst.iter_mut().zip(up) {
                    *d += a * u;
                }
            }
            // softmax backward: ds_t = alpha_t (dalpha_t - sum_u alpha_u dalpha_u)
            let pivot: f64 = (0..t)
                .map(|ti| cache.alpha[bi * t + ti] * dalpha[ti])
                .sum();
            for ti in 0..t {
                let ds = cache.alpha[bi * t + ti] * (dalpha[ti] - pivot);
                let hs = &h.data()[(bi * t + ti) * f..(bi * t + ti + 1) * f];
                for (j, &hv) in hs.iter().enumerate() {
                    dw[j] += ds * hv;
                }
                db += ds;
                let dst = &mut dh[(bi * t + ti) * f..(bi * t + ti + 1) * f];
                for (d, &wv) in dst.iter_mut().zip(&w) {
                    *d += ds * wv;
                }
            }
        }

        for (g, d) in self.score_w.grad.data_mut().iter_mut().zip(&dw) {
            *g += d;
        }
        self.score_b.grad.data_mut()[0] += db;
        Tensor::new(h.shape(), dh)
    }
}
