//! Global average pooling over the time axis.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `[B x T x C] -> [B x C]`, mean over time.
pub fn gap_forward(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::Shape(format!(
            "gap expects [B x T x C], got {:?}",
            x.shape()
        )));
    }
    x.reduce_mean(1)
}

/// The adjoint of the mean: upstream `[B x C]` spread as `g / T` over time.
pub fn gap_backward(upstream: &Tensor, time: usize) -> Result<Tensor> {
    if upstream.rank() != 2 {
        return Err(Error::Shape(format!(
            "gap upstream expects [B x C], got {:?}",
            upstream.shape()
        )));
    }
    let (b, c) = (upstream.shape()[0], upstream.shape()[1]);
    let mut out = vec![0.0; b * time * c];
    for bi in 0..b {
        for t in 0..time {
            for j in 0..c {
                out[(bi * time + t) * c + j] = upstream.data()[bi * c + j] / time as f64;
            }
        }
    }
    Tensor::new(&[b, time, c], out)
}
