//! Batch normalization over the batch x time axis of a `[B x T x C]`
//! sequence (or the rows of an `[N x C]` matrix).
//!
//! Train mode normalizes with batch statistics (variance + epsilon) and
//! reports an exponential-moving-average update for the running statistics;
//! infer mode is the deterministic affine map built from the running
//! statistics alone. Running variance is kept strictly positive, so the
//! inference map divides by `sqrt(running_var)` directly and statistics
//! (0, 1) make it the exact identity for `gamma = 1`, `beta = 0`.

use super::{Mode, ParamBlock};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub channels: usize,
    pub momentum: f64,
    pub epsilon: f64,
    pub gamma: ParamBlock,
    pub beta: ParamBlock,
    pub running_mean: ParamBlock,
    pub running_var: ParamBlock,
}

/// New running statistics produced by a train-mode forward. The caller
/// applies them after the step; the forward itself never mutates the layer,
/// which keeps repeated evaluations (finite differences) side-effect free.
#[derive(Debug, Clone)]
pub struct RunningUpdate {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    mode: Mode,
    rows: usize,
    shape: Vec<usize>,
}

impl BatchNorm {
    pub fn new(prefix: &str, channels: usize, momentum: f64, epsilon: f64) -> Result<Self> {
        if !(0.0 < momentum && momentum < 1.0) {
            return Err(Error::Config(format!(
                "batch norm momentum {momentum} outside (0, 1)"
            )));
        }
        if epsilon <= 0.0 {
            return Err(Error::Config(format!(
                "batch norm epsilon {epsilon} must be positive"
            )));
        }
        Ok(Self {
            channels,
            momentum,
            epsilon,
            gamma: ParamBlock::new(
                format!("{prefix}.gamma"),
                Tensor::filled(&[channels], 1.0),
                true,
            ),
            beta: ParamBlock::new(format!("{prefix}.beta"), Tensor::zeros(&[channels]), true),
            running_mean: ParamBlock::new(
                format!("{prefix}.running_mean"),
                Tensor::zeros(&[channels]),
                false,
            ),
            running_var: ParamBlock::new(
                format!("{prefix}.running_var"),
                Tensor::filled(&[channels], 1.0),
                false,
            ),
        })
    }

    pub fn blocks(&self) -> Vec<&ParamBlock> {
        vec![
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
        ]
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut ParamBlock> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
        ]
    }

    /// Normalizes each channel over all B*T rows.
    pub fn forward(
        &self,
        x: &Tensor,
        mode: Mode,
    ) -> Result<(Tensor, BatchNormCache, Option<RunningUpdate>)> {
        let c = self.channels;
        if x.rank() < 2 || *x.shape().last().unwrap() != c {
            return Err(Error::Shape(format!(
                "batch norm expects trailing dimension {c}, got {:?}",
                x.shape()
            )));
        }
        let rows = x.len() / c;
        let gamma = self.gamma.value.data();
        let beta = self.beta.value.data();

        let (mean, inv_std, update) = match mode {
            Mode::Train => {
                if rows < 2 {
                    return Err(Error::Data(format!(
                        "train-mode batch norm needs at least 2 rows, got {rows}"
                    )));
                }
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for r in 0..rows {
                    for j in 0..c {
                        mean[j] += x.data()[r * c + j];
                    }
                }
                for m in mean.iter_mut() {
                    *m /= rows as f64;
                }
                for r in 0..rows {
                    for j in 0..c {
                        let d = x.data()[r * c + j] - mean[j];
                        var[j] += d * d;
                    }
                }
                for v in var.iter_mut() {
                    *v /= rows as f64;
                }
                let momentum = self.momentum;
                let new_mean: Vec<f64> = self
                    .running_mean
                    .value
                    .data()
                    .iter()
                    .zip(&mean)
                    .map(|(&old, &b)| momentum * old + (1.0 - momentum) * b)
                    .collect();
                let new_var: Vec<f64> = self
                    .running_var
                    .value
                    .data()
                    .iter()
                    .zip(&var)
                    .map(|(&old, &b)| momentum * old + (1.0 - momentum) * b)
                    .collect();
                let update = RunningUpdate {
                    mean: new_mean,
                    var: new_var,
                };
                // epsilon guards channels with zero batch variance
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
                (mean, inv_std, Some(update))
            }
            Mode::Infer => {
                let mean = self.running_mean.value.data().to_vec();
                let rv = self.running_var.value.data();
                if rv.iter().any(|&v| v <= 0.0) {
                    return Err(Error::Numeric(
                        "running variance must stay strictly positive".into(),
                    ));
                }
                let inv_std: Vec<f64> = rv.iter().map(|v| 1.0 / v.sqrt()).collect();
                (mean, inv_std, None)
            }
        };

        let mut xhat = vec![0.0; rows * c];
        let mut y = vec![0.0; rows * c];
        for r in 0..rows {
            for j in 0..c {
                let idx = r * c + j;
                let xh = (x.data()[idx] - mean[j]) * inv_std[j];
                xhat[idx] = xh;
                y[idx] = gamma[j] * xh + beta[j];
            }
        }
        let cache = BatchNormCache {
            xhat,
            inv_std,
            mode,
            rows,
            shape: x.shape().to_vec(),
        };
        Ok((Tensor::new(x.shape(), y)?, cache, update))
    }

    pub fn apply_update(&mut self, update: &RunningUpdate) {
        self.running_mean
            .value
            .data_mut()
            .copy_from_slice(&update.mean);
        self.running_var
            .value
            .data_mut()
            .copy_from_slice(&update.var);
    }

    /// Gradient through the normalization. In train mode the batch
    /// statistics depend on the input, so the full three-term formula
    /// applies; in infer mode the map is affine.
    pub fn backward(&mut self, cache: &BatchNormCache, upstream: &Tensor) -> Result<Tensor> {
        let c = self.channels;
        if upstream.shape() != &cache.shape[..] {
            return Err(Error::Shape(format!(
                "batch norm upstream shape {:?} does not match cached {:?}",
                upstream.shape(),
                cache.shape
            )));
        }
        let rows = cache.rows;
        let gamma = self.gamma.value.data();
        let dy = upstream.data();

        let mut sum_dy = vec![0.0; c];
        let mut sum_dy_xhat = vec![0.0; c];
        for r in 0..rows {
            for j in 0..c {
                let idx = r * c + j;
                sum_dy[j] += dy[idx];
                sum_dy_xhat[j] += dy[idx] * cache.xhat[idx];
            }
        }
        {
            let dgamma = self.gamma.grad.data_mut();
            for j in 0..c {
                dgamma[j] += sum_dy_xhat[j];
            }
        }
        {
            let dbeta = self.beta.grad.data_mut();
            for j in 0..c {
                dbeta[j] += sum_dy[j];
            }
        }

        let mut dx = vec![0.0; rows * c];
        match cache.mode {
            Mode::Train => {
                let n = rows as f64;
                for r in 0..rows {
                    for j in 0..c {
                        let idx = r * c + j;
                        dx[idx] = gamma[j] * cache.inv_std[j] / n
                            * (n * dy[idx] - sum_dy[j] - cache.xhat[idx] * sum_dy_xhat[j]);
                    }
                }
            }
            Mode::Infer => {
                for r in 0..rows {
                    for j in 0..c {
                        let idx = r * c + j;
                        dx[idx] = gamma[j] * cache.inv_std[j] * dy[idx];
                    }
                }
            }
        }
        Tensor::new(&cache.shape, dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_diff, dot, max_relative_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    #[test]
    fn normalized_batch_is_near_fixed_point() {
        // batch already ~zero-mean/unit-variance per channel stays put
        let bn = BatchNorm::new("bn", 1, 0.99, 1e-3).unwrap();
        let vals = vec![-1.0, 1.0, -1.0, 1.0];
        let x = Tensor::new(&[4, 1], vals.clone()).unwrap();
        let (y, _, _) = bn.forward(&x, Mode::Train).unwrap();
        // variance is exactly 1, epsilon shifts the scale by ~eps/2
        for (got, want) in y.data().iter().zip(&vals) {
            assert!((got - want).abs() < 1e-3, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_gamma_outputs_beta() {
        let mut bn = BatchNorm::new("bn", 2, 0.99, 1e-3).unwrap();
        bn.gamma.value.data_mut().fill(0.0);
        bn.beta.value.data_mut().copy_from_slice(&[0.5, -1.5]);
        let x = random_tensor(&[3, 2, 2], 1);
        let (y, _, _) = bn.forward(&x, Mode::Train).unwrap();
        for r in 0..6 {
            assert_eq!(y.data()[r * 2], 0.5);
            assert_eq!(y.data()[r * 2 + 1], -1.5);
        }
    }

    #[test]
    fn train_output_moments_are_standardized() {
        let bn = BatchNorm::new("bn", 3, 0.99, 1e-3).unwrap();
        let x = random_tensor(&[4, 5, 3], 2);
        let (y, _, _) = bn.forward(&x, Mode::Train).unwrap();
        // recompute moments of the normalized batch (gamma=1, beta=0)
        let rows = 20;
        for j in 0..3 {
            let mean: f64 = (0..rows).map(|r| y.data()[r * 3 + j]).sum::<f64>() / rows as f64;
            let var: f64 = (0..rows)
                .map(|r| {
                    let d = y.data()[r * 3 + j] - mean;
                    d * d
                })
                .sum::<f64>()
                / rows as f64;
            assert!(mean.abs() < 1e-9, "channel {j} mean {mean}");
            // epsilon makes the variance slightly below 1
            assert!((var - 1.0).abs() < 1e-3 + 1e-6, "channel {j} var {var}");
        }
    }

    #[test]
    fn train_mode_needs_two_rows() {
        let bn = BatchNorm::new("bn", 2, 0.99, 1e-3).unwrap();
        let x = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        assert!(matches!(bn.forward(&x, Mode::Train), Err(Error::Data(_))));
    }

    #[test]
    fn infer_identity_stats_is_idempotent() {
        let bn = BatchNorm::new("bn", 2, 0.99, 1e-3).unwrap();
        let x = random_tensor(&[5, 2], 3);
        let (y1, _, _) = bn.forward(&x, Mode::Infer).unwrap();
        let (y2, _, _) = bn.forward(&y1, Mode::Infer).unwrap();
        for (a, b) in y1.data().iter().zip(y2.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        // with stats (0,1) and gamma=1, beta=0 the map is the identity
        for (a, b) in y1.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn running_update_is_ema_and_applied_explicitly() {
        let mut bn = BatchNorm::new("bn", 1, 0.9, 1e-3).unwrap();
        let x = Tensor::new(&[2, 1], vec![0.0, 2.0]).unwrap(); // mean 1, var 1
        let (_, _, update) = bn.forward(&x, Mode::Train).unwrap();
        // forward does not mutate
        assert_eq!(bn.running_mean.value.data(), &[0.0]);
        let update = update.unwrap();
        assert!((update.mean[0] - 0.1).abs() < 1e-12);
        assert!((update.var[0] - (0.9 + 0.1)).abs() < 1e-12);
        bn.apply_update(&update);
        assert!((bn.running_mean.value.data()[0] - 0.1).abs() < 1e-12);
    }

    #[test]
    fn train_gradients_match_finite_differences() {
        let mut bn = BatchNorm::new("bn", 3, 0.99, 1e-3).unwrap();
        {
            let mut rng = ChaCha8Rng::seed_from_u64(4);
            for v in bn.gamma.value.data_mut() {
                *v = rng.gen_range(0.5..1.5);
            }
            for v in bn.beta.value.data_mut() {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        let mut x = random_tensor(&[2, 4, 3], 5);
        let direction = random_tensor(&[2, 4, 3], 6);

        let (out, cache, _) = bn.forward(&x, Mode::Train).unwrap();
        assert_eq!(out.shape(), direction.shape());
        let dx = bn.backward(&cache, &direction).unwrap();

        let num_dx = central_diff(x.len(), 1e-5, |i, d| {
            x.data_mut()[i] += d;
            let (o, _, _) = bn.forward(&x, Mode::Train).unwrap();
            x.data_mut()[i] -= d;
            dot(o.data(), direction.data())
        });
        assert!(max_relative_error(dx.data(), &num_dx) < 1e-4);

        for name in ["gamma", "beta"] {
            let analytic = match name {
                "gamma" => bn.gamma.grad.data().to_vec(),
                _ => bn.beta.grad.data().to_vec(),
            };
            let num = central_diff(3, 1e-5, |i, d| {
                let block = if name == "gamma" {
                    &mut bn.gamma
                } else {
                    &mut bn.beta
                };
                block.value.data_mut()[i] += d;
                let (o, _, _) = bn.forward(&x, Mode::Train).unwrap();
                let block = if name == "gamma" {
                    &mut bn.gamma
                } else {
                    &mut bn.beta
                };
                block.value.data_mut()[i] -= d;
                dot(o.data(), direction.data())
            });
            let err = max_relative_error(&analytic, &num);
            assert!(err < 1e-4, "{name} rel err {err}");
        }
    }
}
