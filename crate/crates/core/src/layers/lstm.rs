//! LSTM cell, unrolled layer, and bidirectional wrapper, with exact
//! backpropagation through time.
//!
//! Gate order is fixed as (input i, forget f, candidate g, output o) in the
//! stacked weight matrices, and the forget-gate bias slice starts at 1.0.

use rand::Rng;

use super::{init, ParamBlock};
use crate::error::{Error, Result};
use crate::tensor::{gemm_nn_acc, gemm_nt_acc, gemm_tn_acc, sigmoid, Tensor};

/// Recurrent weights for one direction.
///
/// `w` is `[(4H) x F]`, `u` is `[(4H) x H]`, `b` is `[4H]`, all in gate
/// order (i, f, g, o).
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w: ParamBlock,
    pub u: ParamBlock,
    pub b: ParamBlock,
}

impl LstmParams {
    /// Seeded init: Glorot-uniform input weights, orthogonal recurrent
    /// blocks per gate, zero biases except the forget gate at 1.0.
    pub fn init(prefix: &str, input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Self {
        let h = hidden_size;
        let w = init::glorot_uniform(rng, 4 * h, input_size);
        let mut u_data = vec![0.0; 4 * h * h];
        for gate in 0..4 {
            let q = init::orthogonal(rng, h);
            for r in 0..h {
                for c in 0..h {
                    u_data[(gate * h + r) * h + c] = q.data()[r * h + c];
                }
            }
        }
        let u = Tensor::new(&[4 * h, h], u_data).expect("finite init");
        let mut b_data = vec![0.0; 4 * h];
        for v in &mut b_data[h..2 * h] {
            *v = 1.0;
        }
        let b = Tensor::new(&[4 * h], b_data).expect("finite init");
        Self {
            input_size,
            hidden_size,
            w: ParamBlock::new(format!("{prefix}.w"), w, true),
            u: ParamBlock::new(format!("{prefix}.u"), u, true),
            b: ParamBlock::new(format!("{prefix}.b"), b, true),
        }
    }

    /// All-zero parameters (used by tests for the zero-parameter fixtures).
    pub fn zeros(prefix: &str, input_size: usize, hidden_size: usize) -> Self {
        let h = hidden_size;
        Self {
            input_size,
            hidden_size,
            w: ParamBlock::new(
                format!("{prefix}.w"),
                Tensor::zeros(&[4 * h, input_size]),
                true,
            ),
            u: ParamBlock::new(format!("{prefix}.u"), Tensor::zeros(&[4 * h, h]), true),
            b: ParamBlock::new(format!("{prefix}.b"), Tensor::zeros(&[4 * h]), true),
        }
    }

    pub fn blocks(&self) -> Vec<&ParamBlock> {
        vec![&self.w, &self.u, &self.b]
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut ParamBlock> {
        vec![&mut self.w, &mut self.u, &mut self.b]
    }
}

/// Everything the backward pass needs from one time step.
#[derive(Debug, Clone)]
pub struct LstmStepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gate_i: Vec<f64>,
    gate_f: Vec<f64>,
    gate_g: Vec<f64>,
    gate_o: Vec<f64>,
    tanh_c: Vec<f64>,
    batch: usize,
}

/// One LSTM step over a batch.
///
/// `x_t` is `[B x F]`, `h_prev`/`c_prev` are `[B x H]`; returns the new
/// hidden and cell states plus the step cache.
pub fn lstm_cell_forward(
    x_t: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
    p: &LstmParams,
) -> Result<(Tensor, Tensor, LstmStepCache)> {
    let (f_dim, h_dim) = (p.input_size, p.hidden_size);
    if x_t.rank() != 2 || x_t.shape()[1] != f_dim {
        return Err(Error::Shape(format!(
            "lstm input shape {:?} does not match feature size {f_dim}",
            x_t.shape()
        )));
    }
    let batch = x_t.shape()[0];
    for (name, t) in [("h_prev", h_prev), ("c_prev", c_prev)] {
        if t.shape() != [batch, h_dim] {
            return Err(Error::Shape(format!(
                "lstm {name} shape {:?}, expected [{batch}, {h_dim}]",
                t.shape()
            )));
        }
    }

    // z[B x 4H] = x . W^T + h_prev . U^T + b
    let mut z = vec![0.0; batch * 4 * h_dim];
    for row in z.chunks_mut(4 * h_dim) {
        row.copy_from_slice(p.b.value.data());
    }
    gemm_nt_acc(&mut z, x_t.data(), batch, f_dim, p.w.value.data(), 4 * h_dim);
    gemm_nt_acc(
        &mut z,
        h_prev.data(),
        batch,
        h_dim,
        p.u.value.data(),
        4 * h_dim,
    );

    let n = batch * h_dim;
    let mut gate_i = vec![0.0; n];
    let mut gate_f = vec![0.0; n];
    let mut gate_g = vec![0.0; n];
    let mut gate_o = vec![0.0; n];
    let mut c = vec![0.0; n];
    let mut tanh_c = vec![0.0; n];
    let mut h = vec![0.0; n];
    for bi in 0..batch {
        let zr = &z[bi * 4 * h_dim..(bi + 1) * 4 * h_dim];
        for j in 0..h_dim {
            let idx = bi * h_dim + j;
            let i_g = sigmoid(zr[j]);
            let f_g = sigmoid(zr[h_dim + j]);
            let g_g = zr[2 * h_dim + j].tanh();
            let o_g = sigmoid(zr[3 * h_dim + j]);
            let c_new = f_g * c_prev.data()[idx] + i_g * g_g;
            let t_c = c_new.tanh();
            gate_i[idx] = i_g;
            gate_f[idx] = f_g;
            gate_g[idx] = g_g;
            gate_o[idx] = o_g;
            c[idx] = c_new;
            tanh_c[idx] = t_c;
            h[idx] = o_g * t_c;
        }
    }

    let cache = LstmStepCache {
        x: x_t.data().to_vec(),
        h_prev: h_prev.data().to_vec(),
        c_prev: c_prev.data().to_vec(),
        gate_i,
        gate_f,
        gate_g,
        gate_o,
        tanh_c,
        batch,
    };
    Ok((
        Tensor::new(&[batch, h_dim], h)?,
        Tensor::new(&[batch, h_dim], c)?,
        cache,
    ))
}

/// Backward through one step. `dh`/`dc` are gradients w.r.t. this step's
/// outputs; returns `(dx, dh_prev, dc_prev)` and accumulates into the
/// parameter gradient slots.
fn lstm_cell_backward(
    p: &mut LstmParams,
    cache: &LstmStepCache,
    dh: &[f64],
    dc_in: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (f_dim, h_dim) = (p.input_size, p.hidden_size);
    let batch = cache.batch;
    let mut dz = vec![0.0; batch * 4 * h_dim];
    let mut dc_prev = vec![0.0; batch * h_dim];
    for bi in 0..batch {
        for j in 0..h_dim {
            let idx = bi * h_dim + j;
            let (i_g, f_g, g_g, o_g) = (
                cache.gate_i[idx],
                cache.gate_f[idx],
                cache.gate_g[idx],
                cache.gate_o[idx],
            );
            let t_c = cache.tanh_c[idx];
            let dc = dc_in[idx] + dh[idx] * o_g * (1.0 - t_c * t_c);
            let d_o = dh[idx] * t_c;
            let d_i = dc * g_g;
            let d_f = dc * cache.c_prev[idx];
            let d_g = dc * i_g;
            dc_prev[idx] = dc * f_g;
            let zr = &mut dz[bi * 4 * h_dim..(bi + 1) * 4 * h_dim];
            zr[j] = d_i * i_g * (1.0 - i_g);
            zr[h_dim + j] = d_f * f_g * (1.0 - f_g);
            zr[2 * h_dim + j] = d_g * (1.0 - g_g * g_g);
            zr[3 * h_dim + j] = d_o * o_g * (1.0 - o_g);
        }
    }

    // parameter gradients
    gemm_tn_acc(
        p.w.grad.data_mut(),
        &dz,
        batch,
        4 * h_dim,
        &cache.x,
        f_dim,
    );
    gemm_tn_acc(
        p.u.grad.data_mut(),
        &dz,
        batch,
        4 * h_dim,
        &cache.h_prev,
        h_dim,
    );
    {
        let db = p.b.grad.data_mut();
        for bi in 0..batch {
            for j in 0..4 * h_dim {
                db[j] += dz[bi * 4 * h_dim + j];
            }
        }
    }

    // input-side gradients
    let mut dx = vec![0.0; batch * f_dim];
    gemm_nn_acc(&mut dx, &dz, batch, 4 * h_dim, p.w.value.data(), f_dim);
    let mut dh_prev = vec![0.0; batch * h_dim];
    gemm_nn_acc(&mut dh_prev, &dz, batch, 4 * h_dim, p.u.value.data(), h_dim);
    (dx, dh_prev, dc_prev)
}

/// Unrolled forward over a `[B x T x F]` sequence with zero initial state.
#[derive(Debug, Clone)]
pub struct LstmLayerCache {
    steps: Vec<LstmStepCache>,
    batch: usize,
    time: usize,
    return_sequences: bool,
}

pub fn lstm_layer_forward(
    x: &Tensor,
    p: &LstmParams,
    return_sequences: bool,
) -> Result<(Tensor, LstmLayerCache)> {
    if x.rank() != 3 {
        return Err(Error::Shape(format!(
            "lstm layer expects [B x T x F], got {:?}",
            x.shape()
        )));
    }
    let (batch, time, f_dim) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if f_dim != p.input_size {
        return Err(Error::Shape(format!(
            "lstm layer feature size {f_dim} does not match params ({})",
            p.input_size
        )));
    }
    let h_dim = p.hidden_size;
    let mut h = Tensor::zeros(&[batch, h_dim]);
    let mut c = Tensor::zeros(&[batch, h_dim]);
    let mut steps = Vec::with_capacity(time);
    let mut seq = vec![0.0; batch * time * h_dim];
    for t in 0..time {
        let x_t = slice_step(x, t);
        let (h_new, c_new, cache) = lstm_cell_forward(&x_t, &h, &c, p)?;
        for bi in 0..batch {
            let src = &h_new.data()[bi * h_dim..(bi + 1) * h_dim];
            seq[(bi * time + t) * h_dim..(bi * time + t + 1) * h_dim].copy_from_slice(src);
        }
        steps.push(cache);
        h = h_new;
        c = c_new;
    }
    let cache = LstmLayerCache {
        steps,
        batch,
        time,
        return_sequences,
    };
    let out = if return_sequences {
        Tensor::new(&[batch, time, h_dim], seq)?
    } else {
        h
    };
    Ok((out, cache))
}

/// BPTT over the unrolled layer. `upstream` is `[B x T x H]` when the
/// forward returned sequences, `[B x H]` otherwise. Returns `dx`.
pub fn lstm_layer_backward(
    p: &mut LstmParams,
    cache: &LstmLayerCache,
    upstream: &Tensor,
) -> Result<Tensor> {
    let (batch, time, h_dim) = (cache.batch, cache.time, p.hidden_size);
    let expected: &[usize] = if cache.return_sequences {
        &[batch, time, h_dim]
    } else {
        &[batch, h_dim]
    };
    if upstream.shape() != expected {
        return Err(Error::Shape(format!(
            "lstm upstream shape {:?}, expected {:?}",
            upstream.shape(),
            expected
        )));
    }
    let f_dim = p.input_size;
    let mut dx = vec![0.0; batch * time * f_dim];
    let mut dh = vec![0.0; batch * h_dim];
    let mut dc = vec![0.0; batch * h_dim];
    for t in (0..time).rev() {
        if cache.return_sequences {
            for bi in 0..batch {
                for j in 0..h_dim {
                    dh[bi * h_dim + j] += upstream.data()[(bi * time + t) * h_dim + j];
                }
            }
        } else if t == time - 1 {
            dh.copy_from_slice(upstream.data());
        }
        let (dx_t, dh_prev, dc_prev) = lstm_cell_backward(p, &cache.steps[t], &dh, &dc);
        for bi in 0..batch {
            let dst = &mut dx[(bi * time + t) * f_dim..(bi * time + t + 1) * f_dim];
            dst.copy_from_slice(&dx_t[bi * f_dim..(bi + 1) * f_dim]);
        }
        dh = dh_prev;
        dc = dc_prev;
    }
    Tensor::new(&[batch, time, f_dim], dx)
}

/// Bidirectional wrapper: both directions share the hidden size; the
/// backward direction consumes the time-reversed sequence and its outputs
/// are re-reversed before concatenation.
#[derive(Debug, Clone)]
pub struct BiLstm {
    pub fwd: LstmParams,
    pub bwd: LstmParams,
}

impl BiLstm {
    pub fn new(fwd: LstmParams, bwd: LstmParams) -> Result<Self> {
        if fwd.hidden_size != bwd.hidden_size {
            return Err(Error::Config(format!(
                "bilstm direction hidden sizes differ: {} vs {}",
                fwd.hidden_size, bwd.hidden_size
            )));
        }
        if fwd.input_size != bwd.input_size {
            return Err(Error::Config(format!(
                "bilstm direction input sizes differ: {} vs {}",
                fwd.input_size, bwd.input_size
            )));
        }
        Ok(Self { fwd, bwd })
    }

    pub fn init(prefix: &str, input_size: usize, hidden_size: usize, rng: &mut impl Rng) -> Self {
        Self {
            fwd: LstmParams::init(&format!("{prefix}.fwd"), input_size, hidden_size, rng),
            bwd: LstmParams::init(&format!("{prefix}.bwd"), input_size, hidden_size, rng),
        }
    }

    pub fn blocks(&self) -> Vec<&ParamBlock> {
        let mut v = self.fwd.blocks();
        v.extend(self.bwd.blocks());
        v
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut ParamBlock> {
        let mut v = self.fwd.blocks_mut();
        v.extend(self.bwd.blocks_mut());
        v
    }
}

#[derive(Debug, Clone)]
pub struct BiLstmCache {
    fwd: LstmLayerCache,
    bwd: LstmLayerCache,
}

pub fn bilstm_forward(x: &Tensor, p: &BiLstm) -> Result<(Tensor, BiLstmCache)> {
    let (fwd_out, fwd_cache) = lstm_layer_forward(x, &p.fwd, true)?;
    let reversed = reverse_time(x)?;
    let (bwd_rev, bwd_cache) = lstm_layer_forward(&reversed, &p.bwd, true)?;
    let bwd_out = reverse_time(&bwd_rev)?;
    let out = concat_features(&fwd_out, &bwd_out)?;
    Ok((
        out,
        BiLstmCache {
            fwd: fwd_cache,
            bwd: bwd_cache,
        },
    ))
}

pub fn bilstm_backward(p: &mut BiLstm, cache: &BiLstmCache, upstream: &Tensor) -> Result<Tensor> {
    let h = p.fwd.hidden_size;
    let (up_fwd, up_bwd) = split_features(upstream, h)?;
    let dx_fwd = lstm_layer_backward(&mut p.fwd, &cache.fwd, &up_fwd)?;
    // the backward direction ran on the reversed sequence, so its upstream
    // must be reversed to match, and its dx un-reversed afterwards
    let up_bwd_rev = reverse_time(&up_bwd)?;
    let dx_bwd_rev = lstm_layer_backward(&mut p.bwd, &cache.bwd, &up_bwd_rev)?;
    let dx_bwd = reverse_time(&dx_bwd_rev)?;
    dx_fwd.add(&dx_bwd)
}

/// Reverses the time axis of a `[B x T x F]` tensor.
pub(crate) fn reverse_time(x: &Tensor) -> Result<Tensor> {
    if x.rank() != 3 {
        return Err(Error::Shape(format!(
            "reverse_time expects rank 3, got {:?}",
            x.shape()
        )));
    }
    let (b, t, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = vec![0.0; b * t * f];
    for bi in 0..b {
        for ti in 0..t {
            let src = &x.data()[(bi * t + ti) * f..(bi * t + ti + 1) * f];
            let dst = &mut out[(bi * t + (t - 1 - ti)) * f..(bi * t + (t - ti)) * f];
            dst.copy_from_slice(src);
        }
    }
    Tensor::new(&[b, t, f], out)
}

fn concat_features(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ba, ta, fa) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let (bb, tb, fb) = (b.shape()[0], b.shape()[1], b.shape()[2]);
    if ba != bb || ta != tb {
        return Err(Error::Shape(format!(
            "concat shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    let f = fa + fb;
    let mut out = vec![0.0; ba * ta * f];
    for bi in 0..ba {
        for ti in 0..ta {
            let dst = &mut out[(bi * ta + ti) * f..(bi * ta + ti + 1) * f];
            dst[..fa].copy_from_slice(&a.data()[(bi * ta + ti) * fa..(bi * ta + ti + 1) * fa]);
            dst[fa..].copy_from_slice(&b.data()[(bi * ta + ti) * fb..(bi * ta + ti + 1) * fb]);
        }
    }
    Tensor::new(&[ba, ta, f], out)
}

fn split_features(x: &Tensor, first: usize) -> Result<(Tensor, Tensor)> {
    let (b, t, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if first >= f {
        return Err(Error::Shape(format!(
            "cannot split {f} features at {first}"
        )));
    }
    let second = f - first;
    let mut a = vec![0.0; b * t * first];
    let mut c = vec![0.0; b * t * second];
    for bi in 0..b {
        for ti in 0..t {
            let src = &x.data()[(bi * t + ti) * f..(bi * t + ti + 1) * f];
            a[(bi * t + ti) * first..(bi * t + ti + 1) * first].copy_from_slice(&src[..first]);
            c[(bi * t + ti) * second..(bi * t + ti + 1) * second].copy_from_slice(&src[first..]);
        }
    }
    Ok((
        Tensor::new(&[b, t, first], a)?,
        Tensor::new(&[b, t, second], c)?,
    ))
}

/// Extracts time step `t` as `[B x F]`.
fn slice_step(x: &Tensor, t: usize) -> Tensor {
    let (b, time, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = vec![0.0; b * f];
    for bi in 0..b {
        out[bi * f..(bi + 1) * f]
            .copy_from_slice(&x.data()[(bi * time + t) * f..(bi * time + t + 1) * f]);
    }
    Tensor::new(&[b, f], out).expect("slice within bounds")
}
