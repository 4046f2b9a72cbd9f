//! Minimal dense row-major `f64` tensor.
//!
//! This is deliberately small: the layer code needs matrix products,
//! pointwise maps, softmax, and axis reductions, all in double precision
//! with explicit shape checks and no broadcasting beyond scalar scaling.
//! Keeping the kernels this simple is what makes the hand-written backward
//! passes auditable.

use crate::error::{Error, Result};

/// Dense row-major array of `f64` with an explicit shape.
///
/// Invariant: `data.len() == shape.iter().product()` and every element is
/// finite. Operations that could overflow check their output and report a
/// numeric error instead of silently carrying NaN/Inf forward.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn product(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn ensure_finite(data: &[f64], op: &str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("{op} produced a non-finite value")))
    }
}

impl Tensor {
    /// Builds a tensor from a shape and a flat row-major buffer.
    pub fn new(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!(
                "zero-sized dimension in shape {shape:?}"
            )));
        }
        if data.len() != product(shape) {
            return Err(Error::Shape(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                shape
            )));
        }
        ensure_finite(&data, "tensor construction")?;
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; product(shape)],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; product(shape)],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if product(shape) != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    fn check_same_shape(&self, other: &Self, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "{op}: operand shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.rank() != 2 || other.rank() != 2 {
            return Err(Error::Shape(format!(
                "matmul expects rank-2 operands, got {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::Shape(format!(
                "matmul inner dimensions disagree: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![0.0; m * n];
        // i-k-j loop order keeps both row accesses contiguous.
        for i in 0..m {
            let a_row = &self.data[i * k..(i + 1) * k];
            let out_row = &mut out[i * n..(i + 1) * n];
            for (kk, &a) in a_row.iter().enumerate() {
                let b_row = &other.data[kk * n..(kk + 1) * n];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        ensure_finite(&out, "matmul")?;
        Ok(Self {
            shape: vec![m, n],
            data: out,
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "add")?;
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        ensure_finite(&data, "add")?;
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "sub")?;
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        ensure_finite(&data, "sub")?;
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "mul")?;
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        ensure_finite(&data, "mul")?;
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn scale(&self, factor: f64) -> Result<Self> {
        let data: Vec<f64> = self.data.iter().map(|a| a * factor).collect();
        ensure_finite(&data, "scale")?;
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn sigmoid(&self) -> Self {
        self.map(sigmoid)
    }

    pub fn tanh(&self) -> Self {
        self.map(f64::tanh)
    }

    pub fn relu(&self) -> Self {
        self.map(|v| v.max(0.0))
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Softmax along `axis`, computed with max-subtraction so large inputs
    /// cannot overflow.
    pub fn softmax(&self, axis: usize) -> Result<Self> {
        if axis >= self.rank() {
            return Err(Error::Shape(format!(
                "softmax axis {axis} out of range for shape {:?}",
                self.shape
            )));
        }
        let mut out = self.data.clone();
        for_each_lane(&self.shape, axis, |stride, base, len| {
            let mut max = f64::NEG_INFINITY;
            for i in 0..len {
                max = max.max(out[base + i * stride]);
            }
            let mut sum = 0.0;
            for i in 0..len {
                let e = (out[base + i * stride] - max).exp();
                out[base + i * stride] = e;
                sum += e;
            }
            for i in 0..len {
                out[base + i * stride] /= sum;
            }
        });
        ensure_finite(&out, "softmax")?;
        Ok(Self {
            shape: self.shape.clone(),
            data: out,
        })
    }

    pub fn reduce_sum(&self, axis: usize) -> Result<Self> {
        self.reduce(axis, false)
    }

    pub fn reduce_mean(&self, axis: usize) -> Result<Self> {
        self.reduce(axis, true)
    }

    fn reduce(&self, axis: usize, mean: bool) -> Result<Self> {
        if axis >= self.rank() {
            return Err(Error::Shape(format!(
                "reduce axis {axis} out of range for shape {:?}",
                self.shape
            )));
        }
        let mut out_shape: Vec<usize> = self.shape.clone();
        let len = out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let mut out = vec![0.0; product(&out_shape)];
        let mut lane = 0;
        for_each_lane(&self.shape, axis, |stride, base, n| {
            let mut acc = 0.0;
            for i in 0..n {
                acc += self.data[base + i * stride];
            }
            out[lane] = if mean { acc / n as f64 } else { acc };
            lane += 1;
        });
        let _ = len;
        ensure_finite(&out, "reduce")?;
        Ok(Self {
            shape: out_shape,
            data: out,
        })
    }
}

/// Standard logistic function.
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Visits every 1-D lane along `axis`: calls `f(stride, base_offset, len)`
/// once per lane, in row-major order of the remaining axes.
fn for_each_lane(shape: &[usize], axis: usize, mut f: impl FnMut(usize, usize, usize)) {
    let len = shape[axis];
    let stride: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    for o in 0..outer {
        for s in 0..stride {
            f(stride, o * len * stride + s, len);
        }
    }
}

// Unchecked gemm kernels for the layer code. Shapes are established by the
// layer constructors, so failures here are programmer errors.

/// `out[m x n] += a[m x k] . b[n x k]^T`
pub(crate) fn gemm_nt_acc(out: &mut [f64], a: &[f64], m: usize, k: usize, b: &[f64], n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            out_row[j] += acc;
        }
    }
}

/// `out[m x n] += a[m x k] . b[k x n]`
pub(crate) fn gemm_nn_acc(out: &mut [f64], a: &[f64], m: usize, k: usize, b: &[f64], n: usize) {
    debug_assert_eq!(out.len(), m * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (kk, &x) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &y) in out_row.iter_mut().zip(b_row) {
                *o += x * y;
            }
        }
    }
}

/// `out[k x n] += a[m x k]^T . b[m x n]`
pub(crate) fn gemm_tn_acc(out: &mut [f64], a: &[f64], m: usize, k: usize, b: &[f64], n: usize) {
    debug_assert_eq!(out.len(), k * n);
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (kk, &x) in a_row.iter().enumerate() {
            let out_row = &mut out[kk * n..(kk + 1) * n];
            for (o, &y) in out_row.iter_mut().zip(b_row) {
                *o += x * y;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent triple-loop reference for the matmul kernel.
    fn matmul_oracle(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for kk in 0..k {
                    acc += a[i * k + kk] * b[kk * n + j];
                }
                out[i * n + j] = acc;
            }
        }
        out
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn matmul_identity() {
        let a = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::new(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap(), b);
    }

    #[test]
    fn matmul_hand_product() {
        let a = Tensor::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::new(&[2, 1], vec![3.0, 4.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[1, 1]);
        assert_eq!(c.data(), &[11.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for &(m, k, n) in &[(3, 4, 2), (16, 16, 16), (1, 7, 5)] {
            let a = rand_vec(&mut rng, m * k);
            let b = rand_vec(&mut rng, k * n);
            let got = Tensor::new(&[m, k], a.clone())
                .unwrap()
                .matmul(&Tensor::new(&[k, n], b.clone()).unwrap())
                .unwrap();
            let want = matmul_oracle(&a, m, k, &b, n);
            for (g, w) in got.data().iter().zip(&want) {
                assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0), "{g} vs {w}");
            }
        }
    }

    #[test]
    fn matmul_dimension_mismatch_is_shape_error() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn elementwise_fixtures() {
        let x = Tensor::new(&[1], vec![0.0]).unwrap();
        assert_eq!(x.sigmoid().data(), &[0.5]);
        assert_eq!(x.tanh().data(), &[0.0]);
        let r = Tensor::new(&[3], vec![-1.0, 0.0, 2.0]).unwrap().relu();
        assert_eq!(r.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn elementwise_shape_mismatch_is_shape_error() {
        let a = Tensor::zeros(&[2]);
        let b = Tensor::zeros(&[3]);
        assert!(matches!(a.add(&b), Err(Error::Shape(_))));
    }

    #[test]
    fn overflow_is_reported_not_propagated() {
        let a = Tensor::new(&[1], vec![f64::MAX]).unwrap();
        assert!(matches!(a.scale(2.0), Err(Error::Numeric(_))));
        assert!(matches!(a.add(&a), Err(Error::Numeric(_))));
    }

    #[test]
    fn softmax_fixtures() {
        let x = Tensor::zeros(&[5]);
        let s = x.softmax(0).unwrap();
        for v in s.data() {
            assert!((v - 0.2).abs() < 1e-15);
        }

        let big = Tensor::new(&[2], vec![1000.0, 1000.0]).unwrap();
        let s = big.softmax(0).unwrap();
        assert!((s.data()[0] - 0.5).abs() < 1e-15);

        let x = Tensor::new(&[2], vec![1.0_f64.ln(), 3.0_f64.ln()]).unwrap();
        let s = x.softmax(0).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-12);
        assert!((s.data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_over_middle_axis() {
        // shape [2, 3, 2], softmax over axis 1
        let x = Tensor::new(
            &[2, 3, 2],
            vec![
                0.0, 1.0, 0.0, 2.0, 0.0, 3.0, //
                1.0, 0.0, 1.0, 0.0, 1.0, 0.0,
            ],
        )
        .unwrap();
        let s = x.softmax(1).unwrap();
        // every (outer, inner) lane sums to 1
        for o in 0..2 {
            for i in 0..2 {
                let sum: f64 = (0..3).map(|t| s.data()[o * 6 + t * 2 + i]).sum();
                assert!((sum - 1.0).abs() < 1e-12);
            }
        }
        // second sample, constant lane -> uniform
        assert!((s.data()[6] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn reduce_fixtures() {
        let x = Tensor::new(&[2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let m = x.reduce_mean(0).unwrap();
        assert_eq!(m.shape(), &[2]);
        assert_eq!(m.data(), &[3.0, 5.0]);

        let s = Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.reduce_sum(0).unwrap().data(), &[6.0]);

        // length-1 axis is the identity
        let x = Tensor::new(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(x.reduce_mean(0).unwrap().data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn reduce_invalid_axis_is_shape_error() {
        let x = Tensor::zeros(&[2, 2]);
        assert!(matches!(x.reduce_mean(2), Err(Error::Shape(_))));
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            values in proptest::collection::vec(-50.0_f64..50.0, 1..12),
            shift in -1e3_f64..1e3,
        ) {
            let n = values.len();
            let x = Tensor::new(&[n], values.clone()).unwrap();
            let s = x.softmax(0).unwrap();
            let sum: f64 = s.data().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);

            let shifted = Tensor::new(&[n], values.iter().map(|v| v + shift).collect()).unwrap();
            let s2 = shifted.softmax(0).unwrap();
            for (a, b) in s.data().iter().zip(s2.data()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn matmul_matches_oracle_random(
            m in 1_usize..16, k in 1_usize..16, n in 1_usize..16, seed in 0_u64..1000
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = rand_vec(&mut rng, m * k);
            let b = rand_vec(&mut rng, k * n);
            let got = Tensor::new(&[m, k], a.clone()).unwrap()
                .matmul(&Tensor::new(&[k, n], b.clone()).unwrap()).unwrap();
            let want = matmul_oracle(&a, m, k, &b, n);
            for (g, w) in got.data().iter().zip(&want) {
                prop_assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0));
            }
        }
    }
}
