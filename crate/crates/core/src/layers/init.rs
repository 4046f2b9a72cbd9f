//! Seeded parameter initializers.

use rand::Rng;

use crate::tensor::Tensor;

/// Glorot-style uniform init: entries drawn from
/// `U(-sqrt(6/(rows+cols)), +sqrt(6/(rows+cols)))` for a `[rows x cols]`
/// matrix.
pub fn glorot_uniform(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    Tensor::new(&[rows, cols], data).expect("finite init values")
}

/// Random `n x n` orthogonal matrix via modified Gram-Schmidt on a random
/// Gaussian matrix.
pub fn orthogonal(rng: &mut impl Rng, n: usize) -> Tensor {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut v: Vec<f64> = (0..n).map(|_| standard_normal(rng)).collect();
        loop {
            for q in &cols {
                let proj: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                for (vi, qi) in v.iter_mut().zip(q) {
                    *vi -= proj * qi;
                }
            }
            let norm: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-8 {
                for vi in v.iter_mut() {
                    *vi /= norm;
                }
                break;
            }
            // degenerate draw; try a fresh vector
            v = (0..n).map(|_| standard_normal(rng)).collect();
        }
        cols.push(v);
    }
    // columns are orthonormal; store column i as matrix column i
    let mut data = vec![0.0; n * n];
    for (j, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            data[i * n + j] = v;
        }
    }
    Tensor::new(&[n, n], data).expect("finite init values")
}

/// Box-Muller standard normal draw.
fn standard_normal(rng: &mut impl Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // in (0, 1]
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}
