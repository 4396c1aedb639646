#![allow(dead_code)]

use lipbound::convnorm::ConvFilter;
use lipbound::rng::{self, SeededRng};
use lipbound::DenseMatrix;
use rand::Rng;

pub fn gaussian_matrix(r: &mut SeededRng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::new(rows, cols, rng::normal_vec(r, rows * cols)).unwrap()
}

pub fn gaussian_filter(r: &mut SeededRng, c_out: usize, c_in: usize, k: usize) -> ConvFilter {
    ConvFilter::new(c_out, c_in, k, rng::normal_vec(r, c_out * c_in * k * k)).unwrap()
}

pub fn uniform(r: &mut SeededRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * r.random::<f64>()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Class counts of `n` categorical draws from `p`.
pub fn categorical_counts(r: &mut SeededRng, p: &[f64], n: usize) -> Vec<u64> {
    let mut counts = vec![0u64; p.len()];
    for _ in 0..n {
        let u: f64 = r.random();
        let mut acc = 0.0;
        let mut k = p.len() - 1;
        for (i, pi) in p.iter().enumerate() {
            acc += pi;
            if u < acc {
                k = i;
                break;
            }
        }
        counts[k] += 1;
    }
    counts
}

/// Logits `mu + noise * N(0, I)` for `n` samples, row-major.
pub fn noisy_logits(r: &mut SeededRng, mu: &[f64], noise: f64, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * mu.len());
    for _ in 0..n {
        out.extend(mu.iter().map(|m| m + noise * rng::standard_normal(r)));
    }
    out
}
