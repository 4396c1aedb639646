//! Brute-force references for small instances: explicit convolution
//! matrices, a dense symmetric eigensolver, a naive DFT and a Monte-Carlo
//! expectation estimator.

use num_complex::Complex64;

use crate::convnorm::{ConvFilter, FourierBlockSet};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Circulant,
    Toeplitz,
    Strided,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterializedOperator {
    pub matrix: DenseMatrix,
    pub layout: Layout,
    pub n: usize,
    pub c_out: usize,
    pub c_in: usize,
    pub k: usize,
}

/// Largest matrix side accepted by the dense oracles.
pub const MAX_DIM: usize = 2500;

fn check_size(kf: &ConvFilter, n: usize) -> Result<()> {
    if n < kf.k {
        return Err(Error::InputTooSmall { n, k: kf.k });
    }
    if kf.c_out.max(kf.c_in) * n * n > 4 * MAX_DIM {
        return Err(Error::TooLarge(format!("materializing side {n} with {} channels", kf.c_out.max(kf.c_in))));
    }
    Ok(())
}

/// Circular "same" convolution: row `(j, u, v)`, column `(i, x, y)`, with
/// `Y[j,u,v] = Σ K[j,i,a,b] X[i, (u+a-p) mod n, (v+b-p) mod n]`, `p = ⌊k/2⌋`.
pub fn materialize_circulant(kf: &ConvFilter, n: usize) -> Result<MaterializedOperator> {
    check_size(kf, n)?;
    let (co, ci, k) = (kf.c_out, kf.c_in, kf.k);
    let p = k / 2;
    let nn = n * n;
    let mut m = DenseMatrix::zeros(co * nn, ci * nn);
    for j in 0..co {
        for u in 0..n {
            for v in 0..n {
                let row = j * nn + u * n + v;
                for i in 0..ci {
                    for a in 0..k {
                        let x = (u + a + n - p) % n;
                        for b in 0..k {
                            let y = (v + b + n - p) % n;
                            let col = i * nn + x * n + y;
                            m.set(row, col, m.get(row, col) + kf.get(j, i, a, b));
                        }
                    }
                }
            }
        }
    }
    Ok(MaterializedOperator { matrix: m, layout: Layout::Circulant, n, c_out: co, c_in: ci, k })
}

fn toeplitz_rows(kf: &ConvFilter, n: usize, stride: usize) -> DenseMatrix {
    let (co, ci, k) = (kf.c_out, kf.c_in, kf.k);
    // Odd kernels are centred; even kernels anchor at their first tap.
    let p = if k % 2 == 1 { (k - 1) / 2 } else { 0 };
    let no = n / stride;
    let nn = n * n;
    let mut m = DenseMatrix::zeros(co * no * no, ci * nn);
    for j in 0..co {
        for uo in 0..no {
            for vo in 0..no {
                let (u, v) = (uo * stride, vo * stride);
                let row = (j * no + uo) * no + vo;
                for i in 0..ci {
                    for a in 0..k {
                        let Some(x) = (u + a).checked_sub(p).filter(|&x| x < n) else {
                            continue;
                        };
                        for b in 0..k {
                            let Some(y) = (v + b).checked_sub(p).filter(|&y| y < n) else {
                                continue;
                            };
                            m.set(row, i * nn + x * n + y, kf.get(j, i, a, b));
                        }
                    }
                }
            }
        }
    }
    m
}

/// Zero-padded "same" convolution as a banded block-Toeplitz matrix.
pub fn materialize_toeplitz(kf: &ConvFilter, n: usize) -> Result<MaterializedOperator> {
    if kf.k % 2 == 0 {
        return Err(Error::EvenKernel(kf.k));
    }
    check_size(kf, n)?;
    let m = toeplitz_rows(kf, n, 1);
    Ok(MaterializedOperator { matrix: m, layout: Layout::Toeplitz, n, c_out: kf.c_out, c_in: kf.c_in, k: kf.k })
}

/// Strided zero-padded convolution: the Toeplitz rows at output positions
/// `(s·u, s·v)`. Even kernels are allowed here and are not centred.
pub fn materialize_strided(kf: &ConvFilter, n: usize, stride: usize) -> Result<MaterializedOperator> {
    if stride == 0 || n % stride != 0 {
        return Err(Error::HypothesisViolated(format!("stride {stride} does not divide {n}")));
    }
    check_size(kf, n)?;
    let m = toeplitz_rows(kf, n, stride);
    Ok(MaterializedOperator { matrix: m, layout: Layout::Strided, n, c_out: kf.c_out, c_in: kf.c_in, k: kf.k })
}

/// Direct convolution of an image `x[i][u][v]` (flattened), with either
/// circular or zero padding. Used to validate the materialized layouts.
pub fn direct_convolution(kf: &ConvFilter, n: usize, x: &[f64], circular: bool) -> Vec<f64> {
    let (co, ci, k) = (kf.c_out, kf.c_in, kf.k);
    let p = (k / 2) as isize;
    let n_i = n as isize;
    let mut y = vec![0.0; co * n * n];
    for j in 0..co {
        for u in 0..n_i {
            for v in 0..n_i {
                let mut acc = 0.0;
                for i in 0..ci {
                    for a in 0..k as isize {
                        for b in 0..k as isize {
                            let (mut xx, mut yy) = (u + a - p, v + b - p);
                            if circular {
                                xx = xx.rem_euclid(n_i);
                                yy = yy.rem_euclid(n_i);
                            } else if xx < 0 || yy < 0 || xx >= n_i || yy >= n_i {
                                continue;
                            }
                            acc += kf.get(j, i, a as usize, b as usize)
                                * x[(i * n + xx as usize) * n + yy as usize];
                        }
                    }
                }
                y[(j * n + u as usize) * n + v as usize] = acc;
            }
        }
    }
    y
}

/// Householder reduction of a symmetric matrix to tridiagonal form.
/// Returns `(diagonal, off-diagonal)`.
fn tridiagonalize(a: &DenseMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = a.rows();
    let mut m = a.data().to_vec();
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for k in 0..n.saturating_sub(2) {
        let xnorm = crate::linalg::norm2(&(k + 1..n).map(|i| m[i * n + k]).collect::<Vec<_>>());
        if xnorm == 0.0 {
            continue;
        }
        let x0 = m[(k + 1) * n + k];
        let alpha = if x0 >= 0.0 { -xnorm } else { xnorm };
        for i in k + 1..n {
            v[i] = m[i * n + k];
        }
        v[k + 1] -= alpha;
        let vtv: f64 = (k + 1..n).map(|i| v[i] * v[i]).sum();
        if vtv == 0.0 {
            continue;
        }
        let beta = 2.0 / vtv;
        for i in k + 1..n {
            let row = &m[i * n..(i + 1) * n];
            p[i] = beta * (k + 1..n).map(|j| row[j] * v[j]).sum::<f64>();
        }
        let kk = 0.5 * beta * (k + 1..n).map(|i| v[i] * p[i]).sum::<f64>();
        for i in k + 1..n {
            p[i] -= kk * v[i];
        }
        for i in k + 1..n {
            let (vi, wi) = (v[i], p[i]);
            let row = &mut m[i * n..(i + 1) * n];
            for j in k + 1..n {
                row[j] -= vi * p[j] + wi * v[j];
            }
        }
        m[(k + 1) * n + k] = alpha;
        m[k * n + k + 1] = alpha;
        for i in k + 2..n {
            m[i * n + k] = 0.0;
            m[k * n + i] = 0.0;
        }
    }
    let d = (0..n).map(|i| m[i * n + i]).collect();
    let e = (0..n.saturating_sub(1)).map(|i| m[(i + 1) * n + i]).collect();
    (d, e)
}

/// Number of eigenvalues of the tridiagonal matrix strictly below `x`.
fn sturm_count(d: &[f64], e: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = d[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..d.len() {
        if q == 0.0 {
            q = f64::EPSILON * (e[i - 1].abs() + f64::MIN_POSITIVE);
        }
        q = d[i] - x - e[i - 1] * e[i - 1] / q;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Largest eigenvalue of a symmetric matrix via Householder
/// tridiagonalization and Sturm-sequence bisection.
pub fn symmetric_max_eigenvalue(a: &DenseMatrix) -> Result<f64> {
    if a.rows() != a.cols() {
        return Err(Error::ShapeMismatch("matrix is not square".into()));
    }
    let n = a.rows();
    if n == 1 {
        return Ok(a.get(0, 0));
    }
    let (d, e) = tridiagonalize(a);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        let r = if i > 0 { e[i - 1].abs() } else { 0.0 } + if i + 1 < n { e[i].abs() } else { 0.0 };
        lo = lo.min(d[i] - r);
        hi = hi.max(d[i] + r);
    }
    let pad = 1e-12 * (hi.abs() + lo.abs()) + f64::MIN_POSITIVE;
    lo -= pad;
    hi += pad;
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(&d, &e, mid) == n {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Exact largest singular value: square root of the top eigenvalue of the
/// Gram matrix on the smaller side.
pub fn exact_svd_sigma1(w: &DenseMatrix) -> Result<f64> {
    let small = w.rows().min(w.cols());
    if small > MAX_DIM {
        return Err(Error::TooLarge(format!("smaller side {small} exceeds {MAX_DIM}")));
    }
    let g = if w.cols() <= w.rows() { w.gram() } else { w.transpose().gram() };
    Ok(symmetric_max_eigenvalue(&g)?.max(0.0).sqrt())
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns the
/// eigenvalues in decreasing order and the matching eigenvectors as columns.
pub fn jacobi_eigen(a: &DenseMatrix) -> Result<(Vec<f64>, DenseMatrix)> {
    if a.rows() != a.cols() {
        return Err(Error::ShapeMismatch("matrix is not square".into()));
    }
    let n = a.rows();
    if n > MAX_DIM {
        return Err(Error::TooLarge(format!("side {n} exceeds {MAX_DIM}")));
    }
    let mut m = a.clone();
    let mut v = DenseMatrix::identity(n);
    let fro = a.frobenius_norm();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m.get(i, j) * m.get(i, j))
            .sum::<f64>()
            .sqrt();
        if off <= 1e-14 * fro {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m.get(p, q);
                if apq == 0.0 {
                    continue;
                }
                let theta = (m.get(q, q) - m.get(p, p)) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m.get(k, p), m.get(k, q));
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let (mpk, mqk) = (m.get(p, k), m.get(q, k));
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let (vkp, vkq) = (v.get(k, p), v.get(k, q));
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(j, j).total_cmp(&m.get(i, i)));
    let vals = order.iter().map(|&i| m.get(i, i)).collect();
    let vecs = DenseMatrix::from_fn(n, n, |r, c| v.get(r, order[c]));
    Ok((vals, vecs))
}

/// Top singular value and right singular vector via Jacobi on `WᵀW`.
pub fn jacobi_top_singular(w: &DenseMatrix) -> Result<(f64, Vec<f64>)> {
    let (vals, vecs) = jacobi_eigen(&w.gram())?;
    Ok((vals[0].max(0.0).sqrt(), vecs.column(0)))
}

/// Fourier blocks by the explicit double sum, no FFT.
pub fn naive_dft(kf: &ConvFilter, n: usize) -> Result<FourierBlockSet> {
    if n < kf.k {
        return Err(Error::InputTooSmall { n, k: kf.k });
    }
    let (co, ci, k) = (kf.c_out, kf.c_in, kf.k);
    let mut blocks = vec![Complex64::new(0.0, 0.0); n * n * co * ci];
    let tau = 2.0 * std::f64::consts::PI / n as f64;
    for u in 0..n {
        for v in 0..n {
            for j in 0..co {
                for i in 0..ci {
                    let mut z = Complex64::new(0.0, 0.0);
                    for a in 0..k {
                        for b in 0..k {
                            // Reduce the phase index mod n before scaling.
                            let ph = ((a * u + b * v) % n) as f64 * tau;
                            z += Complex64::from_polar(1.0, -ph) * kf.get(j, i, a, b);
                        }
                    }
                    blocks[(u * n + v) * co * ci + j * ci + i] = z;
                }
            }
        }
    }
    Ok(FourierBlockSet { n, c_out: co, c_in: ci, blocks })
}

/// Mean and unbiased sample variance of `f(x + δ)` with `δ ~ N(0, σ² I)`.
/// Gaussians come from a ChaCha8 stream through the ziggurat sampler, so
/// the result is a deterministic function of `seed`.
pub fn mc_expectation(
    f: impl Fn(&[f64]) -> f64,
    x: &[f64],
    sigma: f64,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if n_samples < 2 {
        return Err(Error::TooFewSamples(n_samples));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument("sigma must be positive".into()));
    }
    let mut r = rng::seeded(seed);
    let mut buf = vec![0.0; x.len()];
    let (mut mean, mut m2) = (0.0_f64, 0.0_f64);
    for i in 0..n_samples {
        for (b, xi) in buf.iter_mut().zip(x) {
            *b = xi + sigma * rng::standard_normal(&mut r);
        }
        let y = f(&buf);
        let d = y - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (y - mean);
    }
    Ok((mean, m2 / (n_samples - 1) as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_filters_materialize_to_identity() {
        let m = materialize_circulant(&ConvFilter::identity(1, 1), 2).unwrap();
        assert_eq!(m.matrix, DenseMatrix::identity(4));
        let m = materialize_toeplitz(&ConvFilter::identity(1, 1), 3).unwrap();
        assert_eq!(m.matrix, DenseMatrix::identity(9));
        let m = materialize_toeplitz(&ConvFilter::identity(1, 3), 5).unwrap();
        assert_eq!(m.matrix, DenseMatrix::identity(25));
    }

    #[test]
    fn scalar_filter_is_scaled_identity() {
        let kf = ConvFilter::new(1, 1, 1, vec![2.5]).unwrap();
        let m = materialize_circulant(&kf, 3).unwrap();
        assert_eq!(m.matrix, DenseMatrix::identity(9).scaled(2.5));
    }

    #[test]
    fn sigma1_trivial() {
        assert!((exact_svd_sigma1(&DenseMatrix::from_diag(&[3.0, 1.0])).unwrap() - 3.0).abs() < 1e-14);
        let n = DenseMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        assert!((exact_svd_sigma1(&n).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn sigma1_of_hilbert_matches_characteristic_polynomial_root() {
        let h = DenseMatrix::from_fn(5, 5, |i, j| 1.0 / (i + j + 1) as f64);
        // Largest root of det(H - λI), refined independently in high precision.
        assert!((exact_svd_sigma1(&h).unwrap() - 1.5670506910982314).abs() < 1e-13);
        let (vals, _) = jacobi_eigen(&h).unwrap();
        assert!((vals[0] - 1.5670506910982314).abs() < 1e-13);
    }

    #[test]
    fn mc_constant_function() {
        let (m, v) = mc_expectation(|_| 4.0, &[1.0, 2.0], 0.5, 100, 3).unwrap();
        assert_eq!(m, 4.0);
        assert_eq!(v, 0.0);
    }
}
