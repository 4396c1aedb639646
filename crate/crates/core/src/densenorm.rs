//! Spectral-norm estimation for explicit matrices.
//!
//! Power iteration gives a lower bound on the largest singular value, Gram
//! iteration a certified upper bound that converges supergeometrically.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{norm2, DenseMatrix};
use crate::rng;

/// Frobenius norms below this are treated as zero.
pub const ZERO_TOL: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    UpperBound,
    LowerBound,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralBound {
    pub value: f64,
    pub iterations: usize,
    pub direction: Direction,
    /// Accumulated natural-log rescaling `r`.
    pub log_rescale: f64,
}

impl SpectralBound {
    pub fn exact_zero(iterations: usize) -> Self {
        Self { value: 0.0, iterations, direction: Direction::Exact, log_rescale: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingularTriplet {
    pub sigma: f64,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

fn check_finite(w: &DenseMatrix) -> Result<()> {
    if w.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

fn check_iters(n_iter: usize) -> Result<()> {
    if n_iter == 0 {
        return Err(Error::InvalidArgument("n_iter must be at least 1".into()));
    }
    Ok(())
}

/// Power iteration (lower bound on `σ₁`), started from a seeded Gaussian vector.
pub fn power_iteration(w: &DenseMatrix, n_iter: usize, seed: u64) -> Result<SpectralBound> {
    check_iters(n_iter)?;
    check_finite(w)?;
    if w.frobenius_norm() < ZERO_TOL {
        return Err(Error::ZeroMatrix);
    }
    let mut r = rng::seeded(seed);
    let mut u = rng::normal_vec(&mut r, w.cols());
    normalize(&mut u);
    let mut sigma = 0.0;
    for _ in 0..n_iter {
        let mut v = w.matvec(&u)?;
        sigma = norm2(&v);
        if sigma == 0.0 {
            break;
        }
        v.iter_mut().for_each(|x| *x /= sigma);
        u = w.matvec_t(&v)?;
        if normalize(&mut u) == 0.0 {
            break;
        }
    }
    if sigma > 0.0 {
        sigma = norm2(&w.matvec(&u)?);
    }
    Ok(SpectralBound { value: sigma, iterations: n_iter, direction: Direction::LowerBound, log_rescale: 0.0 })
}

/// Runs `n_iter - 1` rescaled Gram steps starting from `w`. Returns the final
/// normalized iterate and the log accumulator, or `None` if an iterate
/// vanished.
fn gram_iterates(w: &DenseMatrix, n_iter: usize) -> Option<(DenseMatrix, f64)> {
    let mut m = w.clone();
    let mut r = 0.0_f64;
    for _ in 1..n_iter {
        let f = m.frobenius_norm();
        if f < ZERO_TOL {
            return None;
        }
        r = 2.0 * (r + f.ln());
        m.scale(1.0 / f);
        m = m.gram();
    }
    Some((m, r))
}

/// Gram iteration upper bound `‖W⁽ᵗ⁾‖_F^{2^{1-t}}` with `W⁽¹⁾ = W` and
/// `W⁽ᵗ⁺¹⁾ = W⁽ᵗ⁾ᵀW⁽ᵗ⁾`.
///
/// The iterate is Frobenius-normalized at every step and the scale is kept
/// in `log_rescale`, so the result is exact up to rounding for any finite
/// input magnitude. A zero matrix yields an `Exact` zero bound.
pub fn gram_iteration(w: &DenseMatrix, n_iter: usize) -> Result<SpectralBound> {
    check_iters(n_iter)?;
    check_finite(w)?;
    // Both orientations give the same value; iterate on the smaller side.
    let owned;
    let w = if w.rows() < w.cols() {
        owned = w.transpose();
        &owned
    } else {
        w
    };
    let Some((m, r)) = gram_iterates(w, n_iter) else {
        return Ok(SpectralBound::exact_zero(n_iter));
    };
    let f = m.frobenius_norm();
    if f < ZERO_TOL {
        return Ok(SpectralBound::exact_zero(n_iter));
    }
    let exponent = 2f64.powi(1 - n_iter as i32);
    let value = (exponent * (f.ln() + r)).exp();
    Ok(SpectralBound { value, iterations: n_iter, direction: Direction::UpperBound, log_rescale: r })
}

fn largest_column(m: &DenseMatrix) -> (Vec<f64>, f64) {
    let mut best = (Vec::new(), -1.0);
    for j in 0..m.cols() {
        let c = m.column(j);
        let nc = norm2(&c);
        if nc > best.1 {
            best = (c, nc);
        }
    }
    best
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = norm2(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Dominant singular triplet from the largest column of the final Gram
/// iterate, which is proportional to the top right-singular vector.
pub fn gram_singular_vector(w: &DenseMatrix, n_iter: usize) -> Result<SingularTriplet> {
    if n_iter < 4 {
        return Err(Error::InvalidArgument("n_iter must be at least 4".into()));
    }
    check_finite(w)?;
    if w.frobenius_norm() < ZERO_TOL {
        return Err(Error::ZeroMatrix);
    }
    // First step W -> WᵀW, then keep squaring the cols x cols Gram matrix.
    let mut g = w.scaled(1.0 / w.frobenius_norm()).gram();
    let (m, _) = gram_iterates(&g, n_iter - 1)
        .ok_or_else(|| Error::DegenerateSpectrum("Gram iterate vanished".into()))?;
    g = m;
    let (mut right, nr) = largest_column(&g);
    if !(nr >= ZERO_TOL) {
        return Err(Error::DegenerateSpectrum("all columns of the final iterate vanished".into()));
    }
    normalize(&mut right);
    let mut left = w.matvec(&right)?;
    let sigma = normalize(&mut left);
    if sigma == 0.0 {
        return Err(Error::DegenerateSpectrum("right vector lies in the kernel".into()));
    }
    Ok(SingularTriplet { sigma, left, right })
}

/// Dominant eigenpair of a square matrix by repeated squaring `W ← W²`.
///
/// Only real dominant eigenvalues are supported. When the dominant
/// eigenvalue is complex or not unique in modulus the squared iterates do
/// not settle on a single direction; this is caught by the eigen-residual
/// check and reported as `DegenerateSpectrum`.
pub fn squaring_eigenpair(w: &DenseMatrix, n_iter: usize) -> Result<(f64, Vec<f64>)> {
    check_iters(n_iter)?;
    check_finite(w)?;
    if w.rows() != w.cols() {
        return Err(Error::ShapeMismatch(format!("{}x{} is not square", w.rows(), w.cols())));
    }
    let fw = w.frobenius_norm();
    if fw < ZERO_TOL {
        return Err(Error::ZeroMatrix);
    }
    let mut m = w.clone();
    for _ in 1..n_iter {
        let f = m.frobenius_norm();
        if f < ZERO_TOL {
            return Err(Error::DegenerateSpectrum("iterate vanished (nilpotent part)".into()));
        }
        m.scale(1.0 / f);
        m = m.matmul(&m)?;
    }
    let (mut u, nu) = largest_column(&m);
    if !(nu >= ZERO_TOL) {
        return Err(Error::DegenerateSpectrum("all columns of the final iterate vanished".into()));
    }
    normalize(&mut u);
    let wu = w.matvec(&u)?;
    let lambda: f64 = u.iter().zip(&wu).map(|(a, b)| a * b).sum();
    let resid: Vec<f64> = wu.iter().zip(&u).map(|(a, b)| a - lambda * b).collect();
    if norm2(&resid) > 1e-6 * fw {
        return Err(Error::DegenerateSpectrum(
            "iterates did not converge to a real dominant eigenvector".into(),
        ));
    }
    Ok((lambda, u))
}

/// Gradient of the Gram bound with respect to `W`:
/// `W (WᵀW)^{2^{t-1}-1} / ‖W⁽ᵗ⁾‖_F^{2(1-2^{-t})}`.
///
/// The bound is positively homogeneous of degree one, so its gradient is
/// scale-free; it is evaluated on `W / bound(W)` to keep every power of the
/// Gram matrix within range.
pub fn gram_bound_gradient(w: &DenseMatrix, n_iter: usize) -> Result<DenseMatrix> {
    check_iters(n_iter)?;
    check_finite(w)?;
    if w.frobenius_norm() < ZERO_TOL {
        return Err(Error::ZeroMatrix);
    }
    if w.rows() < w.cols() {
        return Ok(gram_bound_gradient(&w.transpose(), n_iter)?.transpose());
    }
    let b = gram_iteration(w, n_iter)?.value;
    let wh = w.scaled(1.0 / b);
    // Powers G, G², G⁴, … multiplied together give G^{2^{t-1}-1}.
    let g = wh.gram();
    let mut acc = DenseMatrix::identity(w.cols());
    let mut pow = g;
    for step in 1..n_iter {
        acc = acc.matmul(&pow)?;
        if step + 1 < n_iter {
            pow = pow.matmul(&pow)?;
        }
    }
    let bh = gram_iteration(&wh, n_iter)?.value;
    let denom = ((2f64.powi(n_iter as i32) - 1.0) * bh.ln()).exp();
    let mut grad = wh.matmul(&acc)?;
    grad.scale(1.0 / denom);
    Ok(grad)
}
