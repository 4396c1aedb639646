//! 1-Lipschitz layer constructions by spectral rescaling, and product upper
//! bounds over layer stacks.

use serde::Serialize;

use crate::convnorm::{norm2_circ, norm2_toep, ConvFilter, ToepReadout};
use crate::densenorm::{gram_iteration, Direction, SpectralBound, ZERO_TOL};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;

/// Gram depth `t` and optional positive weights `q` (one per column of `W`).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RescaleSpec {
    pub t: usize,
    pub q: Option<Vec<f64>>,
}

impl RescaleSpec {
    pub fn new(t: usize) -> Self {
        Self { t, q: None }
    }
}

/// Diagonal rescaling `R` such that `σ₁(W diag(R)) ≤ 1`.
///
/// With `W⁽¹⁾ = WᵀW` and `W⁽ᵗ⁺¹⁾ = (W⁽ᵗ⁾)²`,
/// `R_ii = (Σ_j |W⁽ᵗ⁾|_ij q_i / q_j)^{-2^{-t}}`, so `t = 1` is the AOL
/// rescaling and larger `t` approaches `1/σ₁(W)`. `t = 0` returns the
/// Frobenius normalisation `1/‖W‖_F`. Zero sums give `R_ii = 0`.
pub fn spectral_rescaling(w: &DenseMatrix, spec: &RescaleSpec) -> Result<Vec<f64>> {
    if !w.is_finite() {
        return Err(Error::NonFinite);
    }
    let q_len = w.cols();
    let ones;
    let q: &[f64] = match &spec.q {
        Some(q) => {
            if q.len() != q_len {
                return Err(Error::ShapeMismatch(format!("q has length {} for {q_len} columns", q.len())));
            }
            if q.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
                return Err(Error::NonPositiveQ);
            }
            q
        }
        None => {
            ones = vec![1.0; q_len];
            &ones
        }
    };
    let fw = w.frobenius_norm();
    if spec.t == 0 {
        let r = if fw < ZERO_TOL { 0.0 } else { 1.0 / fw };
        return Ok(vec![r; q_len]);
    }
    if fw < ZERO_TOL {
        return Ok(vec![0.0; q_len]);
    }
    // Unscaled WᵀW when representable, so t = 1 is exactly the AOL formula.
    let mut m = w.gram();
    let mut r = 0.0_f64;
    if !m.is_finite() || m.frobenius_norm() < 1e-150 {
        m = w.scaled(1.0 / fw).gram();
        r = 2.0 * fw.ln();
    }
    for _ in 1..spec.t {
        let f = m.frobenius_norm();
        r = 2.0 * (r + f.ln());
        m.scale(1.0 / f);
        m = m.matmul(&m)?;
    }
    let e = 2f64.powi(-(spec.t as i32));
    let unscale = (-e * r).exp();
    Ok((0..q_len)
        .map(|i| {
            let s: f64 = m.row(i).iter().zip(q).map(|(a, qj)| a.abs() * q[i] / qj).sum();
            if s == 0.0 {
                0.0
            } else {
                s.powf(-e) * unscale
            }
        })
        .collect())
}

fn check_layer_shapes(w: &DenseMatrix, b: &[f64], r: &[f64], b_len: usize) -> Result<()> {
    if r.len() != w.cols() || b.len() != b_len {
        return Err(Error::ShapeMismatch("layer operands do not conform".into()));
    }
    Ok(())
}

/// `W diag(R) x + b`.
pub fn apply_affine_1lip(w: &DenseMatrix, b: &[f64], r: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != w.cols() {
        return Err(Error::ShapeMismatch(format!("input length {} for {} columns", x.len(), w.cols())));
    }
    check_layer_shapes(w, b, r, w.rows())?;
    let rx: Vec<f64> = x.iter().zip(r).map(|(a, b)| a * b).collect();
    let mut y = w.matvec(&rx)?;
    y.iter_mut().zip(b).for_each(|(a, b)| *a += b);
    Ok(y)
}

/// `x - 2 W diag(R)² relu(Wᵀx + b)`.
pub fn apply_residual_1lip(w: &DenseMatrix, b: &[f64], r: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != w.rows() {
        return Err(Error::ShapeMismatch(format!("input length {} for {} rows", x.len(), w.rows())));
    }
    check_layer_shapes(w, b, r, w.cols())?;
    let z: Vec<f64> = w
        .matvec_t(x)?
        .iter()
        .zip(b)
        .zip(r)
        .map(|((a, bi), ri)| 2.0 * ri * ri * (a + bi).max(0.0))
        .collect();
    let wz = w.matvec(&z)?;
    Ok(x.iter().zip(&wz).map(|(a, b)| a - b).collect())
}

/// One layer of a stack for the product upper bound.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerDescriptor {
    Dense(DenseMatrix),
    Conv(ConvFilter),
    BatchNormAffine { gamma: Vec<f64>, running_var: Vec<f64>, eps: f64 },
    Pool,
    Activation1Lip,
    ResidualBlock(Vec<LayerDescriptor>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PubReport {
    pub per_layer: Vec<(usize, SpectralBound)>,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PubOptions {
    /// Bound convolutions with circular instead of zero padding.
    pub circular_conv: bool,
}

fn exact(value: f64) -> SpectralBound {
    SpectralBound { value, iterations: 0, direction: Direction::Exact, log_rescale: 0.0 }
}

/// Product of per-layer Lipschitz bounds.
pub fn product_upper_bound(
    layers: &[LayerDescriptor],
    n: usize,
    t: usize,
    opts: PubOptions,
) -> Result<PubReport> {
    if layers.is_empty() {
        return Err(Error::InvalidArgument("empty layer list".into()));
    }
    let mut per_layer = Vec::with_capacity(layers.len());
    let mut total = 1.0;
    for (idx, layer) in layers.iter().enumerate() {
        let b = match layer {
            LayerDescriptor::Dense(w) => gram_iteration(w, t)?,
            LayerDescriptor::Conv(kf) => {
                if opts.circular_conv {
                    norm2_circ(kf, n, t)?.bound
                } else {
                    norm2_toep(kf, t, ToepReadout::Inf)?.bound
                }
            }
            LayerDescriptor::BatchNormAffine { gamma, running_var, eps } => {
                if gamma.len() != running_var.len() || gamma.is_empty() {
                    return Err(Error::ShapeMismatch("gamma and running_var lengths differ".into()));
                }
                let mut m = 0.0_f64;
                for (g, v) in gamma.iter().zip(running_var) {
                    let d = v + eps;
                    if !(d > 0.0) {
                        return Err(Error::InvalidArgument("running_var + eps must be positive".into()));
                    }
                    m = m.max((g / d.sqrt()).abs());
                }
                exact(m)
            }
            LayerDescriptor::Pool | LayerDescriptor::Activation1Lip => exact(1.0),
            LayerDescriptor::ResidualBlock(main) => {
                let inner = product_upper_bound(main, n, t, opts)?;
                let direction = if inner.per_layer.iter().all(|(_, b)| b.direction == Direction::Exact) {
                    Direction::Exact
                } else {
                    Direction::UpperBound
                };
                SpectralBound { value: 1.0 + inner.total, iterations: t, direction, log_rescale: 0.0 }
            }
        };
        total *= b.value;
        per_layer.push((idx, b));
    }
    Ok(PubReport { per_layer, total })
}
