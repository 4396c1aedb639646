//! Lipschitz bounds for Gaussian-smoothed functions.

use std::f64::consts::{PI, SQRT_2};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{dot, norm2};
use crate::oracle::mc_expectation;
use crate::special::{erf, norm_cdf, norm_pdf, norm_quantile, norm_sf};

/// Base Lipschitz constant `L`, smoothing scale `sigma` and output range `r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmoothingContext {
    pub l: f64,
    pub sigma: f64,
    pub r: f64,
}

impl SmoothingContext {
    pub fn new(l: f64, sigma: f64, r: f64) -> Result<Self> {
        for (name, v) in [("L", l), ("sigma", sigma), ("r", r)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be positive and finite")));
            }
        }
        Ok(Self { l, sigma, r })
    }
}

/// `√(2/π)/σ`, valid for any function with values in `[0, 1]`.
pub fn lip_bound_bounded(sigma: f64) -> f64 {
    (2.0 / PI).sqrt() / sigma
}

/// `r/(√(2π) σ)`, half of [`lip_bound_bounded`] at `r = 1`.
pub fn lip_bound_bounded_refined(sigma: f64, r: f64) -> f64 {
    r / ((2.0 * PI).sqrt() * sigma)
}

/// `L erf(r / (2^{3/2} L σ))`.
pub fn lip_bound_weierstrass(ctx: &SmoothingContext) -> f64 {
    ctx.l * erf(ctx.r / (2.0 * SQRT_2 * ctx.l * ctx.sigma))
}

/// Improvement of the smoothed bound over the better of its two ingredients:
/// `min(L, r/(√(2π)σ)) - L erf(r/(2^{3/2} L σ))`.
pub fn bound_gap(ctx: &SmoothingContext) -> f64 {
    ctx.l.min(lip_bound_bounded_refined(ctx.sigma, ctx.r)) - lip_bound_weierstrass(ctx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OptimalSigma {
    pub sigma_star: f64,
    pub bound_at_star: f64,
    pub gain: f64,
}

/// Smoothing scale `σ* = r/(L√(2π))` at which the two regimes meet. There
/// the bound is `L erf(√π/2)` and the radius gain `1/erf(√π/2)`.
pub fn optimal_sigma(l: f64, r: f64) -> OptimalSigma {
    let e = erf(PI.sqrt() / 2.0);
    OptimalSigma { sigma_star: r / (l * (2.0 * PI).sqrt()), bound_at_star: l * e, gain: 1.0 / e }
}

/// `x ↦ Φ(λ(wᵀx + b))`, a smooth stand-in for a sigmoid classifier.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbitModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub lambda: f64,
}

impl ProbitModel {
    /// Slope matching the logistic sigmoid at the origin.
    pub const DEFAULT_LAMBDA: f64 = 0.626_657_068_657_750_1; // sqrt(pi/8)

    pub fn new(w: Vec<f64>, b: f64) -> Self {
        Self { w, b, lambda: Self::DEFAULT_LAMBDA }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        norm_cdf(self.lambda * (dot(&self.w, x) + self.b))
    }
}

/// Closed-form Gaussian smoothing of the probit model:
/// `Φ(λ(wᵀx+b) / √(1 + λ²σ²‖w‖²))`.
pub fn probit_smoothed(model: &ProbitModel, sigma: f64, x: &[f64]) -> f64 {
    let wn = norm2(&model.w);
    let s = (1.0 + (model.lambda * sigma * wn).powi(2)).sqrt();
    norm_cdf(model.lambda * (dot(&model.w, x) + model.b) / s)
}

/// Supremum over `x` of the gradient norm of [`probit_smoothed`].
pub fn probit_smoothed_gradient_sup(model: &ProbitModel, sigma: f64) -> f64 {
    let lw = model.lambda * norm2(&model.w);
    lw / (1.0 + (lw * sigma).powi(2)).sqrt() * norm_pdf(0.0)
}

/// Adaptive Simpson on `[a, b]` with absolute tolerance `tol`.
fn simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + simpson_rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// `∫_a^b Φ̄(s/σ) ds` by adaptive Simpson. The tolerance is the tighter of
/// 1e-12 absolute and 1e-12 relative so deep tails keep full precision.
fn tail_integral(a: f64, b: f64, sigma: f64) -> f64 {
    let f = |s: f64| norm_sf(s / sigma);
    let coarse = (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b));
    let tol = (1e-12 * coarse.abs()).clamp(f64::MIN_POSITIVE, 1e-12);
    simpson(&f, a, b, tol)
}

/// Probability reached at offset `s0` by the extremal `L`-Lipschitz ramp:
/// `L ∫_{s0}^{s0+1/L} Φ̄_σ`.
fn ramp_probability(s0: f64, l: f64, sigma: f64) -> f64 {
    l * tail_integral(s0, s0 + 1.0 / l, sigma)
}

/// Local Lipschitz bound of `Φ⁻¹ ∘ f̃` at a point where the smoothed
/// `L`-Lipschitz function takes the value `p`.
///
/// The offset `s0` of the extremal ramp is located by bisection and the
/// bound is `L [Φ_σ(s0 + 1/L) - Φ_σ(s0)] / φ(Φ⁻¹(p))`. The problem is
/// symmetric under `p ↦ 1 - p`, so only `p ≤ 1/2` is solved directly.
pub fn local_lip_quantile(p: f64, l: f64, sigma: f64) -> Result<f64> {
    if !(p > 1e-12 && p < 1.0 - 1e-12) {
        return Err(Error::DegenerateP(p));
    }
    SmoothingContext::new(l, sigma, 1.0)?;
    let p = if p > 0.5 { 1.0 - p } else { p };
    let w = 1.0 / l;
    // g(s0) = ramp_probability is decreasing in s0.
    let (mut lo, mut hi) = (-10.0 * sigma - w, 10.0 * sigma);
    let (lo_max, hi_max) = (-50.0 * sigma - w, 50.0 * sigma);
    while ramp_probability(lo, l, sigma) < p {
        if lo <= lo_max {
            return Err(Error::RootBracketFailure(format!("p={p}: lower end reached {lo}")));
        }
        lo = (2.0 * (lo + w) - w).max(lo_max);
    }
    while ramp_probability(hi, l, sigma) > p {
        if hi >= hi_max {
            return Err(Error::RootBracketFailure(format!("p={p}: upper end reached {hi}")));
        }
        hi = (2.0 * hi).min(hi_max);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if ramp_probability(mid, l, sigma) > p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let s0 = 0.5 * (lo + hi);
    let num = if s0 + 0.5 * w >= 0.0 {
        norm_sf(s0 / sigma) - norm_sf((s0 + w) / sigma)
    } else {
        norm_cdf((s0 + w) / sigma) - norm_cdf(s0 / sigma)
    };
    Ok(l * num / norm_pdf(norm_quantile(p)))
}

/// Points of the 257-node grid, uniform in logit space between the ends.
pub const BALL_GRID: usize = 257;

/// Largest [`local_lip_quantile`] over the probability range `[p_lo, p_hi]`
/// reachable inside a ball.
pub fn local_lip_quantile_ball(p_lo: f64, p_hi: f64, l: f64, sigma: f64) -> Result<f64> {
    if !(p_lo <= p_hi) {
        return Err(Error::InvalidArgument("p_lo must not exceed p_hi".into()));
    }
    let mut best = local_lip_quantile(p_lo, l, sigma)?.max(local_lip_quantile(p_hi, l, sigma)?);
    if p_lo == p_hi {
        return Ok(best);
    }
    let logit = |p: f64| (p / (1.0 - p)).ln();
    let (a, b) = (logit(p_lo), logit(p_hi));
    for i in 1..BALL_GRID - 1 {
        let z = a + (b - a) * i as f64 / (BALL_GRID - 1) as f64;
        let p = 1.0 / (1.0 + (-z).exp());
        best = best.max(local_lip_quantile(p, l, sigma)?);
    }
    // An interval containing 1/2 always includes the symmetric centre.
    if p_lo < 0.5 && p_hi > 0.5 {
        best = best.max(local_lip_quantile(0.5, l, sigma)?);
    }
    Ok(best)
}

fn log_softmax_parts(logits: &[f64]) -> (f64, Vec<f64>) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = logits.iter().map(|z| (z - m).exp()).sum();
    let lse = m + s.ln();
    let probs = logits.iter().map(|z| (z - lse).exp()).collect();
    (lse, probs)
}

/// Cross-entropy of `softmax(logits)` against `label`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange { label, classes: logits.len() });
    }
    let (lse, _) = log_softmax_parts(logits);
    Ok(lse - logits[label])
}

/// Upper bound on the expected cross-entropy when the last layer's weights
/// receive `N(0, σ²)` noise: `CE + σ²/2 ‖h‖²`.
pub fn smoothed_ce_bound(logits: &[f64], label: usize, h_norm_sq: f64, sigma: f64) -> Result<f64> {
    Ok(cross_entropy(logits, label)? + 0.5 * sigma * sigma * h_norm_sq)
}

/// Second-order approximation `CE + σ²/2 ‖h‖² Σ ŷᵢ(1 - ŷᵢ)`.
pub fn smoothed_ce_taylor(logits: &[f64], label: usize, h_norm_sq: f64, sigma: f64) -> Result<f64> {
    let ce = cross_entropy(logits, label)?;
    let (_, probs) = log_softmax_parts(logits);
    let curv: f64 = probs.iter().map(|p| p * (1.0 - p)).sum();
    Ok(ce + 0.5 * sigma * sigma * h_norm_sq * curv)
}

/// `H erf(ε / (√2 H σ))`.
pub fn smoothed_curvature_bound(h: f64, eps: f64, sigma: f64) -> f64 {
    h * erf(eps / (SQRT_2 * h * sigma))
}

/// Monte-Carlo variance of `f(x + δ)` next to the Poincaré bound `σ² L²`.
pub fn gaussian_poincare_check(
    f: impl Fn(&[f64]) -> f64,
    l_f: f64,
    x: &[f64],
    sigma: f64,
    n_samples: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let (_, var) = mc_expectation(f, x, sigma, n_samples, seed)?;
    Ok((var, sigma * sigma * l_f * l_f))
}
