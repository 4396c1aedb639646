//! Browser bindings for three interactive views: Gram vs power iteration
//! convergence, smoothing bounds against σ, and the certified radius of a
//! simplex-mapped logit vector.

use lipbound::certify::{radius_mult, simplex_map, SimplexKind, SimplexMap};
use lipbound::densenorm::{gram_iteration, power_iteration};
use lipbound::oracle::exact_svd_sigma1;
use lipbound::smoothbounds::{lip_bound_bounded_refined, lip_bound_weierstrass, optimal_sigma, SmoothingContext};
use lipbound::{rng, DenseMatrix};
use wasm_bindgen::prelude::*;

pub const PI_ITERS: [usize; 10] = [1, 2, 5, 10, 20, 50, 100, 200, 500, 1000];
pub const GI_ITERS: usize = 12;

#[wasm_bindgen]
pub struct Convergence {
    sigma: f64,
    gi: Vec<f64>,
    pi: Vec<f64>,
}

#[wasm_bindgen]
impl Convergence {
    /// Reference σ₁ from the dense eigensolver.
    #[wasm_bindgen(getter)]
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Relative error of Gram iteration for t = 1..12.
    #[wasm_bindgen(getter)]
    pub fn gi(&self) -> Vec<f64> {
        self.gi.clone()
    }

    /// Relative error of power iteration at [`PI_ITERS`].
    #[wasm_bindgen(getter)]
    pub fn pi(&self) -> Vec<f64> {
        self.pi.clone()
    }

    #[wasm_bindgen(getter, js_name = piIters)]
    pub fn pi_iters(&self) -> Vec<u32> {
        PI_ITERS.iter().map(|&i| i as u32).collect()
    }
}

pub fn convergence_of(rows: usize, cols: usize, seed: u64) -> Result<Convergence, String> {
    if rows == 0 || cols == 0 || rows * cols > 250_000 {
        return Err(format!("matrix size {rows}x{cols} is out of range"));
    }
    let mut r = rng::seeded(seed);
    let w = DenseMatrix::new(rows, cols, rng::normal_vec(&mut r, rows * cols)).map_err(|e| e.to_string())?;
    let sigma = exact_svd_sigma1(&w).map_err(|e| e.to_string())?;
    let err = |v: f64| (v - sigma).abs() / sigma;
    let gi = (1..=GI_ITERS)
        .map(|t| gram_iteration(&w, t).map(|b| err(b.value)))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let pi = PI_ITERS
        .iter()
        .map(|&n| power_iteration(&w, n, seed).map(|b| err(b.value)))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    Ok(Convergence { sigma, gi, pi })
}

/// Errors of both methods on a seeded Gaussian matrix.
#[wasm_bindgen]
pub fn convergence(rows: usize, cols: usize, seed: u32) -> Result<Convergence, JsError> {
    convergence_of(rows, cols, seed as u64).map_err(|e| JsError::new(&e))
}

/// `count` rows of `[σ, erf bound, refined bound, min(L, refined)]` on a
/// log grid spanning two decades around the optimal σ, flattened.
pub fn smoothing_rows(l: f64, r: f64, count: usize) -> Result<Vec<f64>, String> {
    if !(l > 0.0 && r > 0.0 && l.is_finite() && r.is_finite()) || count < 2 {
        return Err("L and r must be positive and count at least 2".into());
    }
    let star = optimal_sigma(l, r).sigma_star;
    let mut out = Vec::with_capacity(4 * count);
    for i in 0..count {
        let s = star * 10f64.powf(-1.0 + 2.0 * i as f64 / (count - 1) as f64);
        let ctx = SmoothingContext::new(l, s, r).map_err(|e| e.to_string())?;
        let refined = lip_bound_bounded_refined(s, r);
        out.extend([s, lip_bound_weierstrass(&ctx), refined, l.min(refined)]);
    }
    Ok(out)
}

#[wasm_bindgen(js_name = smoothingCurve)]
pub fn smoothing_curve(l: f64, r: f64, count: usize) -> Result<Vec<f64>, JsError> {
    smoothing_rows(l, r, count).map_err(|e| JsError::new(&e))
}

/// `[σ*, bound at σ*, radius gain]`.
#[wasm_bindgen(js_name = optimalSigma)]
pub fn optimal_sigma_js(l: f64, r: f64) -> Vec<f64> {
    let o = optimal_sigma(l, r);
    vec![o.sigma_star, o.bound_at_star, o.gain]
}

fn parse_kind(kind: &str) -> Result<SimplexKind, String> {
    match kind {
        "hardmax" => Ok(SimplexKind::Hardmax),
        "softmax" => Ok(SimplexKind::Softmax),
        "sparsemax" => Ok(SimplexKind::Sparsemax),
        other => Err(format!("unknown map {other:?}")),
    }
}

/// Mapped probabilities followed by the multi-class radius of the top two.
pub fn certificate_of(logits: &[f64], kind: &str, temperature: f64, sigma: f64) -> Result<Vec<f64>, String> {
    if logits.len() < 2 {
        return Err("need at least two logits".into());
    }
    if !(temperature > 0.0 && sigma > 0.0) {
        return Err("temperature and sigma must be positive".into());
    }
    let map = SimplexMap::new(parse_kind(kind)?, temperature, 1.0);
    let mut p = simplex_map(logits, &map).map_err(|e| e.to_string())?;
    let mut sorted = p.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    p.push(radius_mult(sorted[0], sorted[1], sigma));
    Ok(p)
}

#[wasm_bindgen]
pub fn certificate(logits: &[f64], kind: &str, temperature: f64, sigma: f64) -> Result<Vec<f64>, JsError> {
    certificate_of(logits, kind, temperature, sigma).map_err(|e| JsError::new(&e))
}
