//! Randomized-smoothing certification: radii, simplex maps, confidence
//! intervals and the multi-class risk allocation procedures.

use std::f64::consts::SQRT_2;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::special::{beta_inv, erf, norm_quantile};

/// `max(0, σ Φ⁻¹(p1))`.
pub fn radius_mono(p1: f64, sigma: f64) -> f64 {
    if p1 <= 0.5 {
        return 0.0;
    }
    (sigma * norm_quantile(p1)).max(0.0)
}

/// `max(0, σ/2 (Φ⁻¹(p1) - Φ⁻¹(p2)))`.
pub fn radius_mult(p1: f64, p2: f64, sigma: f64) -> f64 {
    if p1 <= p2 {
        return 0.0;
    }
    let r = 0.5 * sigma * (norm_quantile(p1) - norm_quantile(p2));
    if r.is_nan() {
        0.0
    } else {
        r.max(0.0)
    }
}

/// Margin over twice the per-coordinate Lipschitz constant.
pub fn radius_coord(margin: f64, l_coord: f64) -> f64 {
    margin.max(0.0) / (2.0 * l_coord)
}

/// Margin over `√2` times the global Lipschitz constant.
pub fn radius_global(margin: f64, l_global: f64) -> f64 {
    margin.max(0.0) / (SQRT_2 * l_global)
}

/// [`radius_coord`] with the smoothed constant `L erf(1/(2^{3/2} L σ))`.
pub fn radius_coord_smoothed(margin: f64, l_coord: f64, sigma: f64) -> f64 {
    radius_coord(margin, l_coord * erf(1.0 / (2.0 * SQRT_2 * l_coord * sigma)))
}

/// [`radius_global`] with the smoothed constant `L erf(1/(2 L σ))`.
pub fn radius_global_smoothed(margin: f64, l_global: f64, sigma: f64) -> f64 {
    radius_global(margin, l_global * erf(1.0 / (2.0 * l_global * sigma)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SimplexKind {
    Hardmax,
    Softmax,
    Sparsemax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimplexMap {
    pub kind: SimplexKind,
    pub temperature: f64,
    pub mass: f64,
}

impl SimplexMap {
    pub fn new(kind: SimplexKind, temperature: f64, mass: f64) -> Self {
        Self { kind, temperature, mass }
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Projection of `z` onto the simplex of mass `r` (generalized sparsemax).
pub fn sparsemax(z: &[f64], r: f64) -> Vec<f64> {
    let mut s = z.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut kappa = 1;
    let mut cum_kappa = s[0];
    for (k, zk) in s.iter().enumerate() {
        cum += zk;
        if r + (k + 1) as f64 * zk > cum {
            kappa = k + 1;
            cum_kappa = cum;
        }
    }
    let rho = (cum_kappa - r) / kappa as f64;
    z.iter().map(|zi| (zi - rho).max(0.0)).collect()
}

fn softmax(z: &[f64], r: f64) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| r * x / s).collect()
}

/// Maps a logit vector onto the simplex of mass `map.mass` at temperature
/// `map.temperature`. Hardmax is only defined for unit mass.
pub fn simplex_map(z: &[f64], map: &SimplexMap) -> Result<Vec<f64>> {
    if z.is_empty() || z.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    if !(map.mass > 0.0) {
        return Err(Error::InvalidArgument("mass must be positive".into()));
    }
    match map.kind {
        SimplexKind::Hardmax => {
            if map.mass != 1.0 {
                return Err(Error::InvalidArgument("hardmax requires mass 1".into()));
            }
            let mut out = vec![0.0; z.len()];
            out[argmax(z)] = 1.0;
            Ok(out)
        }
        SimplexKind::Softmax | SimplexKind::Sparsemax => {
            if !(map.temperature > 0.0) {
                return Err(Error::InvalidArgument("temperature must be positive".into()));
            }
            let zt: Vec<f64> = z.iter().map(|x| x / map.temperature).collect();
            Ok(if map.kind == SimplexKind::Softmax {
                softmax(&zt, map.mass)
            } else {
                sparsemax(&zt, map.mass)
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Lower,
    Upper,
    TwoSided,
}

impl Side {
    fn alpha_side(self, alpha: f64) -> f64 {
        match self {
            Side::TwoSided => 0.5 * alpha,
            _ => alpha,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    ClopperPearson,
    Hoeffding,
    Bernstein,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub method: CiMethod,
    pub alpha: f64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha={alpha} outside (0, 1)")));
    }
    Ok(())
}

/// Exact binomial interval from Beta quantiles.
pub fn ci_clopper_pearson(successes: u64, n: u64, alpha: f64, side: Side) -> Result<ConfidenceInterval> {
    check_alpha(alpha)?;
    if successes > n || n == 0 {
        return Err(Error::InvalidArgument(format!("{successes} successes out of {n}")));
    }
    let a = side.alpha_side(alpha);
    let (s, nf) = (successes as f64, n as f64);
    let lower = if side == Side::Upper || successes == 0 { 0.0 } else { beta_inv(a, s, nf - s + 1.0) };
    let upper = if side == Side::Lower || successes == n { 1.0 } else { beta_inv(1.0 - a, s + 1.0, nf - s) };
    Ok(ConfidenceInterval { lower, upper, method: CiMethod::ClopperPearson, alpha })
}

fn shifted(mean: f64, shift: f64, r: f64, side: Side, method: CiMethod, alpha: f64) -> ConfidenceInterval {
    let lower = if side == Side::Upper { 0.0 } else { (mean - shift).clamp(0.0, r) };
    let upper = if side == Side::Lower { r } else { (mean + shift).clamp(0.0, r) };
    ConfidenceInterval { lower, upper, method, alpha }
}

/// Hoeffding shift `r √(ln(1/α_side) / (2n))`.
pub fn hoeffding_shift(n: usize, alpha: f64, r: f64, side: Side) -> f64 {
    r * ((1.0 / side.alpha_side(alpha)).ln() / (2.0 * n as f64)).sqrt()
}

/// Interval from Hoeffding's inequality for a mean of `n` values in `[0, r]`.
pub fn ci_hoeffding(mean: f64, n: usize, alpha: f64, r: f64, side: Side) -> Result<ConfidenceInterval> {
    check_alpha(alpha)?;
    if n == 0 || !(r > 0.0) {
        return Err(Error::InvalidArgument("need n >= 1 and r > 0".into()));
    }
    Ok(shifted(mean, hoeffding_shift(n, alpha, r, side), r, side, CiMethod::Hoeffding, alpha))
}

/// Empirical Bernstein shift for values in `[0, r]` with unbiased variance
/// `var` (of the values divided by `r`).
pub fn bernstein_shift(var: f64, n: usize, alpha: f64, r: f64, side: Side) -> f64 {
    let lg = (2.0 / side.alpha_side(alpha)).ln();
    let nf = n as f64;
    r * ((2.0 * var * lg / nf).sqrt() + 7.0 * lg / (3.0 * (nf - 1.0)))
}

/// Mean and unbiased variance, Welford order.
fn mean_var(values: impl Iterator<Item = f64>) -> (f64, f64, usize) {
    let (mut mean, mut m2, mut n) = (0.0_f64, 0.0_f64, 0usize);
    for y in values {
        n += 1;
        let d = y - mean;
        mean += d / n as f64;
        m2 += d * (y - mean);
    }
    let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
    (mean, var, n)
}

/// Empirical Bernstein interval for samples in `[0, r]`.
pub fn ci_bernstein(samples: &[f64], alpha: f64, r: f64, side: Side) -> Result<ConfidenceInterval> {
    check_alpha(alpha)?;
    if samples.len() < 2 {
        return Err(Error::TooFewSamples(samples.len()));
    }
    let (mean, var, n) = mean_var(samples.iter().map(|x| x / r));
    let shift = bernstein_shift(var, n, alpha, r, side);
    Ok(shifted(mean * r, shift, r, side, CiMethod::Bernstein, alpha))
}

/// `n x c` matrix of per-sample class scores, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSamples {
    pub n: usize,
    pub c: usize,
    pub scores: Vec<f64>,
}

impl ScoreSamples {
    pub fn new(n: usize, c: usize, scores: Vec<f64>) -> Result<Self> {
        if n == 0 || c < 2 {
            return Err(Error::ShapeMismatch(format!("{n} samples of {c} classes")));
        }
        if scores.len() != n * c {
            return Err(Error::ShapeMismatch(format!("{} scores for {n}x{c}", scores.len())));
        }
        if scores.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { n, c, scores })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.scores[i * self.c..(i + 1) * self.c]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(move |i| self.scores[i * self.c + j])
    }

    /// Applies a simplex map to every row.
    pub fn mapped(&self, map: &SimplexMap) -> Result<Self> {
        let mut out = Vec::with_capacity(self.scores.len());
        for i in 0..self.n {
            out.extend(simplex_map(self.row(i), map)?);
        }
        Ok(Self { n: self.n, c: self.c, scores: out })
    }

    /// Number of rows whose argmax is each class.
    pub fn argmax_counts(&self) -> Vec<u64> {
        let mut counts = vec![0; self.c];
        for i in 0..self.n {
            counts[argmax(self.row(i))] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusKind {
    Mono,
    Mult,
    Coord,
    Global,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct CertMeta {
    pub map: Option<SimplexKind>,
    pub temperature: Option<f64>,
    pub c_star: Option<usize>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificationResult {
    pub predicted: usize,
    pub radius: f64,
    pub alpha: f64,
    pub radius_kind: RadiusKind,
    pub ci_method: Option<CiMethod>,
    pub meta: CertMeta,
}

fn class_bounds(
    samples: &ScoreSamples,
    alpha: f64,
    method: CiMethod,
    r: f64,
) -> Result<Vec<ConfidenceInterval>> {
    (0..samples.c)
        .map(|j| {
            let lo;
            let hi;
            match method {
                CiMethod::ClopperPearson => {
                    let mut s = 0u64;
                    for v in samples.column(j) {
                        if v == r {
                            s += 1;
                        } else if v != 0.0 {
                            return Err(Error::InvalidArgument(
                                "Clopper-Pearson needs scores in {0, r}".into(),
                            ));
                        }
                    }
                    let n = samples.n as u64;
                    lo = ci_clopper_pearson(s, n, alpha, Side::Lower)?.lower * r;
                    hi = ci_clopper_pearson(s, n, alpha, Side::Upper)?.upper * r;
                }
                CiMethod::Hoeffding => {
                    let (mean, _, n) = mean_var(samples.column(j));
                    lo = ci_hoeffding(mean, n, alpha, r, Side::Lower)?.lower;
                    hi = ci_hoeffding(mean, n, alpha, r, Side::Upper)?.upper;
                }
                CiMethod::Bernstein => {
                    let col: Vec<f64> = samples.column(j).collect();
                    lo = ci_bernstein(&col, alpha, r, Side::Lower)?.lower;
                    hi = ci_bernstein(&col, alpha, r, Side::Upper)?.upper;
                }
            }
            Ok(ConfidenceInterval { lower: lo, upper: hi, method, alpha })
        })
        .collect()
}

/// Bonferroni certification over simplex-mapped samples with values in
/// `[0, r]`: one-sided bounds per class at level `α/c`, the top class by
/// lower bound against the best upper bound of the rest. The radius uses
/// the bounds divided by `r`, i.e. probabilities on the unit simplex.
pub fn certify_bonferroni(
    samples: &ScoreSamples,
    sigma: f64,
    alpha: f64,
    method: CiMethod,
    r: f64,
) -> Result<CertificationResult> {
    check_alpha(alpha)?;
    let cis = class_bounds(samples, alpha / samples.c as f64, method, r)?;
    let lowers: Vec<f64> = cis.iter().map(|c| c.lower).collect();
    let i1 = argmax(&lowers);
    let (lo, hi) = top_against_rest(&cis, i1);
    Ok(CertificationResult {
        predicted: i1,
        radius: radius_mult(lo / r, hi / r, sigma),
        alpha,
        radius_kind: RadiusKind::Mult,
        ci_method: Some(method),
        meta: CertMeta { lower: Some(lo), upper: Some(hi), ..CertMeta::default() },
    })
}

fn top_against_rest(cis: &[ConfidenceInterval], i1: usize) -> (f64, f64) {
    let hi = cis
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != i1)
        .map(|(_, c)| c.upper)
        .fold(f64::NEG_INFINITY, f64::max);
    (cis[i1].lower, hi)
}

/// Single-class certificate `σ Φ⁻¹(p̲)` from the Clopper-Pearson lower bound
/// on the top class's hardmax count.
pub fn certify_mono(counts: &[u64], sigma: f64, alpha: f64) -> Result<CertificationResult> {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(Error::EmptyCounts);
    }
    let f: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let i1 = argmax(&f);
    let lo = ci_clopper_pearson(counts[i1], n, alpha, Side::Lower)?.lower;
    Ok(CertificationResult {
        predicted: i1,
        radius: radius_mono(lo, sigma),
        alpha,
        radius_kind: RadiusKind::Mono,
        ci_method: Some(CiMethod::ClopperPearson),
        meta: CertMeta { lower: Some(lo), ..CertMeta::default() },
    })
}

/// Partition of the classes built from selection-phase counts: the top
/// class, the individually tracked attackers, and the pooled remainder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CpmPartition {
    pub top: usize,
    pub attackers: Vec<usize>,
    pub meta_class: Vec<usize>,
}

impl CpmPartition {
    pub fn c_star(&self) -> usize {
        1 + self.attackers.len() + usize::from(!self.meta_class.is_empty())
    }
}

/// Moves the largest remaining class out of the pooled meta-class while the
/// pool outweighs the runner-up.
pub fn cpm_partition(counts_n0: &[u64]) -> Result<CpmPartition> {
    if counts_n0.len() < 2 {
        return Err(Error::ShapeMismatch("need at least two classes".into()));
    }
    if counts_n0.iter().sum::<u64>() == 0 {
        return Err(Error::EmptyCounts);
    }
    let f: Vec<f64> = counts_n0.iter().map(|&c| c as f64).collect();
    let top = argmax(&f);
    let mut rest: Vec<usize> = (0..f.len()).filter(|&i| i != top).collect();
    let i2 = *rest.iter().max_by(|&&a, &&b| counts_n0[a].cmp(&counts_n0[b]).then(b.cmp(&a))).unwrap();
    rest.retain(|&i| i != i2);
    let mut attackers = vec![i2];
    loop {
        let mass: u64 = rest.iter().map(|&i| counts_n0[i]).sum();
        if rest.is_empty() || mass <= counts_n0[i2] {
            break;
        }
        let pos = (0..rest.len())
            .max_by(|&a, &b| counts_n0[rest[a]].cmp(&counts_n0[rest[b]]).then(rest[b].cmp(&rest[a])))
            .unwrap();
        attackers.push(rest.remove(pos));
    }
    Ok(CpmPartition { top, attackers, meta_class: rest })
}

/// Class partitioning certification. The partition comes from the
/// selection counts; bucket bounds use the disjoint estimation counts with
/// Clopper-Pearson at `α/c*`.
pub fn certify_cpm(
    counts_n0: &[u64],
    counts_n: &[u64],
    sigma: f64,
    alpha: f64,
) -> Result<CertificationResult> {
    check_alpha(alpha)?;
    if counts_n.len() != counts_n0.len() {
        return Err(Error::ShapeMismatch("selection and estimation class counts differ".into()));
    }
    let part = cpm_partition(counts_n0)?;
    let n: u64 = counts_n.iter().sum();
    if n == 0 {
        return Err(Error::EmptyCounts);
    }
    let c_star = part.c_star();
    let a = alpha / c_star as f64;
    let lo = ci_clopper_pearson(counts_n[part.top], n, a, Side::Lower)?.lower;
    let mut hi = 0.0_f64;
    for &i in &part.attackers {
        hi = hi.max(ci_clopper_pearson(counts_n[i], n, a, Side::Upper)?.upper);
    }
    if !part.meta_class.is_empty() {
        let s: u64 = part.meta_class.iter().map(|&i| counts_n[i]).sum();
        hi = hi.max(ci_clopper_pearson(s, n, a, Side::Upper)?.upper);
    }
    Ok(CertificationResult {
        predicted: part.top,
        radius: radius_mult(lo, hi, sigma),
        alpha,
        radius_kind: RadiusKind::Mult,
        ci_method: Some(CiMethod::ClopperPearson),
        meta: CertMeta { c_star: Some(c_star), lower: Some(lo), upper: Some(hi), ..CertMeta::default() },
    })
}

/// `count` log-spaced temperatures in `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count).map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp()).collect()
}

/// 50 log-spaced temperatures in `[0.01, 50]`.
pub fn default_temperature_grid() -> Vec<f64> {
    log_grid(0.01, 50.0, 50)
}

/// Bernstein-Bonferroni radius of mapped samples with the predicted class
/// taken as the argmax of the empirical means.
fn bernstein_mult(mapped: &ScoreSamples, sigma: f64, alpha: f64, r: f64) -> Result<(usize, f64, f64, f64)> {
    let cis = class_bounds(mapped, alpha / mapped.c as f64, CiMethod::Bernstein, r)?;
    let means: Vec<f64> = (0..mapped.c).map(|j| mean_var(mapped.column(j)).0).collect();
    let i1 = argmax(&means);
    let (lo, hi) = top_against_rest(&cis, i1);
    Ok((i1, radius_mult(lo / r, hi / r, sigma), lo, hi))
}

/// Candidate maps for [`lvm_rs`]: hardmax once (it ignores temperature),
/// the other kinds at every temperature.
pub fn lvm_candidates(kinds: &[SimplexKind], temps: &[f64], r: f64) -> Vec<SimplexMap> {
    let mut out = Vec::new();
    for &kind in kinds {
        if kind == SimplexKind::Hardmax {
            out.push(SimplexMap::new(kind, 1.0, 1.0));
        } else {
            out.extend(temps.iter().map(|&t| SimplexMap::new(kind, t, r)));
        }
    }
    out
}

/// Selects the simplex map and temperature maximizing the Bernstein
/// multi-class radius on `samples_n0`, then certifies on the disjoint
/// `samples_n` only. Ties go to the earliest candidate.
pub fn lvm_rs(
    samples_n0: &ScoreSamples,
    samples_n: &ScoreSamples,
    sigma: f64,
    alpha: f64,
    temps: &[f64],
    kinds: &[SimplexKind],
    r: f64,
) -> Result<CertificationResult> {
    check_alpha(alpha)?;
    if samples_n0.c != samples_n.c {
        return Err(Error::ShapeMismatch("sample sets have different class counts".into()));
    }
    let cands = lvm_candidates(kinds, temps, r);
    if cands.is_empty() {
        return Err(Error::EmptyGrid);
    }
    let mut best: Option<(f64, SimplexMap)> = None;
    for map in &cands {
        let (_, rad, _, _) = bernstein_mult(&samples_n0.mapped(map)?, sigma, alpha, map.mass)?;
        if best.is_none_or(|(b, _)| rad > b) {
            best = Some((rad, *map));
        }
    }
    let (_, map) = best.expect("nonempty grid");
    let (pred, radius, lo, hi) = bernstein_mult(&samples_n.mapped(&map)?, sigma, alpha, map.mass)?;
    Ok(CertificationResult {
        predicted: pred,
        radius,
        alpha,
        radius_kind: RadiusKind::Mult,
        ci_method: Some(CiMethod::Bernstein),
        meta: CertMeta {
            map: Some(map.kind),
            temperature: Some(map.temperature),
            c_star: None,
            lower: Some(lo),
            upper: Some(hi),
        },
    })
}
