//! Desk-scale data behind the convergence, rescaling and certification
//! figures, emitted as CSV.

use clap::ValueEnum;
use lipbound::certify::{certify_bonferroni, certify_cpm, certify_mono, CiMethod, ScoreSamples};
use lipbound::densenorm::{gram_iteration, power_iteration};
use lipbound::oracle::{exact_svd_sigma1, jacobi_eigen};
use lipbound::rescale::{spectral_rescaling, RescaleSpec};
use lipbound::rng::{self, SeededRng};
use lipbound::DenseMatrix;
use rand::Rng;

use crate::error::CliError;

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Figure {
    /// Absolute error against iterations, Gram vs power iteration.
    #[value(name = "3.3")]
    Convergence,
    /// Signed error ratio per method and iteration count.
    #[value(name = "3.4")]
    ErrorRatio,
    /// Singular-value profile after AOL, spectral rescaling and normalisation.
    #[value(name = "4.10")]
    RescaleProfile,
    /// σ₁ after spectral rescaling against its depth t.
    #[value(name = "4.10-right")]
    RescaleConvergence,
    /// Certified accuracy of Clopper-Pearson, Bonferroni and CPM on simulated classifiers.
    #[value(name = "6.4-desk")]
    Certification,
}

pub fn run(fig: Figure, seed: u64) -> Result<String, CliError> {
    let mut r = rng::seeded(seed);
    let rows = match fig {
        Figure::Convergence => convergence(&mut r, seed)?,
        Figure::ErrorRatio => error_ratio(&mut r, seed)?,
        Figure::RescaleProfile => rescale_profile(&mut r)?,
        Figure::RescaleConvergence => rescale_convergence(&mut r)?,
        Figure::Certification => certification(&mut r)?,
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).map_err(|e| CliError::Numeric(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Numeric(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Numeric(e.to_string()))
}

type Rows = Vec<Vec<String>>;

const MATRICES: usize = 10;
const GI_ITERS: usize = 12;
const PI_ITERS: [usize; 10] = [1, 2, 5, 10, 20, 50, 100, 200, 500, 1000];

fn gaussian(r: &mut SeededRng, rows: usize, cols: usize) -> DenseMatrix {
    DenseMatrix::new(rows, cols, rng::normal_vec(r, rows * cols)).expect("shape matches")
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1).max(1) as f64;
    (m, var.sqrt())
}

/// Per matrix: reference σ₁, GI values at t = 1..=12, PI values at `iters`.
fn runs(r: &mut SeededRng, seed: u64, iters: &[usize]) -> Result<Vec<(f64, Vec<f64>, Vec<f64>)>, CliError> {
    let mut out = Vec::with_capacity(MATRICES);
    for m in 0..MATRICES {
        let w = gaussian(r, 200, 100);
        let s = exact_svd_sigma1(&w)?;
        let gi = (1..=GI_ITERS).map(|t| gram_iteration(&w, t).map(|b| b.value)).collect::<Result<_, _>>()?;
        let pi = iters
            .iter()
            .map(|&k| power_iteration(&w, k, seed.wrapping_add(m as u64)).map(|b| b.value))
            .collect::<Result<_, _>>()?;
        out.push((s, gi, pi));
    }
    Ok(out)
}

fn convergence(r: &mut SeededRng, seed: u64) -> Result<Rows, CliError> {
    let mut iters: Vec<usize> = (1..=GI_ITERS).collect();
    iters.extend([20, 50, 100, 200, 500, 1000]);
    let data = runs(r, seed, &iters)?;
    let mut rows = vec![vec!["iter", "gi_error", "gi_std", "pi_error", "pi_std"].into_iter().map(String::from).collect()];
    for (j, &it) in iters.iter().enumerate() {
        let pi: Vec<f64> = data.iter().map(|(s, _, p)| (p[j] - s).abs()).collect();
        let (pm, ps) = mean_std(&pi);
        let (gm, gs) = if it <= GI_ITERS {
            let gi: Vec<f64> = data.iter().map(|(s, g, _)| (g[it - 1] - s).abs()).collect();
            let (m, s) = mean_std(&gi);
            (m.to_string(), s.to_string())
        } else {
            (String::new(), String::new())
        };
        rows.push(vec![it.to_string(), gm, gs, pm.to_string(), ps.to_string()]);
    }
    Ok(rows)
}

fn error_ratio(r: &mut SeededRng, seed: u64) -> Result<Rows, CliError> {
    let data = runs(r, seed, &PI_ITERS)?;
    let mut rows = vec![vec!["method", "iterations", "error_ratio", "error_ratio_std"].into_iter().map(String::from).collect()];
    for t in 1..=GI_ITERS {
        let v: Vec<f64> = data.iter().map(|(s, g, _)| g[t - 1] / s - 1.0).collect();
        let (m, sd) = mean_std(&v);
        rows.push(vec!["gi".into(), t.to_string(), m.to_string(), sd.to_string()]);
    }
    for (j, &k) in PI_ITERS.iter().enumerate() {
        let v: Vec<f64> = data.iter().map(|(s, _, p)| p[j] / s - 1.0).collect();
        let (m, sd) = mean_std(&v);
        rows.push(vec!["pi".into(), k.to_string(), m.to_string(), sd.to_string()]);
    }
    Ok(rows)
}

/// Singular values in decreasing order.
fn singular_values(w: &DenseMatrix) -> Result<Vec<f64>, CliError> {
    let g = if w.rows() < w.cols() { w.transpose().gram() } else { w.gram() };
    let (vals, _) = jacobi_eigen(&g)?;
    Ok(vals.iter().map(|v| v.max(0.0).sqrt()).collect())
}

fn rescale_profile(r: &mut SeededRng) -> Result<Rows, CliError> {
    let w = gaussian(r, 64, 128);
    let depths = [1, 2, 3, 4];
    let mut cols = Vec::new();
    for &t in &depths {
        let rr = spectral_rescaling(&w, &RescaleSpec::new(t))?;
        cols.push(singular_values(&w.mul_diag(&rr)?)?);
    }
    cols.push(singular_values(&w)?);
    let mut rows = vec![vec!["i", "aol", "sr_t2", "sr_t3", "sr_t4", "sn"].into_iter().map(String::from).collect()];
    for i in 0..cols[0].len() {
        let mut row = vec![(i + 1).to_string()];
        row.extend(cols.iter().map(|c| (c[i] / c[0]).to_string()));
        rows.push(row);
    }
    Ok(rows)
}

fn rescale_convergence(r: &mut SeededRng) -> Result<Rows, CliError> {
    let ws: Vec<DenseMatrix> = (0..MATRICES).map(|_| gaussian(r, 64, 128)).collect();
    let mut rows = vec![vec!["t", "sigma1_after", "sigma1_std"].into_iter().map(String::from).collect()];
    for t in 0..=10 {
        let mut v = Vec::with_capacity(ws.len());
        for w in &ws {
            let rr = spectral_rescaling(w, &RescaleSpec::new(t))?;
            v.push(exact_svd_sigma1(&w.mul_diag(&rr)?)?);
        }
        let (m, sd) = mean_std(&v);
        rows.push(vec![t.to_string(), m.to_string(), sd.to_string()]);
    }
    Ok(rows)
}

fn draw_counts(r: &mut SeededRng, p: &[f64], n: usize) -> Vec<u64> {
    let mut cdf = Vec::with_capacity(p.len());
    let mut acc = 0.0;
    for x in p {
        acc += x;
        cdf.push(acc);
    }
    let mut counts = vec![0u64; p.len()];
    for _ in 0..n {
        let u = r.random::<f64>() * acc;
        counts[cdf.iter().position(|&c| u < c).unwrap_or(p.len() - 1)] += 1;
    }
    counts
}

fn one_hot(counts: &[u64]) -> Result<ScoreSamples, CliError> {
    let c = counts.len();
    let n: u64 = counts.iter().sum();
    let mut s = Vec::with_capacity(n as usize * c);
    for (j, &k) in counts.iter().enumerate() {
        for _ in 0..k {
            s.extend((0..c).map(|i| if i == j { 1.0 } else { 0.0 }));
        }
    }
    Ok(ScoreSamples::new(n as usize, c, s)?)
}

/// Each simulated point has a true class with a logit boost in [0, 5) and
/// one confusing class with a boost in [0, 3); the other logits are N(0, 1).
fn certification(r: &mut SeededRng) -> Result<Rows, CliError> {
    const POINTS: usize = 200;
    const CLASSES: usize = 10;
    let (sigma, alpha, n0, n) = (0.5, 0.001, 100, 10_000);
    let eps: Vec<f64> = (0..=8).map(|i| 0.25 * i as f64).collect();
    let mut hits = vec![[0usize; 3]; eps.len()];
    for _ in 0..POINTS {
        let label = r.random_range(0..CLASSES);
        let mut z = rng::normal_vec(r, CLASSES);
        z[label] += 5.0 * r.random::<f64>();
        let confuser = (label + r.random_range(1..CLASSES)) % CLASSES;
        z[confuser] += 3.0 * r.random::<f64>();
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let p: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
        let c0 = draw_counts(r, &p, n0);
        let c1 = draw_counts(r, &p, n);
        let results = [
            certify_mono(&c1, sigma, alpha)?,
            certify_bonferroni(&one_hot(&c1)?, sigma, alpha, CiMethod::ClopperPearson, 1.0)?,
            certify_cpm(&c0, &c1, sigma, alpha)?,
        ];
        for (e, h) in eps.iter().zip(hits.iter_mut()) {
            for (k, res) in results.iter().enumerate() {
                if res.predicted == label && res.radius > 0.0 && res.radius >= *e {
                    h[k] += 1;
                }
            }
        }
    }
    let mut rows = vec![vec!["epsilon", "clopper_pearson", "bonferroni", "cpm"].into_iter().map(String::from).collect()];
    for (e, h) in eps.iter().zip(&hits) {
        let mut row = vec![e.to_string()];
        row.extend(h.iter().map(|&k| (k as f64 / POINTS as f64).to_string()));
        rows.push(row);
    }
    Ok(rows)
}
