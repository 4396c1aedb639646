use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, ValueEnum};
use lipbound::certify::{
    certify_bonferroni, certify_cpm, certify_mono, log_grid, lvm_rs, CiMethod, ScoreSamples, SimplexKind,
    SimplexMap,
};
use lipbound::convnorm::{
    circ_to_zero_bound, norm2_circ, norm2_toep, reduced_input_bound, strided_bound, ToepReadout,
};
use lipbound::densenorm::{gram_iteration, power_iteration, Direction, SpectralBound};
use lipbound::oracle::exact_svd_sigma1;
use lipbound::rescale::{product_upper_bound, spectral_rescaling, PubOptions, RescaleSpec};
use lipbound::smoothbounds::{
    lip_bound_bounded, lip_bound_bounded_refined, lip_bound_weierstrass, local_lip_quantile,
    local_lip_quantile_ball, optimal_sigma, smoothed_ce_bound, smoothed_curvature_bound, SmoothingContext,
};
use serde::Serialize;

use crate::error::CliError;
use crate::input;

pub fn to_json<T: Serialize>(v: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Numeric(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

fn need<T>(v: Option<T>, flag: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Input(format!("--{flag} is required here")))
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DenseMethod {
    Pi,
    Gi,
    Svd,
}

#[derive(Args)]
pub struct DenseArgs {
    pub matrix: PathBuf,
    #[arg(long, value_enum, default_value = "gi")]
    pub method: DenseMethod,
    /// Iterations (default 12 for gi, 100 for pi).
    #[arg(long)]
    pub iters: Option<usize>,
    /// Fill `wall_time_ms`; without it the field is null so output is reproducible.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Serialize)]
struct DenseOut {
    value: f64,
    direction: Direction,
    iterations: usize,
    wall_time_ms: Option<f64>,
}

pub fn specnorm_dense(a: &DenseArgs, seed: u64) -> Result<String, CliError> {
    let w = input::read_matrix(&a.matrix)?;
    let start = Instant::now();
    let b = match a.method {
        DenseMethod::Gi => gram_iteration(&w, a.iters.unwrap_or(12))?,
        DenseMethod::Pi => power_iteration(&w, a.iters.unwrap_or(100), seed)?,
        DenseMethod::Svd => SpectralBound {
            value: exact_svd_sigma1(&w)?,
            iterations: 0,
            direction: Direction::Exact,
            log_rescale: 0.0,
        },
    };
    let ms = start.elapsed().as_secs_f64() * 1e3;
    to_json(&DenseOut {
        value: b.value,
        direction: b.direction,
        iterations: b.iterations,
        wall_time_ms: a.timing.then_some(ms),
    })
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Padding {
    Circ,
    Zero,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Approx {
    Circ2zero,
    Reduced,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Readout {
    Inf,
    Frobenius,
}

#[derive(Args)]
pub struct ConvArgs {
    pub filter: PathBuf,
    #[arg(long, value_enum, default_value = "zero")]
    pub padding: Padding,
    /// Input side length.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 6)]
    pub iters: usize,
    /// Bound the zero-padded operator through the circular one.
    #[arg(long, value_enum)]
    pub approx: Option<Approx>,
    /// Reduced input side for `--approx reduced`.
    #[arg(long)]
    pub n0: Option<usize>,
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long, value_enum, default_value = "inf")]
    pub readout: Readout,
}

pub fn specnorm_conv(a: &ConvArgs) -> Result<String, CliError> {
    let kf = input::read_filter(&a.filter)?;
    let t = a.iters;
    let rep = match (a.stride.filter(|&s| s != 1), a.padding, a.approx) {
        (Some(s), _, None) => strided_bound(&kf, need(a.n, "n")?, s, t)?,
        (Some(_), _, Some(_)) => return Err(CliError::Input("--stride cannot be combined with --approx".into())),
        (None, Padding::Circ, None) => norm2_circ(&kf, need(a.n, "n")?, t)?,
        (None, Padding::Circ, Some(_)) => {
            return Err(CliError::Input("--approx bounds the zero-padded operator; use --padding zero".into()))
        }
        (None, Padding::Zero, None) => {
            let readout = match a.readout {
                Readout::Inf => ToepReadout::Inf,
                Readout::Frobenius => ToepReadout::Frobenius,
            };
            norm2_toep(&kf, t, readout)?
        }
        (None, Padding::Zero, Some(Approx::Circ2zero)) => circ_to_zero_bound(&kf, need(a.n, "n")?, t)?,
        (None, Padding::Zero, Some(Approx::Reduced)) => {
            reduced_input_bound(&kf, need(a.n, "n")?, need(a.n0, "n0")?, t)?
        }
    };
    to_json(&rep)
}

#[derive(Args)]
pub struct RescaleArgs {
    pub matrix: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub t: usize,
    /// Positive weights, one per column (1-D .npy).
    #[arg(long)]
    pub q: Option<PathBuf>,
}

#[derive(Serialize)]
struct RescaleOut {
    t: usize,
    r: Vec<f64>,
    sigma1_after: f64,
}

pub fn rescale(a: &RescaleArgs) -> Result<String, CliError> {
    let path = &a.matrix;
    let arr = input::read_npy(path)?;
    if arr.shape.len() != 2 {
        return Err(CliError::Input(format!(
            "{}: rescaling takes a 2-D weight matrix, got shape {:?}",
            path.display(),
            arr.shape
        )));
    }
    let w = input::read_matrix(path)?;
    let q = a.q.as_deref().map(input::read_vector).transpose()?;
    let r = spectral_rescaling(&w, &RescaleSpec { t: a.t, q })?;
    let sigma1_after = exact_svd_sigma1(&w.mul_diag(&r)?)?;
    to_json(&RescaleOut { t: a.t, r, sigma1_after })
}

#[derive(Args)]
pub struct PubArgs {
    pub manifest: PathBuf,
    /// Input side for convolutions (overrides the manifest).
    #[arg(long)]
    pub n: Option<usize>,
    /// Gram iterations (overrides the manifest; default 6).
    #[arg(long)]
    pub t: Option<usize>,
    /// Bound convolutions with circular padding.
    #[arg(long)]
    pub circular: bool,
}

#[derive(Serialize)]
struct LayerOut {
    index: usize,
    value: f64,
    direction: Direction,
    iterations: usize,
}

#[derive(Serialize)]
struct PubOut {
    per_layer: Vec<LayerOut>,
    total: f64,
}

pub fn pub_bound(a: &PubArgs) -> Result<String, CliError> {
    let (m, layers) = input::read_manifest(&a.manifest)?;
    let t = a.t.or(m.t).unwrap_or(6);
    let n = a.n.or(m.n);
    if a.circular && n.is_none() {
        return Err(CliError::Input("circular convolution bounds need --n or \"n\" in the manifest".into()));
    }
    let rep = product_upper_bound(&layers, n.unwrap_or(0), t, PubOptions { circular_conv: a.circular })?;
    to_json(&PubOut {
        per_layer: rep
            .per_layer
            .into_iter()
            .map(|(index, b)| LayerOut { index, value: b.value, direction: b.direction, iterations: b.iterations })
            .collect(),
        total: rep.total,
    })
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Procedure {
    Bonferroni,
    Cpm,
    Lvmrs,
    Mono,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Ci {
    Cp,
    Hoeffding,
    Bernstein,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MapKind {
    None,
    Hardmax,
    Softmax,
    Sparsemax,
}

#[derive(Args)]
pub struct CertifyArgs {
    /// Estimation-phase samples, (n, c) .npy or .csv with a header row.
    #[arg(long)]
    pub samples: PathBuf,
    /// Selection-phase samples for cpm and lvmrs.
    #[arg(long)]
    pub selection: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "bonferroni")]
    pub procedure: Procedure,
    #[arg(long)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0.001)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "cp")]
    pub ci: Ci,
    /// Simplex mass.
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    /// Map applied to the samples before bonferroni (none: already mapped).
    #[arg(long, value_enum, default_value = "none")]
    pub map: MapKind,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Temperature grid for lvmrs as `lo:hi:count`, log-spaced.
    #[arg(long, default_value = "0.01:50:50")]
    pub temps: String,
    /// Simplex maps searched by lvmrs.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "hardmax,softmax,sparsemax")]
    pub maps: Vec<MapKind>,
}

fn simplex_kind(m: MapKind) -> Option<SimplexKind> {
    match m {
        MapKind::None => None,
        MapKind::Hardmax => Some(SimplexKind::Hardmax),
        MapKind::Softmax => Some(SimplexKind::Softmax),
        MapKind::Sparsemax => Some(SimplexKind::Sparsemax),
    }
}

fn parse_grid(s: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Input(format!("--temps expects lo:hi:count, got {s:?}"));
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, count] = parts[..] else { return Err(bad()) };
    let lo: f64 = lo.parse().map_err(|_| bad())?;
    let hi: f64 = hi.parse().map_err(|_| bad())?;
    let count: usize = count.parse().map_err(|_| bad())?;
    if !(lo > 0.0 && hi >= lo) || count == 0 {
        return Err(bad());
    }
    Ok(log_grid(lo, hi, count))
}

fn selection(a: &CertifyArgs) -> Result<ScoreSamples, CliError> {
    input::read_scores(need(a.selection.as_ref(), "selection")?)
}

pub fn certify(a: &CertifyArgs) -> Result<String, CliError> {
    let samples = input::read_scores(&a.samples)?;
    let res = match a.procedure {
        Procedure::Bonferroni => {
            let mapped = match simplex_kind(a.map) {
                Some(kind) => samples.mapped(&SimplexMap::new(kind, a.temperature, a.r))?,
                None => samples,
            };
            let method = match a.ci {
                Ci::Cp => CiMethod::ClopperPearson,
                Ci::Hoeffding => CiMethod::Hoeffding,
                Ci::Bernstein => CiMethod::Bernstein,
            };
            certify_bonferroni(&mapped, a.sigma, a.alpha, method, a.r)?
        }
        Procedure::Mono => certify_mono(&samples.argmax_counts(), a.sigma, a.alpha)?,
        Procedure::Cpm => {
            let sel = selection(a)?;
            certify_cpm(&sel.argmax_counts(), &samples.argmax_counts(), a.sigma, a.alpha)?
        }
        Procedure::Lvmrs => {
            let sel = selection(a)?;
            let kinds: Vec<SimplexKind> = a.maps.iter().filter_map(|&m| simplex_kind(m)).collect();
            lvm_rs(&sel, &samples, a.sigma, a.alpha, &parse_grid(&a.temps)?, &kinds, a.r)?
        }
    };
    to_json(&res)
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BoundKind {
    Bounded,
    Refined,
    Erf,
    OptimalSigma,
    LocalQuantile,
    Curvature,
    Ce,
}

#[derive(Args)]
pub struct SmoothArgs {
    #[arg(long, value_enum)]
    pub bound: BoundKind,
    /// Lipschitz constant of the base function.
    #[arg(long)]
    pub l: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub r: f64,
    /// Probability (lower end of the range when --p-hi is given).
    #[arg(long)]
    pub p: Option<f64>,
    #[arg(long)]
    pub p_hi: Option<f64>,
    /// Curvature bound H.
    #[arg(long)]
    pub h: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Comma-separated logits.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub logits: Option<Vec<f64>>,
    #[arg(long)]
    pub label: Option<usize>,
    /// Squared norm of the penultimate activations.
    #[arg(long)]
    pub h_norm_sq: Option<f64>,
}

#[derive(Serialize)]
struct Scalar {
    bound: &'static str,
    value: f64,
}

#[derive(Serialize)]
struct OptimalOut {
    bound: &'static str,
    sigma_star: f64,
    bound_at_star: f64,
    gain: f64,
}

fn positive(v: Option<f64>, flag: &str) -> Result<f64, CliError> {
    let x = need(v, flag)?;
    if !(x > 0.0 && x.is_finite()) {
        return Err(CliError::Input(format!("--{flag} must be positive")));
    }
    Ok(x)
}

pub fn smoothbound(a: &SmoothArgs) -> Result<String, CliError> {
    let scalar = |bound, value| to_json(&Scalar { bound, value });
    match a.bound {
        BoundKind::Bounded => scalar("bounded", lip_bound_bounded(positive(a.sigma, "sigma")?)),
        BoundKind::Refined => scalar("refined", lip_bound_bounded_refined(positive(a.sigma, "sigma")?, a.r)),
        BoundKind::Erf => {
            let ctx = SmoothingContext::new(need(a.l, "l")?, need(a.sigma, "sigma")?, a.r)?;
            scalar("erf", lip_bound_weierstrass(&ctx))
        }
        BoundKind::OptimalSigma => {
            let o = optimal_sigma(positive(a.l, "l")?, positive(Some(a.r), "r")?);
            to_json(&OptimalOut {
                bound: "optimal_sigma",
                sigma_star: o.sigma_star,
                bound_at_star: o.bound_at_star,
                gain: o.gain,
            })
        }
        BoundKind::LocalQuantile => {
            let (p, l, s) = (need(a.p, "p")?, need(a.l, "l")?, need(a.sigma, "sigma")?);
            if [Some(p), a.p_hi].into_iter().flatten().any(|x| !(0.0..=1.0).contains(&x)) {
                return Err(CliError::Input("probabilities must lie in [0, 1]".into()));
            }
            let v = match a.p_hi {
                Some(hi) => local_lip_quantile_ball(p, hi, l, s)?,
                None => local_lip_quantile(p, l, s)?,
            };
            scalar("local_quantile", v)
        }
        BoundKind::Curvature => {
            let eps = need(a.eps, "eps")?;
            if !(eps >= 0.0) {
                return Err(CliError::Input("--eps must be nonnegative".into()));
            }
            scalar("curvature", smoothed_curvature_bound(positive(a.h, "h")?, eps, positive(a.sigma, "sigma")?))
        }
        BoundKind::Ce => {
            let logits = need(a.logits.as_ref(), "logits")?;
            let sigma = need(a.sigma, "sigma")?;
            let v = smoothed_ce_bound(logits, need(a.label, "label")?, need(a.h_norm_sq, "h-norm-sq")?, sigma)?;
            scalar("ce", v)
        }
    }
}
