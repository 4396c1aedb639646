//! Spectral-norm upper bounds for multichannel 2-D convolutions under
//! circular and zero padding.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::Serialize;

use crate::densenorm::{gram_iteration, Direction, SpectralBound, ZERO_TOL};
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, DenseMatrix};

/// Convolution kernel of shape `(c_out, c_in, k, k)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvFilter {
    pub c_out: usize,
    pub c_in: usize,
    pub k: usize,
    data: Vec<f64>,
}

impl ConvFilter {
    pub fn new(c_out: usize, c_in: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        if c_out == 0 || c_in == 0 || k == 0 {
            return Err(Error::ShapeMismatch(format!("empty filter {c_out}x{c_in}x{k}x{k}")));
        }
        if data.len() != c_out * c_in * k * k {
            return Err(Error::ShapeMismatch(format!(
                "{} entries for a {c_out}x{c_in}x{k}x{k} filter",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self { c_out, c_in, k, data })
    }

    pub fn from_fn(
        c_out: usize,
        c_in: usize,
        k: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(c_out * c_in * k * k);
        for j in 0..c_out {
            for i in 0..c_in {
                for a in 0..k {
                    for b in 0..k {
                        data.push(f(j, i, a, b));
                    }
                }
            }
        }
        Self { c_out, c_in, k, data }
    }

    /// `c x c` filter whose centre tap is the identity.
    pub fn identity(c: usize, k: usize) -> Self {
        let m = k / 2;
        Self::from_fn(c, c, k, |j, i, a, b| if j == i && a == m && b == m { 1.0 } else { 0.0 })
    }

    #[inline]
    pub fn get(&self, j: usize, i: usize, a: usize, b: usize) -> f64 {
        self.data[((j * self.c_in + i) * self.k + a) * self.k + b]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { data: self.data.iter().map(|x| x * s).collect(), ..self.clone() }
    }

    pub fn frobenius_norm(&self) -> f64 {
        DenseMatrix::new(1, self.data.len(), self.data.clone())
            .map(|m| m.frobenius_norm())
            .unwrap_or(0.0)
    }

    /// The `c_out x (c_in k²)` matrix obtained by flattening each output
    /// channel's taps.
    pub fn reshape_matrix(&self) -> DenseMatrix {
        let q = self.c_in * self.k * self.k;
        DenseMatrix::from_fn(self.c_out, q, |j, col| self.data[j * q + col])
    }

    fn require_odd(&self) -> Result<()> {
        if self.k % 2 == 0 {
            return Err(Error::EvenKernel(self.k));
        }
        Ok(())
    }
}

/// The `n²` Fourier blocks `D_{u,v}` of a filter at input side `n`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierBlockSet {
    pub n: usize,
    pub c_out: usize,
    pub c_in: usize,
    /// Block `(u, v)` occupies `c_out * c_in` entries starting at
    /// `(u * n + v) * c_out * c_in`, row-major.
    pub blocks: Vec<Complex64>,
}

impl FourierBlockSet {
    pub fn block(&self, u: usize, v: usize) -> CMatrix {
        let sz = self.c_out * self.c_in;
        let off = (u * self.n + v) * sz;
        CMatrix { rows: self.c_out, cols: self.c_in, data: self.blocks[off..off + sz].to_vec() }
    }

    pub fn iter_blocks(&self) -> impl Iterator<Item = CMatrix> + '_ {
        (0..self.n * self.n).map(move |b| self.block(b / self.n, b % self.n))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvMethod {
    CircFFT,
    ToepGram,
    CircToZero,
    ReducedInput,
    Strided,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvBoundReport {
    pub bound: SpectralBound,
    pub method: ConvMethod,
    pub n: Option<usize>,
    pub n0: Option<usize>,
    pub t: usize,
    pub alpha: Option<f64>,
    pub factor: Option<f64>,
}

impl ConvBoundReport {
    pub fn value(&self) -> f64 {
        self.bound.value
    }
}

/// Readout norm applied to the last Gram iterate of the filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ToepReadout {
    /// Maximum absolute column mass.
    #[default]
    Inf,
    /// Frobenius norm times the side of the iterated filter.
    Frobenius,
}

/// In-place 2-D FFT of a row-major `rows x cols` buffer.
struct Fft2 {
    row: Arc<dyn Fft<f64>>,
    col: Arc<dyn Fft<f64>>,
    rows: usize,
    cols: usize,
}

impl Fft2 {
    fn new(planner: &mut FftPlanner<f64>, rows: usize, cols: usize, inverse: bool) -> Self {
        let (row, col) = if inverse {
            (planner.plan_fft_inverse(cols), planner.plan_fft_inverse(rows))
        } else {
            (planner.plan_fft_forward(cols), planner.plan_fft_forward(rows))
        };
        Self { row, col, rows, cols }
    }

    fn process(&self, buf: &mut [Complex64]) {
        self.row.process(buf);
        let mut t = vec![Complex64::new(0.0, 0.0); buf.len()];
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[c * self.rows + r] = buf[r * self.cols + c];
            }
        }
        self.col.process(&mut t);
        for r in 0..self.rows {
            for c in 0..self.cols {
                buf[r * self.cols + c] = t[c * self.rows + r];
            }
        }
    }
}

/// 2-D DFT of each zero-extended `K[j, i]` slice at side `n`.
pub fn fourier_blocks(kf: &ConvFilter, n: usize) -> Result<FourierBlockSet> {
    if n < kf.k {
        return Err(Error::InputTooSmall { n, k: kf.k });
    }
    let (co, ci, k) = (kf.c_out, kf.c_in, kf.k);
    let mut planner = FftPlanner::new();
    let fft = Fft2::new(&mut planner, n, n, false);
    let mut blocks = vec![Complex64::new(0.0, 0.0); n * n * co * ci];
    let mut buf = vec![Complex64::new(0.0, 0.0); n * n];
    for j in 0..co {
        for i in 0..ci {
            buf.iter_mut().for_each(|z| *z = Complex64::new(0.0, 0.0));
            for a in 0..k {
                for b in 0..k {
                    buf[a * n + b] = Complex64::new(kf.get(j, i, a, b), 0.0);
                }
            }
            fft.process(&mut buf);
            for (uv, z) in buf.iter().enumerate() {
                blocks[uv * co * ci + j * ci + i] = *z;
            }
        }
    }
    Ok(FourierBlockSet { n, c_out: co, c_in: ci, blocks })
}

/// Gram-iteration readout of one complex block: `(log value, log_rescale)`,
/// or `None` when the block vanishes.
fn block_gram_log(block: &CMatrix, n_iter: usize) -> Option<(f64, f64)> {
    let mut m = if block.rows < block.cols {
        let mut t = CMatrix::zeros(block.cols, block.rows);
        for i in 0..block.rows {
            for j in 0..block.cols {
                t.data[j * block.rows + i] = block.get(i, j).conj();
            }
        }
        t
    } else {
        block.clone()
    };
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
    let f = m.frobenius_norm();
    if f < ZERO_TOL {
        return None;
    }
    Some((2f64.powi(1 - n_iter as i32) * (f.ln() + r), r))
}

/// Upper bound on the circular-padding operator norm: the largest per-block
/// Gram-iteration bound over the `n²` Fourier blocks.
pub fn norm2_circ(kf: &ConvFilter, n: usize, n_iter: usize) -> Result<ConvBoundReport> {
    if n_iter == 0 {
        return Err(Error::InvalidArgument("n_iter must be at least 1".into()));
    }
    let fb = fourier_blocks(kf, n)?;
    let mut best: Option<(f64, f64)> = None;
    for block in fb.iter_blocks() {
        if let Some((lv, r)) = block_gram_log(&block, n_iter) {
            if best.is_none_or(|(b, _)| lv > b) {
                best = Some((lv, r));
            }
        }
    }
    let bound = match best {
        Some((lv, r)) => SpectralBound {
            value: lv.exp(),
            iterations: n_iter,
            direction: Direction::UpperBound,
            log_rescale: r,
        },
        None => SpectralBound::exact_zero(n_iter),
    };
    Ok(ConvBoundReport {
        bound,
        method: ConvMethod::CircFFT,
        n: Some(n),
        n0: None,
        t: n_iter,
        alpha: None,
        factor: None,
    })
}

/// Stack of `a x b` square `s x s` spatial kernels, indexed `[j][i][x][y]`.
#[derive(Debug, Clone)]
struct Kernel4 {
    a: usize,
    b: usize,
    s: usize,
    data: Vec<f64>,
}

impl Kernel4 {
    fn slice(&self, j: usize, i: usize) -> &[f64] {
        let ss = self.s * self.s;
        let off = (j * self.b + i) * ss;
        &self.data[off..off + ss]
    }

    fn frobenius_norm(&self) -> f64 {
        DenseMatrix::new(1, self.data.len(), self.data.clone())
            .map(|m| m.frobenius_norm())
            .unwrap_or(0.0)
    }
}

/// Sides up to this use the direct correlation sum; larger ones use FFTs.
const DIRECT_MAX_SIDE: usize = 8;

/// Filter of the Gram operator:
/// `out[i1, i2, e] = Σ_j Σ_x cur[j, i1, x] cur[j, i2, x + e]` for every
/// shift `e` with `|e| < s`, stored at offset `e + s - 1`.
fn self_correlate(cur: &Kernel4) -> Kernel4 {
    if cur.s <= DIRECT_MAX_SIDE {
        self_correlate_direct(cur)
    } else {
        self_correlate_fft(cur)
    }
}

fn self_correlate_direct(cur: &Kernel4) -> Kernel4 {
    let (a, b, s) = (cur.a, cur.b, cur.s);
    let m = 2 * s - 1;
    let mut out = vec![0.0; b * b * m * m];
    for i1 in 0..b {
        for i2 in 0..b {
            let dst = &mut out[(i1 * b + i2) * m * m..(i1 * b + i2 + 1) * m * m];
            for j in 0..a {
                let p = cur.slice(j, i1);
                let q = cur.slice(j, i2);
                for x1 in 0..s {
                    for y1 in 0..s {
                        let pv = p[x1 * s + y1];
                        if pv == 0.0 {
                            continue;
                        }
                        for x2 in 0..s {
                            // e = x2 - x1 stored at e + s - 1.
                            let row = (x2 + s - 1 - x1) * m + s - 1 - y1;
                            for y2 in 0..s {
                                dst[row + y2] += pv * q[x2 * s + y2];
                            }
                        }
                    }
                }
            }
        }
    }
    Kernel4 { a: b, b, s: m, data: out }
}

fn self_correlate_fft(cur: &Kernel4) -> Kernel4 {
    let (a, b, s) = (cur.a, cur.b, cur.s);
    // Linear correlation support is 2s - 1, so this size has no wrap-around.
    let m = 2 * s - 1;
    let mut planner = FftPlanner::new();
    let fwd = Fft2::new(&mut planner, m, m, false);
    let inv = Fft2::new(&mut planner, m, m, true);
    let zero = Complex64::new(0.0, 0.0);
    let spectra: Vec<Vec<Complex64>> = (0..a * b)
        .map(|ji| {
            let mut buf = vec![zero; m * m];
            let src = cur.slice(ji / b, ji % b);
            for x in 0..s {
                for y in 0..s {
                    buf[x * m + y] = Complex64::new(src[x * s + y], 0.0);
                }
            }
            fwd.process(&mut buf);
            buf
        })
        .collect();
    let scale = 1.0 / (m * m) as f64;
    let mut out = vec![0.0; b * b * m * m];
    let mut acc = vec![zero; m * m];
    for i1 in 0..b {
        for i2 in 0..b {
            acc.iter_mut().for_each(|z| *z = zero);
            for j in 0..a {
                let p = &spectra[j * b + i1];
                let q = &spectra[j * b + i2];
                for ((z, pz), qz) in acc.iter_mut().zip(p).zip(q) {
                    *z += pz.conj() * qz;
                }
            }
            inv.process(&mut acc);
            let dst = &mut out[(i1 * b + i2) * m * m..(i1 * b + i2 + 1) * m * m];
            // Shift e (mod m) lives at index e; move it to e + s - 1.
            for ex in 0..m {
                for ey in 0..m {
                    let dx = (ex + s - 1) % m;
                    let dy = (ey + s - 1) % m;
                    dst[dx * m + dy] = acc[ex * m + ey].re * scale;
                }
            }
        }
    }
    Kernel4 { a: b, b, s: m, data: out }
}

/// Input-size independent zero-padding bound without the kernel parity
/// check; the symbol argument behind it holds for any tap offset.
fn toep_bound_any_parity(
    kf: &ConvFilter,
    n_iter: usize,
    readout: ToepReadout,
) -> Result<SpectralBound> {
    if n_iter == 0 {
        return Err(Error::InvalidArgument("n_iter must be at least 1".into()));
    }
    let mut cur = Kernel4 { a: kf.c_out, b: kf.c_in, s: kf.k, data: kf.data.clone() };
    let mut log_r = 0.0_f64;
    for _ in 0..n_iter {
        let f = cur.frobenius_norm();
        if f < ZERO_TOL {
            return Ok(SpectralBound::exact_zero(n_iter));
        }
        log_r = 2.0 * (log_r + f.ln());
        cur.data.iter_mut().for_each(|x| *x /= f);
        cur = self_correlate(&cur);
    }
    let ln_read = match readout {
        ToepReadout::Inf => {
            let ss = cur.s * cur.s;
            let mut best = 0.0_f64;
            for i2 in 0..cur.b {
                let mut mass = 0.0;
                for i1 in 0..cur.a {
                    mass += cur.slice(i1, i2).iter().map(|x| x.abs()).sum::<f64>();
                }
                best = best.max(mass);
                debug_assert_eq!(cur.slice(0, i2).len(), ss);
            }
            best.ln()
        }
        ToepReadout::Frobenius => (cur.s as f64).ln() + cur.frobenius_norm().ln(),
    };
    if !ln_read.is_finite() {
        return Ok(SpectralBound::exact_zero(n_iter));
    }
    let value = (2f64.powi(-(n_iter as i32)) * (ln_read + log_r)).exp();
    Ok(SpectralBound { value, iterations: n_iter, direction: Direction::UpperBound, log_rescale: log_r })
}

/// Zero-padding bound from `n_iter` self-correlations of the filter. Valid
/// for every input side and also for circular padding. Each iteration
/// roughly doubles the filter side, so `n_iter` is capped at 8.
pub fn norm2_toep(kf: &ConvFilter, n_iter: usize, readout: ToepReadout) -> Result<ConvBoundReport> {
    kf.require_odd()?;
    if n_iter > 8 {
        return Err(Error::InvalidArgument("n_iter must be at most 8".into()));
    }
    let bound = toep_bound_any_parity(kf, n_iter, readout)?;
    Ok(ConvBoundReport {
        bound,
        method: ConvMethod::ToepGram,
        n: None,
        n0: None,
        t: n_iter,
        alpha: None,
        factor: None,
    })
}

/// `(alpha, factor)` with `alpha = 2^t ⌊k/2⌋ / n` and
/// `factor = (1/(1-alpha))^{2^{-t}}`; fails unless `n ≥ 2^t ⌊k/2⌋ + 1`.
pub fn correction_factor(k: usize, n: usize, n_iter: usize) -> Result<(f64, f64)> {
    let reach = 2f64.powi(n_iter as i32) * (k / 2) as f64;
    if (n as f64) < reach + 1.0 {
        return Err(Error::HypothesisViolated(format!(
            "side {n} is below 2^{n_iter} * {} + 1",
            k / 2
        )));
    }
    let alpha = reach / n as f64;
    let factor = (-(-alpha).ln_1p() * 2f64.powi(-(n_iter as i32))).exp();
    Ok((alpha, factor))
}

/// Zero-padding bound from the circular bound times the correction factor.
pub fn circ_to_zero_bound(kf: &ConvFilter, n: usize, n_iter: usize) -> Result<ConvBoundReport> {
    kf.require_odd()?;
    let (alpha, factor) = correction_factor(kf.k, n, n_iter)?;
    let mut rep = norm2_circ(kf, n, n_iter)?;
    rep.bound.value *= factor;
    rep.method = ConvMethod::CircToZero;
    rep.alpha = Some(alpha);
    rep.factor = Some(factor);
    Ok(rep)
}

/// Bound for side `n` computed from the circular bound at the smaller side
/// `n0`, corrected by the factor at `n0`.
pub fn reduced_input_bound(
    kf: &ConvFilter,
    n: usize,
    n0: usize,
    n_iter: usize,
) -> Result<ConvBoundReport> {
    kf.require_odd()?;
    if n0 < kf.k || n0 > n {
        return Err(Error::HypothesisViolated(format!("need k <= n0 <= n, got k={}, n0={n0}, n={n}", kf.k)));
    }
    let (alpha, factor) = correction_factor(kf.k, n0, n_iter)?;
    let mut rep = norm2_circ(kf, n0, n_iter)?;
    rep.bound.value *= factor;
    rep.method = ConvMethod::ReducedInput;
    rep.n = Some(n);
    rep.n0 = Some(n0);
    rep.alpha = Some(alpha);
    rep.factor = Some(factor);
    Ok(rep)
}

/// Bound for a strided convolution. With `stride = k` the patches do not
/// overlap and the operator norm is that of the reshaped kernel matrix;
/// otherwise downsampling is contractive and the zero-padding bound applies.
pub fn strided_bound(
    kf: &ConvFilter,
    n: usize,
    stride: usize,
    n_iter: usize,
) -> Result<ConvBoundReport> {
    if stride == 0 || n % stride != 0 {
        return Err(Error::HypothesisViolated(format!("stride {stride} does not divide {n}")));
    }
    if n < kf.k {
        return Err(Error::InputTooSmall { n, k: kf.k });
    }
    let bound = if stride == kf.k && stride > 1 {
        gram_iteration(&kf.reshape_matrix(), n_iter)?
    } else {
        if n_iter > 8 {
            return Err(Error::InvalidArgument("n_iter must be at most 8".into()));
        }
        toep_bound_any_parity(kf, n_iter, ToepReadout::Inf)?
    };
    Ok(ConvBoundReport {
        bound,
        method: ConvMethod::Strided,
        n: Some(n),
        n0: None,
        t: n_iter,
        alpha: None,
        factor: None,
    })
}

/// `max_{u,v} ‖D_{u,v}* D_{u,v} - I‖_F`; zero exactly when the circular
/// operator is orthogonal.
pub fn orthogonality_gap(kf: &ConvFilter, n: usize) -> Result<f64> {
    if kf.c_in != kf.c_out {
        return Err(Error::ShapeMismatch(format!("c_in={} but c_out={}", kf.c_in, kf.c_out)));
    }
    let fb = fourier_blocks(kf, n)?;
    Ok(fb.iter_blocks().map(|b| b.gram_minus_identity_norm()).fold(0.0, f64::max))
}
