//! AMP-based detection and model aggregation (AMP-DA).
//!
//! Per chunk, the receiver estimates the codeword occupancy vector `x` from
//! `y = P x + z` without knowing which or how many devices transmitted. AMP
//! decouples the mixing into N scalar channels `r_n = x_n + N(0, φ_n)`; each
//! is denoised under a discrete prior
//!
//! ```text
//! p(x_n) = (1 - a_n) δ(x_n) + a_n / k_max · Σ_{s=1..k_max} δ(x_n - s)
//! ```
//!
//! whose sparsity indicators `a_n` are re-estimated by EM every sweep. After
//! detection, the number of active devices is the most common rounded ℓ₁
//! norm across chunks and the update is `U x̂ / K̂a` per chunk.
//!
//! The detector entry points take only `(Y, P, σ², params)`; ground truth
//! has no way in.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codebooks::{QuantizationCodebook, UmaCodebook};
use crate::error::{Error, Result};
use crate::matrix::{norm2, Matrix};

/// Bounds on the EM-updated sparsity indicators; 0 and 1 are absorbing.
pub const A_MIN: f64 = 1e-8;
pub const A_MAX: f64 = 1.0 - 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AmpParams {
    /// T0. The loop runs at most `max_iters - 1` update sweeps.
    pub max_iters: usize,
    /// τ: weight of the previous V and Z when damping.
    pub damping: f64,
    /// ε: stop once ‖x̂ⁱ − x̂ⁱ⁻¹‖ / ‖x̂ⁱ⁻¹‖ drops below this.
    pub tol: f64,
    /// Largest count the prior allows on one codeword.
    pub k_max: u32,
    pub a_init: f64,
    /// Floor on φ and on the σ² + V denominators.
    pub variance_floor: f64,
}

impl Default for AmpParams {
    fn default() -> Self {
        Self {
            max_iters: 200,
            damping: 0.3,
            tol: 1e-5,
            k_max: 20,
            a_init: 0.5,
            variance_floor: 1e-12,
        }
    }
}

impl AmpParams {
    /// Receiver support bound ⌊0.2·K⌋ for a population of K devices.
    pub fn k_max_for_population(k: usize) -> u32 {
        ((k as f64 * 0.2).floor() as u32).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.max_iters < 1 {
            return bad("amp max_iters must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.damping) {
            return bad(format!("amp damping must be in [0, 1), got {}", self.damping));
        }
        if !(self.tol > 0.0) {
            return bad(format!("amp tol must be > 0, got {}", self.tol));
        }
        if self.k_max < 1 {
            return bad("amp k_max must be >= 1".into());
        }
        if !(self.a_init > 0.0 && self.a_init < 1.0) {
            return bad(format!("amp a_init must be in (0, 1), got {}", self.a_init));
        }
        if !(self.variance_floor > 0.0) || !self.variance_floor.is_finite() {
            return bad(format!("amp variance_floor must be > 0, got {}", self.variance_floor));
        }
        Ok(())
    }
}

/// Posterior moments of one decoupled scalar channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Posterior {
    pub mean: f64,
    pub var: f64,
    /// P(x_n ≥ 1 | r_n): the EM update for a_n.
    pub p_nonzero: f64,
}

/// Posterior of `x ∈ {0, …, k_max}` given `r = x + N(0, phi)`.
///
/// Weights are formed in the log domain relative to the largest one, and
/// both moments are accumulated as offsets from that pivot, so the variance
/// keeps full relative precision even when the posterior is nearly a point
/// mass.
pub fn denoise_posterior(r: f64, phi: f64, a: f64, k_max: u32) -> Posterior {
    let k = k_max as usize;
    let inv_2phi = 0.5 / phi;
    let log_zero = (1.0 - a).ln();
    let log_nz = (a / k_max as f64).ln();

    let mut buf = [0.0f64; 64];
    let mut heap;
    let w: &mut [f64] = if k < 64 {
        &mut buf[..=k]
    } else {
        heap = vec![0.0; k + 1];
        &mut heap
    };
    for (s, lw) in w.iter_mut().enumerate() {
        let d = r - s as f64;
        *lw = if s == 0 { log_zero } else { log_nz } - d * d * inv_2phi;
    }
    let pivot = (0..=k).fold(0, |b, s| if w[s] > w[b] { s } else { b });
    let top = w[pivot];

    let mut total = 0.0;
    let mut nonzero = 0.0;
    let mut first = 0.0;
    for (s, ws) in w.iter_mut().enumerate() {
        *ws = (*ws - top).exp();
        total += *ws;
        if s > 0 {
            nonzero += *ws;
        }
        first += (s as f64 - pivot as f64) * *ws;
    }
    let delta = first / total;
    let mut second = 0.0;
    for (s, &ws) in w.iter().enumerate() {
        let d = (s as f64 - pivot as f64) - delta;
        second += d * d * ws;
    }
    Posterior {
        mean: (pivot as f64 + delta).clamp(0.0, k_max as f64),
        var: (second / total).max(0.0),
        p_nonzero: nonzero / total,
    }
}

/// Per-chunk AMP working set.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpState {
    /// Decoupled observations r_n.
    pub r: Vec<f64>,
    /// Decoupled noise variances φ_n.
    pub phi: Vec<f64>,
    /// V_l
    pub v: Vec<f64>,
    /// Z_l
    pub z: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub v_hat: Vec<f64>,
    /// Sparsity indicators a_n.
    pub a: Vec<f64>,
    /// Update sweeps performed so far.
    pub iter: usize,
}

impl AmpState {
    /// a = a_init, Z = y, V = 1, x̂ = 0, v̂ = 1.
    pub fn initial(y: &[f64], n: usize, a_init: f64) -> Self {
        Self {
            r: vec![0.0; n],
            phi: vec![1.0; n],
            v: vec![1.0; y.len()],
            z: y.to_vec(),
            x_hat: vec![0.0; n],
            v_hat: vec![1.0; n],
            a: vec![a_init; n],
            iter: 0,
        }
    }
}

/// `P` together with its elementwise square, shared by every chunk.
pub struct Mixing<'a> {
    p: &'a Matrix,
    p2: Matrix,
}

impl<'a> Mixing<'a> {
    pub fn new(p: &'a UmaCodebook) -> Self {
        Self::from_matrix(p.entries())
    }

    pub fn from_matrix(p: &'a Matrix) -> Self {
        let p2 = Matrix::from_col_major(
            p.rows(),
            p.cols(),
            p.as_slice().iter().map(|v| v * v).collect(),
        )
        .expect("same shape");
        Self { p, p2 }
    }

    fn n(&self) -> usize {
        self.p.cols()
    }

    fn l(&self) -> usize {
        self.p.rows()
    }
}

/// One AMP sweep: decoupling, damping, denoising and the EM update.
pub fn amp_chunk_iterate(
    state: &AmpState,
    y: &[f64],
    mixing: &Mixing<'_>,
    sigma2: f64,
    params: &AmpParams,
) -> Result<AmpState> {
    let (n, l) = (mixing.n(), mixing.l());
    let tau = params.damping;
    let floor = params.variance_floor;
    let sweep = state.iter + 1;
    let diverged = |quantity| Error::Diverged { sweep, quantity };

    // V_l = Σ_n P²_ln v̂_n ;  Z_l = Σ_n P_ln x̂_n − V_l (y_l − Z⁻_l) / (σ² + V⁻_l)
    let mut v = vec![0.0; l];
    let mut z = vec![0.0; l];
    for c in 0..n {
        let (xh, vh) = (state.x_hat[c], state.v_hat[c]);
        for ((vl, zl), (&p, &p2)) in v
            .iter_mut()
            .zip(z.iter_mut())
            .zip(mixing.p.col(c).iter().zip(mixing.p2.col(c)))
        {
            *vl += p2 * vh;
            *zl += p * xh;
        }
    }
    for i in 0..l {
        let denom_prev = (sigma2 + state.v[i]).max(floor);
        z[i] -= v[i] * (y[i] - state.z[i]) / denom_prev;
        v[i] = tau * state.v[i] + (1.0 - tau) * v[i];
        z[i] = tau * state.z[i] + (1.0 - tau) * z[i];
    }
    if !v.iter().chain(&z).all(|x| x.is_finite()) {
        return Err(diverged("V/Z"));
    }

    // φ_n = (Σ_l P²_ln / (σ² + V_l))⁻¹ ;  r_n = x̂_n + φ_n Σ_l P_ln (y_l − Z_l) / (σ² + V_l)
    let inv_denom: Vec<f64> = v.iter().map(|&vl| 1.0 / (sigma2 + vl).max(floor)).collect();
    let resid: Vec<f64> = (0..l).map(|i| (y[i] - z[i]) * inv_denom[i]).collect();
    let mut phi = vec![0.0; n];
    let mut r = vec![0.0; n];
    for c in 0..n {
        let prec: f64 = mixing.p2.col(c).iter().zip(&inv_denom).map(|(a, b)| a * b).sum();
        let corr: f64 = mixing.p.col(c).iter().zip(&resid).map(|(a, b)| a * b).sum();
        let ph = (1.0 / prec).max(floor);
        phi[c] = ph;
        r[c] = state.x_hat[c] + ph * corr;
    }
    if !r.iter().chain(&phi).all(|x| x.is_finite()) {
        return Err(diverged("r/phi"));
    }

    let mut x_hat = vec![0.0; n];
    let mut v_hat = vec![0.0; n];
    let mut a = vec![0.0; n];
    for c in 0..n {
        let post = denoise_posterior(r[c], phi[c], state.a[c], params.k_max);
        x_hat[c] = post.mean;
        v_hat[c] = post.var;
        a[c] = post.p_nonzero.clamp(A_MIN, A_MAX);
    }
    if !x_hat.iter().chain(&v_hat).all(|x| x.is_finite()) {
        return Err(diverged("posterior"));
    }

    Ok(AmpState {
        r,
        phi,
        v,
        z,
        x_hat,
        v_hat,
        a,
        iter: sweep,
    })
}

/// One row of a per-chunk convergence trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    /// ‖y − P x̂‖₂
    pub residual: f64,
    /// Σ_n x̂_n
    pub l1: f64,
    pub rel_change: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChunkDetection {
    pub x_hat: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Last relative change of x̂ (NaN before two iterates exist).
    pub final_rel_change: f64,
}

fn check_dims(y_len: usize, p: &Matrix) -> Result<()> {
    if y_len != p.rows() {
        return Err(Error::DimensionMismatch {
            what: "received chunk length vs sequence length L",
            expected: p.rows(),
            actual: y_len,
        });
    }
    Ok(())
}

pub fn detect_chunk(
    y: &[f64],
    p: &UmaCodebook,
    sigma2: f64,
    params: &AmpParams,
) -> Result<ChunkDetection> {
    params.validate()?;
    check_dims(y.len(), p.entries())?;
    run_chunk(y, &Mixing::new(p), sigma2, params, None)
}

pub fn detect_chunk_traced(
    y: &[f64],
    p: &UmaCodebook,
    sigma2: f64,
    params: &AmpParams,
    trace: &mut Vec<TraceRow>,
) -> Result<ChunkDetection> {
    params.validate()?;
    check_dims(y.len(), p.entries())?;
    run_chunk(y, &Mixing::new(p), sigma2, params, Some(trace))
}

fn run_chunk(
    y: &[f64],
    mixing: &Mixing<'_>,
    sigma2: f64,
    params: &AmpParams,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<ChunkDetection> {
    let mut state = AmpState::initial(y, mixing.n(), params.a_init);
    let mut converged = false;
    let mut rel = f64::NAN;
    for _ in 1..params.max_iters {
        let next = amp_chunk_iterate(&state, y, mixing, sigma2, params)?;
        let prev_norm = norm2(&state.x_hat);
        let diff: f64 = next
            .x_hat
            .iter()
            .zip(&state.x_hat)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        rel = if prev_norm > 0.0 { diff / prev_norm } else { f64::NAN };
        state = next;
        if let Some(t) = trace.as_deref_mut() {
            let px = mixing.p.mul_vec(&state.x_hat)?;
            let residual = y.iter().zip(&px).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            t.push(TraceRow {
                iter: state.iter,
                residual,
                l1: state.x_hat.iter().sum(),
                rel_change: rel,
            });
        }
        if prev_norm > 0.0 && rel < params.tol {
            converged = true;
            break;
        }
    }
    Ok(ChunkDetection {
        x_hat: state.x_hat,
        iterations: state.iter,
        converged,
        final_rel_change: rel,
    })
}

/// Detection output for a whole round.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    /// N×W̄ posterior means; column w̄ is chunk w̄.
    pub x_hat: Matrix,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
    /// Chunks whose state went non-finite; their column is left at zero.
    pub diverged: Vec<bool>,
    pub final_rel_change: Vec<f64>,
}

impl DetectionResult {
    pub fn num_chunks(&self) -> usize {
        self.x_hat.cols()
    }

    pub fn chunk_sums(&self) -> Vec<f64> {
        self.x_hat.columns().map(|c| c.iter().sum()).collect()
    }

    pub fn diverged_count(&self) -> usize {
        self.diverged.iter().filter(|&&d| d).count()
    }

    pub fn mean_iterations(&self) -> f64 {
        self.iterations.iter().sum::<usize>() as f64 / self.iterations.len().max(1) as f64
    }

    /// Chunk-averaged final relative change, the statistic a round-global
    /// stopping rule would test.
    pub fn mean_final_rel_change(&self) -> f64 {
        let finite: Vec<f64> = self
            .final_rel_change
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .collect();
        finite.iter().sum::<f64>() / finite.len().max(1) as f64
    }
}

/// Runs the detector on every column of `y` independently. Chunks run in
/// parallel; the result does not depend on scheduling.
pub fn detect_all(
    y: &Matrix,
    p: &UmaCodebook,
    sigma2: f64,
    params: &AmpParams,
) -> Result<DetectionResult> {
    params.validate()?;
    if y.cols() == 0 {
        return Err(Error::InvalidDimensions("need at least one chunk".into()));
    }
    check_dims(y.rows(), p.entries())?;
    let mixing = Mixing::new(p);
    let n = p.len();
    let per_chunk: Vec<Result<ChunkDetection>> = (0..y.cols())
        .into_par_iter()
        .map(|w| run_chunk(y.col(w), &mixing, sigma2, params, None))
        .collect();

    let chunks = y.cols();
    let mut result = DetectionResult {
        x_hat: Matrix::zeros(n, chunks),
        iterations: vec![0; chunks],
        converged: vec![false; chunks],
        diverged: vec![false; chunks],
        final_rel_change: vec![f64::NAN; chunks],
    };
    for (w, det) in per_chunk.into_iter().enumerate() {
        match det {
            Ok(d) => {
                result.x_hat.col_mut(w).copy_from_slice(&d.x_hat);
                result.iterations[w] = d.iterations;
                result.converged[w] = d.converged;
                result.final_rel_change[w] = d.final_rel_change;
            }
            Err(Error::Diverged { sweep, quantity }) => {
                log::warn!("chunk {w}: AMP diverged at sweep {sweep} ({quantity})");
                result.diverged[w] = true;
                result.iterations[w] = sweep;
            }
            Err(e) => return Err(e),
        }
    }
    log::debug!(
        "detected {chunks} chunks: mean sweeps {:.1}, mean final rel change {:.3e}",
        result.mean_iterations(),
        result.mean_final_rel_change()
    );
    Ok(result)
}

/// Writes a convergence trace as CSV.
pub fn write_trace_csv<W: Write>(mut out: W, chunk: usize, trace: &[TraceRow]) -> std::io::Result<()> {
    for row in trace {
        writeln!(
            out,
            "{chunk},{},{:?},{:?},{:?}",
            row.iter, row.residual, row.l1, row.rel_change
        )?;
    }
    Ok(())
}

pub const TRACE_CSV_HEADER: &str = "chunk,iter,residual,l1,rel_change";

/// Most frequent ⌊s + 1/2⌋ over the chunk sums `s`; ties go to the smaller
/// value, and the result is at least one.
pub fn estimate_ka_from_sums(sums: &[f64]) -> usize {
    let mut rounded: Vec<i64> = sums
        .iter()
        .filter(|s| s.is_finite())
        .map(|s| (s + 0.5).floor() as i64)
        .collect();
    rounded.sort_unstable();
    let mut best = (0i64, 0usize);
    let mut i = 0;
    while i < rounded.len() {
        let j = i + rounded[i..].iter().take_while(|&&v| v == rounded[i]).count();
        if j - i > best.1 {
            best = (rounded[i], j - i);
        }
        i = j;
    }
    best.0.max(1) as usize
}

pub fn estimate_ka(result: &DetectionResult) -> usize {
    estimate_ka_from_sums(&result.chunk_sums())
}

/// ĝ_w̄ = U x̂_w̄ / K̂a, concatenated, with the pad removed.
pub fn aggregate(
    result: &DetectionResult,
    codebook: &QuantizationCodebook,
    ka_hat: usize,
    pad_len: usize,
) -> Result<Vec<f64>> {
    if ka_hat < 1 {
        return Err(Error::InvalidParameter("estimated device count must be >= 1".into()));
    }
    if result.x_hat.rows() != codebook.len() {
        return Err(Error::DimensionMismatch {
            what: "detected codewords vs codebook size",
            expected: codebook.len(),
            actual: result.x_hat.rows(),
        });
    }
    let q = codebook.dim();
    if pad_len >= q {
        return Err(Error::InvalidDimensions(format!("pad_len {pad_len} must be < Q = {q}")));
    }
    let scale = 1.0 / ka_hat as f64;
    let mut out = Vec::with_capacity(result.num_chunks() * q);
    for col in result.x_hat.columns() {
        let mut g = codebook.entries().mul_vec(col)?;
        g.iter_mut().for_each(|v| *v *= scale);
        out.extend_from_slice(&g);
    }
    out.truncate(out.len() - pad_len);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebooks::generate_uma_codebook;
    use crate::seed;
    use rand::Rng;

    #[test]
    fn denoiser_vanishing_prior() {
        let p = denoise_posterior(2.0, 0.5, 1e-300, 5);
        assert!(p.mean < 1e-200 && p.var < 1e-200 && p.p_nonzero < 1e-200);
    }

    #[test]
    fn denoiser_pins_support_point() {
        let p = denoise_posterior(3.0, 1e-12, 0.5, 5);
        assert!((p.mean - 3.0).abs() < 1e-6);
        assert!(p.var < 1e-6);
        assert_eq!(p.p_nonzero, 1.0);
    }

    #[test]
    fn denoiser_matches_direct_sum() {
        // Four support points, weights written out by hand.
        let (r, phi, a, k) = (0.7f64, 0.2f64, 0.4f64, 3u32);
        let g = |s: f64| (-(r - s) * (r - s) / (2.0 * phi)).exp();
        let w = [(1.0 - a) * g(0.0), a / 3.0 * g(1.0), a / 3.0 * g(2.0), a / 3.0 * g(3.0)];
        let z: f64 = w.iter().sum();
        let mean = (w[1] + 2.0 * w[2] + 3.0 * w[3]) / z;
        let var = (w[1] + 4.0 * w[2] + 9.0 * w[3]) / z - mean * mean;
        let p = denoise_posterior(r, phi, a, k);
        assert!(((p.mean - mean) / mean).abs() < 1e-12);
        assert!(((p.var - var) / var).abs() < 1e-12);
        assert!(((p.p_nonzero - (z - w[0]) / z) / p.p_nonzero).abs() < 1e-12);

        // 50-digit enumeration of the same four weights.
        let exact = (0.387_705_738_028_387_877_8, 0.251_095_278_523_436_504_8, 0.380_853_943_500_761_511_9);
        assert!(((p.mean - exact.0) / exact.0).abs() < 1e-12);
        assert!(((p.var - exact.1) / exact.1).abs() < 1e-12);
        assert!(((p.p_nonzero - exact.2) / exact.2).abs() < 1e-12);
    }

    #[test]
    fn denoiser_handles_large_k_max() {
        let p = denoise_posterior(70.2, 0.3, 0.5, 100);
        assert!((p.mean - 70.0).abs() < 0.5);
    }

    #[test]
    fn damping_boundaries() {
        let pm = Matrix::identity(3);
        let mixing = Mixing::from_matrix(&pm);
        let y = [1.0, 0.0, 2.0];
        let mut st = AmpState::initial(&y, 3, 0.5);
        st.v_hat = vec![0.0; 3];
        // Fresh V is zero; with V_prev = 1 and τ = 0.3 the damped V is 0.3.
        let p = AmpParams { damping: 0.3, k_max: 3, ..AmpParams::default() };
        let next = amp_chunk_iterate(&st, &y, &mixing, 0.0, &p).unwrap();
        for &v in &next.v {
            assert!((v - 0.3).abs() < 1e-15);
        }
        // τ = 0 passes the fresh values through.
        let p0 = AmpParams { damping: 0.0, ..p };
        let next = amp_chunk_iterate(&st, &y, &mixing, 0.0, &p0).unwrap();
        assert!(next.v.iter().all(|&v| v == 0.0));
        assert_eq!(next.z, vec![0.0; 3]);
    }

    #[test]
    fn identity_mixing_recovers_counts() {
        let p = crate::codebooks::UmaCodebook::from_matrix(Matrix::identity(4)).unwrap();
        let x = [2.0, 0.0, 1.0, 0.0];
        let params = AmpParams { k_max: 3, ..AmpParams::default() };
        let det = detect_chunk(&x, &p, 0.0, &params).unwrap();
        for (a, b) in det.x_hat.iter().zip(&x) {
            assert!((a - b).abs() < 1e-4, "{:?}", det.x_hat);
        }
    }

    #[test]
    fn orthonormal_mixing_converges_fast() {
        // Random orthonormal basis via Gram-Schmidt.
        let n = 6;
        let mut rng = seed::rng(21);
        let mut cols: Vec<Vec<f64>> = Vec::new();
        while cols.len() < n {
            let mut v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() - 0.5).collect();
            for c in &cols {
                let d: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= d * b);
            }
            let nv = norm2(&v);
            cols.push(v.into_iter().map(|a| a / nv).collect());
        }
        let pm = Matrix::from_columns(n, &cols).unwrap();
        let p = crate::codebooks::UmaCodebook::from_matrix(pm.clone()).unwrap();
        let x = [0.0, 3.0, 0.0, 1.0, 1.0, 0.0];
        let y = pm.mul_vec(&x).unwrap();
        let params = AmpParams { k_max: 4, max_iters: 21, ..AmpParams::default() };
        let det = detect_chunk(&y, &p, 0.0, &params).unwrap();
        assert!(det.iterations <= 20);
        for (a, b) in det.x_hat.iter().zip(&x) {
            assert!((a - b).abs() < 1e-6, "{:?}", det.x_hat);
        }
    }

    #[test]
    fn detect_all_singleton_and_duplicates() {
        let p = generate_uma_codebook(32, 16, 2).unwrap();
        let x: Vec<f64> = (0..32).map(|i| if i % 9 == 0 { 1.0 } else { 0.0 }).collect();
        let col = p.entries().mul_vec(&x).unwrap();
        let params = AmpParams { k_max: 4, ..AmpParams::default() };
        let single = detect_chunk(&col, &p, 1e-3, &params).unwrap();
        let y1 = Matrix::from_columns(16, &[col.clone()]).unwrap();
        let all1 = detect_all(&y1, &p, 1e-3, &params).unwrap();
        assert_eq!(all1.x_hat.col(0), single.x_hat.as_slice());
        assert_eq!(all1.iterations[0], single.iterations);

        let y2 = Matrix::from_columns(16, &[col.clone(), col]).unwrap();
        let all2 = detect_all(&y2, &p, 1e-3, &params).unwrap();
        assert_eq!(all2.x_hat.col(0), all2.x_hat.col(1));
    }

    #[test]
    fn trace_rows_track_iterations() {
        let p = generate_uma_codebook(16, 8, 2).unwrap();
        let y = p.sequence(3).to_vec();
        let mut trace = Vec::new();
        let params = AmpParams { k_max: 2, ..AmpParams::default() };
        let det = detect_chunk_traced(&y, &p, 0.0, &params, &mut trace).unwrap();
        assert_eq!(trace.len(), det.iterations);
        assert_eq!(trace.last().unwrap().iter, det.iterations);
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, 0, &trace).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), trace.len());
    }

    #[test]
    fn ka_estimate_examples() {
        assert_eq!(estimate_ka_from_sums(&[7.2, 6.9, 7.4, 12.0]), 7);
        assert_eq!(estimate_ka_from_sums(&[4.6]), 5);
        let mut tie = vec![3.0; 50];
        tie.extend(vec![4.0; 50]);
        assert_eq!(estimate_ka_from_sums(&tie), 3);
        assert_eq!(estimate_ka_from_sums(&[0.1, 0.2]), 1);
        // Half rounds up.
        assert_eq!(estimate_ka_from_sums(&[2.5]), 3);
    }

    #[test]
    fn aggregate_examples() {
        let u = QuantizationCodebook::from_matrix(
            Matrix::from_columns(2, &[[1.0, 0.0], [0.0, 1.0]]).unwrap(),
        )
        .unwrap();
        let det = DetectionResult {
            x_hat: Matrix::from_columns(2, &[[2.0, 1.0]]).unwrap(),
            iterations: vec![1],
            converged: vec![true],
            diverged: vec![false],
            final_rel_change: vec![0.0],
        };
        let g = aggregate(&det, &u, 3, 0).unwrap();
        assert!((g[0] - 2.0 / 3.0).abs() < 1e-15 && (g[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(aggregate(&det, &u, 3, 1).unwrap().len(), 1);
        assert!(aggregate(&det, &u, 0, 0).is_err());

        let unanimous = DetectionResult {
            x_hat: Matrix::from_columns(2, &[[0.0, 5.0]]).unwrap(),
            ..det
        };
        assert_eq!(aggregate(&unanimous, &u, 5, 0).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn params_validation() {
        assert!(AmpParams::default().validate().is_ok());
        assert!(AmpParams { damping: 1.0, ..AmpParams::default() }.validate().is_err());
        assert!(AmpParams { tol: 0.0, ..AmpParams::default() }.validate().is_err());
        assert!(AmpParams { a_init: 1.0, ..AmpParams::default() }.validate().is_err());
        assert_eq!(AmpParams::k_max_for_population(100), 20);
        assert_eq!(AmpParams::k_max_for_population(3), 1);
    }
}
