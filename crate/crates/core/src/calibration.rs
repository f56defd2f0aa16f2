//! Monte-Carlo benchmark of the detector on synthetic rounds.
//!
//! Each trial draws Ka, a fresh access codebook, and W̄ chunks in which
//! every device picks a codeword uniformly at random; the chunks go through
//! the channel and the detector. Reported per chunk: exact integer recovery
//! and NMSE ‖x̂ − x‖²/‖x‖²; per trial: whether K̂a = Ka.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::amp_da::{self, AmpParams};
use crate::codebooks::{self, UmaCodebook};
use crate::error::{Error, Result};
use crate::mac_channel::{self, ChannelParams};
use crate::quantizer::QuantizedUpdate;
use crate::seed::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodebookKind {
    /// i.i.d. N(0, 1/L) entries.
    Gaussian,
    /// Square orthonormal (requires L = N).
    Orthonormal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub codewords: usize,
    pub seq_len: usize,
    pub ka_min: usize,
    pub ka_max: usize,
    pub snr_db: f64,
    pub trials: usize,
    pub chunks: usize,
    pub seed: u64,
    pub codebook: CodebookKind,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            codewords: 256,
            seq_len: 64,
            ka_min: 7,
            ka_max: 13,
            snr_db: 20.0,
            trials: 200,
            chunks: 200,
            seed: 0,
            codebook: CodebookKind::Gaussian,
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.codewords < 2 || self.seq_len < 1 || self.trials < 1 || self.chunks < 1 {
            return Err(Error::InvalidParameter(
                "calibration needs N >= 2, L >= 1, trials >= 1, chunks >= 1".into(),
            ));
        }
        if self.ka_min < 1 || self.ka_min > self.ka_max {
            return Err(Error::InvalidParameter(format!(
                "bad active range [{}, {}]",
                self.ka_min, self.ka_max
            )));
        }
        if self.codebook == CodebookKind::Orthonormal && self.seq_len != self.codewords {
            return Err(Error::InvalidParameter("orthonormal codebook requires L = N".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Estimate {
    /// Wilson 95% interval for a binomial proportion.
    pub fn proportion(successes: usize, n: usize) -> Self {
        let n_f = n as f64;
        let p = successes as f64 / n_f;
        let z = 1.959_963_984_540_054;
        let denom = 1.0 + z * z / n_f;
        let center = (p + z * z / (2.0 * n_f)) / denom;
        let half = z * (p * (1.0 - p) / n_f + z * z / (4.0 * n_f * n_f)).sqrt() / denom;
        Self {
            value: p,
            lo: (center - half).max(0.0),
            hi: (center + half).min(1.0),
        }
    }

    /// Mean with a normal-approximation 95% interval.
    pub fn mean(samples: &[f64]) -> Self {
        let n = samples.len() as f64;
        let m = samples.iter().sum::<f64>() / n;
        let var = if samples.len() > 1 {
            samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let half = 1.959_963_984_540_054 * (var / n).sqrt();
        Self {
            value: m,
            lo: m - half,
            hi: m + half,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub ka: usize,
    pub ka_est: usize,
    pub exact_chunks: usize,
    pub chunks: usize,
    pub nmse: Vec<f64>,
    pub diverged: usize,
    pub mean_iters: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub trials: Vec<TrialOutcome>,
    pub exact_recovery: Estimate,
    pub ka_accuracy: Estimate,
    pub nmse: Estimate,
    pub diverged_chunks: usize,
    pub mean_iters: f64,
}

impl CalibrationReport {
    pub fn render(&self, cfg: &CalibrationConfig, amp: &AmpParams) -> String {
        let f = |e: &Estimate| format!("{:.4} [{:.4}, {:.4}]", e.value, e.lo, e.hi);
        format!(
            "N={} L={} Ka~U[{},{}] snr_db={} trials={} chunks={} k_max={} damping={} tol={:e}\n\
             exact_recovery_rate {}\n\
             ka_accuracy         {}\n\
             nmse                {}\n\
             diverged_chunks     {}\n\
             mean_sweeps         {:.2}\n",
            cfg.codewords,
            cfg.seq_len,
            cfg.ka_min,
            cfg.ka_max,
            cfg.snr_db,
            cfg.trials,
            cfg.chunks,
            amp.k_max,
            amp.damping,
            amp.tol,
            f(&self.exact_recovery),
            f(&self.ka_accuracy),
            f(&self.nmse),
            self.diverged_chunks,
            self.mean_iters
        )
    }
}

pub fn run_trial(cfg: &CalibrationConfig, amp: &AmpParams, trial: usize) -> Result<TrialOutcome> {
    let t = trial as u64;
    let mut rng = seed::stream_rng(cfg.seed, Stream::Calibration, &[t, 0]);
    let ka = rng.random_range(cfg.ka_min..=cfg.ka_max);
    let cb_seed = seed::derive_stream(cfg.seed, Stream::UmaCodebook, &[t]);
    let p: UmaCodebook = match cfg.codebook {
        CodebookKind::Gaussian => codebooks::generate_uma_codebook(cfg.codewords, cfg.seq_len, cb_seed)?,
        CodebookKind::Orthonormal => codebooks::generate_orthonormal_codebook(cfg.codewords, cb_seed)?,
    };
    let quantized: Vec<QuantizedUpdate> = (0..ka)
        .map(|_| QuantizedUpdate {
            indices: (0..cfg.chunks).map(|_| rng.random_range(0..cfg.codewords)).collect(),
            pad_len: 0,
        })
        .collect();
    let ch = ChannelParams::from_snr_db(cfg.snr_db, seed::derive_stream(cfg.seed, Stream::ChannelNoise, &[t]))?;
    let (rx, truth) = mac_channel::transmit_round(&quantized, &p, &ch)?;
    let det = amp_da::detect_all(&rx.y, &p, ch.sigma2, amp)?;

    let mut exact = 0;
    let mut nmse = Vec::with_capacity(cfg.chunks);
    for (col, x) in det.x_hat.columns().zip(&truth.counts) {
        if col.iter().zip(&x.counts).all(|(a, &b)| a.round() == b as f64) {
            exact += 1;
        }
        let err: f64 = col.iter().zip(&x.counts).map(|(a, &b)| (a - b as f64).powi(2)).sum();
        let norm: f64 = x.counts.iter().map(|&b| (b as f64).powi(2)).sum();
        nmse.push(err / norm);
    }
    Ok(TrialOutcome {
        ka,
        ka_est: amp_da::estimate_ka(&det),
        exact_chunks: exact,
        chunks: cfg.chunks,
        nmse,
        diverged: det.diverged_count(),
        mean_iters: det.mean_iterations(),
    })
}

pub fn calibrate(cfg: &CalibrationConfig, amp: &AmpParams) -> Result<CalibrationReport> {
    cfg.validate()?;
    amp.validate()?;
    let trials: Vec<TrialOutcome> = (0..cfg.trials)
        .map(|t| run_trial(cfg, amp, t))
        .collect::<Result<_>>()?;
    let exact: usize = trials.iter().map(|t| t.exact_chunks).sum();
    let total: usize = trials.iter().map(|t| t.chunks).sum();
    let ka_hits = trials.iter().filter(|t| t.ka_est == t.ka).count();
    let nmse: Vec<f64> = trials.iter().flat_map(|t| t.nmse.iter().copied()).collect();
    Ok(CalibrationReport {
        exact_recovery: Estimate::proportion(exact, total),
        ka_accuracy: Estimate::proportion(ka_hits, trials.len()),
        nmse: Estimate::mean(&nmse),
        diverged_chunks: trials.iter().map(|t| t.diverged).sum(),
        mean_iters: trials.iter().map(|t| t.mean_iters).sum::<f64>() / trials.len() as f64,
        trials,
    })
}
