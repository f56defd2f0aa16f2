//! Uplink multiple access channel after pre-equalization.
//!
//! Each active device scales its sequence by the inverse of its downlink
//! channel estimate. With perfect estimates the complex gains cancel, so per
//! chunk the base station observes `y = P x + z` where `x` counts how many
//! devices chose each codeword and `z ~ N(0, σ² I)`.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use crate::codebooks::UmaCodebook;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::quantizer::QuantizedUpdate;
use crate::seed::{self, Stream};

/// σ² for a per-device receive SNR with unit expected sequence energy.
/// `+inf` dB maps to a noiseless channel.
pub fn snr_to_sigma2(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelParams {
    pub snr_db: f64,
    pub sigma2: f64,
    pub seed: u64,
}

impl ChannelParams {
    pub fn from_snr_db(snr_db: f64, seed: u64) -> Result<Self> {
        if snr_db.is_nan() || snr_db == f64::NEG_INFINITY {
            return Err(Error::InvalidParameter(format!("snr_db must be finite or +inf, got {snr_db}")));
        }
        Ok(Self {
            snr_db,
            sigma2: snr_to_sigma2(snr_db),
            seed,
        })
    }

    pub fn noiseless(seed: u64) -> Self {
        Self {
            snr_db: f64::INFINITY,
            sigma2: 0.0,
            seed,
        }
    }
}

/// Uplink gains and the devices' downlink estimates of them.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub ul_gains: Vec<Complex64>,
    pub dl_estimates: Vec<Complex64>,
}

impl ChannelRealization {
    /// Rayleigh gains h ~ CN(0, 1) with perfect downlink estimation.
    pub fn perfect(num_devices: usize, rng: &mut impl Rng) -> Self {
        let ul_gains: Vec<Complex64> = (0..num_devices)
            .map(|_| {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
            })
            .collect();
        Self {
            dl_estimates: ul_gains.clone(),
            ul_gains,
        }
    }

    /// `h / ĥ` for device `k`; exactly one when the estimate is perfect.
    pub fn residual_gain(&self, k: usize) -> Complex64 {
        let (h, est) = (self.ul_gains[k], self.dl_estimates[k]);
        if h == est {
            Complex64::new(1.0, 0.0)
        } else {
            h / est
        }
    }

    fn check_perfect(&self) -> Result<()> {
        if self.ul_gains.len() != self.dl_estimates.len() {
            return Err(Error::DimensionMismatch {
                what: "channel estimates",
                expected: self.ul_gains.len(),
                actual: self.dl_estimates.len(),
            });
        }
        for k in 0..self.ul_gains.len() {
            if self.residual_gain(k) != Complex64::new(1.0, 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "device {k}: imperfect pre-equalization is not modelled"
                )));
            }
        }
        Ok(())
    }
}

/// Per-chunk codeword occupancy: `counts[n]` devices sent codeword `n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EquivalentTransmit {
    pub counts: Vec<u32>,
}

impl EquivalentTransmit {
    /// ‖x‖₁, i.e. the number of active devices.
    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    /// ‖x‖₀
    pub fn support_size(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

pub fn build_equivalent_transmit(indices: &[usize], n: usize) -> Result<EquivalentTransmit> {
    if indices.is_empty() {
        return Err(Error::InvalidParameter("need at least one active device".into()));
    }
    let mut counts = vec![0u32; n];
    for &i in indices {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, size: n });
        }
        counts[i] += 1;
    }
    Ok(EquivalentTransmit { counts })
}

/// What the base station receives for one round: an L×W̄ matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedRound {
    pub y: Matrix,
}

/// Evaluation-only truth for a round. Never passed to the detector.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub counts: Vec<EquivalentTransmit>,
    pub ka: usize,
}

/// Sends every device's quantized update through the channel. Noise for
/// chunk `w` is drawn from a stream keyed by `(ch.seed, w)`.
pub fn transmit_round(
    quantized: &[QuantizedUpdate],
    codebook: &UmaCodebook,
    ch: &ChannelParams,
) -> Result<(ReceivedRound, GroundTruth)> {
    let mut rng = seed::stream_rng(ch.seed, Stream::ChannelGains, &[]);
    let realization = ChannelRealization::perfect(quantized.len(), &mut rng);
    transmit_round_with(quantized, codebook, ch, &realization)
}

pub fn transmit_round_with(
    quantized: &[QuantizedUpdate],
    codebook: &UmaCodebook,
    ch: &ChannelParams,
    realization: &ChannelRealization,
) -> Result<(ReceivedRound, GroundTruth)> {
    let ka = quantized.len();
    if ka == 0 {
        return Err(Error::InvalidParameter("need at least one active device".into()));
    }
    if realization.ul_gains.len() != ka {
        return Err(Error::DimensionMismatch {
            what: "channel realization devices",
            expected: ka,
            actual: realization.ul_gains.len(),
        });
    }
    realization.check_perfect()?;
    if !(ch.sigma2 >= 0.0) || !ch.sigma2.is_finite() {
        return Err(Error::InvalidParameter(format!("sigma2 must be finite and >= 0, got {}", ch.sigma2)));
    }
    let chunks = quantized[0].indices.len();
    for q in quantized {
        if q.indices.len() != chunks {
            return Err(Error::DimensionMismatch {
                what: "chunks per device",
                expected: chunks,
                actual: q.indices.len(),
            });
        }
    }
    let n = codebook.len();
    let l = codebook.seq_len();

    let per_chunk: Vec<(Vec<f64>, EquivalentTransmit)> = (0..chunks)
        .into_par_iter()
        .map(|w| {
            let idx: Vec<usize> = quantized.iter().map(|q| q.indices[w]).collect();
            let x = build_equivalent_transmit(&idx, n)?;
            let mut y = codebook.entries().mul_vec(&x.as_f64())?;
            add_noise(&mut y, ch, w as u64);
            Ok((y, x))
        })
        .collect::<Result<_>>()?;

    let mut y = Matrix::zeros(l, chunks);
    let mut counts = Vec::with_capacity(chunks);
    for (w, (col, x)) in per_chunk.into_iter().enumerate() {
        y.col_mut(w).copy_from_slice(&col);
        counts.push(x);
    }
    Ok((ReceivedRound { y }, GroundTruth { counts, ka }))
}

/// Adds i.i.d. N(0, σ²) noise drawn from the chunk's own stream.
pub fn add_noise(y: &mut [f64], ch: &ChannelParams, chunk: u64) {
    if ch.sigma2 == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, ch.sigma2.sqrt()).expect("finite sigma");
    let mut rng = seed::stream_rng(ch.seed, Stream::ChannelNoise, &[chunk]);
    for v in y.iter_mut() {
        *v += normal.sample(&mut rng);
    }
}
