//! Federated edge learning: local SGD on each active device, one of three
//! aggregation schemes, and the global model step `w ← w + ĝ`.
//!
//! * `gdoac`: quantize with a per-round K-means codebook, superpose over the
//!   access channel, detect with AMP-DA, aggregate `U x̂ / K̂a`.
//! * `pa`: same transmitters, ideal receiver (mean of the quantized updates).
//! * `obda`: one-bit sign quantization with majority-vote decoding.

pub mod data;
pub mod mlp;

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amp_da::{self, AmpParams};
use crate::codebooks::{self, KMeansParams, QuantizationCodebook, UmaCodebook};
use crate::error::{Error, Result};
use crate::mac_channel::{self, ChannelParams, GroundTruth};
use crate::quantizer::{self, QuantizedUpdate};
use crate::seed::{self, Stream};

pub use data::{partition_noniid, Dataset, DeviceState};
pub use mlp::{Activation, GlobalModel, Mlp};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Gdoac,
    Pa,
    Obda,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Gdoac, Scheme::Pa, Scheme::Obda];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Gdoac => "gdoac",
            Scheme::Pa => "pa",
            Scheme::Obda => "obda",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gdoac" => Ok(Scheme::Gdoac),
            "pa" => Ok(Scheme::Pa),
            "obda" => Ok(Scheme::Obda),
            other => Err(Error::InvalidParameter(format!(
                "unknown scheme {other:?} (expected gdoac, pa or obda)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    /// E: local SGD steps per round.
    pub local_iters: usize,
    /// η
    pub learning_rate: f64,
    pub batch_size: usize,
    /// T
    pub rounds: usize,
    /// K
    pub num_devices: usize,
    pub ka_min: usize,
    pub ka_max: usize,
    pub scheme: Scheme,
    /// J: N = 2^J codewords.
    pub bits: u32,
    /// Q: codeword length.
    pub chunk_len: usize,
    /// L: access sequence length.
    pub seq_len: usize,
    /// `inf` for a noiseless channel.
    pub snr_db: f64,
    pub seed: u64,
    /// OBDA server step γ; defaults to the learning rate.
    pub obda_step: Option<f64>,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            local_iters: 5,
            learning_rate: 0.05,
            batch_size: 16,
            rounds: 50,
            num_devices: 100,
            ka_min: 7,
            ka_max: 13,
            scheme: Scheme::Gdoac,
            bits: 8,
            chunk_len: 4,
            seq_len: 4,
            snr_db: 20.0,
            seed: 0,
            obda_step: None,
            hidden: vec![40, 40],
            activation: Activation::Tanh,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.num_devices == 0 {
            return bad("num_devices must be >= 1".into());
        }
        if self.ka_min < 1 || self.ka_min > self.ka_max || self.ka_max > self.num_devices {
            return bad(format!(
                "active range [{}, {}] must lie within [1, {}]",
                self.ka_min, self.ka_max, self.num_devices
            ));
        }
        if self.local_iters == 0 || self.batch_size == 0 {
            return bad("local_iters and batch_size must be >= 1".into());
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if self.bits == 0 || self.bits > 16 {
            return bad(format!("bits must be in 1..=16, got {}", self.bits));
        }
        if self.chunk_len == 0 || self.seq_len == 0 {
            return bad("chunk_len and seq_len must be >= 1".into());
        }
        if self.snr_db.is_nan() || self.snr_db == f64::NEG_INFINITY {
            return bad(format!("snr_db must be finite or inf, got {}", self.snr_db));
        }
        if let Some(g) = self.obda_step {
            if !(g > 0.0) || !g.is_finite() {
                return bad(format!("obda_step must be > 0, got {g}"));
            }
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return bad("hidden layer widths must be >= 1".into());
        }
        Ok(())
    }

    pub fn codewords(&self) -> usize {
        1 << self.bits
    }

    pub fn obda_gamma(&self) -> f64 {
        self.obda_step.unwrap_or(self.learning_rate)
    }

    pub fn architecture(&self, input_dim: usize, num_classes: usize) -> Result<Mlp> {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(num_classes);
        Mlp::new(sizes, self.activation)
    }
}

/// Per-round evaluation record. Schemes without a detector report
/// `ka_est = ka_true`, `chunk_exact_rate = 1`, and zero AMP statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub scheme: Scheme,
    pub seed: u64,
    pub test_accuracy: f64,
    pub train_loss: f64,
    pub ka_true: usize,
    pub ka_est: usize,
    pub chunk_exact_rate: f64,
    /// ‖ĝ − g_ref‖² / ‖g_ref‖², with g_ref the mean of the quantized updates
    /// (gdoac, pa) or of the raw updates (obda).
    pub aggregation_nmse: f64,
    pub amp_mean_iters: f64,
    pub diverged_chunks: usize,
}

impl RoundMetrics {
    pub const CSV_HEADER: &'static str = "round,scheme,seed,test_accuracy,train_loss,ka_true,ka_est,chunk_exact_rate,aggregation_nmse,amp_mean_iters,diverged_chunks";

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{:?},{:?},{},{},{:?},{:?},{:?},{}",
            self.round,
            self.scheme,
            self.seed,
            self.test_accuracy,
            self.train_loss,
            self.ka_true,
            self.ka_est,
            self.chunk_exact_rate,
            self.aggregation_nmse,
            self.amp_mean_iters,
            self.diverged_chunks
        )
    }
}

/// Runs `steps` SGD steps from `model` on the device's data and returns
/// the model update `w_E − w_0`.
pub fn local_update(
    model: &GlobalModel,
    dev: &DeviceState,
    steps: usize,
    learning_rate: f64,
    batch_size: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    let d = dev.data.len();
    if d == 0 {
        return Err(Error::InsufficientSamples { needed: 1, available: 0 });
    }
    let mut w = model.w.clone();
    let full: Vec<usize> = (0..d).collect();
    for _ in 0..steps {
        let batch = if batch_size >= d {
            full.clone()
        } else {
            index::sample(rng, d, batch_size).into_vec()
        };
        let (loss, grad) = model.arch.loss_and_grad(&w, &dev.data, &batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("local training loss"));
        }
        for (wi, gi) in w.iter_mut().zip(&grad) {
            *wi -= learning_rate * gi;
        }
    }
    Ok(w.iter().zip(&model.w).map(|(a, b)| a - b).collect())
}

/// Draws Ka uniformly from `ka_min..=ka_max`, then Ka distinct device ids.
/// Returned ids are sorted.
pub fn sample_active_devices(
    num_devices: usize,
    ka_min: usize,
    ka_max: usize,
    rng: &mut impl Rng,
) -> Result<Vec<usize>> {
    if ka_min < 1 || ka_min > ka_max || ka_max > num_devices {
        return Err(Error::InvalidParameter(format!(
            "active range [{ka_min}, {ka_max}] must lie within [1, {num_devices}]"
        )));
    }
    let ka = rng.random_range(ka_min..=ka_max);
    let mut ids = index::sample(rng, num_devices, ka).into_vec();
    ids.sort_unstable();
    Ok(ids)
}

/// Trains the round's quantization codebook on the update of the active
/// device with the smallest id.
pub fn refresh_codebook(
    updates: &[(usize, &[f64])],
    bits: u32,
    chunk_len: usize,
    kmeans: &KMeansParams,
) -> Result<QuantizationCodebook> {
    let (_, leader) = updates
        .iter()
        .min_by_key(|(id, _)| *id)
        .ok_or_else(|| Error::InvalidParameter("need at least one active device".into()))?;
    let (samples, _) = quantizer::reshape_update(leader, chunk_len)?;
    let (u, report) = codebooks::kmeans_codebook(&samples, 1 << bits, kmeans)?;
    log::debug!(
        "codebook refresh: {} Lloyd iterations, distortion {:.3e}",
        report.iterations,
        report.distortion.last().copied().unwrap_or(f64::NAN)
    );
    Ok(u)
}

/// Mean of the devices' dequantized updates.
pub fn perfect_aggregate(quantized: &[QuantizedUpdate], codebook: &QuantizationCodebook) -> Result<Vec<f64>> {
    let first = quantized
        .first()
        .ok_or_else(|| Error::InvalidParameter("need at least one active device".into()))?;
    let mut sum = vec![0.0; first.update_len(codebook.dim())];
    for q in quantized {
        let g = quantizer::dequantize(q, codebook)?;
        if g.len() != sum.len() {
            return Err(Error::DimensionMismatch {
                what: "update length",
                expected: sum.len(),
                actual: g.len(),
            });
        }
        sum.iter_mut().zip(&g).for_each(|(s, v)| *s += v);
    }
    let inv = 1.0 / quantized.len() as f64;
    sum.iter_mut().for_each(|s| *s *= inv);
    Ok(sum)
}

/// γ · sign(Σ_k sign(g_k)), elementwise, with sign(0) = 0.
pub fn obda_aggregate(updates: &[Vec<f64>], gamma: f64) -> Result<Vec<f64>> {
    let first = updates
        .first()
        .ok_or_else(|| Error::InvalidParameter("need at least one active device".into()))?;
    let mut votes = vec![0i64; first.len()];
    for g in updates {
        if g.len() != votes.len() {
            return Err(Error::DimensionMismatch {
                what: "update length",
                expected: votes.len(),
                actual: g.len(),
            });
        }
        for (v, &x) in votes.iter_mut().zip(g) {
            *v += sign(x);
        }
    }
    Ok(votes.into_iter().map(|v| gamma * v.signum() as f64).collect())
}

fn sign(x: f64) -> i64 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// Accuracy (arg-max, ties to the smallest class) and mean loss.
pub fn evaluate(model: &GlobalModel, test: &Dataset) -> Result<(f64, f64)> {
    if test.is_empty() {
        return Err(Error::InsufficientSamples { needed: 1, available: 0 });
    }
    let correct = (0..test.len())
        .into_par_iter()
        .filter(|&i| model.arch.predict(&model.w, test.features(i)) == test.label(i))
        .count();
    let idx: Vec<usize> = (0..test.len()).collect();
    let loss = model.arch.loss(&model.w, test, &idx)?;
    Ok((correct as f64 / test.len() as f64, loss))
}

/// Result of one GD-OAC aggregation, with the ideal-receiver reference.
#[derive(Debug, Clone)]
pub struct GdoacOutcome {
    pub g_hat: Vec<f64>,
    pub g_pa: Vec<f64>,
    pub ka_est: usize,
    pub chunk_exact_rate: f64,
    pub amp_mean_iters: f64,
    pub diverged_chunks: usize,
}

/// Quantized transmit, channel, AMP-DA receiver.
pub fn gdoac_aggregate(
    quantized: &[QuantizedUpdate],
    codebook: &QuantizationCodebook,
    uma: &UmaCodebook,
    channel: &ChannelParams,
    amp: &AmpParams,
) -> Result<GdoacOutcome> {
    let g_pa = perfect_aggregate(quantized, codebook)?;
    let (rx, truth) = mac_channel::transmit_round(quantized, uma, channel)?;
    let det = amp_da::detect_all(&rx.y, uma, channel.sigma2, amp)?;
    let ka_est = amp_da::estimate_ka(&det);
    let pad_len = quantized[0].pad_len;
    let g_hat = amp_da::aggregate(&det, codebook, ka_est, pad_len)?;
    Ok(GdoacOutcome {
        g_hat,
        g_pa,
        ka_est,
        chunk_exact_rate: exact_recovery_rate(&det, &truth),
        amp_mean_iters: det.mean_iterations(),
        diverged_chunks: det.diverged_count(),
    })
}

/// Fraction of chunks whose rounded x̂ equals the true counts.
pub fn exact_recovery_rate(det: &amp_da::DetectionResult, truth: &GroundTruth) -> f64 {
    let hits = det
        .x_hat
        .columns()
        .zip(&truth.counts)
        .filter(|(col, x)| col.iter().zip(&x.counts).all(|(a, &b)| a.round() == b as f64))
        .count();
    hits as f64 / truth.counts.len().max(1) as f64
}

pub fn nmse(estimate: &[f64], reference: &[f64]) -> f64 {
    let err: f64 = estimate.iter().zip(reference).map(|(a, b)| (a - b) * (a - b)).sum();
    let norm: f64 = reference.iter().map(|b| b * b).sum();
    if norm == 0.0 {
        if err == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        err / norm
    }
}

/// The full simulated system: devices, test set, global model and the
/// shared access codebook.
#[derive(Debug, Clone)]
pub struct Federation {
    pub config: TrainerConfig,
    pub amp: AmpParams,
    pub kmeans: KMeansParams,
    pub devices: Vec<DeviceState>,
    pub test: Dataset,
    pub model: GlobalModel,
    uma: UmaCodebook,
    train_pool: Dataset,
}

impl Federation {
    pub fn new(
        config: TrainerConfig,
        amp: AmpParams,
        kmeans: KMeansParams,
        devices: Vec<DeviceState>,
        test: Dataset,
    ) -> Result<Self> {
        config.validate()?;
        amp.validate()?;
        kmeans.validate()?;
        if devices.len() != config.num_devices {
            return Err(Error::DimensionMismatch {
                what: "devices",
                expected: config.num_devices,
                actual: devices.len(),
            });
        }
        let train_pool = Dataset::concat(devices.iter().map(|d| &d.data))?;
        let num_classes = train_pool.num_classes().max(test.num_classes());
        let arch = config.architecture(train_pool.dim(), num_classes)?;
        let model = GlobalModel::init(arch, &mut seed::stream_rng(config.seed, Stream::ModelInit, &[]));
        let uma = codebooks::generate_uma_codebook(
            config.codewords(),
            config.seq_len,
            seed::derive_stream(config.seed, Stream::UmaCodebook, &[]),
        )?;
        Ok(Self {
            config,
            amp,
            kmeans,
            devices,
            test,
            model,
            uma,
            train_pool,
        })
    }

    pub fn uma_codebook(&self) -> &UmaCodebook {
        &self.uma
    }

    /// Local updates of the given devices, computed in parallel from
    /// per-(round, device) random streams.
    pub fn local_updates(&self, round: usize, actives: &[usize]) -> Result<Vec<Vec<f64>>> {
        let cfg = &self.config;
        actives
            .par_iter()
            .map(|&id| {
                let mut rng = seed::stream_rng(cfg.seed, Stream::LocalSgd, &[round as u64, id as u64]);
                local_update(
                    &self.model,
                    &self.devices[id],
                    cfg.local_iters,
                    cfg.learning_rate,
                    cfg.batch_size,
                    &mut rng,
                )
            })
            .collect()
    }

    pub fn sample_actives(&self, round: usize) -> Result<Vec<usize>> {
        let cfg = &self.config;
        let mut rng = seed::stream_rng(cfg.seed, Stream::ActiveDevices, &[round as u64]);
        sample_active_devices(cfg.num_devices, cfg.ka_min, cfg.ka_max, &mut rng)
    }

    /// Runs one communication round and applies the aggregated update.
    pub fn run_round(&mut self, round: usize) -> Result<RoundMetrics> {
        let actives = self.sample_actives(round)?;
        let updates = self.local_updates(round, &actives)?;
        let ka = actives.len();
        let cfg = self.config.clone();

        let (g, ka_est, exact, nmse_val, iters, diverged) = match cfg.scheme {
            Scheme::Obda => {
                let raw_mean = mean_of(&updates);
                let g = obda_aggregate(&updates, cfg.obda_gamma())?;
                let e = nmse(&g, &raw_mean);
                (g, ka, 1.0, e, 0.0, 0)
            }
            Scheme::Pa | Scheme::Gdoac => {
                let labelled: Vec<(usize, &[f64])> =
                    actives.iter().copied().zip(updates.iter().map(Vec::as_slice)).collect();
                let kmeans = KMeansParams {
                    seed: seed::derive_stream(cfg.seed, Stream::KMeans, &[round as u64]),
                    ..self.kmeans.clone()
                };
                let u = refresh_codebook(&labelled, cfg.bits, cfg.chunk_len, &kmeans)?;
                let quantized: Vec<QuantizedUpdate> = updates
                    .iter()
                    .map(|g| quantizer::quantize_update(g, &u))
                    .collect::<Result<_>>()?;
                if cfg.scheme == Scheme::Pa {
                    (perfect_aggregate(&quantized, &u)?, ka, 1.0, 0.0, 0.0, 0)
                } else {
                    let channel = ChannelParams::from_snr_db(
                        cfg.snr_db,
                        seed::derive_stream(cfg.seed, Stream::ChannelNoise, &[round as u64]),
                    )?;
                    let out = gdoac_aggregate(&quantized, &u, &self.uma, &channel, &self.amp)?;
                    let e = nmse(&out.g_hat, &out.g_pa);
                    (
                        out.g_hat,
                        out.ka_est,
                        out.chunk_exact_rate,
                        e,
                        out.amp_mean_iters,
                        out.diverged_chunks,
                    )
                }
            }
        };

        for (w, d) in self.model.w.iter_mut().zip(&g) {
            *w += d;
        }
        let (test_accuracy, _) = evaluate(&self.model, &self.test)?;
        let (_, train_loss) = evaluate(&self.model, &self.train_pool)?;
        Ok(RoundMetrics {
            round,
            scheme: cfg.scheme,
            seed: cfg.seed,
            test_accuracy,
            train_loss,
            ka_true: ka,
            ka_est,
            chunk_exact_rate: exact,
            aggregation_nmse: nmse_val,
            amp_mean_iters: iters,
            diverged_chunks: diverged,
        })
    }

    /// Rounds `1..=config.rounds`.
    pub fn run(&mut self) -> Result<Vec<RoundMetrics>> {
        (1..=self.config.rounds).map(|t| self.run_round(t)).collect()
    }
}

fn mean_of(updates: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; updates.first().map_or(0, Vec::len)];
    for g in updates {
        m.iter_mut().zip(g).for_each(|(a, b)| *a += b);
    }
    let inv = 1.0 / updates.len().max(1) as f64;
    m.iter_mut().for_each(|a| *a *= inv);
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn tiny_federation(scheme: Scheme, seed: u64) -> Federation {
        let data = data::gaussian_blobs(100, 2, 2, 1.5, 0.8, seed).unwrap();
        let (train, test) = data.split(40, seed).unwrap();
        let devices = partition_noniid(&train, 8, 0.4, seed).unwrap();
        let cfg = TrainerConfig {
            num_devices: 8,
            ka_min: 2,
            ka_max: 4,
            rounds: 3,
            hidden: vec![8],
            bits: 4,
            chunk_len: 2,
            seq_len: 2,
            scheme,
            seed,
            ..TrainerConfig::default()
        };
        Federation::new(cfg, AmpParams { k_max: 4, ..AmpParams::default() }, KMeansParams::default(), devices, test)
            .unwrap()
    }

    #[test]
    fn scheme_parsing() {
        for s in Scheme::ALL {
            assert_eq!(s.as_str().parse::<Scheme>().unwrap(), s);
        }
        assert!("ota".parse::<Scheme>().is_err());
    }

    #[test]
    fn zero_learning_rate_gives_zero_update() {
        let f = tiny_federation(Scheme::Pa, 1);
        let g = local_update(&f.model, &f.devices[0], 3, 0.0, 4, &mut seed::rng(0)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn active_sampling_examples() {
        let mut rng = seed::rng(5);
        let ids = sample_active_devices(20, 5, 5, &mut rng).unwrap();
        assert_eq!(ids.len(), 5);
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        let all = sample_active_devices(10, 10, 10, &mut rng).unwrap();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert!(sample_active_devices(10, 0, 3, &mut rng).is_err());
        assert!(sample_active_devices(10, 4, 11, &mut rng).is_err());
    }

    #[test]
    fn active_count_is_uniform() {
        let mut rng = seed::rng(42);
        let mut freq = [0usize; 7];
        let draws = 10_000;
        for _ in 0..draws {
            freq[sample_active_devices(100, 7, 13, &mut rng).unwrap().len() - 7] += 1;
        }
        let p = 1.0 / 7.0;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for f in freq {
            assert!((f as f64 - draws as f64 * p).abs() <= 3.0 * sd, "{freq:?}");
        }
    }

    #[test]
    fn obda_examples() {
        let g = vec![vec![1.0, -2.0, 0.5], vec![3.0, -0.1, 0.2], vec![0.5, 4.0, -7.0]];
        assert_eq!(obda_aggregate(&g, 0.1).unwrap(), vec![0.1, -0.1, 0.1]);
        let scaled: Vec<Vec<f64>> = g
            .iter()
            .zip([2.0, 0.01, 300.0])
            .map(|(v, c)| v.iter().map(|x| x * c).collect())
            .collect();
        assert_eq!(obda_aggregate(&scaled, 0.1).unwrap(), obda_aggregate(&g, 0.1).unwrap());
        // Balanced vote and zero entries give zero.
        assert_eq!(obda_aggregate(&[vec![1.0, 0.0], vec![-1.0, 0.0]], 1.0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn refresh_codebook_uses_smallest_id() {
        let a: Vec<f64> = (0..64).map(|i| (i as f64).sin()).collect();
        let b: Vec<f64> = (0..64).map(|i| 100.0 + i as f64).collect();
        let u = refresh_codebook(&[(7, &b), (3, &a)], 2, 2, &KMeansParams::default()).unwrap();
        // All codewords lie in the leader's range, far from the other device's.
        assert!(u.entries().as_slice().iter().all(|v| v.abs() <= 1.0));

        let zeros = vec![0.0; 16];
        assert!(matches!(
            refresh_codebook(&[(0, &zeros)], 1, 2, &KMeansParams::default()),
            Err(Error::DegenerateSamples { .. })
        ));
    }

    #[test]
    fn perfect_aggregate_examples() {
        let u = QuantizationCodebook::from_matrix(
            Matrix::from_columns(2, &[[1.0, 0.0], [0.0, 2.0], [3.0, 3.0], [-1.0, 5.0]]).unwrap(),
        )
        .unwrap();
        let a = QuantizedUpdate { indices: vec![0, 2], pad_len: 1 };
        let b = QuantizedUpdate { indices: vec![1, 3], pad_len: 1 };
        assert_eq!(perfect_aggregate(&[a.clone()], &u).unwrap(), vec![1.0, 0.0, 3.0]);
        assert_eq!(perfect_aggregate(&[a, b], &u).unwrap(), vec![0.5, 1.0, 1.0]);
    }

    #[test]
    fn evaluate_tie_rule() {
        let arch = Mlp::new(vec![2, 2], Activation::Relu).unwrap();
        let model = GlobalModel::new(arch.clone(), vec![0.0; arch.num_params()]).unwrap();
        let labels = vec![0, 1, 1, 0, 1, 1, 1];
        let feats = vec![0.3; 14];
        let d = Dataset::new(2, 2, feats, labels).unwrap();
        let (acc, loss) = evaluate(&model, &d).unwrap();
        assert!((acc - 2.0 / 7.0).abs() < 1e-15);
        assert!((loss - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn rounds_are_deterministic() {
        for scheme in Scheme::ALL {
            let a = tiny_federation(scheme, 4).run().unwrap();
            let b = tiny_federation(scheme, 4).run().unwrap();
            assert_eq!(a, b);
            assert_eq!(a.len(), 3);
        }
    }

    #[test]
    fn obda_steps_are_bounded() {
        let mut f = tiny_federation(Scheme::Obda, 2);
        let w0 = crate::matrix::norm2(&f.model.w);
        let metrics = f.run().unwrap();
        let gamma = f.config.obda_gamma();
        let bound = w0 + 3.0 * gamma * (f.model.num_params() as f64).sqrt();
        assert!(crate::matrix::norm2(&f.model.w) <= bound);
        assert!(metrics.iter().all(|m| m.test_accuracy.is_finite()));
    }

    #[test]
    fn config_validation() {
        assert!(TrainerConfig::default().validate().is_ok());
        let bad = TrainerConfig { ka_max: 200, ..TrainerConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainerConfig { snr_db: f64::NAN, ..TrainerConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn csv_row_has_all_columns() {
        let m = RoundMetrics {
            round: 1,
            scheme: Scheme::Gdoac,
            seed: 3,
            test_accuracy: 0.5,
            train_loss: 0.7,
            ka_true: 9,
            ka_est: 9,
            chunk_exact_rate: 1.0,
            aggregation_nmse: 1e-30,
            amp_mean_iters: 12.5,
            diverged_chunks: 0,
        };
        assert_eq!(
            m.to_csv_row().split(',').count(),
            RoundMetrics::CSV_HEADER.split(',').count()
        );
        assert!(m.to_csv_row().starts_with("1,gdoac,3,0.5,"));
    }
}
