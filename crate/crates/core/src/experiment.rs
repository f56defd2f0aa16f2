//! Seeded experiment sweeps: one federated training run per (scheme, seed),
//! each written to its own metrics CSV, plus a manifest holding the fully
//! resolved configuration.
//!
//! Every file is written to a temporary name and renamed into place, so an
//! interrupted run never leaves a partial CSV behind.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::amp_da::AmpParams;
use crate::codebooks::KMeansParams;
use crate::error::{Error, Result};
use crate::feel::data::{self, Dataset};
use crate::feel::{partition_noniid, Federation, RoundMetrics, Scheme, TrainerConfig};
use crate::matrix_io::write_atomic;
use crate::seed::{self, Stream};

pub const MANIFEST_FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Two interleaved spirals (2 classes).
    Spirals {
        samples_per_class: usize,
        turns: f64,
        noise: f64,
    },
    /// Gaussian clusters on a circle.
    Blobs {
        samples_per_class: usize,
        classes: usize,
        dim: usize,
        separation: f64,
        noise: f64,
    },
    /// Labelled CSV file; split into train/test by `test_fraction` unless a
    /// separate test file is given.
    Csv {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_path: Option<PathBuf>,
    },
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec::Spirals {
            samples_per_class: 1250,
            turns: 1.0,
            noise: 0.05,
        }
    }
}

impl DatasetSpec {
    /// Returns (train, test).
    pub fn load(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        let data_seed = seed::derive_stream(seed, Stream::Dataset, &[]);
        let split_seed = seed::derive_stream(seed, Stream::Dataset, &[1]);
        let full = match self {
            DatasetSpec::Spirals {
                samples_per_class,
                turns,
                noise,
            } => data::two_spirals(*samples_per_class, *turns, *noise, data_seed)?,
            DatasetSpec::Blobs {
                samples_per_class,
                classes,
                dim,
                separation,
                noise,
            } => data::gaussian_blobs(*samples_per_class, *classes, *dim, *separation, *noise, data_seed)?,
            DatasetSpec::Csv { path, test_path } => {
                let train = Dataset::read_csv(path)?;
                if let Some(tp) = test_path {
                    return Ok((train, Dataset::read_csv(tp)?));
                }
                train
            }
        };
        let test_len = (full.len() as f64 * test_fraction).round() as usize;
        full.split(test_len.max(1), split_seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub schemes: Vec<Scheme>,
    /// Master seeds; when empty, `repeats` seeds starting at `trainer.seed`.
    pub seeds: Vec<u64>,
    pub repeats: usize,
    pub out_dir: PathBuf,
    /// Force L = Q so GD-OAC uses as many channel uses as one-bit OBDA.
    pub resource_matched: bool,
    /// Set the receiver support bound to ⌊0.2·K⌋.
    pub k_max_from_population: bool,
    /// Fraction of each device's data drawn from a label-sorted shard.
    pub shard_fraction: f64,
    pub test_fraction: f64,
    pub trainer: TrainerConfig,
    pub amp: AmpParams,
    pub kmeans: KMeansParams,
    pub dataset: DatasetSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schemes: Scheme::ALL.to_vec(),
            seeds: Vec::new(),
            repeats: 1,
            out_dir: PathBuf::from("results"),
            resource_matched: true,
            k_max_from_population: true,
            shard_fraction: 0.4,
            test_fraction: 0.2,
            trainer: TrainerConfig::default(),
            amp: AmpParams::default(),
            kmeans: KMeansParams::default(),
            dataset: DatasetSpec::default(),
        }
    }
}

impl ExperimentConfig {
    /// Applies the derived settings and validates. Idempotent.
    pub fn resolve(mut self) -> Result<Self> {
        if self.resource_matched {
            self.trainer.seq_len = self.trainer.chunk_len;
        }
        if self.k_max_from_population {
            self.amp.k_max = AmpParams::k_max_for_population(self.trainer.num_devices);
        }
        if self.seeds.is_empty() {
            self.seeds = (0..self.repeats as u64).map(|i| self.trainer.seed + i).collect();
        }
        self.repeats = self.seeds.len();
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(Error::InvalidParameter("at least one scheme is required".into()));
        }
        if self.resource_matched && self.trainer.seq_len != self.trainer.chunk_len {
            return Err(Error::InvalidParameter(
                "resource-matched mode requires seq_len = chunk_len".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.shard_fraction) {
            return Err(Error::InvalidParameter("shard_fraction must be in [0, 1]".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidParameter("test_fraction must be in (0, 1)".into()));
        }
        self.trainer.validate()?;
        self.amp.validate()?;
        self.kmeans.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidParameter(format!("cannot serialize config: {e}")))
    }

    pub fn from_toml(text: &str, source_name: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            source_name: source_name.to_string(),
            line: e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(1),
            message: e.message().to_string(),
        })
    }

    pub fn metrics_path(&self, scheme: Scheme, seed: u64) -> PathBuf {
        metrics_path(&self.out_dir, scheme, seed)
    }
}

pub fn metrics_path(dir: &Path, scheme: Scheme, seed: u64) -> PathBuf {
    dir.join(format!("metrics_{scheme}_seed{seed}.csv"))
}

/// Trains one federation and returns its per-round metrics.
pub fn run_single(cfg: &ExperimentConfig, scheme: Scheme, seed: u64) -> Result<Vec<RoundMetrics>> {
    let trainer = TrainerConfig {
        scheme,
        seed,
        ..cfg.trainer.clone()
    };
    let (train, test) = cfg.dataset.load(cfg.test_fraction, seed)?;
    let devices = partition_noniid(
        &train,
        trainer.num_devices,
        cfg.shard_fraction,
        seed::derive_stream(seed, Stream::Partition, &[]),
    )?;
    let mut fed = Federation::new(trainer, cfg.amp.clone(), cfg.kmeans.clone(), devices, test)?;
    fed.run()
}

pub fn metrics_csv(rows: &[RoundMetrics]) -> String {
    let mut s = String::from(RoundMetrics::CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.to_csv_row());
        s.push('\n');
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub scheme: Scheme,
    pub seed: u64,
    pub path: PathBuf,
    pub final_accuracy: Option<f64>,
    pub diverged_chunks: usize,
    pub mean_ka_error: f64,
}

/// Resolves `cfg`, runs every (scheme, seed) pair and writes the metrics
/// CSVs and the manifest into `cfg.out_dir`.
pub fn run_experiment(cfg: ExperimentConfig) -> Result<(ExperimentConfig, Vec<RunSummary>)> {
    let cfg = cfg.resolve()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let jobs: Vec<(Scheme, u64)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| cfg.schemes.iter().map(move |&sc| (sc, s)))
        .collect();
    let results: Vec<Result<RunSummary>> = jobs
        .par_iter()
        .map(|&(scheme, seed)| {
            let rows = run_single(&cfg, scheme, seed)?;
            let path = cfg.metrics_path(scheme, seed);
            write_atomic(&path, metrics_csv(&rows).as_bytes())?;
            Ok(RunSummary {
                scheme,
                seed,
                path,
                final_accuracy: rows.last().map(|r| r.test_accuracy),
                diverged_chunks: rows.iter().map(|r| r.diverged_chunks).sum(),
                mean_ka_error: if rows.is_empty() {
                    0.0
                } else {
                    rows.iter()
                        .map(|r| (r.ka_est as f64 - r.ka_true as f64).abs())
                        .sum::<f64>()
                        / rows.len() as f64
                },
            })
        })
        .collect();
    let summaries = results.into_iter().collect::<Result<Vec<_>>>()?;
    write_atomic(&cfg.out_dir.join(MANIFEST_FILE), cfg.to_toml()?.as_bytes())?;
    Ok((cfg, summaries))
}
