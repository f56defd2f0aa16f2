//! `gdoac` command line: experiment runner plus detector, calibration and
//! codebook tools.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gdoac_core::amp_da::{self, AmpParams, TraceRow, TRACE_CSV_HEADER};
use gdoac_core::calibration::{self, CalibrationConfig, CodebookKind};
use gdoac_core::codebooks::{self, KMeansParams, UmaCodebook};
use gdoac_core::experiment::{self, DatasetSpec, ExperimentConfig};
use gdoac_core::feel::{Activation, Scheme};
use gdoac_core::mac_channel::snr_to_sigma2;
use gdoac_core::matrix_io;

#[derive(Parser)]
#[command(name = "gdoac", version, about = "Digital over-the-air aggregation for federated edge learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train federations for every (scheme, seed) pair and write metrics CSVs.
    Run(RunArgs),
    /// Run the AMP detector on a received-signal matrix.
    Detect(DetectArgs),
    /// Monte-Carlo recovery statistics of the detector.
    Calibrate(CalibrateArgs),
    /// Write a codebook in the matrix text format.
    ExportCodebook(ExportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML configuration; flags below override its values.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    dry_run: bool,

    /// Comma-separated subset of gdoac, pa, obda.
    #[arg(long, value_delimiter = ',', value_parser = parse_scheme)]
    schemes: Option<Vec<Scheme>>,
    /// Comma-separated master seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Number of consecutive seeds starting at --seed when --seeds is absent.
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Force L = Q (defaults to true).
    #[arg(long)]
    resource_matched: Option<bool>,
    /// Set k_max = floor(0.2 K) (defaults to true).
    #[arg(long)]
    k_max_from_population: Option<bool>,
    #[arg(long)]
    shard_fraction: Option<f64>,
    #[arg(long)]
    test_fraction: Option<f64>,

    #[command(flatten)]
    trainer: TrainerFlags,
    #[command(flatten)]
    amp: AmpFlags,
    #[command(flatten)]
    kmeans: KMeansFlags,
    #[command(flatten)]
    dataset: DatasetFlags,
}

#[derive(Args)]
struct TrainerFlags {
    /// E: local SGD steps per round.
    #[arg(long)]
    local_iters: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    /// K: number of devices.
    #[arg(long)]
    num_devices: Option<usize>,
    #[arg(long)]
    ka_min: Option<usize>,
    #[arg(long)]
    ka_max: Option<usize>,
    /// J: quantization bits, N = 2^J.
    #[arg(long)]
    bits: Option<u32>,
    /// Q: codeword length.
    #[arg(long)]
    chunk_len: Option<usize>,
    /// L: access sequence length. Setting it turns resource matching off
    /// unless --resource-matched is also given.
    #[arg(long)]
    seq_len: Option<usize>,
    /// Channel SNR in dB; `inf` for a noiseless channel.
    #[arg(long)]
    snr_db: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// OBDA server step (defaults to the learning rate).
    #[arg(long)]
    obda_step: Option<f64>,
    /// Comma-separated hidden layer widths.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    activation: Option<ActivationArg>,
}

#[derive(Args)]
struct AmpFlags {
    /// T0: AMP iteration budget (at most T0 - 1 sweeps).
    #[arg(long)]
    amp_max_iters: Option<usize>,
    /// τ
    #[arg(long)]
    damping: Option<f64>,
    /// ε: relative-change stopping threshold.
    #[arg(long)]
    amp_tol: Option<f64>,
    /// Receiver support bound. Setting it turns the population rule off.
    #[arg(long)]
    k_max: Option<u32>,
    #[arg(long)]
    a_init: Option<f64>,
    #[arg(long)]
    variance_floor: Option<f64>,
}

#[derive(Args)]
struct KMeansFlags {
    #[arg(long)]
    kmeans_max_iters: Option<usize>,
    #[arg(long)]
    kmeans_tol: Option<f64>,
    #[arg(long)]
    kmeans_seed: Option<u64>,
}

#[derive(Args)]
struct DatasetFlags {
    #[arg(long, value_enum)]
    dataset: Option<DatasetKind>,
    #[arg(long)]
    samples_per_class: Option<usize>,
    /// Spirals: number of turns.
    #[arg(long)]
    turns: Option<f64>,
    /// Spirals and blobs: noise standard deviation.
    #[arg(long)]
    noise: Option<f64>,
    /// Blobs: number of classes.
    #[arg(long)]
    classes: Option<usize>,
    /// Blobs: feature dimension.
    #[arg(long)]
    dim: Option<usize>,
    /// Blobs: radius of the circle the class centres sit on.
    #[arg(long)]
    separation: Option<f64>,
    /// CSV: training (or full) data file.
    #[arg(long)]
    train_csv: Option<PathBuf>,
    /// CSV: separate test file.
    #[arg(long)]
    test_csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ActivationArg {
    Relu,
    Tanh,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum DatasetKind {
    Spirals,
    Blobs,
    Csv,
}

#[derive(Args)]
struct DetectArgs {
    /// Received signals, L × W̄ (one chunk per column).
    #[arg(long)]
    y: PathBuf,
    /// Access codebook, L × N.
    #[arg(long)]
    p: PathBuf,
    /// Noise variance.
    #[arg(long, conflicts_with = "snr_db")]
    sigma2: Option<f64>,
    /// Alternatively, the SNR in dB.
    #[arg(long)]
    snr_db: Option<f64>,
    /// Output file for x̂ (N × W̄).
    #[arg(long, short)]
    out: PathBuf,
    /// Optional per-sweep convergence trace (CSV).
    #[arg(long)]
    trace: Option<PathBuf>,
    #[command(flatten)]
    amp: AmpFlags,
}

#[derive(Args)]
struct CalibrateArgs {
    /// N
    #[arg(long, default_value_t = 256)]
    codewords: usize,
    /// L
    #[arg(long, default_value_t = 64)]
    seq_len: usize,
    #[arg(long, default_value_t = 7)]
    ka_min: usize,
    #[arg(long, default_value_t = 13)]
    ka_max: usize,
    #[arg(long, default_value_t = 20.0)]
    snr_db: f64,
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// W̄: chunks per trial.
    #[arg(long, default_value_t = 200)]
    chunks: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = CodebookArg::Gaussian)]
    codebook: CodebookArg,
    /// Also write the report here.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[command(flatten)]
    amp: AmpFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum CodebookArg {
    Gaussian,
    Orthonormal,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long, value_enum)]
    kind: ExportKind,
    /// N
    #[arg(long)]
    codewords: usize,
    /// L (uma only).
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// kmeans: matrix whose columns are the training samples.
    #[arg(long)]
    samples: Option<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    kmeans: KMeansFlags,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum ExportKind {
    /// i.i.d. N(0, 1/L) access codebook.
    Uma,
    /// Square orthonormal access codebook.
    Orthonormal,
    /// Quantization codebook trained by K-means on --samples.
    Kmeans,
}

fn parse_scheme(s: &str) -> std::result::Result<Scheme, String> {
    s.parse().map_err(|e: gdoac_core::Error| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Detect(args) => detect(args),
        Command::Calibrate(args) => calibrate(args),
        Command::ExportCodebook(args) => export_codebook(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: RunArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            ExperimentConfig::from_toml(&text, &path.display().to_string())?
        }
        None => ExperimentConfig::default(),
    };
    apply_overrides(&mut cfg, &args)?;
    let cfg = cfg.resolve()?;
    if args.dry_run {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    let (cfg, summaries) = experiment::run_experiment(cfg)?;
    for s in &summaries {
        let acc = s
            .final_accuracy
            .map_or_else(|| "-".to_string(), |a| format!("{a:.4}"));
        println!(
            "{:>5} seed {:<4} final accuracy {acc}  mean |Ka_hat - Ka| {:.2}  diverged chunks {}  -> {}",
            s.scheme,
            s.seed,
            s.mean_ka_error,
            s.diverged_chunks,
            s.path.display()
        );
    }
    println!("manifest: {}", cfg.out_dir.join(experiment::MANIFEST_FILE).display());
    Ok(())
}

fn apply_overrides(cfg: &mut ExperimentConfig, args: &RunArgs) -> Result<()> {
    macro_rules! set {
        ($dst:expr, $src:expr) => {
            if let Some(v) = $src.clone() {
                $dst = v;
            }
        };
    }
    set!(cfg.schemes, args.schemes);
    set!(cfg.seeds, args.seeds);
    if let Some(r) = args.repeats {
        cfg.repeats = r;
        if args.seeds.is_none() {
            cfg.seeds.clear();
        }
    }
    set!(cfg.out_dir, args.out_dir);
    set!(cfg.shard_fraction, args.shard_fraction);
    set!(cfg.test_fraction, args.test_fraction);

    let t = &args.trainer;
    let tr = &mut cfg.trainer;
    set!(tr.local_iters, t.local_iters);
    set!(tr.learning_rate, t.learning_rate);
    set!(tr.batch_size, t.batch_size);
    set!(tr.rounds, t.rounds);
    set!(tr.num_devices, t.num_devices);
    set!(tr.ka_min, t.ka_min);
    set!(tr.ka_max, t.ka_max);
    set!(tr.bits, t.bits);
    set!(tr.chunk_len, t.chunk_len);
    set!(tr.snr_db, t.snr_db);
    set!(tr.seed, t.seed);
    set!(tr.hidden, t.hidden);
    if let Some(step) = t.obda_step {
        tr.obda_step = Some(step);
    }
    if let Some(a) = t.activation {
        tr.activation = match a {
            ActivationArg::Relu => Activation::Relu,
            ActivationArg::Tanh => Activation::Tanh,
        };
    }
    if let Some(l) = t.seq_len {
        tr.seq_len = l;
        cfg.resource_matched = false;
    }
    set!(cfg.resource_matched, args.resource_matched);

    if args.amp.k_max.is_some() {
        cfg.k_max_from_population = false;
    }
    set!(cfg.k_max_from_population, args.k_max_from_population);
    args.amp.apply(&mut cfg.amp);
    args.kmeans.apply(&mut cfg.kmeans);
    apply_dataset(&mut cfg.dataset, &args.dataset)
}

impl AmpFlags {
    fn apply(&self, amp: &mut AmpParams) {
        if let Some(v) = self.amp_max_iters {
            amp.max_iters = v;
        }
        if let Some(v) = self.damping {
            amp.damping = v;
        }
        if let Some(v) = self.amp_tol {
            amp.tol = v;
        }
        if let Some(v) = self.k_max {
            amp.k_max = v;
        }
        if let Some(v) = self.a_init {
            amp.a_init = v;
        }
        if let Some(v) = self.variance_floor {
            amp.variance_floor = v;
        }
    }
}

impl KMeansFlags {
    fn apply(&self, km: &mut KMeansParams) {
        if let Some(v) = self.kmeans_max_iters {
            km.max_iters = v;
        }
        if let Some(v) = self.kmeans_tol {
            km.tol = v;
        }
        if let Some(v) = self.kmeans_seed {
            km.seed = v;
        }
    }
}

fn apply_dataset(spec: &mut DatasetSpec, f: &DatasetFlags) -> Result<()> {
    if let Some(kind) = f.dataset {
        let same = matches!(
            (kind, &*spec),
            (DatasetKind::Spirals, DatasetSpec::Spirals { .. })
                | (DatasetKind::Blobs, DatasetSpec::Blobs { .. })
                | (DatasetKind::Csv, DatasetSpec::Csv { .. })
        );
        if !same {
            *spec = match kind {
                DatasetKind::Spirals => DatasetSpec::default(),
                DatasetKind::Blobs => DatasetSpec::Blobs {
                    samples_per_class: 500,
                    classes: 2,
                    dim: 2,
                    separation: 2.0,
                    noise: 1.0,
                },
                DatasetKind::Csv => {
                    let path = f.train_csv.clone().context("--dataset csv requires --train-csv")?;
                    DatasetSpec::Csv { path, test_path: None }
                }
            };
        }
    }
    let misplaced = |flag: &str| bail!("--{flag} does not apply to the selected dataset");
    match spec {
        DatasetSpec::Spirals {
            samples_per_class,
            turns,
            noise,
        } => {
            if f.classes.is_some() || f.dim.is_some() || f.separation.is_some() {
                return misplaced("classes/dim/separation");
            }
            if f.train_csv.is_some() || f.test_csv.is_some() {
                return misplaced("train-csv/test-csv");
            }
            *samples_per_class = f.samples_per_class.unwrap_or(*samples_per_class);
            *turns = f.turns.unwrap_or(*turns);
            *noise = f.noise.unwrap_or(*noise);
        }
        DatasetSpec::Blobs {
            samples_per_class,
            classes,
            dim,
            separation,
            noise,
        } => {
            if f.turns.is_some() {
                return misplaced("turns");
            }
            if f.train_csv.is_some() || f.test_csv.is_some() {
                return misplaced("train-csv/test-csv");
            }
            *samples_per_class = f.samples_per_class.unwrap_or(*samples_per_class);
            *classes = f.classes.unwrap_or(*classes);
            *dim = f.dim.unwrap_or(*dim);
            *separation = f.separation.unwrap_or(*separation);
            *noise = f.noise.unwrap_or(*noise);
        }
        DatasetSpec::Csv { path, test_path } => {
            if f.samples_per_class.is_some() || f.turns.is_some() || f.noise.is_some() {
                return misplaced("samples-per-class/turns/noise");
            }
            if f.classes.is_some() || f.dim.is_some() || f.separation.is_some() {
                return misplaced("classes/dim/separation");
            }
            if let Some(p) = &f.train_csv {
                *path = p.clone();
            }
            if let Some(p) = &f.test_csv {
                *test_path = Some(p.clone());
            }
        }
    }
    Ok(())
}

fn detect(args: DetectArgs) -> Result<()> {
    let y = matrix_io::read(&args.y)?;
    let p = UmaCodebook::from_matrix(matrix_io::read(&args.p)?)
        .with_context(|| format!("{} is not a valid access codebook", args.p.display()))?;
    if y.rows() != p.seq_len() {
        bail!(
            "{} has {} rows but {} has sequence length {}",
            args.y.display(),
            y.rows(),
            args.p.display(),
            p.seq_len()
        );
    }
    let sigma2 = match (args.sigma2, args.snr_db) {
        (Some(s), _) => s,
        (None, Some(db)) => snr_to_sigma2(db),
        (None, None) => 0.0,
    };
    if !(sigma2 >= 0.0) {
        bail!("noise variance must be >= 0, got {sigma2}");
    }
    let mut params = AmpParams::default();
    args.amp.apply(&mut params);
    params.validate()?;

    let det = amp_da::detect_all(&y, &p, sigma2, &params)?;
    matrix_io::write(&args.out, &det.x_hat)?;

    if let Some(trace_path) = &args.trace {
        let mut csv = Vec::new();
        writeln!(csv, "{TRACE_CSV_HEADER}")?;
        for w in 0..y.cols() {
            let mut rows: Vec<TraceRow> = Vec::new();
            if let Err(e) = amp_da::detect_chunk_traced(y.col(w), &p, sigma2, &params, &mut rows) {
                log::warn!("chunk {w}: {e}");
            }
            amp_da::write_trace_csv(&mut csv, w, &rows)?;
        }
        matrix_io::write_atomic(trace_path, &csv)?;
    }

    let converged = det.converged.iter().filter(|&&c| c).count();
    eprintln!(
        "{} chunks: {converged} converged, {} diverged, mean sweeps {:.2}, Ka_hat {}",
        det.num_chunks(),
        det.diverged_count(),
        det.mean_iterations(),
        amp_da::estimate_ka(&det)
    );
    Ok(())
}

fn calibrate(args: CalibrateArgs) -> Result<()> {
    let cfg = CalibrationConfig {
        codewords: args.codewords,
        seq_len: args.seq_len,
        ka_min: args.ka_min,
        ka_max: args.ka_max,
        snr_db: args.snr_db,
        trials: args.trials,
        chunks: args.chunks,
        seed: args.seed,
        codebook: match args.codebook {
            CodebookArg::Gaussian => CodebookKind::Gaussian,
            CodebookArg::Orthonormal => CodebookKind::Orthonormal,
        },
    };
    let mut amp = AmpParams::default();
    args.amp.apply(&mut amp);
    let report = calibration::calibrate(&cfg, &amp)?;
    let text = report.render(&cfg, &amp);
    print!("{text}");
    if let Some(out) = &args.out {
        matrix_io::write_atomic(out, text.as_bytes())?;
    }
    Ok(())
}

fn export_codebook(args: ExportArgs) -> Result<()> {
    let entries = match args.kind {
        ExportKind::Uma => {
            let l = args.seq_len.context("--kind uma requires --seq-len")?;
            codebooks::generate_uma_codebook(args.codewords, l, args.seed)?.entries().clone()
        }
        ExportKind::Orthonormal => {
            if args.seq_len.is_some_and(|l| l != args.codewords) {
                bail!("an orthonormal codebook is square; drop --seq-len or set it to --codewords");
            }
            codebooks::generate_orthonormal_codebook(args.codewords, args.seed)?.entries().clone()
        }
        ExportKind::Kmeans => {
            let path = args.samples.as_deref().context("--kind kmeans requires --samples")?;
            kmeans_from_file(path, &args)?
        }
    };
    matrix_io::write(&args.out, &entries)?;
    Ok(())
}

fn kmeans_from_file(path: &Path, args: &ExportArgs) -> Result<gdoac_core::Matrix> {
    let samples = matrix_io::read(path)?;
    let mut params = KMeansParams {
        seed: args.seed,
        ..KMeansParams::default()
    };
    args.kmeans.apply(&mut params);
    let (codebook, report) = codebooks::kmeans_codebook(&samples, args.codewords, &params)?;
    eprintln!(
        "{} Lloyd iterations, final distortion {:.6e}, {} reseeded clusters",
        report.iterations,
        report.distortion.last().copied().unwrap_or(f64::NAN),
        report.reseeded
    );
    Ok(codebook.entries().clone())
}
