use gdoac_core::amp_da::{self, AmpParams, DetectionResult};
use gdoac_core::calibration::{self, CalibrationConfig};
use gdoac_core::codebooks::{self, generate_uma_codebook, KMeansParams, QuantizationCodebook};
use gdoac_core::experiment::{self, DatasetSpec, ExperimentConfig};
use gdoac_core::feel::{self, Scheme, TrainerConfig};
use gdoac_core::mac_channel::{self, ChannelParams};
use gdoac_core::quantizer::{self, QuantizedUpdate};
use gdoac_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn calibration_exact_rate_regression() {
    // First 60 trials of the default benchmark; the full run measured 0.8609.
    let cfg = CalibrationConfig {
        trials: 60,
        ..CalibrationConfig::default()
    };
    let amp = AmpParams {
        k_max: 20,
        ..AmpParams::default()
    };
    let rep = calibration::calibrate(&cfg, &amp).unwrap();
    assert!(
        rep.exact_recovery.value >= 0.8609 - 0.03,
        "exact recovery {:.4}",
        rep.exact_recovery.value
    );
    assert!(rep.ka_accuracy.value >= 0.95);
}

#[test]
fn noiseless_round_converges_everywhere() {
    let (n, l, chunks) = (64, 48, 100);
    let p = generate_uma_codebook(n, l, 77).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let quantized: Vec<QuantizedUpdate> = (0..4)
        .map(|_| QuantizedUpdate {
            indices: (0..chunks).map(|_| rng.random_range(0..n)).collect(),
            pad_len: 0,
        })
        .collect();
    let ch = ChannelParams::from_snr_db(f64::INFINITY, 0).unwrap();
    let (rx, truth) = mac_channel::transmit_round(&quantized, &p, &ch).unwrap();
    let amp = AmpParams {
        k_max: 4,
        ..AmpParams::default()
    };
    let det = amp_da::detect_all(&rx.y, &p, 0.0, &amp).unwrap();
    assert_eq!(det.num_chunks(), chunks);
    assert!(det.converged.iter().all(|&c| c), "{} converged", det.converged.iter().filter(|&&c| c).count());
    assert_eq!(det.diverged_count(), 0);
    assert_eq!(amp_da::estimate_ka(&det), 4);
    assert_eq!(feel::exact_recovery_rate(&det, &truth), 1.0);
}

#[test]
fn aggregate_of_true_counts_is_perfect_aggregate() {
    let (q, bits, ka) = (3, 4, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let samples = Matrix::from_col_major(q, 64, (0..q * 64).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let (u, _) = codebooks::kmeans_codebook(&samples, 1 << bits, &KMeansParams::default()).unwrap();
    let w = 40; // not a multiple of Q, so there is a pad
    let quantized: Vec<QuantizedUpdate> = (0..ka)
        .map(|_| {
            let g: Vec<f64> = (0..w).map(|_| rng.random_range(-1.0..1.0)).collect();
            quantizer::quantize_update(&g, &u).unwrap()
        })
        .collect();
    let p = generate_uma_codebook(u.len(), 8, 6).unwrap();
    let ch = ChannelParams::from_snr_db(f64::INFINITY, 0).unwrap();
    let (_, truth) = mac_channel::transmit_round(&quantized, &p, &ch).unwrap();
    let cols: Vec<Vec<f64>> = truth
        .counts
        .iter()
        .map(|x| x.counts.iter().map(|&c| c as f64).collect())
        .collect();
    let chunks = cols.len();
    let det = DetectionResult {
        x_hat: Matrix::from_columns(u.len(), &cols).unwrap(),
        iterations: vec![1; chunks],
        converged: vec![true; chunks],
        diverged: vec![false; chunks],
        final_rel_change: vec![0.0; chunks],
    };
    let got = amp_da::aggregate(&det, &u, ka, quantized[0].pad_len).unwrap();
    let want = feel::perfect_aggregate(&quantized, &u).unwrap();
    assert_eq!(got.len(), w);
    for (a, b) in got.iter().zip(&want) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
    }
}

fn distortion(samples: &Matrix, u: &QuantizationCodebook) -> f64 {
    samples
        .columns()
        .map(|c| {
            let n = codebooks::nearest_codeword(c, u).unwrap();
            c.iter().zip(u.codeword(n)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
        })
        .sum()
}

#[test]
fn refreshed_codebook_beats_random_subset() {
    let (q, bits) = (4, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let leader: Vec<f64> = (0..q * 300).map(|_| rng.random_range(-1.0..1.0f64).powi(3)).collect();
    let other: Vec<f64> = vec![0.0; leader.len()];
    let u = feel::refresh_codebook(&[(3, &other), (1, &leader)], bits, q, &KMeansParams::default()).unwrap();
    let (samples, _) = quantizer::reshape_update(&leader, q).unwrap();
    let trained = distortion(&samples, &u);
    for trial in 0..20 {
        let mut r = ChaCha8Rng::seed_from_u64(100 + trial);
        let pick = rand::seq::index::sample(&mut r, samples.cols(), 1 << bits);
        let cols: Vec<&[f64]> = pick.iter().map(|i| samples.col(i)).collect();
        let random = QuantizationCodebook::from_matrix(Matrix::from_columns(q, &cols).unwrap()).unwrap();
        assert!(trained <= distortion(&samples, &random), "trial {trial}");
    }
}

#[test]
fn short_training_beats_majority_class() {
    let mut wins = 0;
    for seed in 0..5 {
        let cfg = ExperimentConfig {
            schemes: vec![Scheme::Pa],
            trainer: TrainerConfig {
                rounds: 30,
                num_devices: 20,
                ka_min: 3,
                ka_max: 6,
                bits: 4,
                hidden: vec![24, 24],
                ..TrainerConfig::default()
            },
            dataset: DatasetSpec::Spirals {
                samples_per_class: 300,
                turns: 1.0,
                noise: 0.05,
            },
            ..ExperimentConfig::default()
        }
        .resolve()
        .unwrap();
        let rows = experiment::run_single(&cfg, Scheme::Pa, seed).unwrap();
        let (_, test) = cfg.dataset.load(cfg.test_fraction, seed).unwrap();
        let hist = test.class_histogram();
        let majority = *hist.iter().max().unwrap() as f64 / test.len() as f64;
        if rows.last().unwrap().test_accuracy > majority {
            wins += 1;
        }
    }
    assert!(wins >= 4, "{wins}/5 seeds beat the majority class");
}
