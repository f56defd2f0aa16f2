//! Python bindings. Matrices cross the boundary as lists of rows.

use gdoac_core::amp_da::{self, AmpParams};
use gdoac_core::calibration::{self, CalibrationConfig, CodebookKind};
use gdoac_core::codebooks::{self, KMeansParams, QuantizationCodebook, UmaCodebook};
use gdoac_core::experiment::{self, ExperimentConfig};
use gdoac_core::mac_channel::{self, ChannelParams};
use gdoac_core::quantizer::{self, QuantizedUpdate};
use gdoac_core::Matrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: gdoac_core::Error) -> PyErr {
    match e {
        gdoac_core::Error::Io(_) | gdoac_core::Error::Diverged { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Matrix> {
    Matrix::from_rows(&rows).map_err(err)
}

fn from_matrix(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|r| m.row(r)).collect()
}

/// Detector settings.
#[pyclass(name = "AmpParams", get_all, set_all, from_py_object)]
#[derive(Clone)]
struct PyAmpParams {
    max_iters: usize,
    damping: f64,
    tol: f64,
    k_max: u32,
    a_init: f64,
    variance_floor: f64,
}

#[pymethods]
impl PyAmpParams {
    #[new]
    #[pyo3(signature = (k_max = None, damping = None, tol = None, max_iters = None))]
    fn new(k_max: Option<u32>, damping: Option<f64>, tol: Option<f64>, max_iters: Option<usize>) -> Self {
        let d = AmpParams::default();
        Self {
            max_iters: max_iters.unwrap_or(d.max_iters),
            damping: damping.unwrap_or(d.damping),
            tol: tol.unwrap_or(d.tol),
            k_max: k_max.unwrap_or(d.k_max),
            a_init: d.a_init,
            variance_floor: d.variance_floor,
        }
    }

    fn __repr__(&self) -> String {
        format!(
            "AmpParams(k_max={}, damping={}, tol={}, max_iters={})",
            self.k_max, self.damping, self.tol, self.max_iters
        )
    }
}

impl PyAmpParams {
    fn core(&self) -> AmpParams {
        AmpParams {
            max_iters: self.max_iters,
            damping: self.damping,
            tol: self.tol,
            k_max: self.k_max,
            a_init: self.a_init,
            variance_floor: self.variance_floor,
        }
    }
}

fn amp_or_default(p: Option<PyAmpParams>) -> AmpParams {
    p.map_or_else(AmpParams::default, |p| p.core())
}

/// Codeword indices of one quantized update.
#[pyclass(name = "QuantizedUpdate", get_all, from_py_object)]
#[derive(Clone)]
struct PyQuantizedUpdate {
    indices: Vec<usize>,
    pad_len: usize,
}

#[pymethods]
impl PyQuantizedUpdate {
    #[new]
    fn new(indices: Vec<usize>, pad_len: usize) -> Self {
        Self { indices, pad_len }
    }

    fn __len__(&self) -> usize {
        self.indices.len()
    }
}

impl PyQuantizedUpdate {
    fn core(&self) -> QuantizedUpdate {
        QuantizedUpdate {
            indices: self.indices.clone(),
            pad_len: self.pad_len,
        }
    }
}

/// Gaussian access codebook, L × N.
#[pyfunction]
fn generate_uma_codebook(n: usize, l: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    Ok(from_matrix(codebooks::generate_uma_codebook(n, l, seed).map_err(err)?.entries()))
}

/// Square orthonormal access codebook, N × N.
#[pyfunction]
fn generate_orthonormal_codebook(n: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    Ok(from_matrix(codebooks::generate_orthonormal_codebook(n, seed).map_err(err)?.entries()))
}

/// K-means quantization codebook (Q × N) from samples given as Q × M.
#[pyfunction]
#[pyo3(signature = (samples, n, seed = 0, max_iters = 50, tol = 1e-6))]
fn kmeans_codebook(samples: Vec<Vec<f64>>, n: usize, seed: u64, max_iters: usize, tol: f64) -> PyResult<Vec<Vec<f64>>> {
    let params = KMeansParams {
        seed,
        max_iters,
        tol,
        ..KMeansParams::default()
    };
    let (u, _) = codebooks::kmeans_codebook(&to_matrix(samples)?, n, &params).map_err(err)?;
    Ok(from_matrix(u.entries()))
}

fn quant_codebook(u: Vec<Vec<f64>>) -> PyResult<QuantizationCodebook> {
    QuantizationCodebook::from_matrix(to_matrix(u)?).map_err(err)
}

fn uma_codebook(p: Vec<Vec<f64>>) -> PyResult<UmaCodebook> {
    UmaCodebook::from_matrix(to_matrix(p)?).map_err(err)
}

#[pyfunction]
fn quantize_update(g: Vec<f64>, codebook: Vec<Vec<f64>>) -> PyResult<PyQuantizedUpdate> {
    let q = quantizer::quantize_update(&g, &quant_codebook(codebook)?).map_err(err)?;
    Ok(PyQuantizedUpdate {
        indices: q.indices,
        pad_len: q.pad_len,
    })
}

#[pyfunction]
fn dequantize(update: PyQuantizedUpdate, codebook: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    quantizer::dequantize(&update.core(), &quant_codebook(codebook)?).map_err(err)
}

/// Posterior (mean, variance, P(x >= 1)) of x ∈ {0..k_max} given r = x + N(0, phi).
#[pyfunction]
fn denoise_posterior(r: f64, phi: f64, a: f64, k_max: u32) -> (f64, f64, f64) {
    let p = amp_da::denoise_posterior(r, phi, a, k_max);
    (p.mean, p.var, p.p_nonzero)
}

/// Superimposes every device's sequences; returns (Y as L × W̄ rows, true counts as N × W̄ rows).
#[pyfunction]
#[pyo3(signature = (updates, p, snr_db = f64::INFINITY, seed = 0))]
fn transmit_round(
    updates: Vec<PyQuantizedUpdate>,
    p: Vec<Vec<f64>>,
    snr_db: f64,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let p = uma_codebook(p)?;
    let quantized: Vec<QuantizedUpdate> = updates.iter().map(|u| u.core()).collect();
    let ch = ChannelParams::from_snr_db(snr_db, seed).map_err(err)?;
    let (rx, truth) = mac_channel::transmit_round(&quantized, &p, &ch).map_err(err)?;
    let cols: Vec<Vec<f64>> = truth
        .counts
        .iter()
        .map(|x| x.counts.iter().map(|&c| c as f64).collect())
        .collect();
    let counts = Matrix::from_columns(p.len(), &cols).map_err(err)?;
    Ok((from_matrix(&rx.y), from_matrix(&counts)))
}

/// Detects one chunk; returns (x̂, sweeps, converged).
#[pyfunction]
#[pyo3(signature = (y, p, sigma2 = 0.0, params = None))]
fn detect_chunk(
    y: Vec<f64>,
    p: Vec<Vec<f64>>,
    sigma2: f64,
    params: Option<PyAmpParams>,
) -> PyResult<(Vec<f64>, usize, bool)> {
    let d = amp_da::detect_chunk(&y, &uma_codebook(p)?, sigma2, &amp_or_default(params)).map_err(err)?;
    Ok((d.x_hat, d.iterations, d.converged))
}

/// Detects every column of Y (L × W̄); returns a dict with x_hat (N × W̄),
/// ka_hat, converged and iterations.
#[pyfunction]
#[pyo3(signature = (y, p, sigma2 = 0.0, params = None))]
fn detect_all<'py>(
    py: Python<'py>,
    y: Vec<Vec<f64>>,
    p: Vec<Vec<f64>>,
    sigma2: f64,
    params: Option<PyAmpParams>,
) -> PyResult<Bound<'py, PyDict>> {
    let y = to_matrix(y)?;
    let p = uma_codebook(p)?;
    let amp = amp_or_default(params);
    let det = py.detach(|| amp_da::detect_all(&y, &p, sigma2, &amp)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("x_hat", from_matrix(&det.x_hat))?;
    out.set_item("ka_hat", amp_da::estimate_ka(&det))?;
    out.set_item("converged", det.converged.clone())?;
    out.set_item("iterations", det.iterations.clone())?;
    out.set_item("diverged", det.diverged_count())?;
    Ok(out)
}

/// Monte-Carlo recovery benchmark; returns the rendered report.
#[pyfunction]
#[pyo3(signature = (codewords = 256, seq_len = 64, ka_min = 7, ka_max = 13, snr_db = 20.0,
                    trials = 200, chunks = 200, seed = 0, orthonormal = false, params = None))]
#[allow(clippy::too_many_arguments)]
fn calibrate(
    py: Python<'_>,
    codewords: usize,
    seq_len: usize,
    ka_min: usize,
    ka_max: usize,
    snr_db: f64,
    trials: usize,
    chunks: usize,
    seed: u64,
    orthonormal: bool,
    params: Option<PyAmpParams>,
) -> PyResult<String> {
    let cfg = CalibrationConfig {
        codewords,
        seq_len,
        ka_min,
        ka_max,
        snr_db,
        trials,
        chunks,
        seed,
        codebook: if orthonormal {
            CodebookKind::Orthonormal
        } else {
            CodebookKind::Gaussian
        },
    };
    let amp = amp_or_default(params);
    let rep = py.detach(|| calibration::calibrate(&cfg, &amp)).map_err(err)?;
    Ok(rep.render(&cfg, &amp))
}

/// Runs an experiment described by a TOML string and returns the resolved
/// manifest plus one (scheme, seed, csv path, final accuracy) tuple per run.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_toml: &str) -> PyResult<(String, Vec<(String, u64, String, Option<f64>)>)> {
    let cfg = ExperimentConfig::from_toml(config_toml, "<python>").map_err(err)?;
    let (cfg, summaries) = py.detach(|| experiment::run_experiment(cfg)).map_err(err)?;
    let runs = summaries
        .into_iter()
        .map(|s| (s.scheme.to_string(), s.seed, s.path.display().to_string(), s.final_accuracy))
        .collect();
    Ok((cfg.to_toml().map_err(err)?, runs))
}

/// Fully resolved default experiment configuration as TOML.
#[pyfunction]
fn default_experiment_config() -> PyResult<String> {
    ExperimentConfig::default().resolve().and_then(|c| c.to_toml()).map_err(err)
}

#[pymodule]
fn gdoac(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyAmpParams>()?;
    m.add_class::<PyQuantizedUpdate>()?;
    m.add_function(wrap_pyfunction!(generate_uma_codebook, m)?)?;
    m.add_function(wrap_pyfunction!(generate_orthonormal_codebook, m)?)?;
    m.add_function(wrap_pyfunction!(kmeans_codebook, m)?)?;
    m.add_function(wrap_pyfunction!(quantize_update, m)?)?;
    m.add_function(wrap_pyfunction!(dequantize, m)?)?;
    m.add_function(wrap_pyfunction!(denoise_posterior, m)?)?;
    m.add_function(wrap_pyfunction!(transmit_round, m)?)?;
    m.add_function(wrap_pyfunction!(detect_chunk, m)?)?;
    m.add_function(wrap_pyfunction!(detect_all, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(default_experiment_config, m)?)?;
    Ok(())
}
