//! Digital over-the-air model aggregation for federated edge learning.
//!
//! Devices quantize their local model updates against a shared vector
//! quantization codebook, send each codeword index as a sequence drawn from a
//! shared non-orthogonal codebook, and the sequences superpose on a noisy
//! multiple access channel. The base station never learns who sent what: an
//! AMP detector recovers, per chunk, how many devices picked each codeword,
//! which is all that is needed to form the average update.
//!
//! Module map:
//!
//! * [`codebooks`]: K-means quantization codebook and Gaussian access codebook.
//! * [`quantizer`]: reshape, quantize and reconstruct model updates.
//! * [`mac_channel`]: count vectors and the superposed noisy channel.
//! * [`amp_da`]: AMP detection, active-device estimation and aggregation.
//! * [`feel`]: the federated training loop, MLP, datasets and baselines.
//! * [`calibration`]: Monte-Carlo detector benchmark.
//! * [`experiment`]: seeded sweeps writing metrics CSVs and a manifest.
//! * [`matrix_io`]: plain-text matrix exchange format.

pub mod amp_da;
pub mod calibration;
pub mod codebooks;
pub mod error;
pub mod experiment;
pub mod feel;
pub mod mac_channel;
pub mod matrix;
pub mod matrix_io;
pub mod quantizer;
pub mod seed;

pub use error::{Error, Result};
pub use matrix::Matrix;
