//! Reconstruction of hyperspectral cubes from an RGB image plus sparse
//! point spectra, with every numeric layer checked against an independent
//! oracle: tensors with a reverse-mode tape, an eigenbasis fractional
//! Fourier transform, selective state-space scans, Gamma-modeled spectra
//! synthesis, the prompt-extraction neck and state-space network, losses
//! and metrics, synthetic data generation, and the training/eval drivers.

pub mod check;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod drpn;
pub mod error;
pub mod frft;
pub mod network;
pub mod objectives;
pub mod params;
pub mod rng;
pub mod run;
pub mod spectra;
pub mod ssm;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{Dtype, Gradients, OptimizerState, Tape, Tensor, VarId};
