//! Scanning quantum decoherence microscopy simulator.
//!
//! A weakly measured probe qubit is rastered over a synthetic sample
//! (1/f charge-fluctuator baths, mesoscopic dipolar spins). At each pixel
//! the probe's effective Hamiltonian shift and decoherence rate are either
//! evaluated in closed form or recovered from a simulated ±1 measurement
//! record via its autocorrelation spectrum.

// `!(x > 0.0)` is used deliberately so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod constants;
pub mod error;
pub mod fit;
pub mod measurement;
pub mod output;
pub mod presets;
pub mod qubit;
pub mod rng;
pub mod sample;
pub mod scanner;
pub mod scene;
pub mod spectral;
pub mod units;

pub use error::{QdmError, Result};
