//! Design and verification toolkit for heralded two-mode `n`-photon qudit
//! states prepared from weak two-mode squeezing, linear optics and photon
//! detection.
//!
//! The crate is organised bottom-up:
//!
//! - [`fock`]: sparse multimode Fock-space states and density matrices.
//! - [`optics`]: beam splitters, phase shifters, displacements, circuits.
//! - [`factor`]: target state to beam-splitter recipe via polynomial
//!   factorization, plus the multivariate least-squares probe.
//! - [`herald`]: heralded output states two ways (closed form and full
//!   truncated circuit simulation) and loss-code checks.
//! - [`sample`]: Monte Carlo heralding-event statistics.
//! - [`tomo`]: loss channel, two-mode homodyne sampling and maximum-likelihood
//!   reconstruction.
//! - [`presets`]: named target states used throughout the tests and the CLI.

pub mod error;
mod math;
pub mod factor;
pub mod fock;
pub mod herald;
pub mod optics;
pub mod presets;
pub mod sample;
pub mod serde_complex;
pub mod stats;
pub mod tomo;

pub use error::{Error, Result};
pub use num_complex::Complex64;
