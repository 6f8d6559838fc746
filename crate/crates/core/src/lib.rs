//! Blind separation of polyphonic music into instrument tracks.
//!
//! The pipeline runs a Gaussian-window STFT, converts each frame to a
//! log-frequency spectrum by sparse pursuit of spectral lines, learns a
//! dictionary of pitch-invariant harmonic profiles from random frames, and
//! finally separates the mixture by identifying each frame with the learned
//! instruments and resynthesizing per-instrument signals.

pub mod commands;
pub mod config;
pub mod dictionary;
pub mod error;
pub mod fixture;
pub mod logspec;
pub mod metrics;
pub mod optim;
pub mod parallel;
pub mod pursuit;
pub mod separate;
pub mod signal;
pub mod stft;

pub use error::{Error, Result};
pub use parallel::Execution;
pub use signal::AudioClip;
