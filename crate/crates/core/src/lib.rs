//! Time-domain speech enhancement toolkit.
//!
//! End-to-end pieces of a speech enhancement frontend at desk scale: SNR-
//! controlled corpus mixing, an attentive recurrent network trained with a
//! phase-constrained magnitude loss, overlap-add inference, checkpoint
//! selection by validation loss or validation STOI, and the evaluation
//! metrics (STOI, SNR, WER) plus the log-Mel feature pipeline a downstream
//! recognizer consumes.

pub mod arn;
pub mod audio;
pub mod autodiff;
pub mod dsp;
pub mod error;
pub mod metrics;
pub mod mix;
pub mod objective;
pub mod train;

pub use audio::AudioBuffer;
pub use error::{Error, Result};
