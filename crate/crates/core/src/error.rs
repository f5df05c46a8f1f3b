use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the enhancement toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed wav header: {0}")]
    MalformedWav(String),

    #[error("unsupported channel count: {0} (expected mono)")]
    UnsupportedChannels(u16),

    #[error("unsupported bit depth: {0} (expected 16-bit pcm)")]
    UnsupportedBitDepth(u16),

    #[error("unsupported compression: wav format tag {0} (expected pcm)")]
    UnsupportedCompression(u16),

    #[error("empty signal")]
    EmptySignal,

    #[error("hop {hop} exceeds frame length {frame_len}")]
    HopExceedsFrame { hop: usize, frame_len: usize },

    #[error("non-invertible framing: squared-window overlap-add sum below 1e-8 at sample {0}")]
    NonInvertibleFraming(usize),

    #[error("zero-energy signal")]
    ZeroEnergy,

    #[error("signal length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("signal too short: {0}")]
    TooShort(String),

    #[error("sample rate mismatch: {0} Hz vs {1} Hz")]
    SampleRateMismatch(u32, u32),

    #[error("unsupported sample rate: {0} Hz ({1})")]
    UnsupportedSampleRate(u32, String),

    #[error("non-finite value in forward pass: {0}")]
    NonFiniteForward(String),

    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),

    #[error("loss must be a scalar, got shape {0}x{1}")]
    NonScalarLoss(usize, usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("malformed feature file: {0}")]
    MalformedFeatureFile(String),

    #[error("malformed manifest: {0}")]
    MalformedManifest(String),

    #[error("empty corpus directory: {0}")]
    EmptyCorpusDir(PathBuf),

    #[error("noise shorter than utterance ({noise} < {utterance} samples) and looping is disabled")]
    NoiseTooShort { noise: usize, utterance: usize },

    #[error("empty epoch log")]
    EmptyLog,

    #[error("epoch {0} out of range 1..={1}")]
    EpochOutOfRange(usize, usize),

    #[error("empty reference transcript")]
    EmptyReference,

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
