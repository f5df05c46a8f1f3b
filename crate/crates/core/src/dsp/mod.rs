//! Signal-processing primitives: framing, overlap-add, STFT/ISTFT, the
//! log-Mel feature pipeline and RMS normalization.

mod features;
mod stft;

pub use features::{
    append_deltas, log_mel_features, log_mel_features_with, mel_filterbank, read_features,
    write_features, FeatureConfig, FeatureMatrix,
};
pub(crate) use stft::dft_bases;
pub use stft::{istft, stft, Spectrogram};

use ndarray::Array2;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Analysis window shapes used by the STFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowKind {
    /// Periodic Hamming: `0.54 - 0.46 cos(2 pi n / N)`.
    HammingPeriodic,
    /// All ones.
    Rectangular,
    /// Periodic Hann: `0.5 - 0.5 cos(2 pi n / N)`.
    HannPeriodic,
}

impl WindowKind {
    pub fn values(self, len: usize) -> Vec<f64> {
        match self {
            WindowKind::Rectangular => vec![1.0; len],
            WindowKind::HammingPeriodic => (0..len)
                .map(|n| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
                .collect(),
            WindowKind::HannPeriodic => (0..len)
                .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
                .collect(),
        }
    }
}

/// Overlapping frames cut from a signal, plus the geometry needed to undo it.
#[derive(Debug, Clone)]
pub struct FrameMatrix {
    /// T x L, frame `t` covering samples `[t*hop, t*hop + frame_len)`.
    pub frames: Array2<f64>,
    pub frame_len: usize,
    pub hop: usize,
    /// Length of the signal before tail padding.
    pub orig_len: usize,
    pub sample_rate: u32,
}

impl FrameMatrix {
    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }
}

/// Number of frames produced by [`frame_signal`] for a signal of `len` samples.
pub fn frame_count(len: usize, frame_len: usize, hop: usize) -> usize {
    if len <= frame_len {
        1
    } else {
        let over = len - frame_len;
        over / hop + if over % hop == 0 { 0 } else { 1 } + 1
    }
}

/// Chunk a signal into overlapping frames, zero-padding the tail so the last
/// frame is full.
pub fn frame_signal(x: &AudioBuffer, frame_len: usize, hop: usize) -> Result<FrameMatrix> {
    if x.is_empty() {
        return Err(Error::EmptySignal);
    }
    if frame_len == 0 || hop == 0 || hop > frame_len {
        return Err(Error::HopExceedsFrame { hop, frame_len });
    }
    let num_frames = frame_count(x.len(), frame_len, hop);
    let mut frames = Array2::zeros((num_frames, frame_len));
    for t in 0..num_frames {
        let start = t * hop;
        for i in 0..frame_len {
            if start + i < x.len() {
                frames[[t, i]] = x.samples[start + i];
            }
        }
    }
    Ok(FrameMatrix {
        frames,
        frame_len,
        hop,
        orig_len: x.len(),
        sample_rate: x.sample_rate,
    })
}

/// Reconstruct a signal from overlapping frames; each sample is the mean of
/// all frame values covering it. Truncates to the original length.
pub fn overlap_add(fm: &FrameMatrix) -> AudioBuffer {
    let samples = overlap_add_raw(&fm.frames, fm.hop, fm.orig_len);
    AudioBuffer::new(samples, fm.sample_rate)
}

pub(crate) fn overlap_add_raw(frames: &Array2<f64>, hop: usize, orig_len: usize) -> Vec<f64> {
    let (num_frames, frame_len) = frames.dim();
    let padded = (num_frames - 1) * hop + frame_len;
    let mut acc = vec![0.0; padded];
    let mut count = vec![0u32; padded];
    for t in 0..num_frames {
        let start = t * hop;
        for i in 0..frame_len {
            acc[start + i] += frames[[t, i]];
            count[start + i] += 1;
        }
    }
    let keep = orig_len.min(padded);
    (0..keep).map(|j| acc[j] / f64::from(count[j])).collect()
}

/// Per-sample overlap counts for the given framing geometry; the OLA divisor.
pub fn overlap_counts(num_frames: usize, frame_len: usize, hop: usize) -> Vec<u32> {
    let padded = (num_frames - 1) * hop + frame_len;
    let mut count = vec![0u32; padded];
    for t in 0..num_frames {
        for i in 0..frame_len {
            count[t * hop + i] += 1;
        }
    }
    count
}

/// Scale a signal so its RMS equals `target_rms`.
pub fn rms_normalize(x: &AudioBuffer, target_rms: f64) -> Result<AudioBuffer> {
    let current = x.rms();
    if current == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    let gain = target_rms / current;
    Ok(AudioBuffer::new(
        x.samples.iter().map(|&v| v * gain).collect(),
        x.sample_rate,
    ))
}
