//! Training objective: a phase-constrained magnitude loss computed in the
//! time-frequency domain over both the enhanced speech and the implied noise
//! estimate.
//!
//! With `n_hat = y - s_hat` and `n = y - s`:
//!
//! ```text
//! loss = 0.5 * L(s, s_hat) + 0.5 * L(n, n_hat)
//! L(a, b) = mean over (t, f) of | |Ar| - |Br| | + | |Ai| - |Bi| |
//! ```
//!
//! where `Ar`/`Ai` are the one-sided STFT real and imaginary parts. The STFT
//! is a fixed-matrix DFT so the loss differentiates as plain matrix algebra.

use crate::audio::AudioBuffer;
use crate::autodiff::{Tape, TensorId};
use crate::dsp::{stft, WindowKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LossConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub window: WindowKind,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            fft_size: 512,
            hop: 256,
            window: WindowKind::HammingPeriodic,
        }
    }
}

impl LossConfig {
    /// Small geometry for gradient checks on short toy signals.
    pub fn toy() -> Self {
        LossConfig {
            fft_size: 64,
            hop: 32,
            window: WindowKind::HammingPeriodic,
        }
    }
}

/// Mean L1 distance between the component magnitudes of two spectrograms.
fn spectral_component_l1(a: &[f64], b: &[f64], cfg: &LossConfig, sample_rate: u32) -> Result<f64> {
    let buf_a = AudioBuffer::new(a.to_vec(), sample_rate);
    let buf_b = AudioBuffer::new(b.to_vec(), sample_rate);
    let spec_a = stft(&buf_a, cfg.fft_size, cfg.hop, cfg.window)?;
    let spec_b = stft(&buf_b, cfg.fft_size, cfg.hop, cfg.window)?;
    let count = (spec_a.num_frames() * spec_a.num_bins()) as f64;
    let mut total = 0.0;
    for (ar, br) in spec_a.real.iter().zip(spec_b.real.iter()) {
        total += (ar.abs() - br.abs()).abs();
    }
    for (ai, bi) in spec_a.imag.iter().zip(spec_b.imag.iter()) {
        total += (ai.abs() - bi.abs()).abs();
    }
    Ok(total / count)
}

/// Evaluate the loss on plain buffers (no gradients). `y` and `s` must be the
/// aligned mixture and clean target with `y = s + n`.
pub fn pcm_loss(
    s_hat: &AudioBuffer,
    s: &AudioBuffer,
    y: &AudioBuffer,
    cfg: &LossConfig,
) -> Result<f64> {
    if s_hat.len() != s.len() {
        return Err(Error::LengthMismatch(s_hat.len(), s.len()));
    }
    if s.len() != y.len() {
        return Err(Error::LengthMismatch(s.len(), y.len()));
    }
    let n_hat: Vec<f64> = y
        .samples
        .iter()
        .zip(&s_hat.samples)
        .map(|(yv, sv)| yv - sv)
        .collect();
    let n: Vec<f64> = y
        .samples
        .iter()
        .zip(&s.samples)
        .map(|(yv, sv)| yv - sv)
        .collect();
    let speech = spectral_component_l1(&s.samples, &s_hat.samples, cfg, s.sample_rate)?;
    let noise = spectral_component_l1(&n, &n_hat, cfg, s.sample_rate)?;
    Ok(0.5 * speech + 0.5 * noise)
}

/// Spectral component magnitudes of a signal node: framing, windowing, then
/// the fixed DFT bases as constant matmuls. Returns (|real|, |imag|) nodes.
fn component_magnitudes_on_tape(
    tape: &mut Tape,
    signal: TensorId,
    cfg: &LossConfig,
) -> (TensorId, TensorId) {
    let frames = tape.signal_to_frames(signal, cfg.fft_size, cfg.hop);
    let num_frames = tape.shape(frames).0;
    let window = tape.constant_row(&cfg.window.values(cfg.fft_size));
    let window_rows = tape.broadcast_rows(window, num_frames);
    let windowed = tape.mul(frames, window_rows);

    let (cos_basis, sin_basis) = crate::dsp::dft_bases(cfg.fft_size);
    let cos_id = tape.constant(cos_basis);
    let sin_id = tape.constant(sin_basis);
    let real = tape.matmul(windowed, cos_id);
    let imag = tape.matmul(windowed, sin_id);
    (tape.abs(real), tape.abs(imag))
}

/// L1 between a node's component magnitudes and precomputed target
/// magnitudes, averaged over the time-frequency plane.
fn spectral_l1_on_tape(
    tape: &mut Tape,
    estimate: TensorId,
    target: &[f64],
    cfg: &LossConfig,
    sample_rate: u32,
) -> Result<TensorId> {
    let (est_re, est_im) = component_magnitudes_on_tape(tape, estimate, cfg);
    let target_buf = AudioBuffer::new(target.to_vec(), sample_rate);
    let spec = stft(&target_buf, cfg.fft_size, cfg.hop, cfg.window)?;
    let tgt_re = tape.constant(spec.real.mapv(f64::abs));
    let tgt_im = tape.constant(spec.imag.mapv(f64::abs));
    let d_re = tape.sub(est_re, tgt_re);
    let d_re = tape.abs(d_re);
    let d_im = tape.sub(est_im, tgt_im);
    let d_im = tape.abs(d_im);
    let total = tape.add(d_re, d_im);
    Ok(tape.mean(total))
}

/// Build the differentiable loss for a 1 x M enhanced-signal node against the
/// plain clean/mixture pair.
pub fn pcm_loss_on_tape(
    tape: &mut Tape,
    s_hat: TensorId,
    s: &[f64],
    y: &[f64],
    cfg: &LossConfig,
    sample_rate: u32,
) -> Result<TensorId> {
    let est_len = tape.shape(s_hat).1;
    if est_len != s.len() {
        return Err(Error::LengthMismatch(est_len, s.len()));
    }
    if s.len() != y.len() {
        return Err(Error::LengthMismatch(s.len(), y.len()));
    }
    let y_id = tape.constant_row(y);
    let n_hat = tape.sub(y_id, s_hat);
    let n: Vec<f64> = y.iter().zip(s).map(|(yv, sv)| yv - sv).collect();

    let speech = spectral_l1_on_tape(tape, s_hat, s, cfg, sample_rate)?;
    let noise = spectral_l1_on_tape(tape, n_hat, &n, cfg, sample_rate)?;
    let speech_half = tape.scale(speech, 0.5);
    let noise_half = tape.scale(noise, 0.5);
    Ok(tape.add(speech_half, noise_half))
}
