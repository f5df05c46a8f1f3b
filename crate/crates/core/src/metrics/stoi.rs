//! Short-time objective intelligibility.
//!
//! Procedure: resample both signals to 10 kHz; drop frames more than 40 dB
//! below the loudest clean frame; take one-sided 512-point spectra of
//! Hann-windowed 256-sample frames at hop 128; group bins into 15 one-third-
//! octave bands (lowest center 150 Hz); over every 30-frame segment, normalize
//! the processed band envelope to the clean energy, clip it, and correlate;
//! the score is the mean correlation over bands and segments.
//!
//! All constants live in this table so the implementation can be audited
//! against a reference in one place.

use ndarray::Array2;

use crate::audio::AudioBuffer;
use crate::dsp::WindowKind;
use crate::error::{Error, Result};
use crate::metrics::resample::resample;

/// Internal processing rate.
pub const STOI_SAMPLE_RATE: u32 = 10_000;
/// Analysis frame length in samples at 10 kHz.
pub const STOI_FRAME_LEN: usize = 256;
/// Frame hop in samples.
pub const STOI_HOP: usize = 128;
/// DFT size (frames are zero-padded from 256).
pub const STOI_FFT_SIZE: usize = 512;
/// Number of one-third-octave bands.
pub const STOI_NUM_BANDS: usize = 15;
/// Center frequency of the lowest band in Hz.
pub const STOI_LOWEST_CENTER_HZ: f64 = 150.0;
/// Temporal envelope segment length in frames (384 ms).
pub const STOI_SEGMENT_FRAMES: usize = 30;
/// Frames more than this far below the loudest clean frame are dropped.
pub const STOI_SILENCE_RANGE_DB: f64 = 40.0;
/// Lower bound on the signal-to-distortion ratio enforced by clipping, dB.
pub const STOI_SDR_BOUND_DB: f64 = -13.0;
/// Clip bound applied to the normalized processed envelope, as a multiple of
/// the clean envelope: `1 + 10^(-beta/20)` for the beta dB SDR bound.
pub fn stoi_clip_factor() -> f64 {
    1.0 + 10f64.powf(-STOI_SDR_BOUND_DB / 20.0)
}

/// Frame starts covering only complete frames (no tail padding).
fn full_frame_starts(len: usize) -> Vec<usize> {
    if len < STOI_FRAME_LEN {
        return Vec::new();
    }
    (0..=len - STOI_FRAME_LEN).step_by(STOI_HOP).collect()
}

/// Drop frames whose clean energy is more than 40 dB below the loudest clean
/// frame, overlap-adding the surviving Hann-windowed frames of both signals.
fn remove_silent_frames(clean: &[f64], processed: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let window = WindowKind::HannPeriodic.values(STOI_FRAME_LEN);
    let starts = full_frame_starts(clean.len());
    if starts.is_empty() {
        return (Vec::new(), Vec::new());
    }

    let energies: Vec<f64> = starts
        .iter()
        .map(|&s| {
            let e: f64 = (0..STOI_FRAME_LEN)
                .map(|i| (clean[s + i] * window[i]).powi(2))
                .sum();
            10.0 * e.log10() // 20 log10 of the frame norm
        })
        .collect();
    let max_db = energies.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let kept: Vec<usize> = starts
        .iter()
        .zip(&energies)
        .filter(|(_, &e)| e > max_db - STOI_SILENCE_RANGE_DB)
        .map(|(&s, _)| s)
        .collect();
    if kept.is_empty() {
        return (Vec::new(), Vec::new());
    }

    // Periodic Hann at 50% overlap sums to one, so plain overlap-add of the
    // windowed frames reconstructs the kept region.
    let out_len = (kept.len() - 1) * STOI_HOP + STOI_FRAME_LEN;
    let mut x_out = vec![0.0; out_len];
    let mut y_out = vec![0.0; out_len];
    for (j, &s) in kept.iter().enumerate() {
        let at = j * STOI_HOP;
        for i in 0..STOI_FRAME_LEN {
            x_out[at + i] += clean[s + i] * window[i];
            y_out[at + i] += processed[s + i] * window[i];
        }
    }
    (x_out, y_out)
}

/// 0/1 selector mapping spectrum bins into one-third-octave bands.
fn band_selector() -> Array2<f64> {
    let bins = STOI_FFT_SIZE / 2 + 1;
    let mut sel = Array2::zeros((bins, STOI_NUM_BANDS));
    for band in 0..STOI_NUM_BANDS {
        let center = STOI_LOWEST_CENTER_HZ * 2f64.powf(band as f64 / 3.0);
        let lo = center / 2f64.powf(1.0 / 6.0);
        let hi = center * 2f64.powf(1.0 / 6.0);
        for k in 0..bins {
            let f = k as f64 * f64::from(STOI_SAMPLE_RATE) / STOI_FFT_SIZE as f64;
            if f >= lo && f < hi {
                sel[[k, band]] = 1.0;
            }
        }
    }
    sel
}

/// One-third-octave band energies: `bands x frames`, each entry the norm of
/// the spectrum bins inside the band.
fn band_envelopes(signal: &[f64]) -> Array2<f64> {
    let window = WindowKind::HannPeriodic.values(STOI_FRAME_LEN);
    let starts = full_frame_starts(signal.len());
    let t_len = starts.len();

    // Windowed frames zero-padded to the DFT size.
    let mut frames = Array2::zeros((t_len, STOI_FFT_SIZE));
    for (t, &s) in starts.iter().enumerate() {
        for i in 0..STOI_FRAME_LEN {
            frames[[t, i]] = signal[s + i] * window[i];
        }
    }
    let (cos_basis, sin_basis) = crate::dsp::dft_bases(STOI_FFT_SIZE);
    let re = frames.dot(&cos_basis);
    let im = frames.dot(&sin_basis);
    let power = &re * &re + &im * &im;
    let band_power = power.dot(&band_selector()); // frames x bands

    let mut envelopes = Array2::zeros((STOI_NUM_BANDS, t_len));
    for band in 0..STOI_NUM_BANDS {
        for t in 0..t_len {
            envelopes[[band, t]] = band_power[[t, band]].sqrt();
        }
    }
    envelopes
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        num += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    let den = (vx * vy).sqrt();
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// STOI score of `processed` against `clean`. Both buffers must share a
/// sample rate of at least 10 kHz and have equal lengths.
pub fn stoi(clean: &AudioBuffer, processed: &AudioBuffer) -> Result<f64> {
    if clean.len() != processed.len() {
        return Err(Error::LengthMismatch(clean.len(), processed.len()));
    }
    if clean.sample_rate != processed.sample_rate {
        return Err(Error::SampleRateMismatch(
            clean.sample_rate,
            processed.sample_rate,
        ));
    }
    if clean.sample_rate < STOI_SAMPLE_RATE {
        return Err(Error::UnsupportedSampleRate(
            clean.sample_rate,
            "intelligibility metric needs at least 10 kHz".into(),
        ));
    }

    let x = resample(clean, STOI_SAMPLE_RATE);
    let y = resample(processed, STOI_SAMPLE_RATE);
    let (x_sil, y_sil) = remove_silent_frames(&x.samples, &y.samples);

    let x_bands = band_envelopes(&x_sil);
    let y_bands = band_envelopes(&y_sil);
    let num_frames = x_bands.ncols();
    if num_frames < STOI_SEGMENT_FRAMES {
        return Err(Error::TooShort(format!(
            "{num_frames} active frames, need at least {STOI_SEGMENT_FRAMES} \
             (about 0.4 s of non-silent audio)"
        )));
    }

    let clip = stoi_clip_factor();
    let mut total = 0.0;
    let mut count = 0usize;
    for seg_end in STOI_SEGMENT_FRAMES..=num_frames {
        let seg = seg_end - STOI_SEGMENT_FRAMES..seg_end;
        for band in 0..STOI_NUM_BANDS {
            let x_seg: Vec<f64> = seg.clone().map(|t| x_bands[[band, t]]).collect();
            let y_seg: Vec<f64> = seg.clone().map(|t| y_bands[[band, t]]).collect();
            let ex: f64 = x_seg.iter().map(|v| v * v).sum();
            let ey: f64 = y_seg.iter().map(|v| v * v).sum();
            let alpha = if ey > 0.0 { (ex / ey).sqrt() } else { 0.0 };
            let y_clipped: Vec<f64> = y_seg
                .iter()
                .zip(&x_seg)
                .map(|(yv, xv)| (alpha * yv).min(clip * xv))
                .collect();
            total += pearson(&x_seg, &y_clipped);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mix::{mix_at_snr, synth_speech_like, synth_white_noise};

    #[test]
    fn identical_signals_score_one() {
        let x = synth_speech_like(5, 2.0, 16000);
        let score = stoi(&x, &x).unwrap();
        assert!((score - 1.0).abs() <= 1e-9, "score {score}");
    }

    #[test]
    fn scale_invariance() {
        let x = synth_speech_like(6, 2.0, 16000);
        let noise = synth_white_noise(7, 2.0, 16000, 0.3);
        let pair = mix_at_snr(&x, &noise, 3.0, 0.05, 0).unwrap();
        let base = stoi(&pair.clean, &pair.mixture).unwrap();
        for alpha in [0.1, 10.0] {
            let scaled = AudioBuffer::new(
                pair.mixture.samples.iter().map(|v| v * alpha).collect(),
                16000,
            );
            let s = stoi(&pair.clean, &scaled).unwrap();
            assert!((s - base).abs() <= 1e-9, "alpha {alpha}: {s} vs {base}");

            let clean_scaled = AudioBuffer::new(
                pair.clean.samples.iter().map(|v| v * alpha).collect(),
                16000,
            );
            let s2 = stoi(&clean_scaled, &pair.mixture).unwrap();
            assert!((s2 - base).abs() <= 1e-9, "clean alpha {alpha}");
        }
    }

    #[test]
    fn noise_degrades_score() {
        let x = synth_speech_like(8, 2.0, 16000);
        let noise = synth_white_noise(9, 2.0, 16000, 0.3);
        let noisy = mix_at_snr(&x, &noise, -5.0, 0.05, 0).unwrap();
        let score = stoi(&noisy.clean, &noisy.mixture).unwrap();
        assert!(score < 0.95, "heavy noise should not score {score}");
        assert!(score > 0.0);
    }

    #[test]
    fn too_short_input_rejected() {
        let x = synth_speech_like(10, 0.2, 16000);
        assert!(matches!(stoi(&x, &x), Err(Error::TooShort(_))));
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let x = synth_speech_like(11, 1.0, 16000);
        let y = AudioBuffer::new(x.samples[..100].to_vec(), 16000);
        assert!(matches!(stoi(&x, &y), Err(Error::LengthMismatch(..))));
        let z = AudioBuffer::new(x.samples.clone(), 8000);
        assert!(matches!(
            stoi(&z, &z),
            Err(Error::UnsupportedSampleRate(..))
        ));
    }

    #[test]
    fn silent_frame_removal_keeps_loud_content() {
        // Loud tone, then silence, then loud tone.
        let tone: Vec<f64> = (0..8000)
            .map(|i| 0.4 * (std::f64::consts::TAU * 300.0 * i as f64 / 10000.0).sin())
            .collect();
        let mut signal = tone.clone();
        signal.extend(std::iter::repeat(0.0).take(8000));
        signal.extend(tone);
        let (x_sil, _) = remove_silent_frames(&signal, &signal);
        // The silent middle third is mostly gone; frames straddling the tone
        // boundaries survive, so a couple of frame lengths remain.
        assert!(x_sil.len() < 18000, "kept {} of {}", x_sil.len(), signal.len());
        assert!(x_sil.len() > 15500);
    }
}
