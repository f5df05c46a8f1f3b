//! Log-Mel filterbank features with delta and delta-delta appendices, the
//! front end consumed by a downstream recognizer.
//!
//! Pipeline: periodic-Hamming STFT -> power spectrum -> triangular mel
//! filterbank (HTK scale) -> floor + natural log -> per-utterance mean
//! normalization of the static coefficients -> delta / delta-delta via a
//! +-2-frame regression with replicated edges.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array2};

use crate::audio::AudioBuffer;
use crate::dsp::stft::dft_bases;
use crate::dsp::{frame_signal, WindowKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct FeatureConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub num_filters: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    /// Added to each mel-filtered power before the log to avoid underflow.
    pub log_floor: f64,
    /// Mean-normalize the static block per utterance.
    pub mean_normalize: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            frame_len: 400, // 25 ms at 16 kHz
            hop: 160,       // 10 ms
            fft_size: 512,
            num_filters: 80,
            fmin_hz: 0.0,
            fmax_hz: 8000.0,
            log_floor: (-40.0f64).exp(),
            mean_normalize: true,
        }
    }
}

/// T x D feature rows; D = 3 * num_filters (static, delta, delta-delta).
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
    pub mean_normalized: bool,
}

impl FeatureMatrix {
    pub fn num_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank, `num_filters x (fft_size/2 + 1)`.
pub fn mel_filterbank(
    num_filters: usize,
    fft_size: usize,
    sample_rate: u32,
    fmin_hz: f64,
    fmax_hz: f64,
) -> Array2<f64> {
    let bins = fft_size / 2 + 1;
    let mel_lo = hz_to_mel(fmin_hz);
    let mel_hi = hz_to_mel(fmax_hz);
    let edges: Vec<f64> = (0..num_filters + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (num_filters + 1) as f64))
        .collect();

    let mut bank = Array2::zeros((num_filters, bins));
    for j in 0..num_filters {
        let (lo, center, hi) = (edges[j], edges[j + 1], edges[j + 2]);
        for k in 0..bins {
            let f = k as f64 * f64::from(sample_rate) / fft_size as f64;
            let rising = (f - lo) / (center - lo);
            let falling = (hi - f) / (hi - center);
            let w = rising.min(falling).max(0.0);
            bank[[j, k]] = w;
        }
    }
    bank
}

/// Extract features with the default 80-filter, 25 ms / 10 ms geometry.
pub fn log_mel_features(x: &AudioBuffer) -> Result<FeatureMatrix> {
    log_mel_features_with(x, &FeatureConfig::default())
}

pub fn log_mel_features_with(x: &AudioBuffer, cfg: &FeatureConfig) -> Result<FeatureMatrix> {
    if x.sample_rate != 16000 {
        return Err(Error::UnsupportedSampleRate(
            x.sample_rate,
            "feature pipeline expects 16 kHz input".into(),
        ));
    }
    if x.len() < cfg.frame_len {
        return Err(Error::TooShort(format!(
            "utterance of {} samples is shorter than one {}-sample frame",
            x.len(),
            cfg.frame_len
        )));
    }

    let fm = frame_signal(x, cfg.frame_len, cfg.hop)?;
    let window = WindowKind::HammingPeriodic.values(cfg.frame_len);
    let num_frames = fm.num_frames();

    // Windowed frames zero-padded out to the DFT size.
    let mut padded = Array2::zeros((num_frames, cfg.fft_size));
    for t in 0..num_frames {
        for i in 0..cfg.frame_len {
            padded[[t, i]] = fm.frames[[t, i]] * window[i];
        }
    }
    let (cos_basis, sin_basis) = dft_bases(cfg.fft_size);
    let real = padded.dot(&cos_basis);
    let imag = padded.dot(&sin_basis);
    let power = &real * &real + &imag * &imag;

    let bank = mel_filterbank(
        cfg.num_filters,
        cfg.fft_size,
        x.sample_rate,
        cfg.fmin_hz,
        cfg.fmax_hz,
    );
    let mut statics = power.dot(&bank.t());
    statics.mapv_inplace(|e| (e + cfg.log_floor).ln());

    if cfg.mean_normalize {
        for j in 0..cfg.num_filters {
            let mean = statics.column(j).mean().unwrap();
            for t in 0..num_frames {
                statics[[t, j]] -= mean;
            }
        }
    }

    Ok(FeatureMatrix {
        values: append_deltas(&statics),
        mean_normalized: cfg.mean_normalize,
    })
}

/// Append delta and delta-delta blocks computed with a +-2-frame regression
/// (denominator 10) and replicated edge frames.
pub fn append_deltas(statics: &Array2<f64>) -> Array2<f64> {
    let delta = regression_delta(statics);
    let delta2 = regression_delta(&delta);
    let (t, d) = statics.dim();
    let mut out = Array2::zeros((t, 3 * d));
    out.slice_mut(s![.., 0..d]).assign(statics);
    out.slice_mut(s![.., d..2 * d]).assign(&delta);
    out.slice_mut(s![.., 2 * d..3 * d]).assign(&delta2);
    out
}

fn regression_delta(c: &Array2<f64>) -> Array2<f64> {
    let (t_len, d) = c.dim();
    let mut out = Array2::zeros((t_len, d));
    let clamp = |i: isize| -> usize { i.clamp(0, t_len as isize - 1) as usize };
    for t in 0..t_len {
        for j in 0..d {
            let mut num = 0.0;
            for k in 1..=2isize {
                let ahead = c[[clamp(t as isize + k), j]];
                let behind = c[[clamp(t as isize - k), j]];
                num += k as f64 * (ahead - behind);
            }
            out[[t, j]] = num / 10.0;
        }
    }
    out
}

/// Write a feature file: magic `ARNF`, u32 frame count, u32 dimension, then
/// row-major little-endian f32 values.
pub fn write_features(features: &FeatureMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let (t, d) = features.values.dim();
    let mut write = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
    write(b"ARNF")?;
    write(&(t as u32).to_le_bytes())?;
    write(&(d as u32).to_le_bytes())?;
    for row in features.values.rows() {
        for &v in row {
            write(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;

    if bytes.len() < 12 || &bytes[0..4] != b"ARNF" {
        return Err(Error::MalformedFeatureFile("missing ARNF magic".into()));
    }
    let t = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + t * d * 4;
    if bytes.len() != expected {
        return Err(Error::MalformedFeatureFile(format!(
            "expected {expected} bytes for {t}x{d} values, found {}",
            bytes.len()
        )));
    }
    let mut values = Array2::zeros((t, d));
    for (i, chunk) in bytes[12..].chunks_exact(4).enumerate() {
        values[[i / d, i % d]] = f64::from(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok(FeatureMatrix {
        values,
        mean_normalized: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(len: usize, freq: f64, amp: f64) -> AudioBuffer {
        AudioBuffer::new(
            (0..len)
                .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin())
                .collect(),
            16000,
        )
    }

    fn noisy_tone(len: usize, seed: u64) -> AudioBuffer {
        let mut state = seed.max(1);
        let samples = (0..len)
            .map(|i| {
                state ^= state << 13;
                state ^= state >> 7;
                state ^= state << 17;
                let noise = (state as f64 / u64::MAX as f64) * 2.0 - 1.0;
                0.1 * (2.0 * std::f64::consts::PI * 220.0 * i as f64 / 16000.0).sin()
                    + 0.01 * noise
            })
            .collect();
        AudioBuffer::new(samples, 16000)
    }

    #[test]
    fn width_and_mean_normalization() {
        let x = tone(8000, 300.0, 0.2);
        let f = log_mel_features(&x).unwrap();
        assert_eq!(f.dim(), 240);
        for j in 0..80 {
            let mean = f.values.column(j).mean().unwrap();
            assert!(mean.abs() < 1e-10, "static col {j} mean {mean}");
        }
    }

    #[test]
    fn constant_features_have_zero_deltas() {
        let statics = Array2::from_elem((12, 5), 3.25);
        let full = append_deltas(&statics);
        for t in 0..12 {
            for j in 5..15 {
                assert_eq!(full[[t, j]], 0.0);
            }
        }
    }

    #[test]
    fn silence_statics_equal_log_floor() {
        let x = AudioBuffer::new(vec![0.0; 4000], 16000);
        let cfg = FeatureConfig {
            mean_normalize: false,
            ..FeatureConfig::default()
        };
        let f = log_mel_features_with(&x, &cfg).unwrap();
        // Zero power through every filter leaves exactly the floor in the log.
        for t in 0..f.num_frames() {
            for j in 0..80 {
                assert!((f.values[[t, j]] - (-40.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn filterbank_rows_positive_and_overlapping() {
        let bank = mel_filterbank(80, 512, 16000, 0.0, 8000.0);
        for j in 0..80 {
            let sum: f64 = bank.row(j).sum();
            assert!(sum > 0.0, "filter {j} sums to {sum}");
        }
        // Every interior bin below 8 kHz gets a response from some filter.
        for k in 1..256 {
            let col_sum: f64 = bank.column(k).sum();
            assert!(col_sum > 0.0, "bin {k} has zero response");
        }
    }

    #[test]
    fn gain_invariance_of_normalized_statics() {
        let x = noisy_tone(8000, 99);
        let base = log_mel_features(&x).unwrap();
        for gain in [0.01, 10.0] {
            let scaled = AudioBuffer::new(x.samples.iter().map(|&v| v * gain).collect(), 16000);
            let f = log_mel_features(&scaled).unwrap();
            let mut max_err = 0.0f64;
            for t in 0..base.num_frames() {
                for j in 0..80 {
                    max_err = max_err.max((base.values[[t, j]] - f.values[[t, j]]).abs());
                }
            }
            assert!(max_err < 1e-8, "gain {gain}: max err {max_err}");
        }
    }

    #[test]
    fn too_short_utterance_rejected() {
        let x = AudioBuffer::new(vec![0.1; 100], 16000);
        assert!(matches!(log_mel_features(&x), Err(Error::TooShort(_))));
    }

    #[test]
    fn feature_file_round_trip() {
        let x = tone(4000, 440.0, 0.3);
        let f = log_mel_features(&x).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.feat");
        let p2 = dir.path().join("b.feat");
        write_features(&f, &p1).unwrap();
        let back = read_features(&p1).unwrap();
        assert_eq!(back.values.dim(), f.values.dim());
        write_features(&back, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }
}
