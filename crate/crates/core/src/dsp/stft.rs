//! One-sided STFT and its weighted overlap-add inverse, built on explicit DFT
//! basis matrices so the same transform can be replayed inside the training
//! graph.

use ndarray::Array2;

use crate::audio::AudioBuffer;
use crate::dsp::{frame_signal, WindowKind};
use crate::error::{Error, Result};

/// One-sided complex spectrogram split into real and imaginary planes.
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub real: Array2<f64>,
    pub imag: Array2<f64>,
    pub fft_size: usize,
    pub hop: usize,
    pub window: WindowKind,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn num_frames(&self) -> usize {
        self.real.nrows()
    }

    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn power(&self) -> Array2<f64> {
        &self.real * &self.real + &self.imag * &self.imag
    }
}

/// Forward DFT bases: `frames (T x N) . basis (N x F)` yields the one-sided
/// real/imaginary parts.
pub(crate) fn dft_bases(fft_size: usize) -> (Array2<f64>, Array2<f64>) {
    let bins = fft_size / 2 + 1;
    let mut cos_basis = Array2::zeros((fft_size, bins));
    let mut sin_basis = Array2::zeros((fft_size, bins));
    for n in 0..fft_size {
        for k in 0..bins {
            let angle = 2.0 * std::f64::consts::PI * (n * k) as f64 / fft_size as f64;
            cos_basis[[n, k]] = angle.cos();
            sin_basis[[n, k]] = -angle.sin();
        }
    }
    (cos_basis, sin_basis)
}

/// Inverse bases mapping one-sided real/imag parts back to time frames, with
/// the conjugate-symmetry doubling folded in.
fn idft_bases(fft_size: usize) -> (Array2<f64>, Array2<f64>) {
    let bins = fft_size / 2 + 1;
    let mut cos_basis = Array2::zeros((bins, fft_size));
    let mut sin_basis = Array2::zeros((bins, fft_size));
    for k in 0..bins {
        let weight = if k == 0 || k == fft_size / 2 { 1.0 } else { 2.0 };
        for n in 0..fft_size {
            let angle = 2.0 * std::f64::consts::PI * (n * k) as f64 / fft_size as f64;
            cos_basis[[k, n]] = weight * angle.cos() / fft_size as f64;
            sin_basis[[k, n]] = -weight * angle.sin() / fft_size as f64;
        }
    }
    (cos_basis, sin_basis)
}

/// Windowed one-sided STFT. Frame length equals `fft_size`.
pub fn stft(
    x: &AudioBuffer,
    fft_size: usize,
    hop: usize,
    window: WindowKind,
) -> Result<Spectrogram> {
    if !fft_size.is_power_of_two() {
        return Err(Error::Config(format!(
            "fft size {fft_size} is not a power of two"
        )));
    }
    if hop > fft_size {
        return Err(Error::HopExceedsFrame {
            hop,
            frame_len: fft_size,
        });
    }
    let fm = frame_signal(x, fft_size, hop)?;
    let w = window.values(fft_size);
    let mut windowed = fm.frames;
    for mut row in windowed.rows_mut() {
        for (v, wv) in row.iter_mut().zip(&w) {
            *v *= wv;
        }
    }
    let (cos_basis, sin_basis) = dft_bases(fft_size);
    Ok(Spectrogram {
        real: windowed.dot(&cos_basis),
        imag: windowed.dot(&sin_basis),
        fft_size,
        hop,
        window,
        sample_rate: x.sample_rate,
    })
}

/// Weighted overlap-add inverse STFT: inverse DFT per frame, window again,
/// overlap-add, divide by the per-sample squared-window sum.
pub fn istft(spec: &Spectrogram, orig_len: usize) -> Result<AudioBuffer> {
    let fft_size = spec.fft_size;
    let hop = spec.hop;
    let (cos_inv, sin_inv) = idft_bases(fft_size);
    let mut frames = spec.real.dot(&cos_inv) + spec.imag.dot(&sin_inv);

    let w = spec.window.values(fft_size);
    for mut row in frames.rows_mut() {
        for (v, wv) in row.iter_mut().zip(&w) {
            *v *= wv;
        }
    }

    let num_frames = frames.nrows();
    let padded = (num_frames - 1) * hop + fft_size;
    let mut acc = vec![0.0; padded];
    let mut wsum = vec![0.0; padded];
    for t in 0..num_frames {
        let start = t * hop;
        for i in 0..fft_size {
            acc[start + i] += frames[[t, i]];
            wsum[start + i] += w[i] * w[i];
        }
    }
    let keep = orig_len.min(padded);
    let mut out = Vec::with_capacity(keep);
    for j in 0..keep {
        if wsum[j] < 1e-8 {
            return Err(Error::NonInvertibleFraming(j));
        }
        out.push(acc[j] / wsum[j]);
    }
    Ok(AudioBuffer::new(out, spec.sample_rate))
}
