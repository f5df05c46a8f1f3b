//! Polyphase sample-rate conversion with a Kaiser-windowed sinc kernel.
//! Zero-phase (symmetric) filtering, so resampled signals stay time-aligned.

use crate::audio::AudioBuffer;

/// Kaiser window shape parameter; roughly -140 dB stopband.
const KAISER_BETA: f64 = 14.77;
/// Cutoff as a fraction of the target Nyquist.
const CUTOFF_RATIO: f64 = 0.9;
/// Kernel half-width in output-zero-crossing units.
const HALF_WIDTH_FACTOR: usize = 24;

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let half = x / 2.0;
    let mut sum = 1.0;
    let mut term = 1.0;
    for k in 1..64 {
        term *= (half / k as f64) * (half / k as f64);
        sum += term;
        if term < sum * 1e-18 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Resample to `target_rate`. Identity when the rates already match.
pub fn resample(x: &AudioBuffer, target_rate: u32) -> AudioBuffer {
    if x.sample_rate == target_rate || x.is_empty() {
        return AudioBuffer::new(x.samples.clone(), target_rate);
    }
    let g = gcd(x.sample_rate, target_rate);
    let up = (target_rate / g) as usize;
    let down = (x.sample_rate / g) as usize;

    // The kernel lives at the virtual upsampled rate `source * up`.
    // Cutoff: 0.9 x Nyquist of whichever side is narrower.
    let fs_up = f64::from(x.sample_rate) * up as f64;
    let cutoff_hz = CUTOFF_RATIO * f64::from(target_rate.min(x.sample_rate)) / 2.0;
    let fc = cutoff_hz / fs_up; // cycles per upsampled sample
    let half_width = (HALF_WIDTH_FACTOR * up.max(down)) as isize;

    let i0_beta = bessel_i0(KAISER_BETA);
    let kernel: Vec<f64> = (-half_width..=half_width)
        .map(|i| {
            let frac = i as f64 / half_width as f64;
            let window = bessel_i0(KAISER_BETA * (1.0 - frac * frac).max(0.0).sqrt()) / i0_beta;
            up as f64 * 2.0 * fc * sinc(2.0 * fc * i as f64) * window
        })
        .collect();
    let at = |i: isize| kernel[(i + half_width) as usize];

    let in_len = x.samples.len() as isize;
    let out_len = (x.samples.len() * up).div_ceil(down);
    let mut out = Vec::with_capacity(out_len);
    for m in 0..out_len {
        let u = (m * down) as isize; // position on the upsampled grid
        let n_lo = (u - half_width).div_euclid(up as isize).max(0);
        let n_hi = ((u + half_width).div_euclid(up as isize)).min(in_len - 1);
        let mut acc = 0.0;
        for n in n_lo..=n_hi {
            let tap = u - n * up as isize;
            if tap.abs() <= half_width {
                acc += x.samples[n as usize] * at(tap);
            }
        }
        out.push(acc);
    }
    AudioBuffer::new(out, target_rate)
}
