//! Mono 16-bit PCM WAV input/output and the in-memory waveform type.
//!
//! Samples are stored as `f64` in nominal range `[-1, 1]`. Reading divides the
//! raw `i16` values by 32768; writing clamps to `[-1, 1]`, scales by 32768,
//! rounds half away from zero and saturates to the `i16` range, which keeps
//! the read-back error of any in-range sample within 1/32768.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// A mono waveform plus its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        debug_assert!(sample_rate > 0);
        AudioBuffer {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Root mean square amplitude.
    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    /// The samples as they would appear after a WAV write/read round trip.
    ///
    /// Lets callers compute metrics on exactly the signal a consumer of the
    /// emitted file would see.
    pub fn quantized(&self) -> AudioBuffer {
        let samples = self
            .samples
            .iter()
            .map(|&x| f64::from(quantize_sample(x)) / 32768.0)
            .collect();
        AudioBuffer::new(samples, self.sample_rate)
    }
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn quantize_sample(x: f64) -> i16 {
    let clamped = x.clamp(-1.0, 1.0);
    // f64::round ties away from zero, matching the stated quantization rule.
    let scaled = (clamped * 32768.0).round();
    scaled.clamp(-32768.0, 32767.0) as i16
}

/// Read a mono 16-bit PCM WAV file.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut bytes = Vec::new();
    reader
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

/// Decode WAV bytes already in memory. Exposed for tests.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    if bytes.len() < 12 {
        return Err(Error::MalformedWav("file shorter than RIFF header".into()));
    }
    if &bytes[0..4] != b"RIFF" {
        return Err(Error::MalformedWav("missing RIFF tag".into()));
    }
    if &bytes[8..12] != b"WAVE" {
        return Err(Error::MalformedWav("missing WAVE tag".into()));
    }

    let mut fmt: Option<(u16, u16, u32, u16)> = None; // tag, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::MalformedWav("chunk size exceeds file".into()))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(Error::MalformedWav("fmt chunk shorter than 16 bytes".into()));
                }
                let tag = u16::from_le_bytes(body[0..2].try_into().unwrap());
                let channels = u16::from_le_bytes(body[2..4].try_into().unwrap());
                let rate = u32::from_le_bytes(body[4..8].try_into().unwrap());
                let bits = u16::from_le_bytes(body[14..16].try_into().unwrap());
                fmt = Some((tag, channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word-aligned.
        pos = body_end + (size & 1);
    }

    let (tag, channels, rate, bits) = fmt.ok_or_else(|| Error::MalformedWav("missing fmt chunk".into()))?;
    if tag != 1 {
        return Err(Error::UnsupportedCompression(tag));
    }
    if channels != 1 {
        return Err(Error::UnsupportedChannels(channels));
    }
    if bits != 16 {
        return Err(Error::UnsupportedBitDepth(bits));
    }
    if rate == 0 {
        return Err(Error::MalformedWav("zero sample rate".into()));
    }
    let data = data.ok_or_else(|| Error::MalformedWav("missing data chunk".into()))?;
    if data.len() % 2 != 0 {
        return Err(Error::MalformedWav("data chunk has odd byte count".into()));
    }

    let samples = data
        .chunks_exact(2)
        .map(|b| f64::from(i16::from_le_bytes([b[0], b[1]])) / 32768.0)
        .collect();
    Ok(AudioBuffer::new(samples, rate))
}

/// Write a mono 16-bit PCM WAV file.
pub fn write_wav(buf: &AudioBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    let bytes = encode_wav(buf);
    writer.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Encode a buffer as WAV bytes. Exposed for tests.
pub fn encode_wav(buf: &AudioBuffer) -> Vec<u8> {
    let data_size = buf.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_size);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_size) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&buf.sample_rate.to_le_bytes());
    out.extend_from_slice(&(buf.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_size as u32).to_le_bytes());
    for &x in &buf.samples {
        out.extend_from_slice(&quantize_sample(x).to_le_bytes());
    }
    out
}

/// List the `.wav` files directly inside `dir`, sorted by file name.
pub fn list_wav_files(dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
    let dir = dir.as_ref();
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|ext| ext.eq_ignore_ascii_case("wav"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_file_round_trip() {
        let buf = AudioBuffer::new(vec![0.0; 8], 16000);
        let decoded = decode_wav(&encode_wav(&buf)).unwrap();
        assert_eq!(decoded.sample_rate, 16000);
        assert_eq!(decoded.samples, vec![0.0; 8]);
    }

    #[test]
    fn read_scaling_convention() {
        // A single sample holding i16::MAX.
        let buf = AudioBuffer::new(vec![1.0], 44100);
        let bytes = encode_wav(&buf);
        let decoded = decode_wav(&bytes).unwrap();
        assert_eq!(decoded.samples[0], 32767.0 / 32768.0);
        assert_eq!(decoded.samples[0], 0.999969482421875);
    }

    #[test]
    fn full_scale_clamps_to_i16_max() {
        assert_eq!(quantize_sample(1.0), 32767);
        assert_eq!(quantize_sample(2.0), 32767);
        assert_eq!(quantize_sample(-1.0), -32768);
        assert_eq!(quantize_sample(-2.0), -32768);
        assert_eq!(quantize_sample(0.0), 0);
    }

    #[test]
    fn rounds_half_away_from_zero() {
        assert_eq!(quantize_sample(0.5 / 32768.0), 1);
        assert_eq!(quantize_sample(-0.5 / 32768.0), -1);
        assert_eq!(quantize_sample(1.5 / 32768.0), 2);
    }

    #[test]
    fn stereo_rejected() {
        let mut bytes = encode_wav(&AudioBuffer::new(vec![0.0; 4], 8000));
        bytes[22] = 2; // channel count
        match decode_wav(&bytes) {
            Err(Error::UnsupportedChannels(2)) => {}
            other => panic!("expected UnsupportedChannels, got {other:?}"),
        }
    }

    #[test]
    fn non_pcm_rejected() {
        let mut bytes = encode_wav(&AudioBuffer::new(vec![0.0; 4], 8000));
        bytes[20] = 3; // format tag: IEEE float
        match decode_wav(&bytes) {
            Err(Error::UnsupportedCompression(3)) => {}
            other => panic!("expected UnsupportedCompression, got {other:?}"),
        }
    }

    #[test]
    fn wrong_bit_depth_rejected() {
        let mut bytes = encode_wav(&AudioBuffer::new(vec![0.0; 4], 8000));
        bytes[34] = 8;
        match decode_wav(&bytes) {
            Err(Error::UnsupportedBitDepth(8)) => {}
            other => panic!("expected UnsupportedBitDepth, got {other:?}"),
        }
    }

    #[test]
    fn truncated_header_rejected() {
        assert!(matches!(decode_wav(b"RIFF"), Err(Error::MalformedWav(_))));
        assert!(matches!(
            decode_wav(b"RIFFxxxxWAVX"),
            Err(Error::MalformedWav(_))
        ));
    }

    #[test]
    fn round_trip_quantization_bound() {
        let xs: Vec<f64> = (0..1000)
            .map(|i| ((i as f64 * 0.7153).sin() * 1.02).clamp(-1.0, 1.0))
            .collect();
        let buf = AudioBuffer::new(xs.clone(), 16000);
        let decoded = decode_wav(&encode_wav(&buf)).unwrap();
        for (a, b) in xs.iter().zip(&decoded.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0, "{a} vs {b}");
        }
    }

    #[test]
    fn file_io_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let buf = AudioBuffer::new(vec![0.25, -0.5, 0.999, -1.0], 16000);
        write_wav(&buf, &path).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16000);
        for (a, b) in buf.samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }
}
