//! Corpus synthesis: additive mixing at sampled SNRs with RMS normalization,
//! manifest generation for bit-reproducible corpora, and synthetic
//! speech-like material for self-contained runs.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::audio::{read_wav, write_wav, AudioBuffer};
use crate::error::{Error, Result};

/// An aligned (clean, noise, mixture) triple with its realized SNR.
/// `mixture = clean + noise` holds sample-wise.
#[derive(Debug, Clone)]
pub struct MixturePair {
    pub clean: AudioBuffer,
    pub noise: AudioBuffer,
    pub mixture: AudioBuffer,
    pub snr_db: f64,
    pub seed: u64,
}

/// How mixing SNRs are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SnrPolicy {
    Fixed(f64),
    /// Fair coin between the [-7, 0] dB and [0, 10] dB training ranges,
    /// uniform within the chosen range.
    TwoRange,
}

pub const SNR_RANGE_LOW: (f64, f64) = (-7.0, 0.0);
pub const SNR_RANGE_HIGH: (f64, f64) = (0.0, 10.0);

/// Draw one SNR: fair coin picks the range, then uniform within it.
pub fn sample_snr(rng: &mut impl Rng) -> f64 {
    let (lo, hi) = if rng.gen::<bool>() {
        SNR_RANGE_LOW
    } else {
        SNR_RANGE_HIGH
    };
    rng.gen_range(lo..hi)
}

/// Scale `s` against `n` to realize `snr_db`, then rescale the whole triple
/// so the mixture RMS hits `target_rms`. Scaling the triple jointly keeps
/// both the SNR and the additive identity exact.
pub fn mix_at_snr(
    s: &AudioBuffer,
    n: &AudioBuffer,
    snr_db: f64,
    target_rms: f64,
    seed: u64,
) -> Result<MixturePair> {
    if s.len() != n.len() {
        return Err(Error::LengthMismatch(s.len(), n.len()));
    }
    let rms_s = s.rms();
    let rms_n = n.rms();
    if rms_s == 0.0 || rms_n == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    let gain = (rms_n / rms_s) * 10f64.powf(snr_db / 20.0);

    let y0: Vec<f64> = s
        .samples
        .iter()
        .zip(&n.samples)
        .map(|(sv, nv)| gain * sv + nv)
        .collect();
    let rms_y0 = crate::audio::rms(&y0);
    if rms_y0 == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    let joint = target_rms / rms_y0;

    let clean: Vec<f64> = s.samples.iter().map(|v| v * gain * joint).collect();
    let noise: Vec<f64> = n.samples.iter().map(|v| v * joint).collect();
    let mixture: Vec<f64> = clean.iter().zip(&noise).map(|(a, b)| a + b).collect();
    Ok(MixturePair {
        clean: AudioBuffer::new(clean, s.sample_rate),
        noise: AudioBuffer::new(noise, s.sample_rate),
        mixture: AudioBuffer::new(mixture, s.sample_rate),
        snr_db,
        seed,
    })
}

/// Synthetic speech-like signal: a handful of harmonics over a drifting
/// fundamental, amplitude-modulated, with hard pauses between phrases.
/// Peak-normalized to 0.5.
pub fn synth_speech_like(seed: u64, duration_s: f64, sample_rate: u32) -> AudioBuffer {
    assert!(duration_s > 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = (duration_s * f64::from(sample_rate)).round() as usize;
    let dt = 1.0 / f64::from(sample_rate);

    let num_harmonics: usize = rng.gen_range(3..=8);
    let base_f0: f64 = rng.gen_range(110.0..260.0);
    let drift_rate: f64 = rng.gen_range(0.2..1.0);
    let drift_phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let am_rate: f64 = rng.gen_range(2.0..8.0);
    let am_phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);

    // Phrase/pause schedule. Worst-case cycle is 0.85 s, so any 2 s stretch
    // contains at least one full pause.
    let ramp = (0.010 * f64::from(sample_rate)) as usize;
    let mut gate = vec![0.0f64; len];
    let mut pos = 0usize;
    loop {
        let speech_len = (rng.gen_range(0.25..0.70) * f64::from(sample_rate)) as usize;
        let pause_len = (rng.gen_range(0.09..0.15) * f64::from(sample_rate)) as usize;
        for i in 0..speech_len {
            if pos + i >= len {
                break;
            }
            let up = if i < ramp { i as f64 / ramp as f64 } else { 1.0 };
            let down = if speech_len - 1 - i < ramp {
                (speech_len - 1 - i) as f64 / ramp as f64
            } else {
                1.0
            };
            gate[pos + i] = up.min(down);
        }
        pos += speech_len + pause_len;
        if pos >= len {
            break;
        }
    }

    let mut phase = 0.0f64;
    let mut samples = Vec::with_capacity(len);
    for i in 0..len {
        let t = i as f64 * dt;
        let f0 = base_f0
            * (1.0 + 0.08 * (std::f64::consts::TAU * drift_rate * t + drift_phase).sin());
        phase += std::f64::consts::TAU * f0 * dt;
        let mut v = 0.0;
        for k in 1..=num_harmonics {
            v += (k as f64 * phase).sin() / k as f64;
        }
        let am = 0.55 + 0.45 * (std::f64::consts::TAU * am_rate * t + am_phase).sin();
        samples.push(v * am * gate[i]);
    }

    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let scale = 0.5 / peak;
        for v in &mut samples {
            *v *= scale;
        }
    }
    AudioBuffer::new(samples, sample_rate)
}

/// Uniform white noise in [-amplitude, amplitude).
pub fn synth_white_noise(seed: u64, duration_s: f64, sample_rate: u32, amplitude: f64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = (duration_s * f64::from(sample_rate)).round() as usize;
    AudioBuffer::new(
        (0..len)
            .map(|_| rng.gen_range(-amplitude..amplitude))
            .collect(),
        sample_rate,
    )
}

/// Non-stationary noise: white noise under a slow random amplitude
/// modulation, so it disturbs temporal envelopes the way real-world
/// interference does rather than adding a constant floor.
pub fn synth_modulated_noise(
    seed: u64,
    duration_s: f64,
    sample_rate: u32,
    amplitude: f64,
) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = (duration_s * f64::from(sample_rate)).round() as usize;
    let rate_a: f64 = rng.gen_range(1.0..4.0);
    let rate_b: f64 = rng.gen_range(4.0..9.0);
    let phase_a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let phase_b: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let samples = (0..len)
        .map(|i| {
            let t = i as f64 / f64::from(sample_rate);
            let env_a = 0.5 + 0.5 * (std::f64::consts::TAU * rate_a * t + phase_a).sin();
            let env_b = 0.5 + 0.5 * (std::f64::consts::TAU * rate_b * t + phase_b).sin();
            let env = 0.1 + 0.9 * env_a * env_b;
            rng.gen_range(-amplitude..amplitude) * env
        })
        .collect();
    AudioBuffer::new(samples, sample_rate)
}

/// One corpus entry: everything needed to regenerate its triple bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub id: usize,
    pub clean_path: PathBuf,
    pub noise_path: PathBuf,
    pub clean_offset: usize,
    pub noise_offset: usize,
    pub snr_db: f64,
    pub seed: u64,
    pub utterance_len: usize,
}

#[derive(Debug, Clone)]
pub struct CorpusManifest {
    pub seed: u64,
    pub sample_rate: u32,
    pub utterance_len: usize,
    pub target_rms: f64,
    pub snr_policy: SnrPolicy,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub count: usize,
    pub seed: u64,
    pub snr: SnrPolicy,
    pub target_rms: f64,
    pub utterance_len: usize,
    pub loop_noise: bool,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            count: 0,
            seed: 0,
            snr: SnrPolicy::TwoRange,
            // Headroom against int16 clipping at low SNR.
            target_rms: 0.05,
            utterance_len: 64000,
            loop_noise: true,
        }
    }
}

/// Cut `len` samples out of `source` starting at `offset`, wrapping around
/// when the source is shorter (loop with random phase).
fn excerpt(source: &AudioBuffer, offset: usize, len: usize) -> Vec<f64> {
    let n = source.len();
    (0..len).map(|i| source.samples[(offset + i) % n]).collect()
}

fn crop_or_pad_clean(source: &AudioBuffer, offset: usize, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (i, slot) in out.iter_mut().enumerate() {
        if offset + i < source.len() {
            *slot = source.samples[offset + i];
        }
    }
    out
}

/// The pair as it would read back after 16-bit WAV emission; metrics on this
/// match metrics computed over the written files exactly.
pub fn pcm_pair_quantized(pair: &MixturePair) -> MixturePair {
    MixturePair {
        clean: pair.clean.quantized(),
        noise: pair.noise.quantized(),
        mixture: pair.mixture.quantized(),
        snr_db: pair.snr_db,
        seed: pair.seed,
    }
}

/// One dynamically drawn training mixture, with the random choices recorded.
#[derive(Debug, Clone)]
pub struct DrawnMixture {
    pub pair: MixturePair,
    pub clean_idx: usize,
    pub noise_idx: usize,
    pub clean_offset: usize,
    pub noise_offset: usize,
}

/// Draw one mixture from in-memory pools: random clean utterance and crop,
/// random noise excerpt (looped when short), SNR per policy. The draw
/// sequence is fixed, so a given rng state always yields the same mixture.
pub fn draw_mixture(
    clean_pool: &[AudioBuffer],
    noise_pool: &[AudioBuffer],
    rng: &mut ChaCha8Rng,
    utterance_len: usize,
    snr: SnrPolicy,
    target_rms: f64,
    loop_noise: bool,
    seed: u64,
) -> Result<DrawnMixture> {
    assert!(!clean_pool.is_empty() && !noise_pool.is_empty());
    let clean_idx = rng.gen_range(0..clean_pool.len());
    let noise_idx = rng.gen_range(0..noise_pool.len());
    let clean_src = &clean_pool[clean_idx];
    let noise_src = &noise_pool[noise_idx];

    if noise_src.len() < utterance_len && !loop_noise {
        return Err(Error::NoiseTooShort {
            noise: noise_src.len(),
            utterance: utterance_len,
        });
    }

    // Re-draw offsets if a crop lands on silence; the draw sequence is part
    // of the deterministic procedure.
    let mut clean_offset = 0;
    let mut noise_offset = 0;
    let mut clean_cut = Vec::new();
    let mut noise_cut = Vec::new();
    let mut ok = false;
    for _ in 0..16 {
        clean_offset = if clean_src.len() > utterance_len {
            rng.gen_range(0..=clean_src.len() - utterance_len)
        } else {
            0
        };
        noise_offset = if noise_src.len() >= utterance_len {
            rng.gen_range(0..=noise_src.len() - utterance_len)
        } else {
            rng.gen_range(0..noise_src.len())
        };
        clean_cut = crop_or_pad_clean(clean_src, clean_offset, utterance_len);
        noise_cut = excerpt(noise_src, noise_offset, utterance_len);
        if crate::audio::rms(&clean_cut) > 0.0 && crate::audio::rms(&noise_cut) > 0.0 {
            ok = true;
            break;
        }
    }
    if !ok {
        return Err(Error::ZeroEnergy);
    }

    let snr_db = match snr {
        SnrPolicy::Fixed(db) => db,
        SnrPolicy::TwoRange => sample_snr(rng),
    };
    let pair = mix_at_snr(
        &AudioBuffer::new(clean_cut, clean_src.sample_rate),
        &AudioBuffer::new(noise_cut, noise_src.sample_rate),
        snr_db,
        target_rms,
        seed,
    )?;
    Ok(DrawnMixture {
        pair,
        clean_idx,
        noise_idx,
        clean_offset,
        noise_offset,
    })
}

/// Materialize the triple described by one manifest entry, re-reading the
/// source files. Pure function of (entry, globals): regeneration is
/// bit-identical to the original build.
pub fn regenerate_entry(manifest: &CorpusManifest, entry: &ManifestEntry) -> Result<MixturePair> {
    let clean_src = read_wav(&entry.clean_path)?;
    let noise_src = read_wav(&entry.noise_path)?;
    let clean = AudioBuffer::new(
        crop_or_pad_clean(&clean_src, entry.clean_offset, entry.utterance_len),
        clean_src.sample_rate,
    );
    let noise = AudioBuffer::new(
        excerpt(&noise_src, entry.noise_offset, entry.utterance_len),
        noise_src.sample_rate,
    );
    mix_at_snr(&clean, &noise, entry.snr_db, manifest.target_rms, entry.seed)
}

/// Build a mixed corpus: for each entry pick a random clean utterance, a
/// random noise excerpt and an SNR, mix, and emit `clean/`, `noise/` and
/// `mix/` WAV triples plus a manifest. Deterministic in `seed`; each entry's
/// rng is derived as `seed ^ entry_index` so entries are order-independent.
pub fn build_corpus(
    clean_dir: impl AsRef<Path>,
    noise_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    opts: &BuildOptions,
) -> Result<CorpusManifest> {
    let clean_files = crate::audio::list_wav_files(&clean_dir)?;
    let noise_files = crate::audio::list_wav_files(&noise_dir)?;
    if clean_files.is_empty() {
        return Err(Error::EmptyCorpusDir(clean_dir.as_ref().to_path_buf()));
    }
    if noise_files.is_empty() {
        return Err(Error::EmptyCorpusDir(noise_dir.as_ref().to_path_buf()));
    }

    let out_dir = out_dir.as_ref();
    for sub in ["clean", "noise", "mix"] {
        std::fs::create_dir_all(out_dir.join(sub)).map_err(|e| Error::io(out_dir, e))?;
    }

    let clean_pool: Vec<AudioBuffer> = clean_files
        .iter()
        .map(read_wav)
        .collect::<Result<_>>()?;
    let noise_pool: Vec<AudioBuffer> = noise_files
        .iter()
        .map(read_wav)
        .collect::<Result<_>>()?;
    let sample_rate = clean_pool[0].sample_rate;

    let mut entries = Vec::with_capacity(opts.count);
    for id in 0..opts.count {
        let entry_seed = opts.seed ^ id as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(entry_seed);
        let drawn = draw_mixture(
            &clean_pool,
            &noise_pool,
            &mut rng,
            opts.utterance_len,
            opts.snr,
            opts.target_rms,
            opts.loop_noise,
            entry_seed,
        )?;

        let name = format!("utt_{id:05}.wav");
        write_wav(&drawn.pair.clean, out_dir.join("clean").join(&name))?;
        write_wav(&drawn.pair.noise, out_dir.join("noise").join(&name))?;
        write_wav(&drawn.pair.mixture, out_dir.join("mix").join(&name))?;

        entries.push(ManifestEntry {
            id,
            clean_path: clean_files[drawn.clean_idx].clone(),
            noise_path: noise_files[drawn.noise_idx].clone(),
            clean_offset: drawn.clean_offset,
            noise_offset: drawn.noise_offset,
            snr_db: drawn.pair.snr_db,
            seed: entry_seed,
            utterance_len: opts.utterance_len,
        });
    }

    let manifest = CorpusManifest {
        seed: opts.seed,
        sample_rate,
        utterance_len: opts.utterance_len,
        target_rms: opts.target_rms,
        snr_policy: opts.snr,
        entries,
    };
    write_manifest(&manifest, out_dir.join("manifest.txt"))?;
    Ok(manifest)
}

fn policy_to_string(p: SnrPolicy) -> String {
    match p {
        SnrPolicy::Fixed(db) => format!("fixed:{db}"),
        SnrPolicy::TwoRange => "two_range".into(),
    }
}

fn policy_from_string(s: &str) -> Result<SnrPolicy> {
    if s == "two_range" {
        return Ok(SnrPolicy::TwoRange);
    }
    if let Some(db) = s.strip_prefix("fixed:") {
        return db
            .parse()
            .map(SnrPolicy::Fixed)
            .map_err(|_| Error::MalformedManifest(format!("bad snr policy value {s}")));
    }
    Err(Error::MalformedManifest(format!("unknown snr policy {s}")))
}

/// Write the corpus manifest: `key = value` globals followed by one
/// tab-separated `entry` line per utterance. Floats print in Rust's shortest
/// round-trip form, so re-parsing reproduces them bit-exactly.
pub fn write_manifest(manifest: &CorpusManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    let _ = writeln!(text, "# corpus manifest");
    let _ = writeln!(text, "version = 1");
    let _ = writeln!(text, "seed = {}", manifest.seed);
    let _ = writeln!(text, "count = {}", manifest.entries.len());
    let _ = writeln!(text, "sample_rate = {}", manifest.sample_rate);
    let _ = writeln!(text, "utterance_len = {}", manifest.utterance_len);
    let _ = writeln!(text, "target_rms = {}", manifest.target_rms);
    let _ = writeln!(text, "snr_policy = {}", policy_to_string(manifest.snr_policy));
    for e in &manifest.entries {
        let _ = writeln!(
            text,
            "entry\t{}\tclean={}\tnoise={}\tclean_offset={}\tnoise_offset={}\tsnr_db={}\tseed={}\tlen={}",
            e.id,
            e.clean_path.display(),
            e.noise_path.display(),
            e.clean_offset,
            e.noise_offset,
            e.snr_db,
            e.seed,
            e.utterance_len,
        );
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<CorpusManifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut globals: HashMap<String, String> = HashMap::new();
    let mut entries = Vec::new();

    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("entry\t") {
            let mut id = None;
            let mut fields: HashMap<&str, &str> = HashMap::new();
            for (i, tok) in rest.split('\t').enumerate() {
                if i == 0 {
                    id = tok.parse::<usize>().ok();
                } else if let Some((k, v)) = tok.split_once('=') {
                    fields.insert(k, v);
                }
            }
            let id = id.ok_or_else(|| Error::MalformedManifest("entry without id".into()))?;
            let get = |k: &str| -> Result<&str> {
                fields
                    .get(k)
                    .copied()
                    .ok_or_else(|| Error::MalformedManifest(format!("entry {id} missing {k}")))
            };
            let parse_num = |k: &str| -> Result<usize> {
                get(k)?
                    .parse()
                    .map_err(|_| Error::MalformedManifest(format!("entry {id}: bad {k}")))
            };
            entries.push(ManifestEntry {
                id,
                clean_path: PathBuf::from(get("clean")?),
                noise_path: PathBuf::from(get("noise")?),
                clean_offset: parse_num("clean_offset")?,
                noise_offset: parse_num("noise_offset")?,
                snr_db: get("snr_db")?
                    .parse()
                    .map_err(|_| Error::MalformedManifest(format!("entry {id}: bad snr_db")))?,
                seed: get("seed")?
                    .parse()
                    .map_err(|_| Error::MalformedManifest(format!("entry {id}: bad seed")))?,
                utterance_len: parse_num("len")?,
            });
        } else if let Some((k, v)) = line.split_once('=') {
            globals.insert(k.trim().to_string(), v.trim().to_string());
        }
    }

    let get = |k: &str| -> Result<&String> {
        globals
            .get(k)
            .ok_or_else(|| Error::MalformedManifest(format!("missing global {k}")))
    };
    Ok(CorpusManifest {
        seed: get("seed")?
            .parse()
            .map_err(|_| Error::MalformedManifest("bad seed".into()))?,
        sample_rate: get("sample_rate")?
            .parse()
            .map_err(|_| Error::MalformedManifest("bad sample_rate".into()))?,
        utterance_len: get("utterance_len")?
            .parse()
            .map_err(|_| Error::MalformedManifest("bad utterance_len".into()))?,
        target_rms: get("target_rms")?
            .parse()
            .map_err(|_| Error::MalformedManifest("bad target_rms".into()))?,
        snr_policy: policy_from_string(get("snr_policy")?)?,
        entries,
    })
}
