//! Training loop: dynamic mixing, Adam with the two-phase learning-rate
//! schedule, per-epoch validation loss and STOI, and rolling best-by-loss /
//! best-by-STOI checkpoints.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arn::{
    arn_forward_on_tape, bind_params, init_params, save_checkpoint, ArnConfig, Checkpoint,
};
use crate::audio::{write_wav, AudioBuffer};
use crate::autodiff::{adam_step, clip_global_norm, AdamHyper, AdamState, GradSet, ParamSet, Tape};
use crate::error::{Error, Result};
use crate::metrics::stoi;
use crate::mix::{draw_mixture, pcm_pair_quantized, MixturePair, SnrPolicy};
use crate::objective::{pcm_loss, pcm_loss_on_tape, LossConfig};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub utterances_per_epoch: usize,
    pub batch_size: usize,
    pub utterance_len: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    /// The learning rate stays at `lr_init` through this epoch, then decays
    /// geometrically to land exactly on `lr_final` at the last epoch.
    pub lr_fixed_epochs: usize,
    pub seed: u64,
    pub validation_snr_db: f64,
    pub validation_count: usize,
    /// Validation utterances are cut to this length; longer than the training
    /// crop by default so the intelligibility metric always has enough
    /// non-silent frames.
    pub validation_utterance_len: usize,
    /// Clip-by-global-norm bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub target_rms: f64,
    pub adam: AdamHyper,
    pub loss: LossConfig,
    pub snr: SnrPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            utterances_per_epoch: 157_036,
            batch_size: 16,
            utterance_len: 64_000,
            lr_init: 2e-4,
            lr_final: 2e-5,
            lr_fixed_epochs: 33,
            seed: 0,
            validation_snr_db: -6.0,
            validation_count: 8,
            validation_utterance_len: 16_000,
            clip_norm: None,
            target_rms: 0.05,
            adam: AdamHyper::default(),
            loss: LossConfig::default(),
            snr: SnrPolicy::TwoRange,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.lr_fixed_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "lr_fixed_epochs {} must be below epochs {}",
                self.lr_fixed_epochs, self.epochs
            )));
        }
        if self.lr_init <= 0.0 || self.lr_final <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.batch_size == 0 || self.utterances_per_epoch == 0 || self.validation_count == 0 {
            return Err(Error::Config("zero-sized training geometry".into()));
        }
        Ok(())
    }
}

/// Learning rate for a 1-based epoch: fixed at `lr_init` through
/// `lr_fixed_epochs`, then geometric decay pinned so the final epoch is
/// exactly `lr_final`.
pub fn lr_at_epoch(epoch: usize, cfg: &TrainConfig) -> Result<f64> {
    if epoch == 0 || epoch > cfg.epochs {
        return Err(Error::EpochOutOfRange(epoch, cfg.epochs));
    }
    if epoch <= cfg.lr_fixed_epochs {
        return Ok(cfg.lr_init);
    }
    let span = (cfg.epochs - cfg.lr_fixed_epochs) as f64;
    let ratio = (cfg.lr_final / cfg.lr_init).powf(1.0 / span);
    Ok(cfg.lr_init * ratio.powf((epoch - cfg.lr_fixed_epochs) as f64))
}

/// One completed epoch in the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub val_pcm: f64,
    pub val_stoi: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

impl EpochRecord {
    /// One structured-text line; floats print in shortest round-trip form.
    pub fn render(&self) -> String {
        format!(
            "epoch={}\ttrain_loss={}\tval_pcm={}\tval_stoi={}\tlr={}\twall_ms={}",
            self.epoch, self.mean_train_loss, self.val_pcm, self.val_stoi, self.lr, self.wall_ms
        )
    }

    pub fn parse(line: &str) -> Result<EpochRecord> {
        let mut epoch = None;
        let mut train_loss = None;
        let mut val_pcm = None;
        let mut val_stoi = None;
        let mut lr = None;
        let mut wall_ms = None;
        for tok in line.split_whitespace() {
            if let Some((k, v)) = tok.split_once('=') {
                match k {
                    "epoch" => epoch = v.parse().ok(),
                    "train_loss" => train_loss = v.parse().ok(),
                    "val_pcm" => val_pcm = v.parse().ok(),
                    "val_stoi" => val_stoi = v.parse().ok(),
                    "lr" => lr = v.parse().ok(),
                    "wall_ms" => wall_ms = v.parse().ok(),
                    _ => {}
                }
            }
        }
        match (epoch, train_loss, val_pcm, val_stoi, lr, wall_ms) {
            (Some(e), Some(t), Some(p), Some(s), Some(l), Some(w)) => Ok(EpochRecord {
                epoch: e,
                mean_train_loss: t,
                val_pcm: p,
                val_stoi: s,
                lr: l,
                wall_ms: w,
            }),
            _ => Err(Error::Other(format!("malformed epoch log line: {line}"))),
        }
    }
}

pub fn render_epoch_log(log: &[EpochRecord]) -> String {
    let mut out = String::new();
    for r in log {
        let _ = writeln!(out, "{}", r.render());
    }
    out
}

pub fn parse_epoch_log(text: &str) -> Result<Vec<EpochRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(EpochRecord::parse)
        .collect()
}

/// Checkpoint selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionCriterion {
    MinPcm,
    MaxStoi,
}

/// Pick the epoch with the best validation metric; ties go to the later
/// epoch. Pure function of the log.
pub fn select_checkpoint(log: &[EpochRecord], criterion: SelectionCriterion) -> Result<usize> {
    if log.is_empty() {
        return Err(Error::EmptyLog);
    }
    let mut best = &log[0];
    for r in &log[1..] {
        let better = match criterion {
            SelectionCriterion::MinPcm => r.val_pcm <= best.val_pcm,
            SelectionCriterion::MaxStoi => r.val_stoi >= best.val_stoi,
        };
        if better {
            best = r;
        }
    }
    Ok(best.epoch)
}

/// Where training material comes from.
#[derive(Debug, Clone)]
pub enum CorpusSource {
    /// Directories of WAV files.
    Directories {
        clean_dir: PathBuf,
        noise_dir: PathBuf,
    },
    /// Self-contained synthetic material: speech-like harmonics plus white
    /// noise, `seconds` of each.
    Synthetic { seconds: f64, sample_rate: u32 },
}

struct MaterialPool {
    clean: Vec<AudioBuffer>,
    noise: Vec<AudioBuffer>,
}

fn materialize(source: &CorpusSource, seed: u64) -> Result<MaterialPool> {
    match source {
        CorpusSource::Directories {
            clean_dir,
            noise_dir,
        } => {
            let clean_files = crate::audio::list_wav_files(clean_dir)?;
            let noise_files = crate::audio::list_wav_files(noise_dir)?;
            if clean_files.is_empty() {
                return Err(Error::EmptyCorpusDir(clean_dir.clone()));
            }
            if noise_files.is_empty() {
                return Err(Error::EmptyCorpusDir(noise_dir.clone()));
            }
            Ok(MaterialPool {
                clean: clean_files
                    .iter()
                    .map(crate::audio::read_wav)
                    .collect::<Result<_>>()?,
                noise: noise_files
                    .iter()
                    .map(crate::audio::read_wav)
                    .collect::<Result<_>>()?,
            })
        }
        CorpusSource::Synthetic {
            seconds,
            sample_rate,
        } => {
            let chunk = 2.0; // seconds per utterance
            let count = (seconds / chunk).ceil().max(1.0) as usize;
            let clean = (0..count)
                .map(|i| {
                    crate::mix::synth_speech_like(derive_seed(seed, 10, i as u64), chunk, *sample_rate)
                })
                .collect();
            let noise = (0..count)
                .map(|i| {
                    crate::mix::synth_modulated_noise(
                        derive_seed(seed, 11, i as u64),
                        chunk,
                        *sample_rate,
                        0.3,
                    )
                })
                .collect();
            Ok(MaterialPool { clean, noise })
        }
    }
}

/// Stable per-purpose seed derivation (splitmix-style mixing).
pub fn derive_seed(seed: u64, stream: u64, idx: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ idx.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Everything `train` leaves behind.
#[derive(Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    pub params: ParamSet,
    pub best_pcm_epoch: usize,
    pub best_stoi_epoch: usize,
}

const LOG_FILE: &str = "epochs.log";
const BEST_PCM_FILE: &str = "best_pcm.arnc";
const BEST_STOI_FILE: &str = "best_stoi.arnc";
const LAST_FILE: &str = "last.arnc";

/// Resolve a checkpoint path inside a run directory for a selection
/// criterion; passing a file path returns it unchanged.
pub fn checkpoint_path_for(path: &Path, criterion: SelectionCriterion) -> PathBuf {
    if path.is_dir() {
        match criterion {
            SelectionCriterion::MinPcm => path.join(BEST_PCM_FILE),
            SelectionCriterion::MaxStoi => path.join(BEST_STOI_FILE),
        }
    } else {
        path.to_path_buf()
    }
}

/// Validation material: the fixed set mixed once at the configured SNR.
/// Metrics run on the signals as they round-trip through 16-bit WAV, so a
/// later `enhance` + `evaluate` over the written files reproduces them.
struct ValidationSet {
    pairs: Vec<MixturePair>,
}

fn build_validation_set(
    pool: &MaterialPool,
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<ValidationSet> {
    let mut pairs = Vec::with_capacity(cfg.validation_count);
    for v in 0..cfg.validation_count {
        let item_seed = derive_seed(cfg.seed, 1, v as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(item_seed);
        let drawn = draw_mixture(
            &pool.clean,
            &pool.noise,
            &mut rng,
            cfg.validation_utterance_len,
            SnrPolicy::Fixed(cfg.validation_snr_db),
            cfg.target_rms,
            true,
            item_seed,
        )?;
        if let Some(dir) = out_dir {
            let name = format!("utt_{v:05}.wav");
            write_wav(&drawn.pair.clean, dir.join("val/clean").join(&name))?;
            write_wav(&drawn.pair.mixture, dir.join("val/mix").join(&name))?;
        }
        pairs.push(pcm_pair_quantized(&drawn.pair));
    }
    Ok(ValidationSet { pairs })
}

/// Evaluate validation loss and STOI. Runs on the f32-round-tripped
/// parameters and on WAV-quantized audio, so enhancing the written
/// validation files with the saved checkpoint reproduces these numbers.
fn validate(
    params: &ParamSet,
    arn_cfg: &ArnConfig,
    cfg: &TrainConfig,
    val: &ValidationSet,
) -> Result<(f64, f64)> {
    let deployable = params.f32_round_trip();
    let mut pcm_total = 0.0;
    let mut stoi_total = 0.0;
    for pair in &val.pairs {
        let enhanced = crate::arn::enhance(&pair.mixture, &deployable, arn_cfg)?;
        pcm_total += pcm_loss(&enhanced, &pair.clean, &pair.mixture, &cfg.loss)?;
        stoi_total += stoi(&pair.clean, &enhanced.quantized())?;
    }
    let n = val.pairs.len() as f64;
    Ok((pcm_total / n, stoi_total / n))
}

/// Run training. When `out_dir` is given, persists the epoch log, rolling
/// best-by-loss / best-by-STOI checkpoints, the final checkpoint, and the
/// fixed validation set as WAV files.
///
/// Batches are mixed on a producer thread and consumed over a bounded queue;
/// every batch is derived from `(seed, step)` alone, so the overlap never
/// affects results. A non-finite loss or gradient aborts training with the
/// checkpoints of the last good epoch still on disk.
pub fn train(
    cfg: &TrainConfig,
    arn_cfg: &ArnConfig,
    source: &CorpusSource,
    out_dir: Option<&Path>,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    arn_cfg.validate()?;
    if cfg.utterance_len < arn_cfg.frame_len {
        return Err(Error::Config(format!(
            "utterance_len {} shorter than one frame {}",
            cfg.utterance_len, arn_cfg.frame_len
        )));
    }

    if let Some(dir) = out_dir {
        for sub in ["val/clean", "val/mix"] {
            std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir, e))?;
        }
    }

    let pool = Arc::new(materialize(source, cfg.seed)?);
    let val = build_validation_set(&pool, cfg, out_dir)?;

    let mut params = init_params(arn_cfg, cfg.seed);
    let mut adam = AdamState::new(&params);

    let steps_per_epoch = cfg.utterances_per_epoch.div_ceil(cfg.batch_size);
    let total_steps = steps_per_epoch * cfg.epochs;

    // Producer: mixes batches ahead of the optimizer, two in flight.
    let (batch_tx, batch_rx) = sync_channel::<Result<Vec<MixturePair>>>(2);
    let producer = {
        let pool = Arc::clone(&pool);
        let cfg = cfg.clone();
        std::thread::spawn(move || {
            for step in 0..total_steps {
                let mut batch = Vec::with_capacity(cfg.batch_size);
                let mut failed = None;
                for b in 0..cfg.batch_size {
                    let item_seed =
                        derive_seed(cfg.seed, 2, (step * cfg.batch_size + b) as u64);
                    let mut rng = ChaCha8Rng::seed_from_u64(item_seed);
                    match draw_mixture(
                        &pool.clean,
                        &pool.noise,
                        &mut rng,
                        cfg.utterance_len,
                        cfg.snr,
                        cfg.target_rms,
                        true,
                        item_seed,
                    ) {
                        Ok(drawn) => batch.push(drawn.pair),
                        Err(e) => {
                            failed = Some(e);
                            break;
                        }
                    }
                }
                let msg = match failed {
                    Some(e) => Err(e),
                    None => Ok(batch),
                };
                if batch_tx.send(msg).is_err() {
                    return; // consumer is gone
                }
            }
        })
    };

    let mut log: Vec<EpochRecord> = Vec::with_capacity(cfg.epochs);
    let mut best_pcm: Option<(f64, usize)> = None;
    let mut best_stoi: Option<(f64, usize)> = None;
    let mut abort: Option<Error> = None;

    'epochs: for epoch in 1..=cfg.epochs {
        let lr = lr_at_epoch(epoch, cfg)?;
        let started = Instant::now();
        let mut loss_sum = 0.0;

        for step_in_epoch in 0..steps_per_epoch {
            let global_step = (epoch - 1) * steps_per_epoch + step_in_epoch;
            let batch = match batch_rx.recv() {
                Ok(Ok(batch)) => batch,
                Ok(Err(e)) => {
                    abort = Some(e);
                    break 'epochs;
                }
                Err(_) => {
                    abort = Some(Error::Other("batch producer stopped early".into()));
                    break 'epochs;
                }
            };

            let mut tape = Tape::new(derive_seed(cfg.seed, 3, global_step as u64));
            let bound = bind_params(&mut tape, &params, true);
            let mut batch_losses = Vec::with_capacity(batch.len());
            for pair in &batch {
                let s_hat = arn_forward_on_tape(
                    &mut tape,
                    &pair.mixture.samples,
                    &params,
                    &bound,
                    arn_cfg,
                    true,
                )?;
                batch_losses.push(pcm_loss_on_tape(
                    &mut tape,
                    s_hat,
                    &pair.clean.samples,
                    &pair.mixture.samples,
                    &cfg.loss,
                    pair.mixture.sample_rate,
                )?);
            }
            let mut total = batch_losses[0];
            for &l in &batch_losses[1..] {
                total = tape.add(total, l);
            }
            let loss_node = tape.scale(total, 1.0 / batch.len() as f64);

            let loss_value = match tape.scalar(loss_node) {
                Ok(v) => v,
                Err(e) => {
                    abort = Some(e);
                    break 'epochs;
                }
            };
            loss_sum += loss_value;

            let node_grads = match tape.backward(loss_node) {
                Ok(g) => g,
                Err(e) => {
                    abort = Some(e);
                    break 'epochs;
                }
            };
            let mut grads = GradSet {
                entries: params
                    .iter()
                    .zip(bound.ids())
                    .map(|(entry, &id)| (entry.name.clone(), node_grads.of(&tape, id)))
                    .collect(),
            };
            if let Some(max_norm) = cfg.clip_norm {
                clip_global_norm(&mut grads, max_norm);
            }
            if let Err(e) = adam_step(&mut params, &grads, &mut adam, lr, &cfg.adam) {
                abort = Some(e);
                break 'epochs;
            }
        }

        let (val_pcm, val_stoi) = validate(&params, arn_cfg, cfg, &val)?;
        let record = EpochRecord {
            epoch,
            mean_train_loss: loss_sum / steps_per_epoch as f64,
            val_pcm,
            val_stoi,
            lr,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        progress(&record);
        log.push(record);

        // Rolling bests; <=/>= so ties land on the later epoch, matching
        // `select_checkpoint`.
        let improved_pcm = best_pcm.map(|(v, _)| val_pcm <= v).unwrap_or(true);
        let improved_stoi = best_stoi.map(|(v, _)| val_stoi >= v).unwrap_or(true);
        if improved_pcm {
            best_pcm = Some((val_pcm, epoch));
        }
        if improved_stoi {
            best_stoi = Some((val_stoi, epoch));
        }

        if let Some(dir) = out_dir {
            let ck = Checkpoint {
                config: arn_cfg.clone(),
                params: params.clone(),
                epoch: epoch as u32,
                val_pcm,
                val_stoi,
            };
            if improved_pcm {
                save_checkpoint(&ck, dir.join(BEST_PCM_FILE))?;
            }
            if improved_stoi {
                save_checkpoint(&ck, dir.join(BEST_STOI_FILE))?;
            }
            save_checkpoint(&ck, dir.join(LAST_FILE))?;
            let mut f = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(dir.join(LOG_FILE))
                .map_err(|e| Error::io(dir, e))?;
            writeln!(f, "{}", log.last().unwrap().render()).map_err(|e| Error::io(dir, e))?;
        }
    }

    drop(batch_rx); // unblocks the producer if we bailed early
    let _ = producer.join();

    if let Some(e) = abort {
        return Err(e);
    }
    Ok(TrainOutcome {
        params,
        best_pcm_epoch: best_pcm.map(|(_, e)| e).unwrap_or(0),
        best_stoi_epoch: best_stoi.map(|(_, e)| e).unwrap_or(0),
        log,
    })
}

/// Parse a training config file: `key = value` lines, `#` comments. Unset
/// keys fall back to defaults; the corpus comes from `clean_dir`/`noise_dir`
/// or from `synthetic_seconds`.
pub fn parse_train_config(text: &str) -> Result<(TrainConfig, ArnConfig, CorpusSource)> {
    let mut cfg = TrainConfig::default();
    let mut arn = ArnConfig::default();
    let mut clean_dir: Option<PathBuf> = None;
    let mut noise_dir: Option<PathBuf> = None;
    let mut synthetic_seconds: Option<f64> = None;
    let mut sample_rate: u32 = 16000;

    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected key = value, got {raw:?}",
                lineno + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();
        let bad = |what: &str| Error::Config(format!("line {}: bad {what}: {value}", lineno + 1));

        macro_rules! num {
            ($what:expr) => {
                value.parse().map_err(|_| bad($what))?
            };
        }
        match key {
            "frame_len" => arn.frame_len = num!("frame_len"),
            "hop" => arn.hop = num!("hop"),
            "latent" => arn.latent = num!("latent"),
            "num_blocks" => arn.num_blocks = num!("num_blocks"),
            "heads" => arn.heads = num!("heads"),
            "ffn_expansion" => arn.ffn_expansion = num!("ffn_expansion"),
            "dropout_p" => arn.dropout_p = num!("dropout_p"),
            "epochs" => cfg.epochs = num!("epochs"),
            "utterances_per_epoch" => cfg.utterances_per_epoch = num!("utterances_per_epoch"),
            "batch_size" => cfg.batch_size = num!("batch_size"),
            "utterance_len" => cfg.utterance_len = num!("utterance_len"),
            "lr_init" => cfg.lr_init = num!("lr_init"),
            "lr_final" => cfg.lr_final = num!("lr_final"),
            "lr_fixed_epochs" => cfg.lr_fixed_epochs = num!("lr_fixed_epochs"),
            "seed" => cfg.seed = num!("seed"),
            "validation_snr_db" => cfg.validation_snr_db = num!("validation_snr_db"),
            "validation_count" => cfg.validation_count = num!("validation_count"),
            "validation_utterance_len" => {
                cfg.validation_utterance_len = num!("validation_utterance_len")
            }
            "target_rms" => cfg.target_rms = num!("target_rms"),
            "loss_fft_size" => cfg.loss.fft_size = num!("loss_fft_size"),
            "loss_hop" => cfg.loss.hop = num!("loss_hop"),
            "clip_norm" => {
                let v: f64 = num!("clip_norm");
                cfg.clip_norm = if v > 0.0 { Some(v) } else { None };
            }
            "snr_fixed_db" => cfg.snr = SnrPolicy::Fixed(num!("snr_fixed_db")),
            "sample_rate" => sample_rate = num!("sample_rate"),
            "clean_dir" => clean_dir = Some(PathBuf::from(value)),
            "noise_dir" => noise_dir = Some(PathBuf::from(value)),
            "synthetic_seconds" => synthetic_seconds = Some(num!("synthetic_seconds")),
            other => {
                return Err(Error::Config(format!(
                    "line {}: unknown key {other}",
                    lineno + 1
                )))
            }
        }
    }

    let source = match (clean_dir, noise_dir, synthetic_seconds) {
        (Some(clean_dir), Some(noise_dir), None) => CorpusSource::Directories {
            clean_dir,
            noise_dir,
        },
        (None, None, Some(seconds)) => CorpusSource::Synthetic {
            seconds,
            sample_rate,
        },
        _ => {
            return Err(Error::Config(
                "set either clean_dir and noise_dir, or synthetic_seconds".into(),
            ))
        }
    };
    Ok((cfg, arn, source))
}
