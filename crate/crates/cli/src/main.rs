//! Single executable for the enhancement pipeline: mix, train, enhance,
//! evaluate, features, score-wer.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure
//! (non-finite values during training or inference).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use arn_core::arn::load_checkpoint;
use arn_core::audio::{list_wav_files, read_wav, write_wav};
use arn_core::dsp::{log_mel_features, write_features};
use arn_core::error::Error as CoreError;
use arn_core::metrics::{snr_db, stoi, wer, MetricsReport, UtteranceMetrics};
use arn_core::mix::{build_corpus, read_manifest, BuildOptions, SnrPolicy};
use arn_core::train::{
    checkpoint_path_for, parse_train_config, train, SelectionCriterion,
};

#[derive(Parser)]
#[command(
    name = "arn",
    version,
    about = "Time-domain speech enhancement toolkit",
    subcommand_required = true,
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SelectArg {
    /// Checkpoint with the lowest validation loss
    MinPcm,
    /// Checkpoint with the highest validation STOI
    MaxStoi,
}

impl From<SelectArg> for SelectionCriterion {
    fn from(v: SelectArg) -> Self {
        match v {
            SelectArg::MinPcm => SelectionCriterion::MinPcm,
            SelectArg::MaxStoi => SelectionCriterion::MaxStoi,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Mix clean speech and noise into a corpus at controlled SNRs
    Mix {
        /// Directory of clean WAV files
        #[arg(long)]
        clean_dir: PathBuf,
        /// Directory of noise WAV files
        #[arg(long)]
        noise_dir: PathBuf,
        /// Number of mixtures to generate
        #[arg(long)]
        count: usize,
        /// Seed driving every random choice
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (receives clean/, noise/, mix/ and manifest.txt)
        #[arg(long)]
        out: PathBuf,
        /// Use one fixed SNR in dB for every mixture
        #[arg(long, conflicts_with = "snr_paper_ranges")]
        snr_fixed: Option<f64>,
        /// Sample SNRs from the two training ranges [-7, 0] and [0, 10] dB
        /// with equal probability (the default policy)
        #[arg(long)]
        snr_paper_ranges: bool,
        /// Mixture RMS after normalization
        #[arg(long, default_value_t = 0.05)]
        target_rms: f64,
        /// Samples per emitted utterance
        #[arg(long, default_value_t = 64000)]
        utterance_len: usize,
    },
    /// Train the enhancement model from a config file
    Train {
        /// Plain-text key = value config file
        #[arg(long)]
        config: PathBuf,
        /// Run directory for checkpoints, the epoch log and validation audio
        #[arg(long)]
        out: PathBuf,
    },
    /// Enhance a WAV file or a directory of WAV files
    Enhance {
        /// Checkpoint file, or a training run directory to select from
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input WAV file or directory
        #[arg(long = "in")]
        input: PathBuf,
        /// Output WAV file or directory
        #[arg(long)]
        out: PathBuf,
        /// Which checkpoint to load from a run directory
        #[arg(long, value_enum)]
        select: Option<SelectArg>,
    },
    /// Compute STOI and output SNR of processed audio against references
    Evaluate {
        /// Directory of clean reference WAV files
        #[arg(long)]
        clean: PathBuf,
        /// Directory of processed WAV files (matched by file name)
        #[arg(long)]
        processed: PathBuf,
        /// Report file to write
        #[arg(long)]
        out: PathBuf,
        /// Corpus manifest; adds per-SNR-bin grouping to the report
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Extract log-Mel + delta features into a feature file
    Features {
        /// Input WAV file (16 kHz)
        #[arg(long = "in")]
        input: PathBuf,
        /// Output feature file
        #[arg(long)]
        out: PathBuf,
    },
    /// Word error rate of hypothesis transcripts against references
    ScoreWer {
        /// Reference transcripts, one utterance per line: "id words..."
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Hypothesis transcripts in the same format
        #[arg(long)]
        hyp: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are successes; anything else is a
            // usage error on stderr with exit code 1.
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };

    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                return ExitCode::from(1);
            }
            let numeric = e.downcast_ref::<CoreError>().is_some_and(|c| {
                matches!(
                    c,
                    CoreError::NonFiniteForward(_) | CoreError::NonFiniteGradient(_)
                )
            });
            ExitCode::from(if numeric { 3 } else { 2 })
        }
    }
}

/// Flag misuse detected after parsing (depends on filesystem state).
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Mix {
            clean_dir,
            noise_dir,
            count,
            seed,
            out,
            snr_fixed,
            snr_paper_ranges: _,
            target_rms,
            utterance_len,
        } => {
            let snr = match snr_fixed {
                Some(db) => SnrPolicy::Fixed(db),
                None => SnrPolicy::TwoRange,
            };
            let opts = BuildOptions {
                count,
                seed,
                snr,
                target_rms,
                utterance_len,
                loop_noise: true,
            };
            let manifest = build_corpus(&clean_dir, &noise_dir, &out, &opts)?;
            println!(
                "wrote {} mixtures to {} (manifest.txt alongside)",
                manifest.entries.len(),
                out.display()
            );
            Ok(())
        }

        Command::Train { config, out } => {
            let text = std::fs::read_to_string(&config)
                .map_err(|e| CoreError::io(&config, e))?;
            let (train_cfg, arn_cfg, source) = parse_train_config(&text)?;
            std::fs::create_dir_all(&out).map_err(|e| CoreError::io(&out, e))?;
            let outcome = train(&train_cfg, &arn_cfg, &source, Some(&out), |record| {
                println!("{}", record.render());
            })?;
            println!(
                "done: best-by-loss epoch {}, best-by-stoi epoch {} ({})",
                outcome.best_pcm_epoch,
                outcome.best_stoi_epoch,
                out.display()
            );
            Ok(())
        }

        Command::Enhance {
            checkpoint,
            input,
            out,
            select,
        } => {
            if checkpoint.is_file() && select.is_some() {
                return Err(UsageError(
                    "--select only applies when --checkpoint is a training run directory".into(),
                )
                .into());
            }
            let criterion = select.map(SelectionCriterion::from).unwrap_or(
                SelectionCriterion::MinPcm,
            );
            let path = checkpoint_path_for(&checkpoint, criterion);
            let ck = load_checkpoint(&path)?;
            println!(
                "loaded {} (epoch {}, val_pcm {}, val_stoi {})",
                path.display(),
                ck.epoch,
                ck.val_pcm,
                ck.val_stoi
            );

            if input.is_dir() {
                std::fs::create_dir_all(&out).map_err(|e| CoreError::io(&out, e))?;
                let files = list_wav_files(&input)?;
                if files.is_empty() {
                    anyhow::bail!("no .wav files in {}", input.display());
                }
                for file in &files {
                    let noisy = read_wav(file)?;
                    let enhanced = arn_core::arn::enhance(&noisy, &ck.params, &ck.config)?;
                    write_wav(&enhanced, out.join(file.file_name().unwrap()))?;
                }
                println!("enhanced {} files into {}", files.len(), out.display());
            } else {
                let noisy = read_wav(&input)?;
                let enhanced = arn_core::arn::enhance(&noisy, &ck.params, &ck.config)?;
                let target = if out.is_dir() {
                    out.join(input.file_name().unwrap())
                } else {
                    out.clone()
                };
                write_wav(&enhanced, &target)?;
                println!("enhanced {} -> {}", input.display(), target.display());
            }
            Ok(())
        }

        Command::Evaluate {
            clean,
            processed,
            out,
            manifest,
        } => {
            let bins: BTreeMap<String, i32> = match manifest {
                Some(path) => {
                    let m = read_manifest(&path)?;
                    m.entries
                        .iter()
                        .map(|e| {
                            (
                                format!("utt_{:05}", e.id),
                                e.snr_db.round() as i32,
                            )
                        })
                        .collect()
                }
                None => BTreeMap::new(),
            };

            let clean_files = list_wav_files(&clean)?;
            if clean_files.is_empty() {
                anyhow::bail!("no .wav files in {}", clean.display());
            }
            let mut report = MetricsReport::default();
            for clean_path in &clean_files {
                let name = clean_path.file_name().unwrap();
                let processed_path = processed.join(name);
                if !processed_path.exists() {
                    anyhow::bail!("missing processed file {}", processed_path.display());
                }
                let reference = read_wav(clean_path)?;
                let estimate = read_wav(&processed_path)?;
                let id = clean_path
                    .file_stem()
                    .unwrap()
                    .to_string_lossy()
                    .into_owned();
                report.utterances.push(UtteranceMetrics {
                    snr_bin: bins.get(&id).copied(),
                    stoi: stoi(&reference, &estimate)?,
                    snr_out_db: snr_db(&reference, &estimate)?,
                    id,
                });
            }
            let text = report.render_text();
            std::fs::write(&out, &text).map_err(|e| CoreError::io(&out, e))?;
            // Echo the aggregate block.
            for line in text.lines().skip_while(|l| !l.starts_with('#') || !l.contains("per-bin")) {
                println!("{line}");
            }
            println!("report written to {}", out.display());
            Ok(())
        }

        Command::Features { input, out } => {
            let audio = read_wav(&input)?;
            let features = log_mel_features(&audio)?;
            write_features(&features, &out)?;
            println!(
                "wrote {} frames x {} dims to {}",
                features.num_frames(),
                features.dim(),
                out.display()
            );
            Ok(())
        }

        Command::ScoreWer { reference, hyp } => {
            let refs = read_transcripts(&reference)?;
            let hyps = read_transcripts(&hyp)?;
            if refs.is_empty() {
                return Err(CoreError::EmptyReference.into());
            }
            let mut total_edits = 0usize;
            let mut total_ref = 0usize;
            for (id, ref_words) in &refs {
                if ref_words.is_empty() {
                    return Err(CoreError::EmptyReference.into());
                }
                let empty = Vec::new();
                let hyp_words = hyps.get(id).unwrap_or(&empty);
                let b = wer(ref_words, hyp_words)?;
                println!(
                    "utt\t{id}\twer={:.4}\tsub={}\tdel={}\tins={}\tref_len={}",
                    b.rate(),
                    b.substitutions,
                    b.deletions,
                    b.insertions,
                    b.ref_len
                );
                total_edits += b.edits();
                total_ref += b.ref_len;
            }
            println!(
                "overall\twer={:.4}\tedits={total_edits}\tref_words={total_ref}\tutterances={}",
                total_edits as f64 / total_ref as f64,
                refs.len()
            );
            Ok(())
        }
    }
}

/// Parse "id words..." transcript lines, keeping utterance order.
fn read_transcripts(path: &Path) -> anyhow::Result<Vec<(String, Vec<String>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id = parts.next().unwrap().to_string();
        out.push((id, parts.map(str::to_string).collect()));
    }
    Ok(out)
}

trait TranscriptLookup {
    fn get(&self, id: &str) -> Option<&Vec<String>>;
}

impl TranscriptLookup for Vec<(String, Vec<String>)> {
    fn get(&self, id: &str) -> Option<&Vec<String>> {
        self.iter().find(|(i, _)| i == id).map(|(_, w)| w)
    }
}
