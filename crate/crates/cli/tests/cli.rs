//! End-to-end tests of the `arn` binary: help coverage, exit codes, and the
//! full mix / train / enhance / evaluate / features / score-wer pipeline.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use arn_core::audio::{read_wav, write_wav};
use arn_core::metrics::MetricsReport;
use arn_core::mix::{read_manifest, synth_modulated_noise, synth_speech_like};
use arn_core::train::parse_epoch_log;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_arn"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn arn")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn write_source_material(dir: &Path) -> (PathBuf, PathBuf) {
    let clean = dir.join("clean_src");
    let noise = dir.join("noise_src");
    std::fs::create_dir_all(&clean).unwrap();
    std::fs::create_dir_all(&noise).unwrap();
    for i in 0..3 {
        write_wav(
            &synth_speech_like(300 + i, 2.0, 16000),
            clean.join(format!("sp{i}.wav")),
        )
        .unwrap();
        write_wav(
            &synth_modulated_noise(400 + i, 2.0, 16000, 0.3),
            noise.join(format!("n{i}.wav")),
        )
        .unwrap();
    }
    (clean, noise)
}

#[test]
fn help_enumerates_every_flag() {
    let top = run(&["--help"]);
    assert_eq!(code(&top), 0);
    let text = stdout(&top);
    for sub in ["mix", "train", "enhance", "evaluate", "features", "score-wer"] {
        assert!(text.contains(sub), "top-level help missing {sub}");
    }

    let expected: &[(&str, &[&str])] = &[
        (
            "mix",
            &[
                "--clean-dir",
                "--noise-dir",
                "--count",
                "--seed",
                "--out",
                "--snr-fixed",
                "--snr-paper-ranges",
                "--target-rms",
                "--utterance-len",
            ],
        ),
        ("train", &["--config", "--out"]),
        ("enhance", &["--checkpoint", "--in", "--out", "--select"]),
        (
            "evaluate",
            &["--clean", "--processed", "--out", "--manifest"],
        ),
        ("features", &["--in", "--out"]),
        ("score-wer", &["--ref", "--hyp"]),
    ];
    for (sub, flags) in expected {
        let out = run(&[sub, "--help"]);
        assert_eq!(code(&out), 0, "{sub} --help failed");
        let text = stdout(&out);
        for flag in *flags {
            assert!(text.contains(flag), "{sub} --help missing {flag}");
        }
    }
}

#[test]
fn unknown_subcommand_is_usage_error() {
    let out = run(&["frobnicate"]);
    assert_eq!(code(&out), 1);
    assert!(!out.stderr.is_empty());
    assert!(String::from_utf8_lossy(&out.stderr).to_lowercase().contains("usage"));
}

#[test]
fn conflicting_snr_flags_are_usage_error() {
    let out = run(&[
        "mix",
        "--clean-dir",
        "x",
        "--noise-dir",
        "y",
        "--count",
        "1",
        "--out",
        "z",
        "--snr-fixed",
        "-3",
        "--snr-paper-ranges",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn missing_input_is_data_error() {
    let out = run(&[
        "features",
        "--in",
        "/nonexistent/audio.wav",
        "--out",
        "/tmp/never.feat",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn mix_count_zero_succeeds_with_empty_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (clean, noise) = write_source_material(dir.path());
    let out_dir = dir.path().join("corpus");
    let out = run(&[
        "mix",
        "--clean-dir",
        clean.to_str().unwrap(),
        "--noise-dir",
        noise.to_str().unwrap(),
        "--count",
        "0",
        "--seed",
        "7",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let manifest = read_manifest(out_dir.join("manifest.txt")).unwrap();
    assert!(manifest.entries.is_empty());
}

#[test]
fn mix_is_deterministic_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let (clean, noise) = write_source_material(dir.path());
    let run_mix = |out_dir: &Path| {
        let out = run(&[
            "mix",
            "--clean-dir",
            clean.to_str().unwrap(),
            "--noise-dir",
            noise.to_str().unwrap(),
            "--count",
            "3",
            "--seed",
            "9",
            "--utterance-len",
            "8000",
            "--out",
            out_dir.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run_mix(&a);
    run_mix(&b);
    for sub in ["clean", "noise", "mix"] {
        for i in 0..3 {
            let name = format!("utt_{i:05}.wav");
            assert_eq!(
                std::fs::read(a.join(sub).join(&name)).unwrap(),
                std::fs::read(b.join(sub).join(&name)).unwrap()
            );
        }
    }
}

/// The whole loop: train on synthetic material, enhance the persisted
/// validation mixtures with the selected checkpoint, evaluate them, and check
/// the report reproduces the logged validation STOI.
#[test]
fn train_enhance_evaluate_consistency() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("train.conf");
    std::fs::write(
        &config_path,
        "\
frame_len = 32
hop = 16
latent = 32
num_blocks = 2
heads = 2
dropout_p = 0.05
epochs = 2
lr_fixed_epochs = 1
lr_init = 1e-3
lr_final = 5e-4
utterances_per_epoch = 4
batch_size = 2
utterance_len = 4000
validation_count = 2
validation_utterance_len = 16000
seed = 21
synthetic_seconds = 20
",
    )
    .unwrap();

    let run_dir = dir.path().join("run");
    let out = run(&[
        "train",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let log = parse_epoch_log(&std::fs::read_to_string(run_dir.join("epochs.log")).unwrap())
        .unwrap();
    assert_eq!(log.len(), 2);

    // Enhance the persisted validation mixtures with the min-loss checkpoint.
    let enhanced_dir = dir.path().join("enhanced");
    let out = run(&[
        "enhance",
        "--checkpoint",
        run_dir.to_str().unwrap(),
        "--select",
        "min-pcm",
        "--in",
        run_dir.join("val/mix").to_str().unwrap(),
        "--out",
        enhanced_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let loaded_line = stdout(&out);
    assert!(loaded_line.contains("best_pcm.arnc"), "{loaded_line}");

    let report_path = dir.path().join("report.txt");
    let out = run(&[
        "evaluate",
        "--clean",
        run_dir.join("val/clean").to_str().unwrap(),
        "--processed",
        enhanced_dir.to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    // The evaluated mean STOI equals the logged validation STOI of the
    // selected (min-loss) epoch.
    let report =
        MetricsReport::parse_text(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report.utterances.len(), 2);
    let best = log
        .iter()
        .min_by(|a, b| a.val_pcm.partial_cmp(&b.val_pcm).unwrap())
        .unwrap();
    let diff = (report.overall().mean_stoi - best.val_stoi).abs();
    assert!(
        diff <= 1e-9,
        "evaluate mean stoi {} vs logged {} (diff {diff})",
        report.overall().mean_stoi,
        best.val_stoi
    );
}

#[test]
fn enhance_single_file_and_select_misuse() {
    let dir = tempfile::tempdir().unwrap();

    // Train the smallest possible run to get a checkpoint file.
    let config_path = dir.path().join("train.conf");
    std::fs::write(
        &config_path,
        "\
frame_len = 32
hop = 16
latent = 32
num_blocks = 2
heads = 2
epochs = 2
lr_fixed_epochs = 1
utterances_per_epoch = 2
batch_size = 1
utterance_len = 4000
validation_count = 1
validation_utterance_len = 16000
seed = 33
synthetic_seconds = 10
",
    )
    .unwrap();
    let run_dir = dir.path().join("run");
    let out = run(&[
        "train",
        "--config",
        config_path.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let noisy_path = dir.path().join("noisy.wav");
    write_wav(&synth_speech_like(77, 0.5, 16000), &noisy_path).unwrap();
    let out_path = dir.path().join("enhanced.wav");

    // Direct checkpoint file: fine without --select.
    let ck = run_dir.join("last.arnc");
    let out = run(&[
        "enhance",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--in",
        noisy_path.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let enhanced = read_wav(&out_path).unwrap();
    assert_eq!(enhanced.len(), 8000);

    // --select with a checkpoint *file* is flag misuse.
    let out = run(&[
        "enhance",
        "--checkpoint",
        ck.to_str().unwrap(),
        "--select",
        "max-stoi",
        "--in",
        noisy_path.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn features_writes_feature_file() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("x.wav");
    write_wav(&synth_speech_like(55, 0.5, 16000), &wav).unwrap();
    let feat = dir.path().join("x.feat");
    let out = run(&[
        "features",
        "--in",
        wav.to_str().unwrap(),
        "--out",
        feat.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let bytes = std::fs::read(&feat).unwrap();
    assert_eq!(&bytes[0..4], b"ARNF");
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    assert_eq!(d, 240);

    // Wrong sample rate is a data error.
    let wav8k = dir.path().join("x8k.wav");
    write_wav(&synth_speech_like(55, 0.5, 8000), &wav8k).unwrap();
    let out = run(&[
        "features",
        "--in",
        wav8k.to_str().unwrap(),
        "--out",
        feat.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn score_wer_reports_rates() {
    let dir = tempfile::tempdir().unwrap();
    let ref_path = dir.path().join("ref.txt");
    let hyp_path = dir.path().join("hyp.txt");
    std::fs::write(&ref_path, "utt1 the cat sat\nutt2 hello world\n").unwrap();
    std::fs::write(&hyp_path, "utt1 the hat sat\nutt2 hello there world\n").unwrap();
    let out = run(&[
        "score-wer",
        "--ref",
        ref_path.to_str().unwrap(),
        "--hyp",
        hyp_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    // utt1: one substitution of three words; utt2: one insertion of two.
    assert!(text.contains("utt1\twer=0.3333"), "{text}");
    assert!(text.contains("utt2\twer=0.5000"), "{text}");
    // Overall: 2 edits over 5 reference words.
    assert!(text.contains("overall\twer=0.4000"), "{text}");
}

#[test]
fn evaluate_with_manifest_bins_by_snr() {
    let dir = tempfile::tempdir().unwrap();
    let (clean, noise) = write_source_material(dir.path());
    let corpus = dir.path().join("corpus");
    let out = run(&[
        "mix",
        "--clean-dir",
        clean.to_str().unwrap(),
        "--noise-dir",
        noise.to_str().unwrap(),
        "--count",
        "2",
        "--seed",
        "13",
        "--snr-fixed",
        "3",
        "--utterance-len",
        "16000",
        "--out",
        corpus.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    // "Process" with the identity: evaluate mixtures against clean.
    let report_path = dir.path().join("report.txt");
    let out = run(&[
        "evaluate",
        "--clean",
        corpus.join("clean").to_str().unwrap(),
        "--processed",
        corpus.join("mix").to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
        "--manifest",
        corpus.join("manifest.txt").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report =
        MetricsReport::parse_text(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report.utterances.len(), 2);
    assert!(report.utterances.iter().all(|u| u.snr_bin == Some(3)));
    // Identity processing at +3 dB: intelligibility well away from 0 or 1.
    let mean = report.overall().mean_stoi;
    assert!(mean > 0.3 && mean < 0.999, "mean stoi {mean}");
}
