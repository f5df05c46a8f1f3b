//! Evaluation metrics: STOI, output SNR, and word error rate, plus the
//! per-utterance report with per-SNR-bin aggregation.

mod resample;
mod stoi;

pub use resample::resample;
pub use stoi::{stoi, stoi_clip_factor};

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// `10 log10(sum ref^2 / sum (ref - est)^2)`. A perfect estimate reports
/// positive infinity.
pub fn snr_db(reference: &AudioBuffer, estimate: &AudioBuffer) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::LengthMismatch(reference.len(), estimate.len()));
    }
    let signal: f64 = reference.samples.iter().map(|v| v * v).sum();
    if signal == 0.0 {
        return Err(Error::ZeroEnergy);
    }
    let error: f64 = reference
        .samples
        .iter()
        .zip(&estimate.samples)
        .map(|(r, e)| (r - e) * (r - e))
        .sum();
    if error == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / error).log10())
}

/// Levenshtein alignment counts for one utterance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WerBreakdown {
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub ref_len: usize,
}

impl WerBreakdown {
    pub fn edits(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }

    /// `(S + D + I) / ref_len`; may exceed 1.
    pub fn rate(&self) -> f64 {
        self.edits() as f64 / self.ref_len as f64
    }
}

/// Word error rate via Levenshtein alignment with unit costs. Backtrace ties
/// prefer substitution over insertion over deletion.
pub fn wer<S: AsRef<str>, T: AsRef<str>>(reference: &[S], hypothesis: &[T]) -> Result<WerBreakdown> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    let r = reference.len();
    let h = hypothesis.len();
    let mut dist = vec![vec![0usize; h + 1]; r + 1];
    for (i, row) in dist.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=h {
        dist[0][j] = j;
    }
    for i in 1..=r {
        for j in 1..=h {
            let cost = usize::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            dist[i][j] = (dist[i - 1][j - 1] + cost)
                .min(dist[i][j - 1] + 1)
                .min(dist[i - 1][j] + 1);
        }
    }

    let mut substitutions = 0;
    let mut deletions = 0;
    let mut insertions = 0;
    let (mut i, mut j) = (r, h);
    while i > 0 || j > 0 {
        let here = dist[i][j];
        if i > 0 && j > 0 {
            let cost = usize::from(reference[i - 1].as_ref() != hypothesis[j - 1].as_ref());
            if here == dist[i - 1][j - 1] + cost {
                substitutions += cost;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && here == dist[i][j - 1] + 1 {
            insertions += 1;
            j -= 1;
            continue;
        }
        deletions += 1;
        i -= 1;
    }

    Ok(WerBreakdown {
        substitutions,
        deletions,
        insertions,
        ref_len: r,
    })
}

/// Metrics for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceMetrics {
    pub id: String,
    /// Mixing SNR bin in dB (from a manifest); `None` when unbinned.
    pub snr_bin: Option<i32>,
    pub stoi: f64,
    pub snr_out_db: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinAggregate {
    pub count: usize,
    pub mean_stoi: f64,
    pub mean_snr_out_db: f64,
}

/// Per-utterance records plus per-bin and overall arithmetic means.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub utterances: Vec<UtteranceMetrics>,
}

fn mean(values: impl Iterator<Item = f64> + Clone, count: usize) -> f64 {
    values.sum::<f64>() / count as f64
}

impl MetricsReport {
    pub fn overall(&self) -> BinAggregate {
        let count = self.utterances.len();
        BinAggregate {
            count,
            mean_stoi: mean(self.utterances.iter().map(|u| u.stoi), count),
            mean_snr_out_db: mean(self.utterances.iter().map(|u| u.snr_out_db), count),
        }
    }

    /// Aggregates keyed by SNR bin, sorted ascending; unbinned utterances
    /// group under `None`.
    pub fn bins(&self) -> Vec<(Option<i32>, BinAggregate)> {
        let mut groups: BTreeMap<Option<i32>, Vec<&UtteranceMetrics>> = BTreeMap::new();
        for u in &self.utterances {
            groups.entry(u.snr_bin).or_default().push(u);
        }
        groups
            .into_iter()
            .map(|(bin, us)| {
                let count = us.len();
                (
                    bin,
                    BinAggregate {
                        count,
                        mean_stoi: mean(us.iter().map(|u| u.stoi), count),
                        mean_snr_out_db: mean(us.iter().map(|u| u.snr_out_db), count),
                    },
                )
            })
            .collect()
    }

    /// Plain-text report: one `utt` line per utterance (floats in shortest
    /// round-trip form), then per-bin columns plus the overall average.
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# metrics report");
        for u in &self.utterances {
            let bin = match u.snr_bin {
                Some(b) => b.to_string(),
                None => "-".into(),
            };
            let _ = writeln!(
                out,
                "utt\t{}\tsnr_bin={}\tstoi={}\tsnr_out_db={}",
                u.id, bin, u.stoi, u.snr_out_db
            );
        }
        let bins = self.bins();
        let header: Vec<String> = bins
            .iter()
            .map(|(b, _)| match b {
                Some(v) => format!("{v} dB"),
                None => "unbinned".into(),
            })
            .collect();
        let _ = writeln!(out, "\n# per-bin means");
        let _ = writeln!(out, "bins\t{}\tAvg.", header.join("\t"));
        let stoi_cols: Vec<String> = bins
            .iter()
            .map(|(_, a)| format!("{:.4}", a.mean_stoi))
            .collect();
        let overall = self.overall();
        let _ = writeln!(
            out,
            "stoi\t{}\t{:.4}",
            stoi_cols.join("\t"),
            overall.mean_stoi
        );
        let snr_cols: Vec<String> = bins
            .iter()
            .map(|(_, a)| format!("{:.2}", a.mean_snr_out_db))
            .collect();
        let _ = writeln!(
            out,
            "snr_out_db\t{}\t{:.2}",
            snr_cols.join("\t"),
            overall.mean_snr_out_db
        );
        let _ = writeln!(out, "count\t{}", overall.count);
        out
    }

    /// Parse the `utt` lines of a rendered report.
    pub fn parse_text(text: &str) -> Result<MetricsReport> {
        let mut utterances = Vec::new();
        for line in text.lines() {
            let Some(rest) = line.strip_prefix("utt\t") else {
                continue;
            };
            let mut parts = rest.split('\t');
            let id = parts
                .next()
                .ok_or_else(|| Error::Other("utt line without id".into()))?
                .to_string();
            let mut snr_bin = None;
            let mut stoi_v = None;
            let mut snr_out = None;
            for tok in parts {
                if let Some((k, v)) = tok.split_once('=') {
                    match k {
                        "snr_bin" => {
                            if v != "-" {
                                snr_bin = Some(v.parse().map_err(|_| {
                                    Error::Other(format!("bad snr_bin {v}"))
                                })?);
                            }
                        }
                        "stoi" => stoi_v = v.parse().ok(),
                        "snr_out_db" => snr_out = v.parse().ok(),
                        _ => {}
                    }
                }
            }
            utterances.push(UtteranceMetrics {
                id,
                snr_bin,
                stoi: stoi_v.ok_or_else(|| Error::Other("utt line without stoi".into()))?,
                snr_out_db: snr_out
                    .ok_or_else(|| Error::Other("utt line without snr_out_db".into()))?,
            });
        }
        Ok(MetricsReport { utterances })
    }
}
