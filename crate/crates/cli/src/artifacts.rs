//! On-disk layout of runs: corpus directories, delimited report files,
//! and the metrics summary.

use anyhow::{bail, Context, Result};
use capm_core::checkpoint::sha256_hex;
use capm_core::data::{load_jsonl, overlap_histogram, Corpus, Split, Vocabulary};
use capm_core::eval::{SweepResult, TendencyCurve};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Sidecar describing how to read the split files back.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VocabMeta {
    pub vocab: Vocabulary,
    pub label_names: Vec<String>,
    pub num_labels: usize,
}

pub fn save_corpus_dir(corpus: &Corpus, dir: &Path) -> Result<String> {
    std::fs::create_dir_all(dir)?;
    for split in [Split::Train, Split::Dev, Split::IdTest, Split::OodTest] {
        let path = dir.join(format!("{}.jsonl", split.name()));
        capm_core::data::save_jsonl(corpus, split, &path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let meta = VocabMeta {
        vocab: corpus.vocab.clone(),
        label_names: corpus.label_names.clone(),
        num_labels: corpus.num_labels,
    };
    let bytes = serde_json::to_vec(&meta)?;
    std::fs::write(dir.join("vocab.json"), &bytes)?;
    Ok(sha256_hex(&bytes))
}

/// Load a corpus directory written by `synth`. Returns the corpus and the
/// hash of its vocabulary sidecar, used to pair checkpoints with corpora.
pub fn load_corpus_dir(dir: &Path) -> Result<(Corpus, String)> {
    let vocab_path = dir.join("vocab.json");
    let bytes = std::fs::read(&vocab_path)
        .with_context(|| format!("reading {}", vocab_path.display()))?;
    let meta: VocabMeta = serde_json::from_slice(&bytes)?;
    let vocab_hash = sha256_hex(&bytes);

    let mut examples = Vec::new();
    for split in [Split::Train, Split::Dev, Split::IdTest, Split::OodTest] {
        let path = dir.join(format!("{}.jsonl", split.name()));
        if !path.exists() {
            continue;
        }
        let part = load_jsonl(&path, Some(&meta.vocab), Some(&meta.label_names), split)
            .with_context(|| format!("loading {}", path.display()))?;
        examples.extend(part.examples);
    }
    if examples.is_empty() {
        bail!("no split files found in {}", dir.display());
    }
    Ok((
        Corpus {
            vocab: meta.vocab,
            num_labels: meta.num_labels,
            label_names: meta.label_names,
            examples,
        },
        vocab_hash,
    ))
}

/// One row of an overlap-bin report; `pred_freqs` is absent for
/// corpus-only (gold) audits.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub pred_freqs: Option<Vec<f64>>,
    pub gold_freqs: Vec<f64>,
}

pub fn curve_rows(curve: &TendencyCurve) -> Vec<ReportRow> {
    curve
        .bins
        .iter()
        .map(|b| ReportRow {
            lo: b.lo,
            hi: b.hi,
            count: b.count,
            pred_freqs: Some(b.pred_freqs.clone()),
            gold_freqs: b.gold_freqs.clone(),
        })
        .collect()
}

/// Gold-only rows straight from the corpus histogram.
pub fn gold_rows(corpus: &Corpus, split: Split, bins: usize) -> Result<Vec<ReportRow>> {
    let examples = corpus.split_vec(split);
    let stats = overlap_histogram(&examples, corpus.num_labels, bins)?;
    Ok(stats
        .iter()
        .map(|b| ReportRow {
            lo: b.lo,
            hi: b.hi,
            count: b.count,
            pred_freqs: None,
            gold_freqs: b.label_freqs(),
        })
        .collect())
}

/// Tab-separated report: bin_low, bin_high, count, one predicted-frequency
/// column per label (when present), one gold-frequency column per label.
pub fn write_report(path: &Path, rows: &[ReportRow], label_names: &[String]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = vec!["bin_low".to_string(), "bin_high".into(), "count".into()];
    let with_pred = rows.iter().any(|r| r.pred_freqs.is_some());
    if with_pred {
        header.extend(label_names.iter().map(|n| format!("pred_{n}")));
    }
    header.extend(label_names.iter().map(|n| format!("gold_{n}")));
    writeln!(f, "{}", header.join("\t"))?;
    for r in rows {
        let mut cols = vec![r.lo.to_string(), r.hi.to_string(), r.count.to_string()];
        if with_pred {
            let pred = r
                .pred_freqs
                .as_deref()
                .unwrap_or(&vec![0.0; label_names.len()])
                .to_vec();
            cols.extend(pred.iter().map(|v| v.to_string()));
        }
        cols.extend(r.gold_freqs.iter().map(|v| v.to_string()));
        writeln!(f, "{}", cols.join("\t"))?;
    }
    Ok(())
}

/// Parse a report written by `write_report`; the inverse round-trips.
pub fn parse_report(path: &Path) -> Result<Vec<ReportRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .context("empty report file")?
        .split('\t')
        .collect();
    let n_pred = header.iter().filter(|h| h.starts_with("pred_")).count();
    let n_gold = header.iter().filter(|h| h.starts_with("gold_")).count();
    if n_gold == 0 || header.len() != 3 + n_pred + n_gold {
        bail!("malformed report header");
    }
    let mut rows = Vec::new();
    for line in lines {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != header.len() {
            bail!("malformed report row: {line:?}");
        }
        let parse = |s: &str| s.parse::<f64>().map_err(anyhow::Error::from);
        let pred_freqs = if n_pred > 0 {
            Some(
                cols[3..3 + n_pred]
                    .iter()
                    .map(|s| parse(s))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        rows.push(ReportRow {
            lo: parse(cols[0])?,
            hi: parse(cols[1])?,
            count: cols[2].parse()?,
            pred_freqs,
            gold_freqs: cols[3 + n_pred..]
                .iter()
                .map(|s| parse(s))
                .collect::<Result<Vec<_>>>()?,
        });
    }
    Ok(rows)
}

pub fn write_sweep(path: &Path, sweep: &SweepResult) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "delta\tz2_dim\tlambda\tid_acc\tood_acc\tseed")?;
    for r in &sweep.rows {
        writeln!(
            f,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.delta, r.z2_dim, r.lambda, r.id_acc, r.ood_acc, r.seed
        )?;
    }
    Ok(())
}

/// Scalar results of a run; serialized as JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    pub method: String,
    pub config_hash: String,
    pub vocab_hash: String,
    pub best_step: usize,
    pub dev_accuracy: f64,
    pub id_accuracy: f64,
    pub ood_accuracy: f64,
    pub delta: f64,
    /// Held-out linear R² of Z2 from Z1 on the ID test split; null when
    /// undefined (constant Z2) or not applicable to the method.
    pub mi_proxy: Option<f64>,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value)?;
    std::fs::write(path, bytes)?;
    Ok(())
}
