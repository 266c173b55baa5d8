//! Command-line driver: corpus synthesis, training, evaluation, δ sweeps,
//! and overlap-heuristic audits, all reproducible from a flat TOML config.
//!
//! Exit codes: 0 success, 1 runtime/numeric failure, 2 usage/config error.

mod artifacts;
mod config;

use anyhow::{anyhow, bail, Context, Result};
use artifacts::{
    curve_rows, gold_rows, load_corpus_dir, parse_report, save_corpus_dir, write_json,
    write_report, write_sweep, Metrics, ReportRow,
};
use capm_core::baselines::{
    baseline_accuracy, train_beta_vae, train_erm, BaselineModel, ErmModel, VaeModel,
};
use capm_core::checkpoint::{save_json, sha256_hex, Checkpoint};
use capm_core::data::{generate_corpus, Corpus, PairExample, Split};
use capm_core::eval;
use capm_core::model::ApmModel;
use capm_core::trainer;
use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use serde::Serialize;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "capm", about = "Literal/semantic disentanglement experiments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a biased synthetic pair corpus
    Synth(CommonArgs),
    /// Train the selected method on a corpus directory
    Train(CommonArgs),
    /// Evaluate a checkpoint: accuracy, tendency curves, dependence proxy
    Eval(EvalArgs),
    /// δ × dim(Z2) sensitivity sweep with a λ=0 ablation
    Sweep(CommonArgs),
    /// Overlap-heuristic audit of a corpus or a checkpoint on a corpus
    Audit(AuditArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// TOML run configuration; defaults apply for missing keys
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides out_dir from the config)
    #[arg(long)]
    out: Option<PathBuf>,
    /// causal_apm | erm | beta_vae
    #[arg(long)]
    method: Option<String>,
    /// Corpus directory (overrides corpus_dir from the config)
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    z2_dim: Option<usize>,
    #[arg(long)]
    lambda_final: Option<f64>,
    #[arg(long)]
    warmup_steps: Option<usize>,
    #[arg(long)]
    bins: Option<usize>,
    /// Comma-separated δ grid for sweeps, e.g. "0,0.1,0.3"
    #[arg(long)]
    grid: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct AuditArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

/// A failure tagged with its exit code.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

fn usage<T>(e: impl Into<anyhow::Error>) -> std::result::Result<T, Failure> {
    Err(Failure::Usage(e.into()))
}

trait OrUsage<T> {
    fn or_usage(self) -> std::result::Result<T, Failure>;
    fn or_runtime(self) -> std::result::Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrUsage<T> for std::result::Result<T, E> {
    fn or_usage(self) -> std::result::Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }

    fn or_runtime(self) -> std::result::Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            2
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> std::result::Result<(), Failure> {
    match cli.cmd {
        Cmd::Synth(args) => cmd_synth(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Audit(args) => cmd_audit(args),
    }
}

/// Load the config file (if any) and apply flag overrides.
fn resolve(args: &CommonArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.display().to_string();
    }
    if let Some(m) = &args.method {
        cfg.method = m.clone();
    }
    if let Some(c) = &args.corpus {
        cfg.corpus_dir = c.display().to_string();
    }
    if let Some(d) = args.delta {
        cfg.delta = d;
    }
    if let Some(z) = args.z2_dim {
        cfg.z2_dim = z;
    }
    if let Some(l) = args.lambda_final {
        cfg.lambda_final = l;
    }
    if let Some(w) = args.warmup_steps {
        cfg.warmup_steps = w;
    }
    if let Some(b) = args.bins {
        cfg.bins = b;
    }
    if let Some(grid) = &args.grid {
        cfg.delta_grid = grid
            .split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|e| anyhow!("bad --grid value {s:?}: {e}")))
            .collect::<Result<Vec<_>>>()?;
    }
    if !matches!(cfg.method.as_str(), "causal_apm" | "erm" | "beta_vae") {
        bail!("unknown method {:?} (expected causal_apm, erm, or beta_vae)", cfg.method);
    }
    Ok(cfg)
}

/// Echo the resolved config into the output directory. The returned hash
/// covers the scientific configuration only: output and corpus locations
/// are normalized out so identical experiments hash identically wherever
/// they run.
fn echo_config(cfg: &RunConfig, out: &Path) -> Result<String> {
    std::fs::create_dir_all(out)?;
    let text = cfg.to_toml()?;
    std::fs::write(out.join("resolved_config.toml"), &text)?;
    let mut canon = cfg.clone();
    canon.out_dir = String::new();
    canon.corpus_dir = String::new();
    Ok(sha256_hex(canon.to_toml()?.as_bytes()))
}

fn cmd_synth(args: CommonArgs) -> std::result::Result<(), Failure> {
    let cfg = resolve(&args).or_usage()?;
    let spec = cfg.dataset_spec();
    spec.validate().or_usage()?;
    let corpus = generate_corpus(&spec).or_runtime()?;
    let out = PathBuf::from(&cfg.out_dir);
    let config_hash = echo_config(&cfg, &out).or_runtime()?;
    let vocab_hash = save_corpus_dir(&corpus, &out).or_runtime()?;

    let train = corpus.split_vec(Split::Train);
    let high: Vec<&&PairExample> = train
        .iter()
        .filter(|e| e.overlap >= spec.overlap_threshold)
        .collect();
    let measured_bias = if high.is_empty() {
        f64::NAN
    } else {
        high.iter().filter(|e| e.label == spec.bias_label).count() as f64 / high.len() as f64
    };

    #[derive(Serialize)]
    struct Metadata<'a> {
        config_hash: String,
        vocab_hash: String,
        spec: &'a capm_core::data::DatasetSpec,
        counts: std::collections::BTreeMap<&'static str, usize>,
        /// P(bias label | overlap ≥ θ) actually realized on the train split.
        measured_bias: f64,
    }
    let counts = [Split::Train, Split::Dev, Split::IdTest, Split::OodTest]
        .into_iter()
        .map(|s| (s.name(), corpus.split_vec(s).len()))
        .collect();
    write_json(
        &out.join("metadata.json"),
        &Metadata {
            config_hash,
            vocab_hash,
            spec: &spec,
            counts,
            measured_bias,
        },
    )
    .or_runtime()?;
    println!("corpus written to {}", out.display());
    Ok(())
}

fn write_checkpoints<M: Serialize>(
    out: &Path,
    checkpoints: &[Checkpoint<M>],
) -> Result<()> {
    for (i, c) in checkpoints.iter().enumerate() {
        save_json(c, &out.join(format!("checkpoint_{}.json", i + 1)))?;
    }
    Ok(())
}

fn cmd_train(args: CommonArgs) -> std::result::Result<(), Failure> {
    let cfg = resolve(&args).or_usage()?;
    let (corpus, vocab_hash) = load_corpus_dir(Path::new(&cfg.corpus_dir)).or_usage()?;
    let out = PathBuf::from(&cfg.out_dir);
    let config_hash = echo_config(&cfg, &out).or_runtime()?;
    let tcfg = cfg.train_config();

    let metrics = match cfg.method.as_str() {
        "causal_apm" => {
            let outcome = match trainer::train(&corpus, &cfg.model_config(), &tcfg, &config_hash, &vocab_hash) {
                Ok(o) => o,
                Err(failure) => {
                    // preserve what was learned before the abort
                    let _ = failure.history.write_tsv(&out.join("history.tsv"));
                    return Err(Failure::Runtime(failure.error.into()));
                }
            };
            outcome.history.write_tsv(&out.join("history.tsv")).or_runtime()?;
            write_checkpoints(&out, &outcome.checkpoints).or_runtime()?;
            let best = &outcome.checkpoints[0];
            let id = corpus.split_vec(Split::IdTest);
            let ood = corpus.split_vec(Split::OodTest);
            Metrics {
                method: cfg.method.clone(),
                config_hash,
                vocab_hash,
                best_step: best.step,
                dev_accuracy: best.dev_accuracy,
                id_accuracy: eval::accuracy(&best.model, &id, cfg.delta).or_runtime()?,
                ood_accuracy: eval::accuracy(&best.model, &ood, cfg.delta).or_runtime()?,
                delta: cfg.delta,
                mi_proxy: mi_proxy_if_supported(&best.model, &id).or_runtime()?,
            }
        }
        "erm" => {
            let outcome =
                train_erm(&corpus, cfg.emb_dim, &tcfg, &config_hash, &vocab_hash)
                    .or_runtime()?;
            outcome.history.write_tsv(&out.join("history.tsv")).or_runtime()?;
            write_checkpoints(&out, &outcome.checkpoints).or_runtime()?;
            baseline_metrics(&cfg, &corpus, config_hash, vocab_hash, &outcome.checkpoints[0])
                .or_runtime()?
        }
        "beta_vae" => {
            let outcome =
                train_beta_vae(&corpus, &cfg.vae_config(), &tcfg, &config_hash, &vocab_hash)
                    .or_runtime()?;
            outcome.history.write_tsv(&out.join("history.tsv")).or_runtime()?;
            write_checkpoints(&out, &outcome.checkpoints).or_runtime()?;
            baseline_metrics(&cfg, &corpus, config_hash, vocab_hash, &outcome.checkpoints[0])
                .or_runtime()?
        }
        other => return usage(anyhow!("unknown method {other:?}")),
    };
    write_json(&out.join("metrics.json"), &metrics).or_runtime()?;
    println!(
        "{}: dev {:.4}, id {:.4}, ood {:.4}",
        metrics.method, metrics.dev_accuracy, metrics.id_accuracy, metrics.ood_accuracy
    );
    Ok(())
}

/// The dependence proxy needs 10× more rows than the Z1 width; on smaller
/// splits it is reported as undefined rather than failing the run.
fn mi_proxy_if_supported(model: &ApmModel, examples: &[&PairExample]) -> Result<Option<f64>> {
    if examples.len() < 10 * model.config.z1_dim() {
        return Ok(None);
    }
    Ok(eval::model_mi_proxy(model, examples)?)
}

fn baseline_metrics<M: BaselineModel>(
    cfg: &RunConfig,
    corpus: &Corpus,
    config_hash: String,
    vocab_hash: String,
    best: &Checkpoint<M>,
) -> Result<Metrics> {
    let id = corpus.split_vec(Split::IdTest);
    let ood = corpus.split_vec(Split::OodTest);
    Ok(Metrics {
        method: best.method.clone(),
        config_hash,
        vocab_hash,
        best_step: best.step,
        dev_accuracy: best.dev_accuracy,
        id_accuracy: baseline_accuracy(&best.model, &id)?,
        ood_accuracy: baseline_accuracy(&best.model, &ood)?,
        delta: cfg.delta,
        mi_proxy: None,
    })
}

/// A loaded checkpoint of any method, with a uniform predict interface.
enum AnyCheckpoint {
    Apm(Checkpoint<ApmModel>),
    Erm(Checkpoint<ErmModel>),
    Vae(Checkpoint<VaeModel>),
}

impl AnyCheckpoint {
    fn load(path: &Path) -> Result<AnyCheckpoint> {
        let bytes =
            std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        let value: serde_json::Value = serde_json::from_slice(&bytes)?;
        let method = value
            .get("method")
            .and_then(|m| m.as_str())
            .context("checkpoint has no method field")?
            .to_string();
        Ok(match method.as_str() {
            "causal_apm" => {
                let mut c: Checkpoint<ApmModel> = serde_json::from_value(value)?;
                c.model.store.ensure_grads();
                AnyCheckpoint::Apm(c)
            }
            "erm" => {
                let mut c: Checkpoint<ErmModel> = serde_json::from_value(value)?;
                c.model.store.ensure_grads();
                AnyCheckpoint::Erm(c)
            }
            "beta_vae" => {
                let mut c: Checkpoint<VaeModel> = serde_json::from_value(value)?;
                c.model.store.ensure_grads();
                AnyCheckpoint::Vae(c)
            }
            other => bail!("unknown checkpoint method {other:?}"),
        })
    }

    fn method(&self) -> &str {
        match self {
            AnyCheckpoint::Apm(c) => &c.method,
            AnyCheckpoint::Erm(c) => &c.method,
            AnyCheckpoint::Vae(c) => &c.method,
        }
    }

    fn meta(&self) -> (usize, f64, &str, &str) {
        match self {
            AnyCheckpoint::Apm(c) => (c.step, c.dev_accuracy, &c.config_hash, &c.vocab_hash),
            AnyCheckpoint::Erm(c) => (c.step, c.dev_accuracy, &c.config_hash, &c.vocab_hash),
            AnyCheckpoint::Vae(c) => (c.step, c.dev_accuracy, &c.config_hash, &c.vocab_hash),
        }
    }

    fn predict(&self, examples: &[&PairExample], delta: f64) -> Result<Vec<usize>> {
        Ok(match self {
            AnyCheckpoint::Apm(c) => eval::predict(&c.model, examples, delta)?,
            AnyCheckpoint::Erm(c) => c.model.predict(examples)?,
            AnyCheckpoint::Vae(c) => c.model.predict(examples)?,
        })
    }
}

fn cmd_eval(args: EvalArgs) -> std::result::Result<(), Failure> {
    let cfg = resolve(&args.common).or_usage()?;
    let ckpt = AnyCheckpoint::load(&args.checkpoint).or_usage()?;
    let (corpus, vocab_hash) = load_corpus_dir(Path::new(&cfg.corpus_dir)).or_usage()?;
    let (step, _, config_hash, ckpt_vocab_hash) = ckpt.meta();
    if !ckpt_vocab_hash.is_empty() && ckpt_vocab_hash != vocab_hash {
        return usage(anyhow!(
            "checkpoint was trained on a different vocabulary ({} vs {})",
            ckpt_vocab_hash,
            vocab_hash
        ));
    }
    let config_hash = config_hash.to_string();
    let out = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&out).or_runtime()?;

    let mut accuracies = Vec::new();
    for (split, name) in [
        (Split::Dev, "dev"),
        (Split::IdTest, "id_test"),
        (Split::OodTest, "ood_test"),
    ] {
        let examples = corpus.split_vec(split);
        let preds = ckpt.predict(&examples, cfg.delta).or_runtime()?;
        accuracies.push(eval::accuracy_of(&preds, &examples));
        let curve =
            eval::tendency_from_predictions(&examples, &preds, corpus.num_labels, cfg.bins)
                .or_runtime()?;
        write_report(
            &out.join(format!("curves_{name}.tsv")),
            &curve_rows(&curve),
            &corpus.label_names,
        )
        .or_runtime()?;
    }
    let mi_proxy = match &ckpt {
        AnyCheckpoint::Apm(c) => {
            mi_proxy_if_supported(&c.model, &corpus.split_vec(Split::IdTest)).or_runtime()?
        }
        _ => None,
    };
    let metrics = Metrics {
        method: ckpt.method().to_string(),
        config_hash,
        vocab_hash,
        best_step: step,
        dev_accuracy: accuracies[0],
        id_accuracy: accuracies[1],
        ood_accuracy: accuracies[2],
        delta: cfg.delta,
        mi_proxy,
    };
    write_json(&out.join("metrics.json"), &metrics).or_runtime()?;
    println!(
        "{}: dev {:.4}, id {:.4}, ood {:.4}",
        metrics.method, metrics.dev_accuracy, metrics.id_accuracy, metrics.ood_accuracy
    );
    Ok(())
}

fn cmd_sweep(args: CommonArgs) -> std::result::Result<(), Failure> {
    let cfg = resolve(&args).or_usage()?;
    if cfg.method != "causal_apm" {
        return usage(anyhow!("sweep supports method causal_apm only"));
    }
    let (corpus, _) = load_corpus_dir(Path::new(&cfg.corpus_dir)).or_usage()?;
    let out = PathBuf::from(&cfg.out_dir);
    echo_config(&cfg, &out).or_runtime()?;
    let result = eval::sweep(
        &corpus,
        &cfg.model_config(),
        &cfg.train_config(),
        &cfg.delta_grid,
        &cfg.z2_dims,
        cfg.sweep_seeds,
        cfg.sweep_inference_only,
    )
    .or_runtime()?;
    write_sweep(&out.join("sweep.tsv"), &result).or_runtime()?;
    println!("{} sweep rows written", result.rows.len());
    Ok(())
}

fn cmd_audit(args: AuditArgs) -> std::result::Result<(), Failure> {
    let cfg = resolve(&args.common).or_usage()?;
    let (corpus, _) = load_corpus_dir(Path::new(&cfg.corpus_dir)).or_usage()?;
    let ckpt = match &args.checkpoint {
        Some(p) => Some(AnyCheckpoint::load(p).or_usage()?),
        None => None,
    };
    let out = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&out).or_runtime()?;

    for split in [Split::Train, Split::Dev, Split::IdTest, Split::OodTest] {
        let examples = corpus.split_vec(split);
        if examples.is_empty() {
            continue;
        }
        let rows: Vec<ReportRow> = match &ckpt {
            None => gold_rows(&corpus, split, cfg.bins).or_runtime()?,
            Some(c) => {
                let preds = c.predict(&examples, cfg.delta).or_runtime()?;
                let curve = eval::tendency_from_predictions(
                    &examples,
                    &preds,
                    corpus.num_labels,
                    cfg.bins,
                )
                .or_runtime()?;
                curve_rows(&curve)
            }
        };
        let path = out.join(format!("audit_{}.tsv", split.name()));
        write_report(&path, &rows, &corpus.label_names).or_runtime()?;
        // every report must survive a round trip
        let back = parse_report(&path).or_runtime()?;
        if back.len() != rows.len() {
            return Err(Failure::Runtime(anyhow!("audit report failed round-trip")));
        }
    }
    println!("audit written to {}", out.display());
    Ok(())
}
