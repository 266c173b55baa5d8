//! Alternating adversarial training loop with top-k checkpoint retention.
//!
//! Each iteration runs one main step (all groups except the adversary,
//! β_sign = −1) followed by `pm_steps_per_main` adversary steps (PM group
//! only, β_sign = +1, on detached codes). Dev accuracy is measured every
//! `eval_every` main steps and at the end; the `checkpoint_top_k` best
//! evaluations are kept, ties broken toward the later step.

use crate::checkpoint::{Checkpoint, CHECKPOINT_VERSION};
use crate::data::{Corpus, Split};
use crate::error::{Error, Result};
use crate::eval;
use crate::model::{ApmModel, Batch, ModelConfig};
use crate::nn::{AdamW, AdamWConfig, GroupSet, ParamGroup};
use crate::objectives::{
    backward_main_gated, build_losses, combine, lambda_schedule, GradientGates, LossBundle,
};
use crate::tape::Tape;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub warmup_steps: usize,
    pub lambda_final: f64,
    pub beta_mag: f64,
    pub delta: f64,
    pub pm_steps_per_main: usize,
    pub eval_every: usize,
    pub checkpoint_top_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 0.01,
            batch_size: 32,
            epochs: 6,
            seed: 0,
            warmup_steps: 2000,
            lambda_final: 0.6,
            beta_mag: 0.6,
            delta: 0.15,
            pm_steps_per_main: 1,
            eval_every: 200,
            checkpoint_top_k: 2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch_size must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::InvalidInput("eval_every must be positive".into()));
        }
        if self.checkpoint_top_k == 0 {
            return Err(Error::InvalidInput("checkpoint_top_k must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidInput("lr must be positive".into()));
        }
        if self.lambda_final < 0.0 || self.beta_mag < 0.0 || self.delta < 0.0 {
            return Err(Error::InvalidInput(
                "lambda_final, beta_mag, delta must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: usize,
    pub l_base: f64,
    pub l_dip: f64,
    pub l_pm: f64,
    pub l_pred: f64,
    pub total: f64,
    pub lambda: f64,
    pub dev_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub rows: Vec<HistoryRow>,
}

impl TrainHistory {
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "step\tl_base\tl_dip\tl_pm\tl_pred\ttotal\tlambda\tdev_acc")?;
        for r in &self.rows {
            let dev = r.dev_acc.map(|a| a.to_string()).unwrap_or_default();
            writeln!(
                f,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.step, r.l_base, r.l_dip, r.l_pm, r.l_pred, r.total, r.lambda, dev
            )?;
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Best-first; `checkpoints[0]` is the selected model.
    pub checkpoints: Vec<Checkpoint<ApmModel>>,
    pub history: TrainHistory,
}

/// A failed run still carries everything logged before the abort.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub history: TrainHistory,
}

/// Driver for one model: owns the model, one AdamW instance shared by both
/// phases, and the step counter that feeds the λ schedule.
pub struct Trainer {
    pub model: ApmModel,
    pub opt: AdamW,
    pub config: TrainConfig,
    pub gates: GradientGates,
    pub step: usize,
}

impl Trainer {
    pub fn new(model: ApmModel, config: TrainConfig) -> Result<Trainer> {
        config.validate()?;
        let opt = AdamW::new(
            AdamWConfig {
                lr: config.lr,
                weight_decay: config.weight_decay,
                ..Default::default()
            },
            &model.store,
        );
        Ok(Trainer {
            model,
            opt,
            config,
            gates: GradientGates::default(),
            step: 0,
        })
    }

    /// One main step: full forward, gated backward of all components with
    /// β_sign = −1, update of every group except the adversary. Aborts
    /// before touching any parameter if a loss component is non-finite.
    pub fn main_step(&mut self, batch: &Batch) -> Result<LossBundle> {
        let lambda = lambda_schedule(self.step, self.config.warmup_steps, self.config.lambda_final);
        let mut tape = Tape::new();
        let fwd = self.model.forward(&mut tape, batch)?;
        let nodes = build_losses(&mut tape, &fwd, batch, self.config.delta)?;
        let bundle = combine(
            &tape,
            &nodes,
            lambda,
            self.config.delta,
            -1,
            self.config.beta_mag,
            self.step,
        );
        if !bundle.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                l_base: bundle.l_base,
                l_dip: bundle.l_dip,
                l_pm: bundle.l_pm,
                l_pred: bundle.l_pred,
            });
        }
        self.model.store.zero_grad();
        backward_main_gated(
            &tape,
            &nodes,
            &mut self.model.store,
            &self.gates,
            lambda,
            self.config.beta_mag,
        );
        self.opt.step(
            &mut self.model.store,
            GroupSet::all_except(&[ParamGroup::Pm]),
        )?;
        self.step += 1;
        Ok(bundle)
    }

    /// One adversary step: recompute Z1 and Z2, detach them, descend the PM
    /// mse on the PM group only. Runs at full weight during warmup so the
    /// adversary is already fitted when λ switches on.
    pub fn pm_step(&mut self, batch: &Batch) -> Result<f64> {
        let (z1v, z2v) = {
            let mut tape = Tape::new();
            let r = self.model.encode_pair(&mut tape, batch)?;
            let (_, z1, z2, _) = self.model.autoencode(&mut tape, r)?;
            (tape.value(z1).clone(), tape.value(z2).clone())
        };
        let mut tape = Tape::new();
        let (_, loss) = self.model.pm_forward_detached(&mut tape, z1v, z2v)?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                l_base: 0.0,
                l_dip: 0.0,
                l_pm: value,
                l_pred: 0.0,
            });
        }
        self.model.store.zero_grad();
        let g = tape.backward(loss);
        g.accumulate_into(&tape, &mut self.model.store, self.gates.pm_adv, 1.0);
        self.opt
            .step(&mut self.model.store, GroupSet::of(&[ParamGroup::Pm]))?;
        Ok(value)
    }
}

/// Pick the top-k evaluated checkpoints by dev accuracy, later step first
/// on ties, best first in the result.
pub fn select_checkpoints(
    mut candidates: Vec<Checkpoint<ApmModel>>,
    top_k: usize,
) -> Result<Vec<Checkpoint<ApmModel>>> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no evaluated checkpoints".into()));
    }
    candidates.sort_by(|a, b| {
        b.dev_accuracy
            .partial_cmp(&a.dev_accuracy)
            .unwrap()
            .then(b.step.cmp(&a.step))
    });
    candidates.truncate(top_k);
    Ok(candidates)
}

fn mix(seed: u64, idx: u64) -> u64 {
    let mut z = seed.wrapping_add(idx.wrapping_mul(0x9e3779b97f4a7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z ^ (z >> 31)
}

/// Train a fresh model on the corpus. Deterministic given the configs:
/// model init from the seed, per-epoch shuffles from (seed, epoch).
pub fn train(
    corpus: &Corpus,
    model_config: &ModelConfig,
    config: &TrainConfig,
    config_hash: &str,
    vocab_hash: &str,
) -> std::result::Result<TrainOutcome, Box<TrainFailure>> {
    let mut history = TrainHistory::default();
    run_train(corpus, model_config, config, config_hash, vocab_hash, &mut history)
        .map_err(|error| Box::new(TrainFailure { error, history }))
}

fn run_train(
    corpus: &Corpus,
    model_config: &ModelConfig,
    config: &TrainConfig,
    config_hash: &str,
    vocab_hash: &str,
    history: &mut TrainHistory,
) -> Result<TrainOutcome> {
    let mcfg = ModelConfig {
        num_labels: corpus.num_labels,
        ..model_config.clone()
    };
    let train_split = corpus.split_vec(Split::Train);
    let dev_split = corpus.split_vec(Split::Dev);
    if train_split.is_empty() || dev_split.is_empty() {
        return Err(Error::InvalidInput(
            "corpus needs non-empty train and dev splits".into(),
        ));
    }
    let model = ApmModel::new(mcfg, corpus.vocab.size(), config.seed)?;
    let mut trainer = Trainer::new(model, config.clone())?;
    let mut candidates: Vec<Checkpoint<ApmModel>> = Vec::new();
    let mut last_eval_step = usize::MAX;

    let evaluate = |trainer: &Trainer,
                        candidates: &mut Vec<Checkpoint<ApmModel>>|
     -> Result<f64> {
        let acc = eval::accuracy(&trainer.model, &dev_split, trainer.config.delta)?;
        candidates.push(Checkpoint {
            version: CHECKPOINT_VERSION,
            method: "causal_apm".into(),
            step: trainer.step,
            dev_accuracy: acc,
            config_hash: config_hash.into(),
            vocab_hash: vocab_hash.into(),
            model: trainer.model.clone(),
            optimizer: trainer.opt.clone(),
        });
        // keep memory bounded: prune to the running top-k
        if candidates.len() > trainer.config.checkpoint_top_k {
            let kept = select_checkpoints(std::mem::take(candidates), trainer.config.checkpoint_top_k)?;
            *candidates = kept;
        }
        Ok(acc)
    };

    if config.epochs == 0 {
        evaluate(&trainer, &mut candidates)?;
        return Ok(TrainOutcome {
            checkpoints: select_checkpoints(candidates, config.checkpoint_top_k)?,
            history: std::mem::take(history),
        });
    }

    let mut indices: Vec<usize> = (0..train_split.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, 1 + epoch as u64));
        indices.shuffle(&mut rng);
        for chunk in indices.chunks(config.batch_size) {
            let examples: Vec<&_> = chunk.iter().map(|&i| train_split[i]).collect();
            let batch = Batch::from_examples(&examples);
            let bundle = trainer.main_step(&batch)?;
            history.rows.push(HistoryRow {
                step: bundle.step,
                l_base: bundle.l_base,
                l_dip: bundle.l_dip,
                l_pm: bundle.l_pm,
                l_pred: bundle.l_pred,
                total: bundle.total,
                lambda: bundle.lambda,
                dev_acc: None,
            });
            for _ in 0..config.pm_steps_per_main {
                trainer.pm_step(&batch)?;
            }
            if trainer.step % config.eval_every == 0 {
                last_eval_step = trainer.step;
                let acc = evaluate(&trainer, &mut candidates)?;
                history.rows.last_mut().unwrap().dev_acc = Some(acc);
            }
        }
    }
    if last_eval_step != trainer.step {
        let acc = evaluate(&trainer, &mut candidates)?;
        if let Some(row) = history.rows.last_mut() {
            row.dev_acc = Some(acc);
        }
    }
    Ok(TrainOutcome {
        checkpoints: select_checkpoints(candidates, config.checkpoint_top_k)?,
        history: std::mem::take(history),
    })
}
