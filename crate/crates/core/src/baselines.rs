//! ERM and β-VAE baselines over the same pair representation as the main
//! model: concat(u, v, |u−v|, u⊙v) of mean-pooled token embeddings.

use crate::checkpoint::{Checkpoint, CHECKPOINT_VERSION};
use crate::data::{Corpus, PairExample, Split};
use crate::error::{Error, Result};
use crate::model::Batch;
use crate::nn::{glorot_uniform, AdamW, AdamWConfig, GroupSet, ParamGroup, ParamId, ParamStore};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::trainer::TrainConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

const EVAL_CHUNK: usize = 256;

fn mix(seed: u64, idx: u64) -> u64 {
    let mut z = seed.wrapping_add(idx.wrapping_mul(0x9e3779b97f4a7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z ^ (z >> 31)
}

fn pair_repr(
    tape: &mut Tape,
    store: &ParamStore,
    embedding: ParamId,
    batch: &Batch,
) -> Result<NodeId> {
    let table = tape.param(store, embedding);
    let u = tape.embed_mean(table, &batch.tokens1)?;
    let v = tape.embed_mean(table, &batch.tokens2)?;
    let d = tape.sub(u, v)?;
    let a = tape.abs(d);
    let m = tape.mul(u, v)?;
    tape.concat_cols(&[u, v, a, m])
}

/// Vanilla classifier: pair representation → single softmax head,
/// trained on cross-entropy alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErmModel {
    pub emb_dim: usize,
    pub num_labels: usize,
    pub vocab_size: usize,
    pub store: ParamStore,
    embedding: ParamId,
    w: ParamId,
    b: ParamId,
}

impl ErmModel {
    pub fn new(
        emb_dim: usize,
        num_labels: usize,
        vocab_size: usize,
        seed: u64,
    ) -> Result<ErmModel> {
        if emb_dim == 0 || num_labels < 2 || vocab_size < 2 {
            return Err(Error::InvalidInput("degenerate ERM dimensions".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d_r = 4 * emb_dim;
        let embedding = store.add(
            "embedding",
            ParamGroup::Embedding,
            glorot_uniform(&mut rng, vocab_size, emb_dim),
        );
        let w = store.add("w", ParamGroup::Head1, glorot_uniform(&mut rng, d_r, num_labels));
        let b = store.add("b", ParamGroup::Head1, Tensor::zeros(&[num_labels]));
        Ok(ErmModel {
            emb_dim,
            num_labels,
            vocab_size,
            store,
            embedding,
            w,
            b,
        })
    }

    pub fn probs(&self, tape: &mut Tape, batch: &Batch) -> Result<NodeId> {
        let r = pair_repr(tape, &self.store, self.embedding, batch)?;
        let w = tape.param(&self.store, self.w);
        let b = tape.param(&self.store, self.b);
        let logits = tape.matmul(r, w)?;
        let logits = tape.add_row_bias(logits, b)?;
        Ok(tape.softmax(logits))
    }
}

/// β-VAE: the pair representation is encoded to a diagonal Gaussian
/// posterior, a sample is decoded back and classified; the loss is
/// CE + reconstruction + β·KL(q‖N(0,I)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeConfig {
    pub emb_dim: usize,
    pub z_dim: usize,
    pub num_labels: usize,
    pub beta: f64,
    /// Skip sampling and use z = μ; useful for exact-value tests.
    pub deterministic: bool,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            emb_dim: 32,
            z_dim: 64,
            num_labels: 3,
            beta: 4.0,
            deterministic: false,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VaeModel {
    pub config: VaeConfig,
    pub vocab_size: usize,
    pub store: ParamStore,
    embedding: ParamId,
    mu_w: ParamId,
    mu_b: ParamId,
    lv_w: ParamId,
    lv_b: ParamId,
    dec_w: ParamId,
    dec_b: ParamId,
    cls_w: ParamId,
    cls_b: ParamId,
}

pub struct VaeForward {
    pub r: NodeId,
    pub mu: NodeId,
    pub logvar: NodeId,
    pub z: NodeId,
    pub r_prime: NodeId,
    pub probs: NodeId,
}

impl VaeModel {
    pub fn new(config: VaeConfig, vocab_size: usize, seed: u64) -> Result<VaeModel> {
        if config.emb_dim == 0 || config.z_dim == 0 || config.num_labels < 2 || vocab_size < 2 {
            return Err(Error::InvalidInput("degenerate VAE dimensions".into()));
        }
        if config.beta < 0.0 {
            return Err(Error::InvalidInput("beta must be non-negative".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d_r = 4 * config.emb_dim;
        let z = config.z_dim;
        let c = config.num_labels;
        let embedding = store.add(
            "embedding",
            ParamGroup::Embedding,
            glorot_uniform(&mut rng, vocab_size, config.emb_dim),
        );
        let mu_w = store.add("mu_w", ParamGroup::Encoder, glorot_uniform(&mut rng, d_r, z));
        let mu_b = store.add("mu_b", ParamGroup::Encoder, Tensor::zeros(&[z]));
        let lv_w = store.add("lv_w", ParamGroup::Encoder, glorot_uniform(&mut rng, d_r, z));
        let lv_b = store.add("lv_b", ParamGroup::Encoder, Tensor::zeros(&[z]));
        let dec_w = store.add("dec_w", ParamGroup::Decoder, glorot_uniform(&mut rng, z, d_r));
        let dec_b = store.add("dec_b", ParamGroup::Decoder, Tensor::zeros(&[d_r]));
        let cls_w = store.add("cls_w", ParamGroup::Head1, glorot_uniform(&mut rng, z, c));
        let cls_b = store.add("cls_b", ParamGroup::Head1, Tensor::zeros(&[c]));
        Ok(VaeModel {
            config,
            vocab_size,
            store,
            embedding,
            mu_w,
            mu_b,
            lv_w,
            lv_b,
            dec_w,
            dec_b,
            cls_w,
            cls_b,
        })
    }

    fn affine(&self, tape: &mut Tape, x: NodeId, w: ParamId, b: ParamId) -> Result<NodeId> {
        let wn = tape.param(&self.store, w);
        let bn = tape.param(&self.store, b);
        let y = tape.matmul(x, wn)?;
        tape.add_row_bias(y, bn)
    }

    /// Full pass with an explicit noise matrix ε (batch × z_dim):
    /// z = μ + exp(logvar/2)⊙ε, or z = μ when deterministic.
    pub fn forward(&self, tape: &mut Tape, batch: &Batch, eps: Option<Tensor>) -> Result<VaeForward> {
        let r = pair_repr(tape, &self.store, self.embedding, batch)?;
        let mu = self.affine(tape, r, self.mu_w, self.mu_b)?;
        let logvar = self.affine(tape, r, self.lv_w, self.lv_b)?;
        let z = match (self.config.deterministic, eps) {
            (true, _) | (false, None) => mu,
            (false, Some(e)) => {
                let half = tape.scale(logvar, 0.5);
                let std = tape.exp(half);
                let noise = tape.constant(e);
                let scaled = tape.mul(std, noise)?;
                tape.add(mu, scaled)?
            }
        };
        let r_prime = self.affine(tape, z, self.dec_w, self.dec_b)?;
        let logits = self.affine(tape, z, self.cls_w, self.cls_b)?;
        let probs = tape.softmax(logits);
        Ok(VaeForward {
            r,
            mu,
            logvar,
            z,
            r_prime,
            probs,
        })
    }
}

/// KL(q‖N(0,I)) for a diagonal Gaussian, averaged over the batch:
/// mean_i 0.5 Σ_d (μ² + exp(logvar) − logvar − 1).
pub fn kl_divergence(tape: &mut Tape, mu: NodeId, logvar: NodeId) -> Result<NodeId> {
    let (n, _) = tape.value(mu).dims2();
    let mu2 = tape.square(mu);
    let var = tape.exp(logvar);
    let s = tape.add(mu2, var)?;
    let s = tape.sub(s, logvar)?;
    let s = tape.offset(s, -1.0);
    let total = tape.sum_all(s);
    Ok(tape.scale(total, 0.5 / n as f64))
}

/// Components of the VAE objective: CE + reconstruction + β·KL.
pub fn vae_loss(tape: &mut Tape, model: &VaeModel, fwd: &VaeForward, labels: &[usize]) -> Result<NodeId> {
    let ce = tape.nll_loss(fwd.probs, labels)?;
    let rec = tape.mse_loss(fwd.r, fwd.r_prime)?;
    let kl = kl_divergence(tape, fwd.mu, fwd.logvar)?;
    Ok(tape.weighted_sum(&[(ce, 1.0), (rec, 1.0), (kl, model.config.beta)]))
}

/// Trainable baseline: one scalar loss per batch, one predict path.
pub trait BaselineModel: Serialize + Clone {
    fn method(&self) -> &'static str;
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    fn train_loss(&self, tape: &mut Tape, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<NodeId>;
    fn predict(&self, examples: &[&PairExample]) -> Result<Vec<usize>>;
}

fn batch_predict(probs: &Tensor) -> Vec<usize> {
    let (n, _) = probs.dims2();
    (0..n).map(|i| crate::eval::argmax(probs.row(i))).collect()
}

impl BaselineModel for ErmModel {
    fn method(&self) -> &'static str {
        "erm"
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn train_loss(&self, tape: &mut Tape, batch: &Batch, _rng: &mut ChaCha8Rng) -> Result<NodeId> {
        let probs = self.probs(tape, batch)?;
        tape.nll_loss(probs, &batch.labels)
    }

    fn predict(&self, examples: &[&PairExample]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(EVAL_CHUNK) {
            let batch = Batch::from_examples(chunk);
            let mut tape = Tape::new();
            let probs = self.probs(&mut tape, &batch)?;
            out.extend(batch_predict(tape.value(probs)));
        }
        Ok(out)
    }
}

impl BaselineModel for VaeModel {
    fn method(&self) -> &'static str {
        "beta_vae"
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn train_loss(&self, tape: &mut Tape, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<NodeId> {
        let eps = if self.config.deterministic {
            None
        } else {
            let n = batch.len() * self.config.z_dim;
            let data: Vec<f64> = (0..n).map(|_| standard_normal(rng)).collect();
            Some(Tensor::matrix(batch.len(), self.config.z_dim, data)?)
        };
        let fwd = self.forward(tape, batch, eps)?;
        vae_loss(tape, self, &fwd, &batch.labels)
    }

    fn predict(&self, examples: &[&PairExample]) -> Result<Vec<usize>> {
        // inference uses the posterior mean
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(EVAL_CHUNK) {
            let batch = Batch::from_examples(chunk);
            let mut tape = Tape::new();
            let fwd = self.forward(&mut tape, &batch, None)?;
            out.extend(batch_predict(tape.value(fwd.probs)));
        }
        Ok(out)
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn baseline_accuracy<M: BaselineModel>(model: &M, examples: &[&PairExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::InvalidInput("empty evaluation split".into()));
    }
    let preds = model.predict(examples)?;
    Ok(crate::eval::accuracy_of(&preds, examples))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineRow {
    pub step: usize,
    pub loss: f64,
    pub dev_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineHistory {
    pub rows: Vec<BaselineRow>,
}

impl BaselineHistory {
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "step\tloss\tdev_acc")?;
        for r in &self.rows {
            let dev = r.dev_acc.map(|a| a.to_string()).unwrap_or_default();
            writeln!(f, "{}\t{}\t{}", r.step, r.loss, dev)?;
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct BaselineOutcome<M> {
    /// Best-first; `checkpoints[0]` is the selected model.
    pub checkpoints: Vec<Checkpoint<M>>,
    pub history: BaselineHistory,
}

/// Shared training loop: AdamW on the full store, dev evaluation every
/// `eval_every` steps and at the end, `checkpoint_top_k` best kept with
/// ties broken toward the later step. Scheduling fields of `TrainConfig`
/// (λ, β, δ, pm steps) are ignored.
pub fn train_baseline<M: BaselineModel>(
    mut model: M,
    corpus: &Corpus,
    config: &TrainConfig,
    config_hash: &str,
    vocab_hash: &str,
) -> Result<BaselineOutcome<M>> {
    config.validate()?;
    let train_split = corpus.split_vec(Split::Train);
    let dev_split = corpus.split_vec(Split::Dev);
    if train_split.is_empty() || dev_split.is_empty() {
        return Err(Error::InvalidInput(
            "corpus needs non-empty train and dev splits".into(),
        ));
    }
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: config.lr,
            weight_decay: config.weight_decay,
            ..Default::default()
        },
        model.store(),
    );
    let mut noise_rng = ChaCha8Rng::seed_from_u64(mix(config.seed, 0x0e75));
    let mut history = BaselineHistory::default();
    let mut candidates: Vec<Checkpoint<M>> = Vec::new();
    let mut step = 0usize;
    let mut last_eval_step = usize::MAX;

    let evaluate = |model: &M,
                        opt: &AdamW,
                        step: usize,
                        candidates: &mut Vec<Checkpoint<M>>|
     -> Result<f64> {
        let acc = baseline_accuracy(model, &dev_split)?;
        candidates.push(Checkpoint {
            version: CHECKPOINT_VERSION,
            method: model.method().into(),
            step,
            dev_accuracy: acc,
            config_hash: config_hash.into(),
            vocab_hash: vocab_hash.into(),
            model: model.clone(),
            optimizer: opt.clone(),
        });
        candidates.sort_by(|a, b| {
            b.dev_accuracy
                .partial_cmp(&a.dev_accuracy)
                .unwrap()
                .then(b.step.cmp(&a.step))
        });
        candidates.truncate(config.checkpoint_top_k);
        Ok(acc)
    };

    if config.epochs == 0 {
        evaluate(&model, &opt, 0, &mut candidates)?;
        return Ok(BaselineOutcome {
            checkpoints: candidates,
            history,
        });
    }

    let mut indices: Vec<usize> = (0..train_split.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed, 1 + epoch as u64));
        rand::seq::SliceRandom::shuffle(&mut indices[..], &mut rng);
        for chunk in indices.chunks(config.batch_size) {
            let examples: Vec<&_> = chunk.iter().map(|&i| train_split[i]).collect();
            let batch = Batch::from_examples(&examples);
            let mut tape = Tape::new();
            let loss = model.train_loss(&mut tape, &batch, &mut noise_rng)?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step,
                    l_base: value,
                    l_dip: 0.0,
                    l_pm: 0.0,
                    l_pred: 0.0,
                });
            }
            model.store_mut().zero_grad();
            let g = tape.backward(loss);
            g.accumulate_into(&tape, model.store_mut(), GroupSet::all(), 1.0);
            opt.step(model.store_mut(), GroupSet::all())?;
            step += 1;
            let dev_acc = if step % config.eval_every == 0 {
                last_eval_step = step;
                Some(evaluate(&model, &opt, step, &mut candidates)?)
            } else {
                None
            };
            history.rows.push(BaselineRow {
                step: step - 1,
                loss: value,
                dev_acc,
            });
        }
    }
    if last_eval_step != step {
        let acc = evaluate(&model, &opt, step, &mut candidates)?;
        if let Some(row) = history.rows.last_mut() {
            row.dev_acc = Some(acc);
        }
    }
    Ok(BaselineOutcome {
        checkpoints: candidates,
        history,
    })
}

/// Train the ERM baseline with the main model's embedding width.
pub fn train_erm(
    corpus: &Corpus,
    emb_dim: usize,
    config: &TrainConfig,
    config_hash: &str,
    vocab_hash: &str,
) -> Result<BaselineOutcome<ErmModel>> {
    let model = ErmModel::new(emb_dim, corpus.num_labels, corpus.vocab.size(), config.seed)?;
    train_baseline(model, corpus, config, config_hash, vocab_hash)
}

pub fn train_beta_vae(
    corpus: &Corpus,
    vae_config: &VaeConfig,
    config: &TrainConfig,
    config_hash: &str,
    vocab_hash: &str,
) -> Result<BaselineOutcome<VaeModel>> {
    let cfg = VaeConfig {
        num_labels: corpus.num_labels,
        ..vae_config.clone()
    };
    let model = VaeModel::new(cfg, corpus.vocab.size(), config.seed)?;
    train_baseline(model, corpus, config, config_hash, vocab_hash)
}
