//! Flat run configuration: one TOML file covering data generation, model
//! shape, training, evaluation, and sweeps. Every key has a default and
//! unknown keys are rejected; the fully resolved config is echoed next to
//! the outputs together with its content hash.

use capm_core::baselines::VaeConfig;
use capm_core::data::DatasetSpec;
use capm_core::model::ModelConfig;
use capm_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// causal_apm | erm | beta_vae
    pub method: String,
    pub out_dir: String,
    pub corpus_dir: String,

    // data generation
    pub vocab_size: usize,
    pub num_labels: usize,
    pub len1_min: usize,
    pub len1_max: usize,
    pub len2_min: usize,
    pub len2_max: usize,
    pub bias_label: usize,
    pub bias_strength: f64,
    pub overlap_threshold: f64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_id_test: usize,
    pub n_ood_test: usize,
    pub semantic_noise: f64,
    pub high_overlap_frac: f64,
    pub ood_high_overlap_frac: f64,

    // model shape
    pub emb_dim: usize,
    pub z_dim: usize,
    pub z2_dim: usize,
    pub lip_hidden: usize,
    pub pm_hidden: usize,
    pub vae_beta: f64,
    pub vae_deterministic: bool,

    // training
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

    // evaluation and sweeps
    pub bins: usize,
    pub delta_grid: Vec<f64>,
    pub z2_dims: Vec<usize>,
    pub sweep_seeds: u64,
    pub sweep_inference_only: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let d = DatasetSpec::default();
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        let v = VaeConfig::default();
        RunConfig {
            method: "causal_apm".into(),
            out_dir: "run_out".into(),
            corpus_dir: "corpus".into(),
            vocab_size: d.vocab_size,
            num_labels: d.num_labels,
            len1_min: d.len1_min,
            len1_max: d.len1_max,
            len2_min: d.len2_min,
            len2_max: d.len2_max,
            bias_label: d.bias_label,
            bias_strength: d.bias_strength,
            overlap_threshold: d.overlap_threshold,
            n_train: d.n_train,
            n_dev: d.n_dev,
            n_id_test: d.n_id_test,
            n_ood_test: d.n_ood_test,
            semantic_noise: d.semantic_noise,
            high_overlap_frac: d.high_overlap_frac,
            ood_high_overlap_frac: d.ood_high_overlap_frac,
            emb_dim: m.emb_dim,
            z_dim: m.z_dim,
            z2_dim: m.z2_dim,
            lip_hidden: m.lip_hidden,
            pm_hidden: m.pm_hidden,
            vae_beta: v.beta,
            vae_deterministic: v.deterministic,
            lr: t.lr,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            epochs: t.epochs,
            seed: t.seed,
            warmup_steps: t.warmup_steps,
            lambda_final: t.lambda_final,
            beta_mag: t.beta_mag,
            delta: t.delta,
            pm_steps_per_main: t.pm_steps_per_main,
            eval_every: t.eval_every,
            checkpoint_top_k: t.checkpoint_top_k,
            bins: 10,
            delta_grid: vec![0.0, 0.05, 0.1, 0.15, 0.2, 0.3, 0.5, 1.0],
            z2_dims: vec![4, 16],
            sweep_seeds: 3,
            sweep_inference_only: false,
        }
    }
}

impl RunConfig {
    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            vocab_size: self.vocab_size,
            num_labels: self.num_labels,
            len1_min: self.len1_min,
            len1_max: self.len1_max,
            len2_min: self.len2_min,
            len2_max: self.len2_max,
            bias_label: self.bias_label,
            bias_strength: self.bias_strength,
            overlap_threshold: self.overlap_threshold,
            n_train: self.n_train,
            n_dev: self.n_dev,
            n_id_test: self.n_id_test,
            n_ood_test: self.n_ood_test,
            seed: self.seed,
            semantic_noise: self.semantic_noise,
            high_overlap_frac: self.high_overlap_frac,
            ood_high_overlap_frac: self.ood_high_overlap_frac,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            emb_dim: self.emb_dim,
            z_dim: self.z_dim,
            z2_dim: self.z2_dim,
            num_labels: self.num_labels,
            lip_hidden: self.lip_hidden,
            pm_hidden: self.pm_hidden,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            warmup_steps: self.warmup_steps,
            lambda_final: self.lambda_final,
            beta_mag: self.beta_mag,
            delta: self.delta,
            pm_steps_per_main: self.pm_steps_per_main,
            eval_every: self.eval_every,
            checkpoint_top_k: self.checkpoint_top_k,
        }
    }

    pub fn vae_config(&self) -> VaeConfig {
        VaeConfig {
            emb_dim: self.emb_dim,
            z_dim: self.z_dim,
            num_labels: self.num_labels,
            beta: self.vae_beta,
            deterministic: self.vae_deterministic,
        }
    }

    /// Canonical TOML echo of the resolved config.
    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }
}
