//! Parameters, parameter groups, initialization, and the AdamW optimizer.

use crate::error::Result;
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Which part of the model a parameter belongs to. Loss components are
/// gated per group: the embedding table is updated by the base loss only,
/// the adversarial predictor by its own loss only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    Embedding,
    Encoder,
    Decoder,
    Head1,
    Head2,
    Head3,
    Lip,
    Pm,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 8] = [
        ParamGroup::Embedding,
        ParamGroup::Encoder,
        ParamGroup::Decoder,
        ParamGroup::Head1,
        ParamGroup::Head2,
        ParamGroup::Head3,
        ParamGroup::Lip,
        ParamGroup::Pm,
    ];

    fn bit(self) -> u8 {
        Self::ALL.iter().position(|g| *g == self).unwrap() as u8
    }
}

/// Set of parameter groups, used to gate gradient accumulation and
/// optimizer updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupSet(u8);

impl GroupSet {
    pub const EMPTY: GroupSet = GroupSet(0);

    pub fn of(groups: &[ParamGroup]) -> Self {
        let mut bits = 0u8;
        for g in groups {
            bits |= 1 << g.bit();
        }
        GroupSet(bits)
    }

    pub fn all() -> Self {
        GroupSet(0xff)
    }

    pub fn all_except(groups: &[ParamGroup]) -> Self {
        let mut s = Self::all();
        for g in groups {
            s.0 &= !(1 << g.bit());
        }
        s
    }

    pub fn contains(&self, g: ParamGroup) -> bool {
        self.0 & (1 << g.bit()) != 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    #[serde(skip)]
    pub grad_data: Vec<f64>,
    pub trainable: bool,
    pub group: ParamGroup,
}

impl Parameter {
    pub fn grad(&self) -> &[f64] {
        &self.grad_data
    }
}

/// Flat registry of all model parameters.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: &str, group: ParamGroup, value: Tensor) -> ParamId {
        let grad_data = vec![0.0; value.numel()];
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            grad_data,
            trainable: true,
            group,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Parameter)> {
        self.params
            .iter_mut()
            .enumerate()
            .map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            if p.grad_data.len() != p.value.numel() {
                p.grad_data = vec![0.0; p.value.numel()];
            } else {
                p.grad_data.iter_mut().for_each(|g| *g = 0.0);
            }
        }
    }

    /// Restore grad buffers after deserialization (serde skips them).
    pub fn ensure_grads(&mut self) {
        for p in &mut self.params {
            if p.grad_data.len() != p.value.numel() {
                p.grad_data = vec![0.0; p.value.numel()];
            }
        }
    }
}

/// Scaled uniform init: ±sqrt(6/(fan_in+fan_out)).
pub fn glorot_uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| rng.gen_range(-limit..limit))
        .collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// AdamW: adaptive moments with bias correction, weight decay applied
/// directly to the value rather than through the gradient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step_count: usize,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, store: &ParamStore) -> Self {
        let m = store.params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        let v = store.params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        AdamW {
            config,
            step_count: 0,
            m,
            v,
        }
    }

    /// One optimizer step over the parameters whose group is in `groups`.
    /// Moments of untouched parameters are left as-is.
    pub fn step(&mut self, store: &mut ParamStore, groups: GroupSet) -> Result<()> {
        self.step_count += 1;
        let t = self.step_count as f64;
        let c = &self.config;
        let bc1 = 1.0 - c.beta1.powf(t);
        let bc2 = 1.0 - c.beta2.powf(t);
        for (i, p) in store.params.iter_mut().enumerate() {
            if !p.trainable || !groups.contains(p.group) {
                continue;
            }
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            for j in 0..p.value.data.len() {
                let g = p.grad_data[j];
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p.value.data[j] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
                p.value.data[j] -= c.lr * c.weight_decay * p.value.data[j];
            }
        }
        Ok(())
    }
}
