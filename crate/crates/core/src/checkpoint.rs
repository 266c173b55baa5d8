//! Versioned JSON checkpoints and content hashing.
//!
//! Serialization is byte-stable for a fixed model: struct field order is
//! fixed and f64 values round-trip exactly through serde_json.

use crate::error::Result;
use crate::nn::AdamW;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint<M> {
    pub version: u32,
    pub method: String,
    pub step: usize,
    pub dev_accuracy: f64,
    /// Hash of the resolved run configuration that produced this model.
    pub config_hash: String,
    /// Hash of the corpus vocabulary, for compatibility checks at eval time.
    pub vocab_hash: String,
    pub model: M,
    pub optimizer: AdamW,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex::encode(h.finalize())
}

pub fn hash_serializable<T: Serialize>(value: &T) -> Result<String> {
    Ok(sha256_hex(&serde_json::to_vec(value)?))
}

pub fn save_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let bytes = serde_json::to_vec(value)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path)?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ApmModel, Batch, ModelConfig};
    use crate::nn::AdamWConfig;
    use crate::tape::Tape;

    #[test]
    fn checkpoint_round_trip_reproduces_forward() {
        let model = ApmModel::new(ModelConfig::default(), 50, 3).unwrap();
        let opt = AdamW::new(AdamWConfig::default(), &model.store);
        let ckpt = Checkpoint {
            version: CHECKPOINT_VERSION,
            method: "causal_apm".into(),
            step: 0,
            dev_accuracy: 0.0,
            config_hash: "x".into(),
            vocab_hash: "y".into(),
            model,
            optimizer: opt,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ckpt.json");
        save_json(&ckpt, &p).unwrap();
        let mut loaded: Checkpoint<ApmModel> = load_json(&p).unwrap();
        loaded.model.store.ensure_grads();

        let probe = Batch {
            tokens1: vec![vec![1, 2, 3], vec![10, 11]],
            tokens2: vec![vec![3, 4], vec![10, 12, 13]],
            labels: vec![0, 1],
            overlaps: vec![0.5, 0.2],
        };
        let mut t1 = Tape::new();
        let f1 = ckpt.model.forward(&mut t1, &probe).unwrap();
        let mut t2 = Tape::new();
        let f2 = loaded.model.forward(&mut t2, &probe).unwrap();
        assert_eq!(t1.value(f1.probs2).data, t2.value(f2.probs2).data);
        assert_eq!(t1.value(f1.r_prime).data, t2.value(f2.r_prime).data);

        // byte-stable re-serialization
        let p2 = dir.path().join("ckpt2.json");
        save_json(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }
}
