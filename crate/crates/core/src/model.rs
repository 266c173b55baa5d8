//! The split-latent pair model.
//!
//! A bag-of-embeddings two-tower encoder stands in for a full-scale
//! pretrained encoder: each sentence is mean-pooled over its token
//! embeddings and the pair is represented as concat(u, v, |u−v|, u⊙v).
//! An affine encoder/decoder autoencodes that representation through a
//! hidden code split into a semantic part Z1 and a literal part Z2; three
//! softmax heads classify from R′, Z1, and Z2; a small tanh MLP (LIP)
//! regresses the pair's lexical overlap from Z2 and another (PM) tries to
//! predict Z2 from Z1.

use crate::data::PairExample;
use crate::error::{Error, Result};
use crate::nn::{glorot_uniform, ParamGroup, ParamId, ParamStore};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub emb_dim: usize,
    pub z_dim: usize,
    pub z2_dim: usize,
    pub num_labels: usize,
    pub lip_hidden: usize,
    pub pm_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            emb_dim: 32,
            z_dim: 64,
            z2_dim: 4,
            num_labels: 3,
            lip_hidden: 16,
            pm_hidden: 16,
        }
    }
}

impl ModelConfig {
    pub fn repr_dim(&self) -> usize {
        4 * self.emb_dim
    }

    pub fn z1_dim(&self) -> usize {
        self.z_dim - self.z2_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.z2_dim == 0 || self.z2_dim >= self.z_dim {
            return Err(Error::InvalidInput(format!(
                "need 0 < z2_dim < z_dim, got z2_dim={} z_dim={}",
                self.z2_dim, self.z_dim
            )));
        }
        if self.num_labels < 2 {
            return Err(Error::InvalidInput("num_labels must be ≥ 2".into()));
        }
        Ok(())
    }
}

/// A mini-batch of pair examples in tensor-ready form.
#[derive(Debug, Clone)]
pub struct Batch {
    pub tokens1: Vec<Vec<u32>>,
    pub tokens2: Vec<Vec<u32>>,
    pub labels: Vec<usize>,
    pub overlaps: Vec<f64>,
}

impl Batch {
    pub fn from_examples(examples: &[&PairExample]) -> Batch {
        Batch {
            tokens1: examples.iter().map(|e| e.tokens1.clone()).collect(),
            tokens2: examples.iter().map(|e| e.tokens2.clone()).collect(),
            labels: examples.iter().map(|e| e.label).collect(),
            overlaps: examples.iter().map(|e| e.overlap).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Tape nodes produced by a full forward pass.
pub struct Forward {
    pub r: NodeId,
    pub z: NodeId,
    pub z1: NodeId,
    pub z2: NodeId,
    pub r_prime: NodeId,
    pub probs1: NodeId,
    pub probs2: NodeId,
    pub probs3: NodeId,
    pub s_pred: NodeId,
    pub z2_pred: NodeId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApmModel {
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub store: ParamStore,
    embedding: ParamId,
    enc_w: ParamId,
    enc_b: ParamId,
    dec_w: ParamId,
    dec_b: ParamId,
    head1_w: ParamId,
    head1_b: ParamId,
    head2_w: ParamId,
    head2_b: ParamId,
    head3_w: ParamId,
    head3_b: ParamId,
    lip_w1: ParamId,
    lip_b1: ParamId,
    lip_w2: ParamId,
    lip_b2: ParamId,
    pm_w1: ParamId,
    pm_b1: ParamId,
    pm_w2: ParamId,
    pm_b2: ParamId,
}

impl ApmModel {
    pub fn new(config: ModelConfig, vocab_size: usize, seed: u64) -> Result<ApmModel> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d_r = config.repr_dim();
        let (z, z1, z2) = (config.z_dim, config.z1_dim(), config.z2_dim);
        let c = config.num_labels;

        let mut mat = |store: &mut ParamStore, name: &str, g, rows, cols| {
            let t = glorot_uniform(&mut rng, rows, cols);
            store.add(name, g, t)
        };
        let embedding = mat(&mut store, "embedding", ParamGroup::Embedding, vocab_size, config.emb_dim);
        let enc_w = mat(&mut store, "enc_w", ParamGroup::Encoder, d_r, z);
        let enc_b = store.add("enc_b", ParamGroup::Encoder, Tensor::zeros(&[z]));
        let dec_w = mat(&mut store, "dec_w", ParamGroup::Decoder, z, d_r);
        let dec_b = store.add("dec_b", ParamGroup::Decoder, Tensor::zeros(&[d_r]));
        let head1_w = mat(&mut store, "head1_w", ParamGroup::Head1, d_r, c);
        let head1_b = store.add("head1_b", ParamGroup::Head1, Tensor::zeros(&[c]));
        let head2_w = mat(&mut store, "head2_w", ParamGroup::Head2, z1, c);
        let head2_b = store.add("head2_b", ParamGroup::Head2, Tensor::zeros(&[c]));
        let head3_w = mat(&mut store, "head3_w", ParamGroup::Head3, z2, c);
        let head3_b = store.add("head3_b", ParamGroup::Head3, Tensor::zeros(&[c]));
        let lip_w1 = mat(&mut store, "lip_w1", ParamGroup::Lip, z2, config.lip_hidden);
        let lip_b1 = store.add("lip_b1", ParamGroup::Lip, Tensor::zeros(&[config.lip_hidden]));
        let lip_w2 = mat(&mut store, "lip_w2", ParamGroup::Lip, config.lip_hidden, 1);
        let lip_b2 = store.add("lip_b2", ParamGroup::Lip, Tensor::zeros(&[1]));
        let pm_w1 = mat(&mut store, "pm_w1", ParamGroup::Pm, z1, config.pm_hidden);
        let pm_b1 = store.add("pm_b1", ParamGroup::Pm, Tensor::zeros(&[config.pm_hidden]));
        let pm_w2 = mat(&mut store, "pm_w2", ParamGroup::Pm, config.pm_hidden, z2);
        let pm_b2 = store.add("pm_b2", ParamGroup::Pm, Tensor::zeros(&[z2]));

        Ok(ApmModel {
            config,
            vocab_size,
            store,
            embedding,
            enc_w,
            enc_b,
            dec_w,
            dec_b,
            head1_w,
            head1_b,
            head2_w,
            head2_b,
            head3_w,
            head3_b,
            lip_w1,
            lip_b1,
            lip_w2,
            lip_b2,
            pm_w1,
            pm_b1,
            pm_w2,
            pm_b2,
        })
    }

    fn affine(
        &self,
        tape: &mut Tape,
        x: NodeId,
        w: ParamId,
        b: ParamId,
    ) -> Result<NodeId> {
        let wn = tape.param(&self.store, w);
        let bn = tape.param(&self.store, b);
        let y = tape.matmul(x, wn)?;
        tape.add_row_bias(y, bn)
    }

    /// Pair representation: concat(u, v, |u−v|, u⊙v) of mean-pooled
    /// embeddings.
    pub fn encode_pair(&self, tape: &mut Tape, batch: &Batch) -> Result<NodeId> {
        let table = tape.param(&self.store, self.embedding);
        let u = tape.embed_mean(table, &batch.tokens1)?;
        let v = tape.embed_mean(table, &batch.tokens2)?;
        let d = tape.sub(u, v)?;
        let a = tape.abs(d);
        let m = tape.mul(u, v)?;
        tape.concat_cols(&[u, v, a, m])
    }

    /// Affine encode to Z, split into (z1, z2), affine decode to R′.
    pub fn autoencode(&self, tape: &mut Tape, r: NodeId) -> Result<(NodeId, NodeId, NodeId, NodeId)> {
        let z = self.affine(tape, r, self.enc_w, self.enc_b)?;
        let z1 = tape.slice_cols(z, 0, self.config.z1_dim())?;
        let z2 = tape.slice_cols(z, self.config.z1_dim(), self.config.z_dim)?;
        let r_prime = self.affine(tape, z, self.dec_w, self.dec_b)?;
        Ok((z, z1, z2, r_prime))
    }

    pub fn classify_head1(&self, tape: &mut Tape, r_prime: NodeId) -> Result<NodeId> {
        let logits = self.affine(tape, r_prime, self.head1_w, self.head1_b)?;
        Ok(tape.softmax(logits))
    }

    pub fn classify_head2(&self, tape: &mut Tape, z1: NodeId) -> Result<NodeId> {
        let logits = self.affine(tape, z1, self.head2_w, self.head2_b)?;
        Ok(tape.softmax(logits))
    }

    pub fn classify_head3(&self, tape: &mut Tape, z2: NodeId) -> Result<NodeId> {
        let logits = self.affine(tape, z2, self.head3_w, self.head3_b)?;
        Ok(tape.softmax(logits))
    }

    /// Overlap prediction S′ ∈ (0,1) from the literal code.
    pub fn lip_predict(&self, tape: &mut Tape, z2: NodeId) -> Result<NodeId> {
        let h = self.affine(tape, z2, self.lip_w1, self.lip_b1)?;
        let h = tape.tanh(h);
        let out = self.affine(tape, h, self.lip_w2, self.lip_b2)?;
        Ok(tape.sigmoid(out))
    }

    /// Adversarial prediction of the literal code from the semantic code.
    pub fn pm_predict(&self, tape: &mut Tape, z1: NodeId) -> Result<NodeId> {
        let h = self.affine(tape, z1, self.pm_w1, self.pm_b1)?;
        let h = tape.tanh(h);
        self.affine(tape, h, self.pm_w2, self.pm_b2)
    }

    /// Full forward pass over a batch.
    pub fn forward(&self, tape: &mut Tape, batch: &Batch) -> Result<Forward> {
        let r = self.encode_pair(tape, batch)?;
        let (z, z1, z2, r_prime) = self.autoencode(tape, r)?;
        let probs1 = self.classify_head1(tape, r_prime)?;
        let probs2 = self.classify_head2(tape, z1)?;
        let probs3 = self.classify_head3(tape, z2)?;
        let s_pred = self.lip_predict(tape, z2)?;
        let z2_pred = self.pm_predict(tape, z1)?;
        Ok(Forward {
            r,
            z,
            z1,
            z2,
            r_prime,
            probs1,
            probs2,
            probs3,
            s_pred,
            z2_pred,
        })
    }

    /// PM-only forward over detached codes: z1 and z2 enter as constants so
    /// gradients stop at the adversary's own parameters.
    pub fn pm_forward_detached(
        &self,
        tape: &mut Tape,
        z1_values: Tensor,
        z2_values: Tensor,
    ) -> Result<(NodeId, NodeId)> {
        let z1 = tape.constant(z1_values);
        let z2 = tape.constant(z2_values);
        let z2_pred = self.pm_predict(tape, z1)?;
        let loss = tape.mse_loss(z2_pred, z2)?;
        Ok((z2_pred, loss))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_gradients, GradCheckConfig};
    use crate::nn::{AdamW, AdamWConfig, GroupSet};
    use rand::Rng;

    fn tiny_model(seed: u64) -> ApmModel {
        ApmModel::new(
            ModelConfig {
                emb_dim: 4,
                z_dim: 8,
                z2_dim: 2,
                num_labels: 3,
                lip_hidden: 5,
                pm_hidden: 5,
            },
            20,
            seed,
        )
        .unwrap()
    }

    fn batch(t1: Vec<Vec<u32>>, t2: Vec<Vec<u32>>, labels: Vec<usize>) -> Batch {
        let overlaps = t1
            .iter()
            .zip(&t2)
            .map(|(a, b)| crate::data::sequence_similarity(a, b).unwrap())
            .collect();
        Batch {
            tokens1: t1,
            tokens2: t2,
            labels,
            overlaps,
        }
    }

    #[test]
    fn identical_sentences_zero_abs_block() {
        let m = tiny_model(1);
        let mut tape = Tape::new();
        let b = batch(vec![vec![1, 2, 3]], vec![vec![1, 2, 3]], vec![0]);
        let r = m.encode_pair(&mut tape, &b).unwrap();
        let d = m.config.emb_dim;
        let row = tape.value(r).row(0);
        assert_eq!(tape.value(r).dims2().1, 4 * d);
        assert!(row[2 * d..3 * d].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_shared_token_gives_that_row() {
        let m = tiny_model(2);
        let mut tape = Tape::new();
        let b = batch(vec![vec![5]], vec![vec![5]], vec![0]);
        let r = m.encode_pair(&mut tape, &b).unwrap();
        let d = m.config.emb_dim;
        let erow = m.store.get(m.embedding).value.row(5).to_vec();
        let row = tape.value(r).row(0);
        assert_eq!(&row[0..d], erow.as_slice());
        assert_eq!(&row[d..2 * d], erow.as_slice());
    }

    #[test]
    fn encode_pair_permutation_invariant_within_sentence() {
        let m = tiny_model(3);
        let mut t1 = Tape::new();
        let b1 = batch(vec![vec![1, 2, 3]], vec![vec![4, 5]], vec![0]);
        let r1 = m.encode_pair(&mut t1, &b1).unwrap();
        let mut t2 = Tape::new();
        let b2 = batch(vec![vec![3, 1, 2]], vec![vec![5, 4]], vec![0]);
        let r2 = m.encode_pair(&mut t2, &b2).unwrap();
        for (a, b) in t1.value(r1).data.iter().zip(&t2.value(r2).data) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn embedding_gradients_match_finite_differences() {
        let mut m = tiny_model(4);
        let b = batch(
            vec![vec![1, 2, 3], vec![7, 8]],
            vec![vec![2, 9], vec![8, 8, 1]],
            vec![0, 1],
        );
        let forward = |store: &ParamStore| -> f64 {
            let mut model = tiny_model(4);
            model.store = store.clone();
            let mut tape = Tape::new();
            let r = model.encode_pair(&mut tape, &b).unwrap();
            let s = tape.sum_all(r);
            tape.scalar(s)
        };
        m.store.zero_grad();
        {
            let mut tape = Tape::new();
            let r = m.encode_pair(&mut tape, &b).unwrap();
            let s = tape.sum_all(r);
            let grads = tape.backward(s);
            grads.accumulate_into(&tape, &mut m.store, GroupSet::all(), 1.0);
        }
        let report = check_gradients(&mut m.store, forward, &GradCheckConfig::default());
        assert!(report.max_rel_err <= 1e-6, "worst {:?}", report.worst);
    }

    #[test]
    fn autoencode_zero_input_zero_biases_gives_zero() {
        let m = tiny_model(5);
        let mut tape = Tape::new();
        let r = tape.constant(Tensor::zeros(&[2, m.config.repr_dim()]));
        let (z, z1, z2, rp) = m.autoencode(&mut tape, r).unwrap();
        assert!(tape.value(z).data.iter().all(|v| *v == 0.0));
        assert!(tape.value(rp).data.iter().all(|v| *v == 0.0));
        assert_eq!(tape.value(z1).dims2().1 + tape.value(z2).dims2().1, m.config.z_dim);
    }

    #[test]
    fn invalid_split_rejected_before_arithmetic() {
        assert!(ApmModel::new(
            ModelConfig {
                z_dim: 8,
                z2_dim: 8,
                ..Default::default()
            },
            10,
            0,
        )
        .is_err());
    }

    #[test]
    fn zero_head_weights_give_uniform() {
        let mut m = tiny_model(6);
        m.store.get_mut(m.head2_w).value.fill(0.0);
        m.store.get_mut(m.head2_b).value.fill(0.0);
        let mut tape = Tape::new();
        let z1 = tape.constant(Tensor::matrix(1, m.config.z1_dim(), vec![0.3; 6]).unwrap());
        let p = m.classify_head2(&mut tape, z1).unwrap();
        for v in &tape.value(p).data {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn head_probs_sum_to_one_and_argmax_matches_logits() {
        let m = tiny_model(7);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let mut tape = Tape::new();
            let z1v: Vec<f64> = (0..m.config.z1_dim()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let z1 = tape.constant(Tensor::matrix(1, m.config.z1_dim(), z1v).unwrap());
            let wn = tape.param(&m.store, m.head2_w);
            let bn = tape.param(&m.store, m.head2_b);
            let mm = tape.matmul(z1, wn).unwrap();
            let logits = tape.add_row_bias(mm, bn).unwrap();
            let p = tape.softmax(logits);
            let s: f64 = tape.value(p).data.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            let argmax = |xs: &[f64]| {
                xs.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .unwrap()
                    .0
            };
            assert_eq!(argmax(&tape.value(p).data), argmax(&tape.value(logits).data));
        }
    }

    #[test]
    fn lip_zero_weights_give_half() {
        let mut m = tiny_model(8);
        for id in [m.lip_w1, m.lip_b1, m.lip_w2, m.lip_b2] {
            m.store.get_mut(id).value.fill(0.0);
        }
        let mut tape = Tape::new();
        let z2 = tape.constant(Tensor::matrix(1, 2, vec![1.5, -0.3]).unwrap());
        let s = m.lip_predict(&mut tape, z2).unwrap();
        assert_eq!(tape.value(s).data[0], 0.5);
    }

    #[test]
    fn lip_output_in_open_unit_interval() {
        let m = tiny_model(9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..1000 * 2).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let z2 = tape.constant(Tensor::matrix(1000, 2, data).unwrap());
        let s = m.lip_predict(&mut tape, z2).unwrap();
        assert!(tape.value(s).data.iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn pm_zero_weights_give_zero_and_width() {
        let mut m = tiny_model(10);
        for id in [m.pm_w1, m.pm_b1, m.pm_w2, m.pm_b2] {
            m.store.get_mut(id).value.fill(0.0);
        }
        let mut tape = Tape::new();
        let z1 = tape.constant(Tensor::matrix(3, m.config.z1_dim(), vec![0.7; 18]).unwrap());
        let out = m.pm_predict(&mut tape, z1).unwrap();
        assert_eq!(tape.value(out).dims2(), (3, m.config.z2_dim));
        assert!(tape.value(out).data.iter().all(|v| *v == 0.0));
    }

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reconstruction_improves_with_training() {
        let m = tiny_model(11);
        let mut model = m;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data: Vec<f64> = (0..8 * model.config.repr_dim())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let r_fixed = Tensor::matrix(8, model.config.repr_dim(), data).unwrap();
        let mut opt = AdamW::new(
            AdamWConfig {
                lr: 1e-2,
                weight_decay: 0.0,
                ..Default::default()
            },
            &model.store,
        );
        let run = |model: &ApmModel| -> (Tape, NodeId) {
            let mut tape = Tape::new();
            let r = tape.constant(r_fixed.clone());
            let (_, _, _, rp) = model.autoencode(&mut tape, r).unwrap();
            let loss = tape.mse_loss(rp, r).unwrap();
            (tape, loss)
        };
        let (tape0, l0) = run(&model);
        let initial = tape0.scalar(l0);
        for _ in 0..200 {
            model.store.zero_grad();
            let (tape, loss) = run(&model);
            let grads = tape.backward(loss);
            grads.accumulate_into(&tape, &mut model.store, GroupSet::all(), 1.0);
            opt.step(
                &mut model.store,
                GroupSet::of(&[ParamGroup::Encoder, ParamGroup::Decoder]),
            )
            .unwrap();
        }
        let (tape1, l1) = run(&model);
        assert!(tape1.scalar(l1) < initial, "{} !< {initial}", tape1.scalar(l1));
    }

    #[test]
    fn pm_recovers_synthetic_dependence() {
        // z2 := first z2_dim entries of z1 → trained PM reaches MSE < 0.01
        let mut model = tiny_model(13);
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 64;
        let z1d = model.config.z1_dim();
        let z2d = model.config.z2_dim;
        let z1_data: Vec<f64> = (0..n * z1d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z1 = Tensor::matrix(n, z1d, z1_data).unwrap();
        let mut z2_data = Vec::with_capacity(n * z2d);
        for i in 0..n {
            z2_data.extend_from_slice(&z1.row(i)[..z2d]);
        }
        let z2 = Tensor::matrix(n, z2d, z2_data).unwrap();
        let mut opt = AdamW::new(
            AdamWConfig {
                lr: 1e-2,
                weight_decay: 0.0,
                ..Default::default()
            },
            &model.store,
        );
        let mut last = f64::INFINITY;
        for _ in 0..2000 {
            model.store.zero_grad();
            let mut tape = Tape::new();
            let (_, loss) = model
                .pm_forward_detached(&mut tape, z1.clone(), z2.clone())
                .unwrap();
            last = tape.scalar(loss);
            let grads = tape.backward(loss);
            grads.accumulate_into(&tape, &mut model.store, GroupSet::all(), 1.0);
            opt.step(&mut model.store, GroupSet::of(&[ParamGroup::Pm])).unwrap();
        }
        assert!(last < 0.01, "PM mse {last}");
    }
}
