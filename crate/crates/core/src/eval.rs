//! Evaluation: mixture accuracy, predict-tendency curves, the linear
//! predictability proxy for latent dependence, and δ × dim(Z2) sweeps.

use crate::data::{Corpus, PairExample, Split};
use crate::error::{Error, Result};
use crate::model::{ApmModel, Batch, ModelConfig};
use crate::objectives::mixture_values;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::trainer::{train, TrainConfig};
use serde::{Deserialize, Serialize};

const EVAL_CHUNK: usize = 256;

/// Per-example (pred2, pred3) probability vectors.
pub fn head_probs(model: &ApmModel, examples: &[&PairExample]) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(EVAL_CHUNK) {
        let batch = Batch::from_examples(chunk);
        let mut tape = Tape::new();
        let r = model.encode_pair(&mut tape, &batch)?;
        let (_, z1, z2, _) = model.autoencode(&mut tape, r)?;
        let p2 = model.classify_head2(&mut tape, z1)?;
        let p3 = model.classify_head3(&mut tape, z2)?;
        for i in 0..chunk.len() {
            out.push((tape.value(p2).row(i).to_vec(), tape.value(p3).row(i).to_vec()));
        }
    }
    Ok(out)
}

pub fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap()
}

/// Final-inference predictions: argmax of the renormalized head mixture.
pub fn predict(model: &ApmModel, examples: &[&PairExample], delta: f64) -> Result<Vec<usize>> {
    Ok(head_probs(model, examples)?
        .iter()
        .map(|(p2, p3)| argmax(&mixture_values(p2, p3, delta)))
        .collect())
}

/// Fraction of examples where the mixture argmax hits the gold label.
pub fn accuracy(model: &ApmModel, examples: &[&PairExample], delta: f64) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::InvalidInput("empty evaluation split".into()));
    }
    let preds = predict(model, examples, delta)?;
    Ok(accuracy_of(&preds, examples))
}

pub fn accuracy_of(preds: &[usize], examples: &[&PairExample]) -> f64 {
    let hits = preds
        .iter()
        .zip(examples)
        .filter(|(p, e)| **p == e.label)
        .count();
    hits as f64 / examples.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TendencyBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub pred_freqs: Vec<f64>,
    pub gold_freqs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TendencyCurve {
    pub bins: Vec<TendencyBin>,
}

impl TendencyCurve {
    /// Predicted bias-label frequency in the top non-empty bin minus the
    /// bottom non-empty bin.
    pub fn bias_spread(&self, bias_label: usize) -> f64 {
        let top = self.bins.iter().rev().find(|b| b.count > 0);
        let bottom = self.bins.iter().find(|b| b.count > 0);
        match (top, bottom) {
            (Some(t), Some(b)) => t.pred_freqs[bias_label] - b.pred_freqs[bias_label],
            _ => 0.0,
        }
    }
}

/// Bin examples by cached overlap and tally predicted and gold label
/// distributions per bin. Empty bins are kept with count 0.
pub fn tendency_from_predictions(
    examples: &[&PairExample],
    preds: &[usize],
    num_labels: usize,
    bins: usize,
) -> Result<TendencyCurve> {
    if bins < 2 {
        return Err(Error::InvalidInput("bins must be ≥ 2".into()));
    }
    let mut counts = vec![0usize; bins];
    let mut pred_counts = vec![vec![0usize; num_labels]; bins];
    let mut gold_counts = vec![vec![0usize; num_labels]; bins];
    for (e, &p) in examples.iter().zip(preds) {
        let b = ((e.overlap * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
        pred_counts[b][p] += 1;
        gold_counts[b][e.label] += 1;
    }
    let freq = |cs: &[usize], n: usize| -> Vec<f64> {
        if n == 0 {
            vec![0.0; cs.len()]
        } else {
            cs.iter().map(|&c| c as f64 / n as f64).collect()
        }
    };
    Ok(TendencyCurve {
        bins: (0..bins)
            .map(|b| TendencyBin {
                lo: b as f64 / bins as f64,
                hi: (b + 1) as f64 / bins as f64,
                count: counts[b],
                pred_freqs: freq(&pred_counts[b], counts[b]),
                gold_freqs: freq(&gold_counts[b], counts[b]),
            })
            .collect(),
    })
}

pub fn tendency_curve(
    model: &ApmModel,
    examples: &[&PairExample],
    bins: usize,
    delta: f64,
) -> Result<TendencyCurve> {
    let preds = predict(model, examples, delta)?;
    tendency_from_predictions(examples, &preds, model.config.num_labels, bins)
}

/// Z1 and Z2 matrices for a set of examples.
pub fn latent_codes(model: &ApmModel, examples: &[&PairExample]) -> Result<(Tensor, Tensor)> {
    let z1d = model.config.z1_dim();
    let z2d = model.config.z2_dim;
    let n = examples.len();
    let mut z1_data = Vec::with_capacity(n * z1d);
    let mut z2_data = Vec::with_capacity(n * z2d);
    for chunk in examples.chunks(EVAL_CHUNK) {
        let batch = Batch::from_examples(chunk);
        let mut tape = Tape::new();
        let r = model.encode_pair(&mut tape, &batch)?;
        let (_, z1, z2, _) = model.autoencode(&mut tape, r)?;
        z1_data.extend_from_slice(&tape.value(z1).data);
        z2_data.extend_from_slice(&tape.value(z2).data);
    }
    Ok((Tensor::matrix(n, z1d, z1_data)?, Tensor::matrix(n, z2d, z2_data)?))
}

/// Held-out linear predictability of z2 from z1: ridge regression fit on the
/// first half of the rows, R² on the second half, averaged over z2 columns.
/// `None` when every z2 column is constant on the held-out half.
pub fn mi_proxy(z1: &Tensor, z2: &Tensor) -> Result<Option<f64>> {
    let (n, p) = z1.dims2();
    let (n2, q) = z2.dims2();
    if n != n2 {
        return Err(Error::InvalidInput("row count mismatch".into()));
    }
    if n < 10 * p {
        return Err(Error::InvalidInput(format!(
            "need at least 10× more rows than z1 width ({n} rows, width {p})"
        )));
    }
    let half = n / 2;
    let ridge = 1e-3;

    // column means over the training half
    let mut mx = vec![0.0; p];
    let mut my = vec![0.0; q];
    for i in 0..half {
        for j in 0..p {
            mx[j] += z1.row(i)[j];
        }
        for j in 0..q {
            my[j] += z2.row(i)[j];
        }
    }
    mx.iter_mut().for_each(|v| *v /= half as f64);
    my.iter_mut().for_each(|v| *v /= half as f64);

    // normal equations on centered data
    let mut xtx = nalgebra::DMatrix::<f64>::zeros(p, p);
    let mut xty = nalgebra::DMatrix::<f64>::zeros(p, q);
    for i in 0..half {
        let xr: Vec<f64> = z1.row(i).iter().zip(&mx).map(|(v, m)| v - m).collect();
        let yr: Vec<f64> = z2.row(i).iter().zip(&my).map(|(v, m)| v - m).collect();
        for a in 0..p {
            for b in a..p {
                xtx[(a, b)] += xr[a] * xr[b];
            }
            for b in 0..q {
                xty[(a, b)] += xr[a] * yr[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            xtx[(a, b)] = xtx[(b, a)];
        }
        xtx[(a, a)] += ridge;
    }
    let chol = nalgebra::Cholesky::new(xtx)
        .ok_or_else(|| Error::InvalidInput("ridge system not positive definite".into()))?;
    let w = chol.solve(&xty);

    // held-out R² per z2 column
    let test = &(half..n).collect::<Vec<_>>();
    let mut ty_mean = vec![0.0; q];
    for &i in test {
        for j in 0..q {
            ty_mean[j] += z2.row(i)[j];
        }
    }
    ty_mean.iter_mut().for_each(|v| *v /= test.len() as f64);

    let mut sse = vec![0.0; q];
    let mut sst = vec![0.0; q];
    for &i in test {
        let xr: Vec<f64> = z1.row(i).iter().zip(&mx).map(|(v, m)| v - m).collect();
        for j in 0..q {
            let mut pred = my[j];
            for a in 0..p {
                pred += xr[a] * w[(a, j)];
            }
            let y = z2.row(i)[j];
            sse[j] += (y - pred) * (y - pred);
            sst[j] += (y - ty_mean[j]) * (y - ty_mean[j]);
        }
    }
    let mut acc = 0.0;
    let mut used = 0;
    for j in 0..q {
        if sst[j] > 1e-12 {
            acc += 1.0 - sse[j] / sst[j];
            used += 1;
        }
    }
    if used == 0 {
        Ok(None)
    } else {
        Ok(Some(acc / used as f64))
    }
}

/// Dependence proxy of a trained model on one split.
pub fn model_mi_proxy(model: &ApmModel, examples: &[&PairExample]) -> Result<Option<f64>> {
    let (z1, z2) = latent_codes(model, examples)?;
    mi_proxy(&z1, &z2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta: f64,
    pub z2_dim: usize,
    pub lambda: f64,
    pub id_acc: f64,
    pub ood_acc: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// True when δ was varied at inference only, on a single model per
    /// (z2_dim, seed) trained at the base δ.
    pub inference_only: bool,
}

fn mix(seed: u64, idx: u64) -> u64 {
    let mut z = seed.wrapping_add(idx.wrapping_mul(0x9e3779b97f4a7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z ^ (z >> 31)
}

/// δ × dim(Z2) sensitivity sweep with a λ = 0 ablation row per (z2_dim,
/// seed). By default each δ is a separate training run; in
/// `inference_only` mode one model per (z2_dim, seed) is trained at the
/// base δ and the grid varies δ at inference time.
pub fn sweep(
    corpus: &Corpus,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    delta_grid: &[f64],
    z2_dims: &[usize],
    num_seeds: u64,
    inference_only: bool,
) -> Result<SweepResult> {
    if delta_grid.is_empty() || z2_dims.is_empty() || num_seeds == 0 {
        return Err(Error::InvalidInput("empty sweep grid".into()));
    }
    let id_test = corpus.split_vec(Split::IdTest);
    let ood_test = corpus.split_vec(Split::OodTest);
    let mut rows = Vec::new();
    let mut cell = 0u64;

    let run = |z2_dim: usize,
                   train_delta: f64,
                   lambda_final: f64,
                   seed_idx: u64,
                   cell: u64|
     -> Result<ApmModel> {
        let mcfg = ModelConfig {
            z2_dim,
            num_labels: corpus.num_labels,
            ..model_config.clone()
        };
        let tcfg = TrainConfig {
            seed: mix(train_config.seed.wrapping_add(seed_idx), cell),
            delta: train_delta,
            lambda_final,
            ..train_config.clone()
        };
        let outcome = train(corpus, &mcfg, &tcfg, "", "").map_err(|f| f.error)?;
        Ok(outcome.checkpoints.into_iter().next().unwrap().model)
    };

    for &z2_dim in z2_dims {
        for seed_idx in 0..num_seeds {
            if inference_only {
                cell += 1;
                let model = run(z2_dim, train_config.delta, train_config.lambda_final, seed_idx, cell)?;
                for &delta in delta_grid {
                    rows.push(SweepRow {
                        delta,
                        z2_dim,
                        lambda: train_config.lambda_final,
                        id_acc: accuracy(&model, &id_test, delta)?,
                        ood_acc: accuracy(&model, &ood_test, delta)?,
                        seed: seed_idx,
                    });
                }
            } else {
                for &delta in delta_grid {
                    cell += 1;
                    let model = run(z2_dim, delta, train_config.lambda_final, seed_idx, cell)?;
                    rows.push(SweepRow {
                        delta,
                        z2_dim,
                        lambda: train_config.lambda_final,
                        id_acc: accuracy(&model, &id_test, delta)?,
                        ood_acc: accuracy(&model, &ood_test, delta)?,
                        seed: seed_idx,
                    });
                }
            }
            // λ = 0 ablation at the base δ
            cell += 1;
            let model = run(z2_dim, train_config.delta, 0.0, seed_idx, cell)?;
            rows.push(SweepRow {
                delta: train_config.delta,
                z2_dim,
                lambda: 0.0,
                id_acc: accuracy(&model, &id_test, train_config.delta)?,
                ood_acc: accuracy(&model, &ood_test, train_config.delta)?,
                seed: seed_idx,
            });
        }
    }
    Ok(SweepResult {
        rows,
        inference_only,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mi_proxy_perfect_linear_dependence() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (n, p, q) = (400, 6, 2);
        let z1 = Tensor::matrix(n, p, (0..n * p).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let mut y = Vec::with_capacity(n * q);
        for i in 0..n {
            let r = z1.row(i);
            y.push(2.0 * r[0] - r[3] + 0.5);
            y.push(r[1] + r[2]);
        }
        let z2 = Tensor::matrix(n, q, y).unwrap();
        let r2 = mi_proxy(&z1, &z2).unwrap().unwrap();
        assert!(r2 >= 0.99, "r2 = {r2}");
    }

    #[test]
    fn mi_proxy_independent_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (n, p, q) = (5000, 8, 2);
        let norm = |rng: &mut ChaCha8Rng| -> f64 {
            // Box-Muller
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let z1 = Tensor::matrix(n, p, (0..n * p).map(|_| norm(&mut rng)).collect()).unwrap();
        let z2 = Tensor::matrix(n, q, (0..n * q).map(|_| norm(&mut rng)).collect()).unwrap();
        let r2 = mi_proxy(&z1, &z2).unwrap().unwrap();
        assert!(r2.abs() <= 0.02, "r2 = {r2}");
    }

    #[test]
    fn mi_proxy_half_signal_half_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, p) = (5000, 4);
        let norm = |rng: &mut ChaCha8Rng| -> f64 {
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        };
        let z1 = Tensor::matrix(n, p, (0..n * p).map(|_| norm(&mut rng)).collect()).unwrap();
        let mut y = Vec::with_capacity(n);
        for i in 0..n {
            y.push(z1.row(i)[0] + norm(&mut rng));
        }
        let z2 = Tensor::matrix(n, 1, y).unwrap();
        let r2 = mi_proxy(&z1, &z2).unwrap().unwrap();
        assert!((r2 - 0.5).abs() <= 0.05, "r2 = {r2}");
    }

    #[test]
    fn mi_proxy_degenerate_target_undefined() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (n, p) = (200, 4);
        let z1 = Tensor::matrix(n, p, (0..n * p).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let z2 = Tensor::matrix(n, 1, vec![3.7; n]).unwrap();
        assert!(mi_proxy(&z1, &z2).unwrap().is_none());
    }

    #[test]
    fn mi_proxy_requires_enough_rows() {
        let z1 = Tensor::matrix(20, 4, vec![0.0; 80]).unwrap();
        let z2 = Tensor::matrix(20, 1, vec![0.0; 20]).unwrap();
        assert!(mi_proxy(&z1, &z2).is_err());
    }

    #[test]
    fn tendency_constant_predictor_and_sums() {
        use crate::data::{PairExample, Split};
        let mk = |overlap: f64, label: usize| PairExample {
            tokens1: vec![1],
            tokens2: vec![2],
            label,
            split: Split::OodTest,
            overlap,
        };
        let ex = vec![mk(0.1, 0), mk(0.55, 1), mk(0.95, 2), mk(0.92, 0)];
        let refs: Vec<&PairExample> = ex.iter().collect();
        let preds = vec![1usize; 4];
        let c = tendency_from_predictions(&refs, &preds, 3, 10).unwrap();
        for b in &c.bins {
            if b.count > 0 {
                assert_eq!(b.pred_freqs[1], 1.0);
                let s: f64 = b.gold_freqs.iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(c.bins.iter().map(|b| b.count).sum::<usize>(), 4);
    }

    #[test]
    fn accuracy_of_constant_predictor_on_balanced_split() {
        use crate::data::{PairExample, Split};
        let mk = |label: usize| PairExample {
            tokens1: vec![1],
            tokens2: vec![2],
            label,
            split: Split::IdTest,
            overlap: 0.0,
        };
        let ex = vec![mk(0), mk(1), mk(0), mk(1)];
        let refs: Vec<&PairExample> = ex.iter().collect();
        assert_eq!(accuracy_of(&vec![0; 4], &refs), 0.5);
        // oracle predictions → 1.0
        let gold: Vec<usize> = refs.iter().map(|e| e.label).collect();
        assert_eq!(accuracy_of(&gold, &refs), 1.0);
    }
}
