//! Sentence-pair corpora: lexical-overlap similarity, the synthetic
//! generator with controllable overlap↔label bias, JSONL loading, and
//! overlap histograms.
//!
//! The generator plants two signals per example: a label-specific pattern
//! token inserted into both sentences (the semantic signal, flipped to a
//! random label with probability `semantic_noise`), and a controlled amount
//! of shared tokens (the literal signal). In the train/dev/id_test splits
//! the label correlates with high overlap at strength `bias_strength`; in
//! the ood_test split labels are drawn independently of overlap.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Dev,
    IdTest,
    OodTest,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Dev, Split::IdTest, Split::OodTest];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::IdTest => "id_test",
            Split::OodTest => "ood_test",
        }
    }

    pub fn from_name(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "dev" => Some(Split::Dev),
            "id_test" => Some(Split::IdTest),
            "ood_test" => Some(Split::OodTest),
            _ => None,
        }
    }
}

/// Token → id bijection. Id 0 is reserved for padding/unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
}

impl Vocabulary {
    pub const UNK: u32 = 0;

    pub fn new(mut tokens: Vec<String>) -> Self {
        let mut v = vec!["<unk>".to_string()];
        v.append(&mut tokens);
        Vocabulary { tokens: v }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.tokens
            .iter()
            .position(|t| t == token)
            .unwrap_or(0) as u32
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    /// Fast lookup table for repeated encoding.
    pub fn index(&self) -> BTreeMap<&str, u32> {
        self.tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i as u32))
            .collect()
    }

    /// Build from a set of observed tokens, sorted for determinism.
    pub fn from_tokens(observed: impl IntoIterator<Item = String>) -> Self {
        let set: BTreeSet<String> = observed.into_iter().collect();
        Vocabulary::new(set.into_iter().collect())
    }
}

/// Lexical overlap: |set(x1) ∩ set(x2)| / max(n, k) with raw sequence
/// lengths n, k in the denominator.
pub fn sequence_similarity(x1: &[u32], x2: &[u32]) -> Result<f64> {
    if x1.is_empty() || x2.is_empty() {
        return Err(Error::InvalidInput(
            "sequence_similarity requires non-empty sequences".into(),
        ));
    }
    let s1: HashSet<u32> = x1.iter().copied().collect();
    let s2: HashSet<u32> = x2.iter().copied().collect();
    let inter = s1.intersection(&s2).count();
    Ok(inter as f64 / x1.len().max(x2.len()) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairExample {
    pub tokens1: Vec<u32>,
    pub tokens2: Vec<u32>,
    pub label: usize,
    pub split: Split,
    pub overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub vocab_size: usize,
    pub num_labels: usize,
    pub len1_min: usize,
    pub len1_max: usize,
    pub len2_min: usize,
    pub len2_max: usize,
    pub bias_label: usize,
    /// ρ: P(label = bias_label | overlap ≥ θ) on the biased splits.
    pub bias_strength: f64,
    /// θ: overlap threshold separating the high- and low-overlap regimes.
    pub overlap_threshold: f64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_id_test: usize,
    pub n_ood_test: usize,
    pub seed: u64,
    /// Probability the planted pattern token names a random label instead
    /// of the true one; bounds the accuracy of a purely semantic predictor.
    pub semantic_noise: f64,
    /// Fraction of high-overlap examples on the biased splits.
    pub high_overlap_frac: f64,
    /// Fraction of high-overlap examples on the ood split; kept high so the
    /// anti-bias region (high overlap, non-bias label) is well populated.
    pub ood_high_overlap_frac: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            vocab_size: 200,
            num_labels: 3,
            len1_min: 8,
            len1_max: 14,
            len2_min: 8,
            len2_max: 14,
            bias_label: 0,
            bias_strength: 0.95,
            overlap_threshold: 0.5,
            n_train: 10_000,
            n_dev: 1_000,
            n_id_test: 1_000,
            n_ood_test: 1_000,
            seed: 0,
            semantic_noise: 0.1,
            high_overlap_frac: 0.5,
            ood_high_overlap_frac: 0.75,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let l = self.num_labels;
        if l < 2 {
            return Err(Error::Generation("num_labels must be ≥ 2".into()));
        }
        if self.bias_label >= l {
            return Err(Error::Generation("bias_label out of range".into()));
        }
        if !(self.bias_strength >= 1.0 / l as f64 && self.bias_strength <= 1.0) {
            return Err(Error::Generation(format!(
                "bias_strength must be in [1/{l}, 1]"
            )));
        }
        if !(self.overlap_threshold > 0.0 && self.overlap_threshold < 1.0) {
            return Err(Error::Generation(
                "overlap_threshold must be strictly inside (0, 1)".into(),
            ));
        }
        if self.len1_min < 1 || self.len2_min < 1 || self.len1_min > self.len1_max || self.len2_min > self.len2_max {
            return Err(Error::Generation("invalid length ranges".into()));
        }
        if !(0.0..=1.0).contains(&self.semantic_noise) {
            return Err(Error::Generation("semantic_noise must be in [0, 1]".into()));
        }
        // Token budget: sentence1 tokens are distinct and sentence2's fresh
        // tokens must avoid sentence1's set.
        let content_pool = self
            .vocab_size
            .saturating_sub(1 + self.num_labels);
        if content_pool < self.len1_max + self.len2_max {
            return Err(Error::Generation(format!(
                "vocab_size {} too small for length ranges (content pool {content_pool})",
                self.vocab_size
            )));
        }
        // At least one feasible (n, k, m) for both overlap regimes.
        if self.feasible_m(self.len1_min, self.len2_min, true).is_none()
            && self.feasible_m(self.len1_max, self.len2_max, true).is_none()
        {
            return Err(Error::Generation(
                "overlap_threshold unreachable for the given length ranges".into(),
            ));
        }
        if self.feasible_m(self.len1_max, self.len2_max, false).is_none()
            && self.feasible_m(self.len1_min, self.len2_min, false).is_none()
        {
            return Err(Error::Generation(
                "low-overlap regime unreachable for the given length ranges".into(),
            ));
        }
        Ok(())
    }

    /// Range of shared-token counts producing the requested overlap regime,
    /// or None if infeasible for these lengths. m must include the pattern
    /// token, so the minimum is always ≥ 1.
    fn feasible_m(&self, n: usize, k: usize, high: bool) -> Option<(usize, usize)> {
        let max_len = n.max(k);
        let min_len = n.min(k);
        let thr = self.overlap_threshold;
        if high {
            // smallest m with m/max_len ≥ θ
            let m_min = (thr * max_len as f64).ceil() as usize;
            let m_min = m_min.max(1);
            if m_min <= min_len {
                Some((m_min, min_len))
            } else {
                None
            }
        } else {
            // largest m with m/max_len < θ
            let mut m_max = ((thr * max_len as f64).ceil() as usize).saturating_sub(1);
            while m_max >= 1 && m_max as f64 / max_len as f64 >= thr {
                m_max -= 1;
            }
            if m_max >= 1 && m_max <= min_len {
                Some((1, m_max))
            } else {
                None
            }
        }
    }

    /// Synthetic vocabulary: id 0 <unk>, one pattern token per label, then
    /// content tokens.
    pub fn build_vocab(&self) -> Vocabulary {
        let mut tokens = Vec::with_capacity(self.vocab_size - 1);
        for l in 0..self.num_labels {
            tokens.push(format!("p{l}"));
        }
        for i in 0..self.vocab_size - 1 - self.num_labels {
            tokens.push(format!("w{i:04}"));
        }
        Vocabulary::new(tokens)
    }

    fn pattern_id(&self, label: usize) -> u32 {
        1 + label as u32
    }

    fn content_range(&self) -> (u32, u32) {
        (1 + self.num_labels as u32, self.vocab_size as u32)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub num_labels: usize,
    pub label_names: Vec<String>,
    pub examples: Vec<PairExample>,
}

impl Corpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &PairExample> {
        self.examples.iter().filter(move |e| e.split == split)
    }

    pub fn split_vec(&self, split: Split) -> Vec<&PairExample> {
        self.split(split).collect()
    }
}

fn mix_seed(seed: u64, stream: u64, index: u64) -> u64 {
    // splitmix64 over the tuple
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add(index.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Sample `count` distinct values from [lo, hi) excluding `exclude`.
fn sample_distinct(
    rng: &mut ChaCha8Rng,
    lo: u32,
    hi: u32,
    count: usize,
    exclude: &HashSet<u32>,
) -> Vec<u32> {
    let mut out = Vec::with_capacity(count);
    let mut taken = HashSet::new();
    while out.len() < count {
        let v = rng.gen_range(lo..hi);
        if exclude.contains(&v) || taken.contains(&v) {
            continue;
        }
        taken.insert(v);
        out.push(v);
    }
    out
}

fn shuffle<T>(rng: &mut ChaCha8Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

fn generate_example(
    spec: &DatasetSpec,
    split: Split,
    rng: &mut ChaCha8Rng,
) -> Result<PairExample> {
    let l = spec.num_labels;
    let biased = split != Split::OodTest;
    let p_high = if biased {
        spec.high_overlap_frac
    } else {
        spec.ood_high_overlap_frac
    };
    let high = rng.gen_bool(p_high);

    let label = if !biased {
        rng.gen_range(0..l)
    } else if high {
        if rng.gen_bool(spec.bias_strength) {
            spec.bias_label
        } else {
            // others share the remaining mass uniformly
            let mut y = rng.gen_range(0..l - 1);
            if y >= spec.bias_label {
                y += 1;
            }
            y
        }
    } else {
        rng.gen_range(0..l)
    };

    let sem_label = if rng.gen_bool(spec.semantic_noise) {
        rng.gen_range(0..l)
    } else {
        label
    };
    let pattern = spec.pattern_id(sem_label);

    // lengths with a feasible shared-token range for the requested regime
    let (n, k, m_lo, m_hi) = {
        let mut found = None;
        for _ in 0..200 {
            let n = rng.gen_range(spec.len1_min..=spec.len1_max);
            let k = rng.gen_range(spec.len2_min..=spec.len2_max);
            if let Some((lo, hi)) = spec.feasible_m(n, k, high) {
                found = Some((n, k, lo, hi));
                break;
            }
        }
        found.ok_or_else(|| {
            Error::Generation(format!(
                "no feasible lengths for {} overlap regime",
                if high { "high" } else { "low" }
            ))
        })?
    };
    let m = rng.gen_range(m_lo..=m_hi);

    let (clo, chi) = spec.content_range();
    // sentence1: pattern + n-1 distinct content tokens
    let mut exclude = HashSet::new();
    let content1 = sample_distinct(rng, clo, chi, n - 1, &exclude);
    let mut tokens1: Vec<u32> = std::iter::once(pattern).chain(content1.iter().copied()).collect();
    let set1: HashSet<u32> = tokens1.iter().copied().collect();

    // shared tokens: pattern plus m-1 of sentence1's content tokens
    let mut pool = content1.clone();
    shuffle(rng, &mut pool);
    let mut tokens2: Vec<u32> = std::iter::once(pattern)
        .chain(pool.iter().take(m - 1).copied())
        .collect();
    // fresh tokens disjoint from sentence1
    exclude.extend(&set1);
    let fresh = sample_distinct(rng, clo, chi, k - m, &exclude);
    tokens2.extend(fresh);

    shuffle(rng, &mut tokens1);
    shuffle(rng, &mut tokens2);

    let overlap = sequence_similarity(&tokens1, &tokens2)?;
    debug_assert_eq!(overlap, m as f64 / n.max(k) as f64);
    debug_assert!(if high {
        overlap >= spec.overlap_threshold
    } else {
        overlap < spec.overlap_threshold
    });

    Ok(PairExample {
        tokens1,
        tokens2,
        label,
        split,
        overlap,
    })
}

/// Generate the four splits. Deterministic per (spec, seed): every example
/// draws from its own substream keyed by (seed, split, index).
pub fn generate_corpus(spec: &DatasetSpec) -> Result<Corpus> {
    spec.validate()?;
    let counts = [
        (Split::Train, spec.n_train),
        (Split::Dev, spec.n_dev),
        (Split::IdTest, spec.n_id_test),
        (Split::OodTest, spec.n_ood_test),
    ];
    let mut examples = Vec::with_capacity(counts.iter().map(|(_, c)| c).sum());
    for (si, (split, count)) in counts.iter().enumerate() {
        for i in 0..*count {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, si as u64, i as u64));
            examples.push(generate_example(spec, *split, &mut rng)?);
        }
    }
    Ok(Corpus {
        vocab: spec.build_vocab(),
        num_labels: spec.num_labels,
        label_names: (0..spec.num_labels).map(|l| l.to_string()).collect(),
        examples,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonRecord {
    sentence1: String,
    sentence2: String,
    label: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    split: Option<String>,
}

fn tokenize(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split_whitespace()
        .map(|t| t.to_string())
        .collect()
}

/// Load newline-delimited pair records. With `vocab` given, out-of-vocabulary
/// tokens map to id 0; otherwise a vocabulary is built from the file
/// (lexicographically sorted for determinism). String labels are resolved
/// against `label_names` when given, else collected and sorted.
pub fn load_jsonl(
    path: &Path,
    vocab: Option<&Vocabulary>,
    label_names: Option<&[String]>,
    default_split: Split,
) -> Result<Corpus> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut raw: Vec<(usize, JsonRecord)> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JsonRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        raw.push((lineno + 1, rec));
    }

    // resolve labels
    let mut names: Vec<String> = match label_names {
        Some(n) => n.to_vec(),
        None => {
            let mut set = BTreeSet::new();
            for (_, r) in &raw {
                set.insert(label_value_to_string(&r.label));
            }
            set.into_iter().collect()
        }
    };
    // all-integer label sets are ordered numerically
    if label_names.is_none() && names.iter().all(|n| n.parse::<usize>().is_ok()) {
        names.sort_by_key(|n| n.parse::<usize>().unwrap());
    }

    let owned_vocab;
    let vocab_ref = match vocab {
        Some(v) => v,
        None => {
            let mut toks = Vec::new();
            for (_, r) in &raw {
                toks.extend(tokenize(&r.sentence1));
                toks.extend(tokenize(&r.sentence2));
            }
            owned_vocab = Vocabulary::from_tokens(toks);
            &owned_vocab
        }
    };
    let index = vocab_ref.index();

    let mut examples = Vec::with_capacity(raw.len());
    for (lineno, rec) in &raw {
        let label_str = label_value_to_string(&rec.label);
        let label = names
            .iter()
            .position(|n| *n == label_str)
            .ok_or_else(|| Error::UnknownLabel {
                label: label_str.clone(),
                allowed: names.clone(),
            })?;
        let split = match &rec.split {
            Some(s) => Split::from_name(s).ok_or_else(|| Error::Parse {
                line: *lineno,
                message: format!("unknown split {s:?}"),
            })?,
            None => default_split,
        };
        let encode = |s: &str| -> Vec<u32> {
            tokenize(s)
                .iter()
                .map(|t| index.get(t.as_str()).copied().unwrap_or(Vocabulary::UNK))
                .collect()
        };
        let tokens1 = encode(&rec.sentence1);
        let tokens2 = encode(&rec.sentence2);
        if tokens1.is_empty() || tokens2.is_empty() {
            return Err(Error::Parse {
                line: *lineno,
                message: "empty sentence".into(),
            });
        }
        let overlap = sequence_similarity(&tokens1, &tokens2)?;
        examples.push(PairExample {
            tokens1,
            tokens2,
            label,
            split,
            overlap,
        });
    }
    let num_labels = names.len().max(2);
    Ok(Corpus {
        vocab: vocab_ref.clone(),
        num_labels,
        label_names: names,
        examples,
    })
}

fn label_value_to_string(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Write one split as newline-delimited records, detokenized through the
/// corpus vocabulary. Byte-stable for a fixed corpus.
pub fn save_jsonl(corpus: &Corpus, split: Split, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in corpus.split(split) {
        let detok = |ids: &[u32]| -> String {
            ids.iter()
                .map(|&i| corpus.vocab.token(i))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let rec = JsonRecord {
            sentence1: detok(&e.tokens1),
            sentence2: detok(&e.tokens2),
            label: serde_json::Value::String(corpus.label_names[e.label].clone()),
            split: Some(e.split.name().to_string()),
        };
        serde_json::to_writer(&mut f, &rec)?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinStat {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub label_counts: Vec<usize>,
}

impl BinStat {
    pub fn label_freqs(&self) -> Vec<f64> {
        if self.count == 0 {
            vec![0.0; self.label_counts.len()]
        } else {
            self.label_counts
                .iter()
                .map(|&c| c as f64 / self.count as f64)
                .collect()
        }
    }
}

/// Evenly partition [0, 1] into `bins` and count gold labels per overlap bin.
pub fn overlap_histogram(examples: &[&PairExample], num_labels: usize, bins: usize) -> Result<Vec<BinStat>> {
    if bins < 2 {
        return Err(Error::InvalidInput("bins must be ≥ 2".into()));
    }
    if examples.is_empty() {
        return Err(Error::InvalidInput("empty corpus".into()));
    }
    let mut out: Vec<BinStat> = (0..bins)
        .map(|b| BinStat {
            lo: b as f64 / bins as f64,
            hi: (b + 1) as f64 / bins as f64,
            count: 0,
            label_counts: vec![0; num_labels],
        })
        .collect();
    for e in examples {
        let b = ((e.overlap * bins as f64) as usize).min(bins - 1);
        out[b].count += 1;
        out[b].label_counts[e.label] += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn similarity_identical() {
        assert_eq!(sequence_similarity(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
    }

    #[test]
    fn similarity_disjoint() {
        assert_eq!(sequence_similarity(&[1, 2], &[3, 4]).unwrap(), 0.0);
    }

    #[test]
    fn similarity_partial() {
        // {a,b,c} ∩ {a,b,d,e} = 2, max(3,4) = 4
        assert_eq!(sequence_similarity(&[1, 2, 3], &[1, 2, 4, 5]).unwrap(), 0.5);
    }

    #[test]
    fn similarity_empty_rejected() {
        assert!(sequence_similarity(&[], &[1]).is_err());
    }

    fn small_spec(rho: f64, n_train: usize, seed: u64) -> DatasetSpec {
        DatasetSpec {
            bias_strength: rho,
            n_train,
            n_dev: 200,
            n_id_test: 200,
            n_ood_test: 500,
            seed,
            ..Default::default()
        }
    }

    fn bias_rate(corpus: &Corpus, spec: &DatasetSpec, high: bool) -> f64 {
        let sel: Vec<_> = corpus
            .split(Split::Train)
            .filter(|e| (e.overlap >= spec.overlap_threshold) == high)
            .collect();
        let hits = sel.iter().filter(|e| e.label == spec.bias_label).count();
        hits as f64 / sel.len() as f64
    }

    #[test]
    fn unbiased_rho_gives_near_zero_correlation() {
        let spec = small_spec(1.0 / 3.0, 10_000, 1);
        let corpus = generate_corpus(&spec).unwrap();
        let hi = bias_rate(&corpus, &spec, true);
        let lo = bias_rate(&corpus, &spec, false);
        assert!((hi - lo).abs() < 0.02 + 0.02, "hi={hi} lo={lo}");
    }

    #[test]
    fn degenerate_rho_one() {
        let spec = small_spec(1.0, 2_000, 2);
        let corpus = generate_corpus(&spec).unwrap();
        for e in corpus.split(Split::Train) {
            if e.overlap >= spec.overlap_threshold {
                assert_eq!(e.label, spec.bias_label);
            }
        }
    }

    #[test]
    fn empirical_bias_matches_rho() {
        let spec = small_spec(0.9, 10_000, 3);
        let corpus = generate_corpus(&spec).unwrap();
        let hi = bias_rate(&corpus, &spec, true);
        assert!((0.88..=0.92).contains(&hi), "got {hi}");
    }

    #[test]
    fn generation_deterministic_per_seed() {
        let spec = small_spec(0.9, 500, 42);
        let a = generate_corpus(&spec).unwrap();
        let b = generate_corpus(&spec).unwrap();
        assert_eq!(a.examples, b.examples);
    }

    #[test]
    fn cached_overlap_equals_recomputation() {
        let spec = small_spec(0.9, 500, 4);
        let corpus = generate_corpus(&spec).unwrap();
        for e in &corpus.examples {
            assert_eq!(
                e.overlap,
                sequence_similarity(&e.tokens1, &e.tokens2).unwrap()
            );
        }
    }

    #[test]
    fn ood_anti_bias_region_populated() {
        let spec = small_spec(0.95, 500, 5);
        let corpus = generate_corpus(&spec).unwrap();
        let ood: Vec<_> = corpus.split(Split::OodTest).collect();
        let anti = ood
            .iter()
            .filter(|e| e.overlap >= spec.overlap_threshold && e.label != spec.bias_label)
            .count();
        assert!(
            anti as f64 / ood.len() as f64 >= 0.30,
            "anti-bias fraction {}",
            anti as f64 / ood.len() as f64
        );
    }

    #[test]
    fn infeasible_spec_rejected() {
        // θ close to 1 but sentence lengths force max(n,k) > min(n,k)
        let spec = DatasetSpec {
            len1_min: 4,
            len1_max: 4,
            len2_min: 12,
            len2_max: 12,
            overlap_threshold: 0.9,
            ..Default::default()
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn load_jsonl_overlap_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(
            &p,
            "{\"sentence1\":\"a b\",\"sentence2\":\"a b\",\"label\":0}\n",
        )
        .unwrap();
        let c = load_jsonl(&p, None, None, Split::Train).unwrap();
        assert_eq!(c.examples.len(), 1);
        assert_eq!(c.examples[0].overlap, 1.0);

        std::fs::write(&p, "{\"sentence1\":\"a\",\"sentence2\":\"b\"}\n").unwrap();
        match load_jsonl(&p, None, None, Split::Train) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn load_jsonl_unknown_label_lists_allowed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.jsonl");
        std::fs::write(
            &p,
            "{\"sentence1\":\"a\",\"sentence2\":\"b\",\"label\":\"contradiction\"}\n",
        )
        .unwrap();
        let names = vec!["entailment".to_string(), "neutral".to_string()];
        match load_jsonl(&p, None, Some(&names), Split::Train) {
            Err(Error::UnknownLabel { allowed, .. }) => assert_eq!(allowed, names),
            other => panic!("expected unknown label, got {other:?}"),
        }
    }

    #[test]
    fn jsonl_round_trip() {
        let spec = small_spec(0.9, 20, 6);
        let corpus = generate_corpus(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.jsonl");
        save_jsonl(&corpus, Split::Train, &p).unwrap();
        let loaded = load_jsonl(
            &p,
            Some(&corpus.vocab),
            Some(&corpus.label_names),
            Split::Train,
        )
        .unwrap();
        let orig: Vec<_> = corpus.split(Split::Train).cloned().collect();
        assert_eq!(orig, loaded.examples);

        // serialize again, bytes identical
        let p2 = dir.path().join("train2.jsonl");
        save_jsonl(&loaded, Split::Train, &p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn histogram_all_mass_in_last_bin() {
        let e = PairExample {
            tokens1: vec![1, 2],
            tokens2: vec![1, 2],
            label: 0,
            split: Split::Train,
            overlap: 1.0,
        };
        let refs = vec![&e, &e];
        let h = overlap_histogram(&refs, 2, 10).unwrap();
        assert_eq!(h[9].count, 2);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 2);
    }

    #[test]
    fn histogram_freqs_sum_to_one() {
        let spec = small_spec(0.9, 2_000, 7);
        let corpus = generate_corpus(&spec).unwrap();
        let train = corpus.split_vec(Split::Train);
        let h = overlap_histogram(&train, corpus.num_labels, 10).unwrap();
        for b in &h {
            if b.count > 0 {
                let s: f64 = b.label_freqs().iter().sum();
                assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn histogram_top_bin_pure_at_rho_one() {
        let spec = small_spec(1.0, 2_000, 8);
        let corpus = generate_corpus(&spec).unwrap();
        let train = corpus.split_vec(Split::Train);
        let h = overlap_histogram(&train, corpus.num_labels, 10).unwrap();
        let top = h.iter().rev().find(|b| b.count > 0).unwrap();
        assert_eq!(top.label_freqs()[spec.bias_label], 1.0);
    }

    proptest! {
        #[test]
        fn similarity_symmetric_and_bounded(
            a in proptest::collection::vec(0u32..50, 1..20),
            b in proptest::collection::vec(0u32..50, 1..20),
        ) {
            let s1 = sequence_similarity(&a, &b).unwrap();
            let s2 = sequence_similarity(&b, &a).unwrap();
            prop_assert_eq!(s1, s2);
            prop_assert!((0.0..=1.0).contains(&s1));
        }
    }
}
