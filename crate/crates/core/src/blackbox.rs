//! The black-box classifier contract and a built-in mean-embedding
//! linear classifier.
//!
//! Explainers only see [`ProbabilitySource`]: a function from a document and
//! a presence mask to a point on the probability simplex. Absent tokens are
//! deleted from the mean pool, so a mask is equivalent to literally removing
//! the masked tokens.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, PAD_ID};
use crate::error::{Error, Result};
use crate::seed;

const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityVector(Vec<f64>);

impl ProbabilityVector {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::invalid(
                "a probability vector needs at least two classes",
            ));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
            return Err(Error::invalid(format!(
                "entries must lie in [0, 1]: {probs:?}"
            )));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::invalid(format!("entries sum to {total}, not 1")));
        }
        Ok(Self(probs))
    }

    /// Numerically stable softmax.
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        Self(exps.into_iter().map(|e| e / total).collect())
    }

    pub(crate) fn from_normalized_unchecked(probs: Vec<f64>) -> Self {
        Self(probs)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    pub fn prob(&self, class: usize) -> f64 {
        self.0[class]
    }

    /// Lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, &p) in self.0.iter().enumerate() {
            if p > self.0[best] {
                best = k;
            }
        }
        best
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// A classifier that maps a (possibly masked) token sequence to class
/// probabilities. Implementations must be pure and thread safe.
pub trait ProbabilityModel: Send + Sync {
    fn num_classes(&self) -> usize;

    fn predict_proba(&self, token_ids: &[u32], mask: Option<&[bool]>) -> Result<ProbabilityVector>;
}

impl<M: ProbabilityModel + ?Sized> ProbabilityModel for &M {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }

    fn predict_proba(&self, token_ids: &[u32], mask: Option<&[bool]>) -> Result<ProbabilityVector> {
        (**self).predict_proba(token_ids, mask)
    }
}

/// What explainers query. `query_index` numbers the queries of a single
/// explanation run; plain models ignore it, output-perturbing wrappers key
/// their noise on it.
pub trait ProbabilitySource: Sync {
    fn num_classes(&self) -> usize;

    fn query(
        &self,
        query_index: u64,
        token_ids: &[u32],
        mask: &[bool],
    ) -> Result<ProbabilityVector>;
}

impl<M: ProbabilityModel + ?Sized> ProbabilitySource for M {
    fn num_classes(&self) -> usize {
        ProbabilityModel::num_classes(self)
    }

    fn query(
        &self,
        _query_index: u64,
        token_ids: &[u32],
        mask: &[bool],
    ) -> Result<ProbabilityVector> {
        self.predict_proba(token_ids, Some(mask))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            epochs: 20,
            lr: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub accuracy: f64,
    pub final_loss: f64,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingClassifier {
    vocab_size: usize,
    dim: usize,
    classes: usize,
    /// Row-major `vocab_size x dim`.
    embeddings: Vec<f64>,
    /// Row-major `dim x classes`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl EmbeddingClassifier {
    pub fn init(vocab_size: usize, dim: usize, classes: usize, seed: u64) -> Result<Self> {
        if vocab_size <= PAD_ID as usize || dim == 0 || classes < 2 {
            return Err(Error::invalid(
                "classifier needs a vocabulary, dim >= 1 and >= 2 classes",
            ));
        }
        let mut rng = seed::rng(seed);
        let emb_init = Normal::new(0.0, 0.1).expect("valid normal");
        let w_init = Normal::new(0.0, 1.0 / (dim as f64).sqrt()).expect("valid normal");
        let mut embeddings: Vec<f64> = (0..vocab_size * dim)
            .map(|_| emb_init.sample(&mut rng))
            .collect();
        let pad = PAD_ID as usize * dim;
        embeddings[pad..pad + dim].fill(0.0);
        let weights = (0..dim * classes)
            .map(|_| w_init.sample(&mut rng))
            .collect();
        Ok(Self {
            vocab_size,
            dim,
            classes,
            embeddings,
            weights,
            bias: vec![0.0; classes],
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embedding(&self, id: u32) -> &[f64] {
        let start = id as usize * self.dim;
        &self.embeddings[start..start + self.dim]
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    fn check_ids(&self, token_ids: &[u32]) -> Result<()> {
        match token_ids.iter().find(|&&id| id as usize >= self.vocab_size) {
            Some(&id) => Err(Error::TokenOutOfRange {
                id,
                vocab_size: self.vocab_size,
            }),
            None => Ok(()),
        }
    }

    /// Mean of the present, non-pad embeddings; zero when nothing is present.
    fn pool(&self, token_ids: &[u32], mask: Option<&[bool]>) -> (Vec<f64>, usize) {
        let mut h = vec![0.0; self.dim];
        let mut count = 0usize;
        for (i, &id) in token_ids.iter().enumerate() {
            if id == PAD_ID || mask.is_some_and(|m| !m[i]) {
                continue;
            }
            for (acc, e) in h.iter_mut().zip(self.embedding(id)) {
                *acc += e;
            }
            count += 1;
        }
        if count > 0 {
            let inv = 1.0 / count as f64;
            h.iter_mut().for_each(|v| *v *= inv);
        }
        (h, count)
    }

    pub fn logits(&self, pooled: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (i, &hi) in pooled.iter().enumerate() {
            let row = &self.weights[i * self.classes..(i + 1) * self.classes];
            for (zc, w) in z.iter_mut().zip(row) {
                *zc += hi * w;
            }
        }
        z
    }

    /// Per-example SGD on softmax cross-entropy, examples visited in a
    /// seeded shuffled order each epoch.
    pub fn train(
        docs: &[Document],
        classes: usize,
        config: &TrainConfig,
    ) -> Result<(Self, TrainReport)> {
        let mut seen = vec![false; classes.max(1)];
        for d in docs {
            if d.label >= classes {
                return Err(Error::invalid(format!(
                    "label {} >= class count {classes}",
                    d.label
                )));
            }
            seen[d.label] = true;
        }
        if seen.iter().filter(|s| **s).count() < 2 {
            return Err(Error::SingleClass);
        }
        let vocab_size = docs
            .iter()
            .flat_map(|d| d.token_ids.iter())
            .map(|&id| id as usize + 1)
            .max()
            .unwrap_or(0);
        let model = Self::init(vocab_size.max(2), config.dim, classes, config.seed)?;
        model.fit(docs, config)
    }

    /// Continues training an initialized model (its vocabulary may be
    /// larger than the ids present in `docs`).
    pub fn fit(mut self, docs: &[Document], config: &TrainConfig) -> Result<(Self, TrainReport)> {
        for d in docs {
            self.check_ids(&d.token_ids)?;
        }
        let mut rng = seed::rng(seed::derive(config.seed, &[1]));
        let mut order: Vec<usize> = (0..docs.len()).collect();
        let mut final_loss = 0.0;
        let (dim, classes) = (self.dim, self.classes);
        let mut grad_h = vec![0.0; dim];
        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for &idx in &order {
                let doc = &docs[idx];
                let (h, count) = self.pool(&doc.token_ids, None);
                let probs = ProbabilityVector::from_logits(&self.logits(&h));
                let loss = -probs.prob(doc.label).max(f64::MIN_POSITIVE).ln();
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch });
                }
                total += loss;

                let mut g = probs.into_vec();
                g[doc.label] -= 1.0;
                for i in 0..dim {
                    let row = &mut self.weights[i * classes..(i + 1) * classes];
                    let mut acc = 0.0;
                    for (w, gc) in row.iter_mut().zip(&g) {
                        acc += *w * gc;
                        *w -= config.lr * h[i] * gc;
                    }
                    grad_h[i] = acc;
                }
                for (b, gc) in self.bias.iter_mut().zip(&g) {
                    *b -= config.lr * gc;
                }
                if count > 0 {
                    let scale = config.lr / count as f64;
                    for &id in &doc.token_ids {
                        if id == PAD_ID {
                            continue;
                        }
                        let start = id as usize * dim;
                        for (e, gh) in self.embeddings[start..start + dim].iter_mut().zip(&grad_h) {
                            *e -= scale * gh;
                        }
                    }
                }
            }
            final_loss = if docs.is_empty() {
                0.0
            } else {
                total / docs.len() as f64
            };
            if !final_loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            log::debug!("epoch {epoch}: mean loss {final_loss:.5}");
        }
        let accuracy = accuracy(&self, docs)?;
        Ok((
            self,
            TrainReport {
                accuracy,
                final_loss,
                epochs: config.epochs,
            },
        ))
    }

    /// Copy with `N(0, sigma2)` noise added entry-wise to every non-pad
    /// embedding row, drawn once from `seed`.
    pub fn perturb(&self, sigma2: f64, seed: u64) -> Result<PerturbedModel> {
        if !sigma2.is_finite() || sigma2 < 0.0 {
            return Err(Error::invalid(format!(
                "variance must be finite and >= 0, got {sigma2}"
            )));
        }
        let mut noisy = self.clone();
        if sigma2 > 0.0 {
            let normal = Normal::new(0.0, sigma2.sqrt()).expect("valid normal");
            let mut rng = seed::rng(seed);
            for (row, chunk) in noisy.embeddings.chunks_mut(self.dim).enumerate() {
                if row == PAD_ID as usize {
                    continue;
                }
                for e in chunk {
                    *e += normal.sample(&mut rng);
                }
            }
        }
        Ok(PerturbedModel {
            model: noisy,
            sigma2,
            seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_checkpoint()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&text)
    }

    /// Plain-text checkpoint: a magic line, `vocab_size`, `dim` and `classes`
    /// lines, then the `embeddings`, `weights` and `bias` sections with one
    /// matrix row per line, closed by `end`.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{CHECKPOINT_MAGIC}");
        let _ = writeln!(out, "vocab_size {}", self.vocab_size);
        let _ = writeln!(out, "dim {}", self.dim);
        let _ = writeln!(out, "classes {}", self.classes);
        let mut section = |name: &str, data: &[f64], width: usize| {
            let _ = writeln!(out, "{name}");
            for row in data.chunks(width) {
                let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        };
        section("embeddings", &self.embeddings, self.dim);
        section("weights", &self.weights, self.classes);
        section("bias", &self.bias, self.classes);
        out.push_str("end\n");
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        let mut lines = text.lines();
        match lines.next() {
            Some(CHECKPOINT_MAGIC) => {}
            Some(other) => return Err(bad(format!("unsupported header {other:?}"))),
            None => return Err(bad("empty checkpoint".into())),
        }
        let mut header = |key: &str| -> Result<usize> {
            let line = lines.next().ok_or_else(|| bad(format!("missing {key}")))?;
            line.strip_prefix(key)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| bad(format!("expected `{key} <n>`, got {line:?}")))
        };
        let vocab_size = header("vocab_size")?;
        let dim = header("dim")?;
        let classes = header("classes")?;
        let mut read_section = |name: &str, rows: usize, width: usize| -> Result<Vec<f64>> {
            if lines.next() != Some(name) {
                return Err(bad(format!("missing section {name}")));
            }
            let mut data = Vec::with_capacity(rows * width);
            for r in 0..rows {
                let line = lines
                    .next()
                    .ok_or_else(|| bad(format!("{name}: missing row {r}")))?;
                let row: std::result::Result<Vec<f64>, _> =
                    line.split(' ').map(str::parse).collect();
                let row = row.map_err(|_| bad(format!("{name}: unparsable row {r}")))?;
                if row.len() != width {
                    return Err(bad(format!(
                        "{name}: row {r} has {} values, want {width}",
                        row.len()
                    )));
                }
                data.extend(row);
            }
            Ok(data)
        };
        let embeddings = read_section("embeddings", vocab_size, dim)?;
        let weights = read_section("weights", dim, classes)?;
        let bias = read_section("bias", 1, classes)?;
        if lines.next() != Some("end") {
            return Err(bad("missing end marker".into()));
        }
        Ok(Self {
            vocab_size,
            dim,
            classes,
            embeddings,
            weights,
            bias,
        })
    }
}

const CHECKPOINT_MAGIC: &str = "explstab-embedding-classifier v1";

impl ProbabilityModel for EmbeddingClassifier {
    fn num_classes(&self) -> usize {
        self.classes
    }

    fn predict_proba(&self, token_ids: &[u32], mask: Option<&[bool]>) -> Result<ProbabilityVector> {
        if token_ids.is_empty() {
            return Err(Error::invalid("cannot predict on an empty token sequence"));
        }
        if let Some(m) = mask {
            if m.len() != token_ids.len() {
                return Err(Error::invalid(format!(
                    "mask length {} != token count {}",
                    m.len(),
                    token_ids.len()
                )));
            }
        }
        self.check_ids(token_ids)?;
        let (h, _) = self.pool(token_ids, mask);
        Ok(ProbabilityVector::from_logits(&self.logits(&h)))
    }
}

/// A classifier whose embedding table carries one fixed Gaussian draw.
#[derive(Debug, Clone)]
pub struct PerturbedModel {
    model: EmbeddingClassifier,
    sigma2: f64,
    seed: u64,
}

impl PerturbedModel {
    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn inner(&self) -> &EmbeddingClassifier {
        &self.model
    }
}

impl ProbabilityModel for PerturbedModel {
    fn num_classes(&self) -> usize {
        self.model.classes
    }

    fn predict_proba(&self, token_ids: &[u32], mask: Option<&[bool]>) -> Result<ProbabilityVector> {
        self.model.predict_proba(token_ids, mask)
    }
}

pub fn perturb_model(
    model: &EmbeddingClassifier,
    sigma2_input: f64,
    seed: u64,
) -> Result<PerturbedModel> {
    model.perturb(sigma2_input, seed)
}

pub fn accuracy<M: ProbabilityModel + ?Sized>(model: &M, docs: &[Document]) -> Result<f64> {
    if docs.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0usize;
    for d in docs {
        if model.predict_proba(&d.token_ids, None)?.argmax() == d.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / docs.len() as f64)
}
