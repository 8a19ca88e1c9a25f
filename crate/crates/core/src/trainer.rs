//! Two-phase few-shot training over frozen sentence embeddings.
//!
//! A linear head `logits = W^T z + b` over the union of base and novel labels
//! is first trained on the base set with cross-entropy, then fine-tuned on
//! the augmented novel set with
//!
//! ```text
//! L = L_CE + lambda * L_CL
//! L_CL = -log( P / (P + N) )     P = sum over same-label pairs of exp(cos(z_i, z_j))
//!                                N = sum over cross-label pairs of exp(cos(z_i, z_j))
//! ```
//!
//! Pairs are unordered and taken within a minibatch. A batch without
//! cross-label pairs has `L_CL = 0`; a batch with negatives but no positives
//! also gets `L_CL = 0` and is counted in [`TrainRun::contrastive_skipped`].
//!
//! The embeddings themselves are fixed, so `z = A e` passes them through a
//! trainable `d x d` adapter (identity at start). Without it the contrastive
//! term would have no parameter to act on. `adapter = false` drops it.
//!
//! Optimisation is plain minibatch SGD. Epoch `t` of phase `p` visits the
//! samples in the order of a shuffle keyed by `(seed, "trainer/shuffle",
//! "{p}/{t}")`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::Augmenter;
use crate::corpus::{merge_augmented, Dataset};
use crate::embed::EmbeddingStore;
use crate::error::TrainError;
use crate::rng::KeyedRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs_base: usize,
    pub epochs_fewshot: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub seed: u64,
    pub adapter: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_base: 150,
            epochs_fewshot: 150,
            batch_size: 8,
            learning_rate: 4e-5,
            lambda: 1.0,
            seed: 0,
            adapter: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.lambda > 0.0 && self.batch_size < 2 {
            return Err(TrainError::Config(
                "batch_size must be at least 2 when lambda > 0".into(),
            ));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(TrainError::Config(format!(
                "lambda {} must be finite and >= 0",
                self.lambda
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config(format!(
                "learning_rate {} must be finite and > 0",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// Linear classifier over the union label space, with the optional adapter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    classes: Vec<String>,
    dim: usize,
    /// `d x C`, row-major: `weights[k * C + c]`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    /// `d x d`, row-major, maps an embedding to the head input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    adapter: Option<Vec<f64>>,
}

impl ClassifierHead {
    /// Zero bias, weights uniform in `[-1/sqrt(d), 1/sqrt(d)]`.
    pub fn init(classes: Vec<String>, dim: usize, adapter: bool, rng: &mut KeyedRng) -> Self {
        let c = classes.len();
        let bound = 1.0 / (dim as f64).sqrt();
        let weights = (0..dim * c)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        ClassifierHead {
            classes,
            dim,
            weights,
            bias: vec![0.0; c],
            adapter: adapter.then(|| identity(dim)),
        }
    }

    /// A head from explicit parameters; `weights` is `d x C` row-major.
    pub fn from_parts(
        classes: Vec<String>,
        dim: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self, TrainError> {
        let c = classes.len();
        if weights.len() != dim * c || bias.len() != c {
            return Err(TrainError::Shape(format!(
                "expected {dim}x{c} weights and {c} biases, got {} and {}",
                weights.len(),
                bias.len()
            )));
        }
        Ok(ClassifierHead {
            classes,
            dim,
            weights,
            bias,
            adapter: None,
        })
    }

    pub fn with_adapter(mut self, adapter: Option<Vec<f64>>) -> Result<Self, TrainError> {
        if let Some(a) = &adapter {
            if a.len() != self.dim * self.dim {
                return Err(TrainError::Shape(format!(
                    "adapter must be {0}x{0}",
                    self.dim
                )));
            }
        }
        self.adapter = adapter;
        Ok(self)
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn adapter(&self) -> Option<&[f64]> {
        self.adapter.as_deref()
    }

    pub fn adapter_mut(&mut self) -> Option<&mut [f64]> {
        self.adapter.as_deref_mut()
    }

    /// Head input for an embedding: `A e`, or `e` without an adapter.
    pub fn features(&self, e: &[f64]) -> Result<Vec<f64>, TrainError> {
        self.check_dim(e)?;
        Ok(match &self.adapter {
            None => e.to_vec(),
            Some(a) => (0..self.dim)
                .map(|r| (0..self.dim).map(|k| a[r * self.dim + k] * e[k]).sum())
                .collect(),
        })
    }

    fn check_dim(&self, v: &[f64]) -> Result<(), TrainError> {
        if v.len() != self.dim {
            return Err(TrainError::Shape(format!(
                "vector of dimension {}, head expects {}",
                v.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// `W^T z + b` for a head input `z`.
    pub fn logits(&self, z: &[f64]) -> Result<Vec<f64>, TrainError> {
        self.check_dim(z)?;
        let c = self.n_classes();
        let mut out = self.bias.clone();
        for (k, zk) in z.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.weights[k * c + j] * zk;
            }
        }
        Ok(out)
    }

    /// Argmax class of an embedding, ties to the lowest index.
    pub fn predict(&self, e: &[f64]) -> Result<usize, TrainError> {
        let l = self.logits(&self.features(e)?)?;
        Ok(argmax(&l))
    }

    /// Loss and gradients on one batch of embeddings.
    #[allow(clippy::needless_range_loop)]
    pub fn loss_and_grad(
        &self,
        embeddings: &[Vec<f64>],
        labels: &[usize],
        lambda: f64,
    ) -> Result<HeadGrad, TrainError> {
        let z = embeddings
            .iter()
            .map(|e| self.features(e))
            .collect::<Result<Vec<_>, _>>()?;
        let logits = z
            .iter()
            .map(|zi| self.logits(zi))
            .collect::<Result<Vec<_>, _>>()?;
        let (ce, dlogits) = cross_entropy_with_grad(&logits, labels)?;
        let cl = if lambda > 0.0 {
            contrastive_with_grad(&z, labels)?
        } else {
            Contrastive::zero(z.len(), self.dim)
        };
        let c = self.n_classes();
        let d = self.dim;
        let mut gw = vec![0.0; d * c];
        let mut gb = vec![0.0; c];
        let mut gz = vec![vec![0.0; d]; z.len()];
        for i in 0..z.len() {
            for j in 0..c {
                gb[j] += dlogits[i][j];
                for k in 0..d {
                    gw[k * c + j] += z[i][k] * dlogits[i][j];
                    gz[i][k] += self.weights[k * c + j] * dlogits[i][j];
                }
            }
            for k in 0..d {
                gz[i][k] += lambda * cl.grad[i][k];
            }
        }
        let (ga, ge) = match &self.adapter {
            None => (None, gz),
            Some(a) => {
                let mut ga = vec![0.0; d * d];
                let mut ge = vec![vec![0.0; d]; z.len()];
                for i in 0..z.len() {
                    for r in 0..d {
                        for k in 0..d {
                            ga[r * d + k] += gz[i][r] * embeddings[i][k];
                            ge[i][k] += a[r * d + k] * gz[i][r];
                        }
                    }
                }
                (Some(ga), ge)
            }
        };
        Ok(HeadGrad {
            total: ce + lambda * cl.value,
            ce,
            cl: cl.value,
            no_positive: cl.no_positive,
            weights: gw,
            bias: gb,
            adapter: ga,
            embeddings: ge,
        })
    }

    fn step(&mut self, g: &HeadGrad, lr: f64) {
        for (w, gw) in self.weights.iter_mut().zip(&g.weights) {
            *w -= lr * gw;
        }
        for (b, gb) in self.bias.iter_mut().zip(&g.bias) {
            *b -= lr * gb;
        }
        if let (Some(a), Some(ga)) = (&mut self.adapter, &g.adapter) {
            for (x, gx) in a.iter_mut().zip(ga) {
                *x -= lr * gx;
            }
        }
    }
}

fn identity(d: usize) -> Vec<f64> {
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        a[i * d + i] = 1.0;
    }
    a
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Gradients of the batch loss with respect to every parameter and input.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrad {
    pub total: f64,
    pub ce: f64,
    pub cl: f64,
    pub no_positive: bool,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub adapter: Option<Vec<f64>>,
    pub embeddings: Vec<Vec<f64>>,
}

/// Mean softmax cross-entropy.
pub fn cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> Result<f64, TrainError> {
    cross_entropy_with_grad(logits, labels).map(|(l, _)| l)
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy_with_grad(
    logits: &[Vec<f64>],
    labels: &[usize],
) -> Result<(f64, Vec<Vec<f64>>), TrainError> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(TrainError::Shape(format!(
            "{} logit rows for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &y) in logits.iter().zip(labels) {
        if y >= row.len() {
            return Err(TrainError::BadLabel(y, row.len()));
        }
        if row.iter().any(|x| !x.is_finite()) {
            return Err(TrainError::NonFinite("logits"));
        }
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|x| (x - m).exp()).sum();
        let lse = m + sum.ln();
        loss += lse - row[y];
        let mut g: Vec<f64> = row.iter().map(|x| (x - lse).exp() / n).collect();
        g[y] -= 1.0 / n;
        grad.push(g);
    }
    Ok((loss / n, grad))
}

/// Contrastive loss value, gradient per input vector, and whether the batch
/// had negatives but no positive pair.
#[derive(Clone, Debug, PartialEq)]
pub struct Contrastive {
    pub value: f64,
    pub grad: Vec<Vec<f64>>,
    pub no_positive: bool,
}

impl Contrastive {
    fn zero(n: usize, d: usize) -> Self {
        Contrastive {
            value: 0.0,
            grad: vec![vec![0.0; d]; n],
            no_positive: false,
        }
    }
}

/// The loss from `(cosine, is_positive)` pairs. `Some(0.0)` without
/// negatives, `None` with negatives but no positives.
pub fn contrastive_from_pairs(pairs: &[(f64, bool)]) -> Option<f64> {
    let p: f64 = pairs.iter().filter(|x| x.1).map(|x| x.0.exp()).sum();
    let q: f64 = pairs.iter().filter(|x| !x.1).map(|x| x.0.exp()).sum();
    let has_pos = pairs.iter().any(|x| x.1);
    match (has_pos, pairs.iter().any(|x| !x.1)) {
        (_, false) => Some(0.0),
        (false, true) => None,
        (true, true) => Some((p + q).ln() - p.ln()),
    }
}

pub fn contrastive_loss(embeddings: &[Vec<f64>], labels: &[usize]) -> Result<f64, TrainError> {
    contrastive_with_grad(embeddings, labels).map(|c| c.value)
}

pub fn contrastive_with_grad(
    embeddings: &[Vec<f64>],
    labels: &[usize],
) -> Result<Contrastive, TrainError> {
    let n = embeddings.len();
    if n != labels.len() {
        return Err(TrainError::Shape(format!(
            "{n} embeddings for {} labels",
            labels.len()
        )));
    }
    let d = embeddings.first().map_or(0, Vec::len);
    if embeddings.iter().any(|e| e.len() != d) {
        return Err(TrainError::Shape(
            "embeddings of different dimensions".into(),
        ));
    }
    let norms: Vec<f64> = embeddings
        .iter()
        .map(|e| e.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut pairs = Vec::new();
    let (mut p, mut q) = (0.0, 0.0);
    let (mut has_pos, mut has_neg) = (false, false);
    for i in 0..n {
        for j in i + 1..n {
            if norms[i] == 0.0 || norms[j] == 0.0 {
                return Err(TrainError::NonFinite(
                    "zero-norm embedding in contrastive batch",
                ));
            }
            let dot: f64 = embeddings[i]
                .iter()
                .zip(&embeddings[j])
                .map(|(a, b)| a * b)
                .sum();
            let c = dot / (norms[i] * norms[j]);
            let pos = labels[i] == labels[j];
            if pos {
                p += c.exp();
                has_pos = true;
            } else {
                q += c.exp();
                has_neg = true;
            }
            pairs.push((i, j, c, pos));
        }
    }
    if !has_neg || !has_pos {
        let mut z = Contrastive::zero(n, d);
        z.no_positive = has_neg;
        return Ok(z);
    }
    let value = (p + q).ln() - p.ln();
    if !value.is_finite() {
        return Err(TrainError::NonFinite("contrastive loss"));
    }
    let mut grad = vec![vec![0.0; d]; n];
    for (i, j, c, pos) in pairs {
        let e = c.exp();
        let dl_dc = e / (p + q) - if pos { e / p } else { 0.0 };
        let nij = norms[i] * norms[j];
        for k in 0..d {
            grad[i][k] +=
                dl_dc * (embeddings[j][k] / nij - c * embeddings[i][k] / (norms[i] * norms[i]));
            grad[j][k] +=
                dl_dc * (embeddings[i][k] / nij - c * embeddings[j][k] / (norms[j] * norms[j]));
        }
    }
    Ok(Contrastive {
        value,
        grad,
        no_positive: false,
    })
}

/// `(L, L_CE, L_CL)` for a batch of logits and head inputs.
pub fn combined_loss(
    logits: &[Vec<f64>],
    embeddings: &[Vec<f64>],
    labels: &[usize],
    lambda: f64,
) -> Result<(f64, f64, f64), TrainError> {
    let ce = cross_entropy(logits, labels)?;
    let cl = contrastive_loss(embeddings, labels)?;
    Ok((ce + lambda * cl, ce, cl))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Base,
    Fewshot,
}

impl Phase {
    fn key(self) -> &'static str {
        match self {
            Phase::Base => "base",
            Phase::Fewshot => "fewshot",
        }
    }
}

/// Sample-weighted means over one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: Phase,
    pub epoch: usize,
    pub ce: f64,
    pub cl: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub seed: u64,
    pub augmenter: String,
    pub config: TrainConfig,
    pub n_base: usize,
    pub n_fewshot: usize,
    pub trajectory: Vec<EpochRecord>,
    /// Phase-2 batches whose contrastive term was skipped for lack of a
    /// positive pair.
    pub contrastive_skipped: usize,
    pub eval_accuracy: f64,
    pub head: ClassifierHead,
}

impl TrainRun {
    pub fn to_json(&self) -> Result<String, serde_json::Error> {
        serde_json::to_string_pretty(self)
    }
}

/// Runs `epochs` SGD epochs; returns the per-epoch records and the number of
/// batches with no positive pair.
pub fn train_epochs(
    head: &mut ClassifierHead,
    data: &[(Vec<f64>, usize)],
    phase: Phase,
    epochs: usize,
    lambda: f64,
    cfg: &TrainConfig,
) -> Result<(Vec<EpochRecord>, usize), TrainError> {
    let mut records = Vec::with_capacity(epochs);
    let mut skipped = 0;
    if data.is_empty() {
        return Err(TrainError::Config(format!(
            "{} phase has no training samples",
            phase.key()
        )));
    }
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = KeyedRng::new(
            cfg.seed,
            "trainer/shuffle",
            &format!("{}/{epoch}", phase.key()),
        );
        order.shuffle(&mut rng);
        let (mut ce, mut cl, mut total) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let xs: Vec<Vec<f64>> = batch.iter().map(|&i| data[i].0.clone()).collect();
            let ys: Vec<usize> = batch.iter().map(|&i| data[i].1).collect();
            let g = head.loss_and_grad(&xs, &ys, lambda)?;
            if !g.total.is_finite() {
                return Err(TrainError::NonFinite("training loss"));
            }
            skipped += g.no_positive as usize;
            let w = batch.len() as f64;
            ce += g.ce * w;
            cl += g.cl * w;
            total += g.total * w;
            head.step(&g, cfg.learning_rate);
        }
        let n = data.len() as f64;
        records.push(EpochRecord {
            phase,
            epoch,
            ce: ce / n,
            cl: cl / n,
            total: total / n,
        });
    }
    Ok((records, skipped))
}

fn embed_labelled(
    d: &Dataset,
    head: &ClassifierHead,
    store: &EmbeddingStore,
) -> Result<Vec<(Vec<f64>, usize)>, TrainError> {
    d.iter()
        .map(|s| {
            let y = head
                .class_index(&s.label)
                .ok_or_else(|| TrainError::UnknownClass(s.label.clone()))?;
            Ok((store.sentence_embed(Some(&s.id), &s.text)?, y))
        })
        .collect()
}

/// Fraction of test samples whose argmax class is their label.
pub fn evaluate(
    head: &ClassifierHead,
    test: &Dataset,
    store: &EmbeddingStore,
) -> Result<f64, TrainError> {
    if test.is_empty() {
        return Err(TrainError::EmptyTestSet);
    }
    let data = embed_labelled(test, head, store)?;
    let mut correct = 0usize;
    for (e, y) in &data {
        if head.predict(e)? == *y {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Phase 1 on `base`, phase 2 on an already augmented novel training set,
/// then accuracy on `novel_test`.
pub fn train_on_augmented(
    base: &Dataset,
    novel_train: &Dataset,
    novel_test: &Dataset,
    store: &EmbeddingStore,
    cfg: &TrainConfig,
    augmenter: &str,
) -> Result<TrainRun, TrainError> {
    cfg.validate()?;
    base.ensure_disjoint(novel_train)
        .map_err(|e| TrainError::Config(e.to_string()))?;
    let classes: Vec<String> = base
        .label_space()
        .iter()
        .chain(novel_train.label_space())
        .cloned()
        .collect();
    let mut rng = KeyedRng::new(cfg.seed, "trainer/init", "head");
    let mut head = ClassifierHead::init(classes, store.dim(), cfg.adapter, &mut rng);

    let base_data = embed_labelled(base, &head, store)?;
    let (mut trajectory, _) = train_epochs(
        &mut head,
        &base_data,
        Phase::Base,
        cfg.epochs_base,
        0.0,
        cfg,
    )?;

    let novel_data = embed_labelled(novel_train, &head, store)?;
    let (fewshot, skipped) = train_epochs(
        &mut head,
        &novel_data,
        Phase::Fewshot,
        cfg.epochs_fewshot,
        cfg.lambda,
        cfg,
    )?;
    if skipped > 0 {
        log::info!("{skipped} few-shot batches had no positive pair; their contrastive term was 0");
    }
    trajectory.extend(fewshot);
    let eval_accuracy = evaluate(&head, novel_test, store)?;
    Ok(TrainRun {
        seed: cfg.seed,
        augmenter: augmenter.to_string(),
        config: cfg.clone(),
        n_base: base.len(),
        n_fewshot: novel_train.len(),
        trajectory,
        contrastive_skipped: skipped,
        eval_accuracy,
        head,
    })
}

/// The full schedule: augment the few-shot novel set, merge the variants
/// with the originals, train both phases and evaluate.
pub fn run_algorithm1(
    base: &Dataset,
    novel_fewshot: &Dataset,
    novel_test: &Dataset,
    augmenter: &dyn Augmenter,
    store: &EmbeddingStore,
    cfg: &TrainConfig,
) -> Result<TrainRun, TrainError> {
    cfg.validate()?;
    base.ensure_disjoint(novel_fewshot)
        .map_err(|e| TrainError::Config(e.to_string()))?;
    let augmented = augmenter
        .augment_dataset(novel_fewshot, cfg.seed)
        .map_err(|e| TrainError::Augment(e.to_string()))?;
    let train = merge_augmented(novel_fewshot, &augmented)?;
    train_on_augmented(base, &train, novel_test, store, cfg, &augmenter.name())
}
