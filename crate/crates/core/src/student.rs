//! Trainable student scorers over fixed feature vectors.
//!
//! Parameters live in one flat vector so the optimizer, gradient checker and
//! checkpoint format all treat both architectures alike.
//!
//! Bi-encoder layout: `Wq (h x d)`, `bq (h)`, `Wd (h x d)`, `bd (h)`, score
//! `(Wq q + bq) . (Wd d + bd)`.
//!
//! Cross-encoder layout: `W1 (h x 3d)`, `b1 (h)`, `w2 (h)`, `b2 (1)` over the
//! input `[q, d, q * d]`, score `w2 . tanh(W1 x + b1) + b2`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::losses::{evaluate, LossKind, Targets};
use crate::math::{dot, stream_seed};
use crate::synth::SyntheticWorld;
use crate::types::{DocId, EmbeddingVector, QueryId, ScoredList, TrainingGroup};
use crate::{Error, Result, Scalar};

const CHECKPOINT_MAGIC: &[u8; 8] = b"RDSTUDNT";
const CHECKPOINT_VERSION: u32 = 1;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Finite-difference step used by [`grad_check`].
pub const GRAD_CHECK_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudentKind {
    BiEncoder,
    CrossEncoder,
}

impl fmt::Display for StudentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StudentKind::BiEncoder => "biencoder",
            StudentKind::CrossEncoder => "crossencoder",
        })
    }
}

impl FromStr for StudentKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "biencoder" | "bi" => Ok(StudentKind::BiEncoder),
            "crossencoder" | "cross" => Ok(StudentKind::CrossEncoder),
            other => Err(Error::Invalid(format!("unknown student kind {other:?}"))),
        }
    }
}

/// Named parameter blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    QueryWeight,
    QueryBias,
    DocWeight,
    DocBias,
    HiddenWeight,
    HiddenBias,
    OutputWeight,
    OutputBias,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentScorer<T = f64> {
    kind: StudentKind,
    input_dim: usize,
    hidden_dim: usize,
    params: Vec<T>,
    frozen: Vec<bool>,
}

fn param_count(kind: StudentKind, d: usize, h: usize) -> usize {
    match kind {
        StudentKind::BiEncoder => 2 * (h * d + h),
        StudentKind::CrossEncoder => h * 3 * d + h + h + 1,
    }
}

impl<T: Scalar> StudentScorer<T> {
    /// Seeded init, every weight and bias uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new(kind: StudentKind, input_dim: usize, hidden_dim: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::Invalid("student dimensions must be >= 1".into()));
        }
        let mut model = Self {
            kind,
            input_dim,
            hidden_dim,
            params: vec![T::zero(); param_count(kind, input_dim, hidden_dim)],
            frozen: vec![false; param_count(kind, input_dim, hidden_dim)],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, "student-init"));
        let blocks: &[(Block, usize)] = match kind {
            StudentKind::BiEncoder => &[
                (Block::QueryWeight, input_dim),
                (Block::QueryBias, input_dim),
                (Block::DocWeight, input_dim),
                (Block::DocBias, input_dim),
            ],
            StudentKind::CrossEncoder => &[
                (Block::HiddenWeight, 3 * input_dim),
                (Block::HiddenBias, 3 * input_dim),
                (Block::OutputWeight, hidden_dim),
                (Block::OutputBias, hidden_dim),
            ],
        };
        for &(block, fan_in) in blocks {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for i in model.block(block)? {
                model.params[i] = T::of(rng.random_range(-bound..=bound));
            }
        }
        Ok(model)
    }

    /// Builds a model from explicit parameters in the layout described above.
    pub fn from_params(kind: StudentKind, input_dim: usize, hidden_dim: usize, params: Vec<T>) -> Result<Self> {
        let expected = param_count(kind, input_dim, hidden_dim);
        if params.len() != expected {
            return Err(Error::Dimension { expected, got: params.len() });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Invalid("student parameters must be finite".into()));
        }
        Ok(Self {
            kind,
            input_dim,
            hidden_dim,
            params,
            frozen: vec![false; expected],
        })
    }

    pub fn kind(&self) -> StudentKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn is_frozen(&self, i: usize) -> bool {
        self.frozen[i]
    }

    /// Index range of a parameter block; errors if the block does not exist
    /// for this architecture.
    pub fn block(&self, block: Block) -> Result<Range<usize>> {
        let (d, h) = (self.input_dim, self.hidden_dim);
        let r = match (self.kind, block) {
            (StudentKind::BiEncoder, Block::QueryWeight) => 0..h * d,
            (StudentKind::BiEncoder, Block::QueryBias) => h * d..h * d + h,
            (StudentKind::BiEncoder, Block::DocWeight) => h * d + h..2 * h * d + h,
            (StudentKind::BiEncoder, Block::DocBias) => 2 * h * d + h..2 * (h * d + h),
            (StudentKind::CrossEncoder, Block::HiddenWeight) => 0..3 * h * d,
            (StudentKind::CrossEncoder, Block::HiddenBias) => 3 * h * d..3 * h * d + h,
            (StudentKind::CrossEncoder, Block::OutputWeight) => 3 * h * d + h..3 * h * d + 2 * h,
            (StudentKind::CrossEncoder, Block::OutputBias) => 3 * h * d + 2 * h..3 * h * d + 2 * h + 1,
            (kind, block) => return Err(Error::Invalid(format!("{kind} has no {block:?} block"))),
        };
        Ok(r)
    }

    /// Overwrites a block; frozen coordinates are overwritten too.
    pub fn set_block(&mut self, block: Block, values: &[T]) -> Result<()> {
        let r = self.block(block)?;
        if values.len() != r.len() {
            return Err(Error::Dimension { expected: r.len(), got: values.len() });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("student parameters must be finite".into()));
        }
        self.params[r].copy_from_slice(values);
        Ok(())
    }

    /// Frozen parameters get zero gradient and are never updated.
    pub fn freeze_block(&mut self, block: Block) -> Result<()> {
        for i in self.block(block)? {
            self.frozen[i] = true;
        }
        Ok(())
    }

    fn check_dims(&self, q: &[T], d: &[T]) -> Result<()> {
        for v in [q, d] {
            if v.len() != self.input_dim {
                return Err(Error::Dimension { expected: self.input_dim, got: v.len() });
            }
        }
        Ok(())
    }

    /// `W x + b` for the `h x n` weight block starting at `w0` and bias at `b0`.
    fn affine(&self, w0: usize, b0: usize, x: &[T]) -> Vec<T> {
        let n = x.len();
        (0..self.hidden_dim)
            .map(|i| dot(&self.params[w0 + i * n..w0 + (i + 1) * n], x) + self.params[b0 + i])
            .collect()
    }

    fn cross_input(q: &[T], d: &[T]) -> Vec<T> {
        let mut x = Vec::with_capacity(3 * q.len());
        x.extend_from_slice(q);
        x.extend_from_slice(d);
        x.extend(q.iter().zip(d).map(|(&a, &b)| a * b));
        x
    }

    pub fn score(&self, query: &EmbeddingVector<T>, doc: &EmbeddingVector<T>) -> Result<T> {
        self.score_slices(query.as_slice(), doc.as_slice())
    }

    pub fn score_slices(&self, q: &[T], d: &[T]) -> Result<T> {
        self.check_dims(q, d)?;
        let (dd, h) = (self.input_dim, self.hidden_dim);
        Ok(match self.kind {
            StudentKind::BiEncoder => {
                let u = self.affine(0, h * dd, q);
                let v = self.affine(h * dd + h, 2 * h * dd + h, d);
                dot(&u, &v)
            }
            StudentKind::CrossEncoder => {
                let x = Self::cross_input(q, d);
                let a: Vec<T> = self.affine(0, 3 * h * dd, &x).into_iter().map(T::tanh).collect();
                let out = 3 * h * dd + h;
                dot(&self.params[out..out + h], &a) + self.params[out + h]
            }
        })
    }

    /// Adds `upstream * d score / d params` into `grad`.
    pub fn accumulate_grad(&self, q: &[T], d: &[T], upstream: T, grad: &mut [T]) -> Result<()> {
        self.check_dims(q, d)?;
        if grad.len() != self.params.len() {
            return Err(Error::Dimension { expected: self.params.len(), got: grad.len() });
        }
        let (dd, h) = (self.input_dim, self.hidden_dim);
        match self.kind {
            StudentKind::BiEncoder => {
                let (bq, wd, bd) = (h * dd, h * dd + h, 2 * h * dd + h);
                let u = self.affine(0, bq, q);
                let v = self.affine(wd, bd, d);
                for i in 0..h {
                    let gu = upstream * v[i];
                    let gv = upstream * u[i];
                    for j in 0..dd {
                        grad[i * dd + j] = grad[i * dd + j] + gu * q[j];
                        grad[wd + i * dd + j] = grad[wd + i * dd + j] + gv * d[j];
                    }
                    grad[bq + i] = grad[bq + i] + gu;
                    grad[bd + i] = grad[bd + i] + gv;
                }
            }
            StudentKind::CrossEncoder => {
                let n = 3 * dd;
                let (b1, w2) = (h * n, h * n + h);
                let x = Self::cross_input(q, d);
                let a: Vec<T> = self.affine(0, b1, &x).into_iter().map(T::tanh).collect();
                for i in 0..h {
                    grad[w2 + i] = grad[w2 + i] + upstream * a[i];
                    let gz = upstream * self.params[w2 + i] * (T::one() - a[i] * a[i]);
                    for (j, &xj) in x.iter().enumerate() {
                        grad[i * n + j] = grad[i * n + j] + gz * xj;
                    }
                    grad[b1 + i] = grad[b1 + i] + gz;
                }
                grad[w2 + h] = grad[w2 + h] + upstream;
            }
        }
        for (g, &f) in grad.iter_mut().zip(&self.frozen) {
            if f {
                *g = T::zero();
            }
        }
        Ok(())
    }

    /// Encodes the model as a versioned little-endian binary blob.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 9 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(match self.kind {
            StudentKind::BiEncoder => 0,
            StudentKind::CrossEncoder => 1,
        });
        out.extend_from_slice(&(self.input_dim as u64).to_le_bytes());
        out.extend_from_slice(&(self.hidden_dim as u64).to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_f64_lossy().to_le_bytes());
        }
        out.extend(self.frozen.iter().map(|&f| u8::from(f)));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Invalid(format!("corrupt checkpoint: {msg}"));
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(bad("truncated"));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(8)? != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let kind = match take(1)?[0] {
            0 => StudentKind::BiEncoder,
            1 => StudentKind::CrossEncoder,
            _ => return Err(bad("unknown kind")),
        };
        let mut read_u64 = || -> Result<usize> {
            let v = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes"));
            usize::try_from(v).map_err(|_| bad("dimension overflow"))
        };
        let (d, h, n) = (read_u64()?, read_u64()?, read_u64()?);
        if d == 0 || h == 0 || n != param_count(kind, d, h) {
            return Err(bad("inconsistent dimensions"));
        }
        if bytes.len() != 8 + 4 + 1 + 24 + 9 * n {
            return Err(bad("length does not match dimensions"));
        }
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            params.push(T::of(f64::from_le_bytes(take(8)?.try_into().expect("8 bytes"))));
        }
        let frozen: Vec<bool> = take(n)?.iter().map(|&b| b != 0).collect();
        let mut model = Self::from_params(kind, d, h, params)?;
        model.frozen = frozen;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

/// Source of query and document feature vectors.
pub trait Features<T> {
    fn query_features(&self, query: &QueryId) -> Option<&EmbeddingVector<T>>;
    fn doc_features(&self, doc: &DocId) -> Option<&EmbeddingVector<T>>;
}

#[derive(Debug, Clone, Default)]
pub struct FeatureStore<T = f64> {
    queries: BTreeMap<QueryId, EmbeddingVector<T>>,
    docs: BTreeMap<DocId, EmbeddingVector<T>>,
}

impl<T: Scalar> FeatureStore<T> {
    pub fn new(
        queries: BTreeMap<QueryId, EmbeddingVector<T>>,
        docs: BTreeMap<DocId, EmbeddingVector<T>>,
    ) -> Result<Self> {
        let mut dims = queries.values().chain(docs.values()).map(EmbeddingVector::dim);
        if let Some(first) = dims.next() {
            if let Some(other) = dims.find(|&d| d != first) {
                return Err(Error::Dimension { expected: first, got: other });
            }
        }
        Ok(Self { queries, docs })
    }

    /// Splits one id-keyed embedding table into query and document features.
    pub fn from_tables(
        queries: &BTreeMap<String, EmbeddingVector<T>>,
        docs: &BTreeMap<String, EmbeddingVector<T>>,
    ) -> Result<Self> {
        let q = queries
            .iter()
            .map(|(k, v)| Ok((QueryId::new(k.as_str())?, v.clone())))
            .collect::<Result<_>>()?;
        let d = docs
            .iter()
            .map(|(k, v)| Ok((DocId::new(k.as_str())?, v.clone())))
            .collect::<Result<_>>()?;
        Self::new(q, d)
    }

    pub fn from_world(world: &SyntheticWorld) -> Self {
        Self {
            queries: world.query_embeddings().map(|(q, e)| (q.clone(), e.cast())).collect(),
            docs: world.doc_embeddings().map(|(d, e)| (d.clone(), e.cast())).collect(),
        }
    }

    /// Feature dimension, if any vector is present.
    pub fn dim(&self) -> Option<usize> {
        self.queries.values().chain(self.docs.values()).next().map(EmbeddingVector::dim)
    }
}

impl<T> Features<T> for FeatureStore<T> {
    fn query_features(&self, query: &QueryId) -> Option<&EmbeddingVector<T>> {
        self.queries.get(query)
    }
    fn doc_features(&self, doc: &DocId) -> Option<&EmbeddingVector<T>> {
        self.docs.get(doc)
    }
}

/// A single id-keyed table holding both query and document vectors.
impl<T> Features<T> for BTreeMap<String, EmbeddingVector<T>> {
    fn query_features(&self, query: &QueryId) -> Option<&EmbeddingVector<T>> {
        self.get(query.as_str())
    }
    fn doc_features(&self, doc: &DocId) -> Option<&EmbeddingVector<T>> {
        self.get(doc.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub steps: usize,
    /// Candidates per group; longer groups are truncated, keeping the head.
    pub group_size: usize,
    pub peak_lr: f64,
    pub warmup_frac: f64,
    pub seed: u64,
    pub weight_decay: f64,
    /// Softmax temperature for LCE and KL.
    pub tau: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Kl,
            steps: 2000,
            group_size: 16,
            peak_lr: 1e-2,
            warmup_frac: 0.1,
            seed: 0,
            weight_decay: 0.01,
            tau: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(msg));
        if !(0.0..=1.0).contains(&self.warmup_frac) {
            return bad(format!("warmup_frac must lie in [0, 1], got {}", self.warmup_frac));
        }
        if self.group_size < 2 {
            return bad("group_size must be >= 2".into());
        }
        if !(self.peak_lr.is_finite() && self.peak_lr >= 0.0) {
            return bad(format!("peak_lr must be finite and >= 0, got {}", self.peak_lr));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad(format!("weight_decay must be finite and >= 0, got {}", self.weight_decay));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return bad(format!("tau must be > 0, got {}", self.tau));
        }
        Ok(())
    }

    /// Linear warmup from 0 to `peak_lr` over `warmup_frac * steps`, then
    /// linear decay to 0 at `steps`.
    pub fn lr_at(&self, step: usize) -> f64 {
        let total = self.steps as f64;
        let warm = self.warmup_frac * total;
        let t = (step as f64).min(total);
        if t < warm {
            self.peak_lr * t / warm
        } else if total > warm {
            self.peak_lr * (total - t) / (total - warm)
        } else {
            self.peak_lr
        }
    }
}

/// Checks that `group` carries what `loss` needs.
pub fn check_targets<T: Scalar>(loss: LossKind, group: &TrainingGroup<T>) -> Result<()> {
    if loss.needs_teacher() && group.teacher_scores.is_none() {
        return Err(Error::query(&group.query_id, format!("{loss} needs teacher scores")));
    }
    if loss.needs_positive() && group.positive_index.is_none() {
        return Err(Error::query(&group.query_id, format!("{loss} needs a positive")));
    }
    Ok(())
}

struct Prepared<'a, T> {
    query: &'a [T],
    docs: Vec<&'a [T]>,
    teacher: Option<&'a [T]>,
    positive: Option<usize>,
}

fn prepare<'a, T: Scalar, F: Features<T>>(
    model: &StudentScorer<T>,
    loss: LossKind,
    group: &'a TrainingGroup<T>,
    features: &'a F,
    group_size: usize,
) -> Result<Prepared<'a, T>> {
    if let Err(msg) = group.validate() {
        return Err(Error::query(&group.query_id, msg));
    }
    check_targets(loss, group)?;
    let m = group.len().min(group_size);
    let positive = match group.positive_index {
        Some(p) if p >= m => {
            return Err(Error::query(&group.query_id, "positive falls outside the truncated group"));
        }
        p => p,
    };
    let query = features
        .query_features(&group.query_id)
        .ok_or_else(|| Error::query(&group.query_id, "no query features"))?
        .as_slice();
    let docs = group.doc_ids[..m]
        .iter()
        .map(|d| {
            features
                .doc_features(d)
                .map(EmbeddingVector::as_slice)
                .ok_or_else(|| Error::query(&group.query_id, format!("no features for {d}")))
        })
        .collect::<Result<Vec<_>>>()?;
    for v in std::iter::once(query).chain(docs.iter().copied()) {
        if v.len() != model.input_dim {
            return Err(Error::Dimension { expected: model.input_dim, got: v.len() });
        }
    }
    Ok(Prepared {
        query,
        docs,
        teacher: group.teacher_scores.as_deref().map(|t| &t[..m]),
        positive,
    })
}

fn loss_and_grad<T: Scalar>(
    model: &StudentScorer<T>,
    loss: LossKind,
    p: &Prepared<'_, T>,
    tau: T,
    grad: Option<&mut [T]>,
) -> Result<T> {
    let scores = p
        .docs
        .iter()
        .map(|d| model.score_slices(p.query, d))
        .collect::<Result<Vec<T>>>()?;
    let targets = Targets { teacher: p.teacher, positive_index: p.positive };
    let out = evaluate(loss, &scores, targets, tau)?;
    if let Some(grad) = grad {
        grad.iter_mut().for_each(|g| *g = T::zero());
        for (d, &ds) in p.docs.iter().zip(&out.grad) {
            model.accumulate_grad(p.query, d, ds, grad)?;
        }
    }
    Ok(out.value)
}

/// Loss of `model` on one group plus its full parameter gradient.
pub fn group_loss<T: Scalar, F: Features<T>>(
    model: &StudentScorer<T>,
    loss: LossKind,
    group: &TrainingGroup<T>,
    features: &F,
    tau: T,
) -> Result<(T, Vec<T>)> {
    let p = prepare(model, loss, group, features, usize::MAX)?;
    let mut grad = vec![T::zero(); model.num_params()];
    let value = loss_and_grad(model, loss, &p, tau, Some(&mut grad))?;
    Ok((value, grad))
}

#[derive(Debug, Clone)]
pub struct TrainOutput<T> {
    pub model: StudentScorer<T>,
    /// Loss at every step, before that step's update.
    pub trace: Vec<T>,
}

/// AdamW with decoupled weight decay: one group per step, groups visited in
/// a seeded shuffled order that reshuffles after every pass.
pub fn train<T: Scalar, F: Features<T>>(
    mut model: StudentScorer<T>,
    groups: &[TrainingGroup<T>],
    features: &F,
    config: &TrainConfig,
) -> Result<TrainOutput<T>> {
    config.validate()?;
    if config.steps == 0 {
        return Ok(TrainOutput { model, trace: Vec::new() });
    }
    if groups.is_empty() {
        return Err(Error::Invalid("training needs at least one group".into()));
    }
    let prepared = groups
        .iter()
        .map(|g| prepare(&model, config.loss, g, features, config.group_size))
        .collect::<Result<Vec<_>>>()?;

    let n = model.num_params();
    let tau = T::of(config.tau);
    let (b1, b2, eps) = (T::of(ADAM_BETA1), T::of(ADAM_BETA2), T::of(ADAM_EPS));
    let wd = T::of(config.weight_decay);
    let mut m1 = vec![T::zero(); n];
    let mut m2 = vec![T::zero(); n];
    let mut grad = vec![T::zero(); n];
    let mut trace = Vec::with_capacity(config.steps);
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, "train-order"));
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut cursor = order.len();

    for step in 0..config.steps {
        if cursor == order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let p = &prepared[order[cursor]];
        cursor += 1;
        let value = loss_and_grad(&model, config.loss, p, tau, Some(&mut grad))?;
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { step });
        }
        trace.push(value);

        let lr = T::of(config.lr_at(step));
        let t = i32::try_from(step + 1).unwrap_or(i32::MAX);
        let (c1, c2) = (T::one() - b1.powi(t), T::one() - b2.powi(t));
        for i in 0..n {
            if model.frozen[i] {
                continue;
            }
            let g = grad[i];
            m1[i] = b1 * m1[i] + (T::one() - b1) * g;
            m2[i] = b2 * m2[i] + (T::one() - b2) * g * g;
            let update = (m1[i] / c1) / ((m2[i] / c2).sqrt() + eps);
            model.params[i] = model.params[i] - lr * (update + wd * model.params[i]);
        }
        if model.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite { step });
        }
    }
    Ok(TrainOutput { model, trace })
}

/// Outcome of comparing analytic and finite-difference parameter gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck<T> {
    pub max_rel_error: T,
    /// Relative error per parameter; frozen coordinates report 0.
    pub rel_errors: Vec<T>,
}

/// Central differences with step [`GRAD_CHECK_STEP`] against the analytic
/// gradient, relative error `|a - n| / max(|a|, |n|, 1e-4)`.
pub fn grad_check<T: Scalar, F: Features<T>>(
    model: &StudentScorer<T>,
    loss: LossKind,
    group: &TrainingGroup<T>,
    features: &F,
    tau: T,
) -> Result<GradCheck<T>> {
    let (_, analytic) = group_loss(model, loss, group, features, tau)?;
    let mut probe = model.clone();
    let h = T::of(GRAD_CHECK_STEP);
    let floor = T::of(1e-4);
    let mut rel_errors = Vec::with_capacity(model.num_params());
    #[allow(clippy::needless_range_loop)]
    for i in 0..model.num_params() {
        if model.frozen[i] {
            rel_errors.push(T::zero());
            continue;
        }
        let orig = probe.params[i];
        probe.params[i] = orig + h;
        let up = group_loss_value(&probe, loss, group, features, tau)?;
        probe.params[i] = orig - h;
        let down = group_loss_value(&probe, loss, group, features, tau)?;
        probe.params[i] = orig;
        let numeric = (up - down) / (h + h);
        let a = analytic[i];
        rel_errors.push((a - numeric).abs() / a.abs().max(numeric.abs()).max(floor));
    }
    let max_rel_error = rel_errors.iter().copied().fold(T::zero(), T::max);
    Ok(GradCheck { max_rel_error, rel_errors })
}

fn group_loss_value<T: Scalar, F: Features<T>>(
    model: &StudentScorer<T>,
    loss: LossKind,
    group: &TrainingGroup<T>,
    features: &F,
    tau: T,
) -> Result<T> {
    let p = prepare(model, loss, group, features, usize::MAX)?;
    loss_and_grad(model, loss, &p, tau, None)
}

/// Loss trace as `step<TAB>loss` lines.
pub fn format_loss_trace<T: Scalar>(trace: &[T]) -> String {
    trace
        .iter()
        .enumerate()
        .map(|(i, v)| format!("{i}\t{v}\n"))
        .collect()
}

/// Concordant and total strictly ordered teacher pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PairCounts {
    pub agree: usize,
    pub total: usize,
}

impl PairCounts {
    pub fn merge(self, other: PairCounts) -> PairCounts {
        PairCounts {
            agree: self.agree + other.agree,
            total: self.total + other.total,
        }
    }

    /// Fraction of agreeing pairs; `None` without any ordered pair.
    pub fn ratio(self) -> Option<f64> {
        (self.total > 0).then(|| self.agree as f64 / self.total as f64)
    }
}

/// Counts teacher-ordered pairs the student orders the same way. Teacher
/// ties are skipped; student ties count as disagreement.
pub fn pairwise_agreement<T: Scalar>(student: &[T], teacher: &[T]) -> Result<PairCounts> {
    if student.len() != teacher.len() {
        return Err(Error::Dimension { expected: teacher.len(), got: student.len() });
    }
    let mut counts = PairCounts::default();
    for i in 0..teacher.len() {
        for j in 0..teacher.len() {
            if teacher[i] > teacher[j] {
                counts.total += 1;
                if student[i] > student[j] {
                    counts.agree += 1;
                }
            }
        }
    }
    Ok(counts)
}

/// Scores `docs` for `query` and keeps the top `k` (score desc, id asc).
pub fn rank_docs<'a, T: Scalar, F: Features<T>>(
    model: &StudentScorer<T>,
    query: &QueryId,
    docs: impl IntoIterator<Item = &'a DocId>,
    features: &F,
    k: usize,
) -> Result<ScoredList<T>> {
    let q = features
        .query_features(query)
        .ok_or_else(|| Error::query(query, "no query features"))?;
    let entries = docs
        .into_iter()
        .map(|d| {
            let f = features
                .doc_features(d)
                .ok_or_else(|| Error::query(query, format!("no features for {d}")))?;
            Ok((d.clone(), model.score(q, f)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut list = ScoredList::new(query.clone(), entries)?;
    list.truncate(k);
    Ok(list)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ev(v: &[f64]) -> EmbeddingVector<f64> {
        EmbeddingVector::new(v.to_vec()).unwrap()
    }

    fn identity_bi(d: usize) -> StudentScorer<f64> {
        let mut m = StudentScorer::new(StudentKind::BiEncoder, d, d, 0).unwrap();
        let eye: Vec<f64> = (0..d * d).map(|i| if i / d == i % d { 1.0 } else { 0.0 }).collect();
        m.set_block(Block::QueryWeight, &eye).unwrap();
        m.set_block(Block::DocWeight, &eye).unwrap();
        m.set_block(Block::QueryBias, &vec![0.0; d]).unwrap();
        m.set_block(Block::DocBias, &vec![0.0; d]).unwrap();
        m
    }

    #[test]
    fn identity_biencoder_is_dot_product() {
        let m = identity_bi(2);
        assert_eq!(m.score(&ev(&[1.0, 0.0]), &ev(&[1.0, 0.0])).unwrap(), 1.0);
        assert!(m.score(&ev(&[1.0]), &ev(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn zero_doc_map_scores_zero() {
        let mut m = StudentScorer::<f64>::new(StudentKind::BiEncoder, 3, 4, 1).unwrap();
        m.set_block(Block::DocWeight, &[0.0; 12]).unwrap();
        m.set_block(Block::DocBias, &[0.0; 4]).unwrap();
        for d in [[1.0, 2.0, 3.0], [-1.0, 0.5, 0.0]] {
            assert_eq!(m.score(&ev(&[0.3, 0.1, -0.2]), &ev(&d)).unwrap(), 0.0);
        }
    }

    #[test]
    fn crossencoder_matches_reference_forward() {
        let m = StudentScorer::<f64>::new(StudentKind::CrossEncoder, 3, 5, 9).unwrap();
        let p = m.params();
        let q = [0.2, -0.4, 0.9];
        let d = [0.5, 0.1, -0.3];
        let x = [q[0], q[1], q[2], d[0], d[1], d[2], q[0] * d[0], q[1] * d[1], q[2] * d[2]];
        let mut expected = p[9 * 5 + 10];
        for i in 0..5 {
            let z: f64 = (0..9).map(|j| p[i * 9 + j] * x[j]).sum::<f64>() + p[45 + i];
            expected += p[50 + i] * z.tanh();
        }
        assert_abs_diff_eq!(m.score_slices(&q, &d).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let m = StudentScorer::<f64>::new(StudentKind::CrossEncoder, 4, 6, 3).unwrap();
        let hidden = 1.0 / 12f64.sqrt();
        assert!(m.params()[m.block(Block::HiddenWeight).unwrap()].iter().all(|p| p.abs() <= hidden));
        let out = 1.0 / 6f64.sqrt();
        assert!(m.params()[m.block(Block::OutputWeight).unwrap()].iter().all(|p| p.abs() <= out));
        assert_eq!(m, StudentScorer::new(StudentKind::CrossEncoder, 4, 6, 3).unwrap());
    }

    #[test]
    fn lr_schedule_shape() {
        let c = TrainConfig { steps: 1000, peak_lr: 0.1, warmup_frac: 0.1, ..Default::default() };
        assert_eq!(c.lr_at(0), 0.0);
        assert_abs_diff_eq!(c.lr_at(100), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(c.lr_at(550), 0.05, epsilon = 1e-15);
        assert_eq!(c.lr_at(1000), 0.0);
        let flat = TrainConfig { warmup_frac: 0.0, ..c };
        assert_eq!(flat.lr_at(0), 0.1);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = StudentScorer::<f64>::new(StudentKind::BiEncoder, 3, 2, 5).unwrap();
        m.freeze_block(Block::DocBias).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(StudentScorer::<f64>::from_bytes(&bytes).unwrap(), m);
        assert!(StudentScorer::<f64>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(StudentScorer::<f64>::from_bytes(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(StudentScorer::<f64>::from_bytes(&bad).is_err());
    }

    fn toy_store() -> (FeatureStore<f64>, TrainingGroup<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut vec3 = || ev(&[rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]);
        let q = QueryId::new("q").unwrap();
        let docs: Vec<DocId> = (0..6).map(|i| DocId::new(format!("d{i}")).unwrap()).collect();
        let store = FeatureStore::new(
            [(q.clone(), vec3())].into(),
            docs.iter().map(|d| (d.clone(), vec3())).collect(),
        )
        .unwrap();
        let mut g = TrainingGroup::new(q, docs);
        g.teacher_scores = Some(vec![2.0, 1.5, -0.3, 0.7, 0.1, -1.2]);
        g.positive_index = Some(0);
        (store, g)
    }

    #[test]
    fn grad_check_both_kinds_all_losses() {
        let (store, g) = toy_store();
        for kind in [StudentKind::BiEncoder, StudentKind::CrossEncoder] {
            let m = StudentScorer::new(kind, 3, 4, 2).unwrap();
            for loss in LossKind::ALL {
                let r = grad_check(&m, loss, &g, &store, 1.0).unwrap();
                assert!(r.max_rel_error <= 1e-4, "{kind} {loss}: {}", r.max_rel_error);
            }
        }
    }

    #[test]
    fn frozen_bias_has_zero_error_and_never_moves() {
        let (store, g) = toy_store();
        let mut m = StudentScorer::new(StudentKind::BiEncoder, 3, 4, 2).unwrap();
        m.freeze_block(Block::QueryBias).unwrap();
        let r = grad_check(&m, LossKind::Kl, &g, &store, 1.0).unwrap();
        let bias = m.block(Block::QueryBias).unwrap();
        assert!(r.rel_errors[bias.clone()].iter().all(|&e| e == 0.0));
        let cfg = TrainConfig { steps: 20, peak_lr: 0.05, ..Default::default() };
        let out = train(m.clone(), &[g], &store, &cfg).unwrap();
        assert_eq!(out.model.params()[bias.clone()], m.params()[bias]);
    }

    #[test]
    fn training_is_deterministic_and_zero_steps_is_identity() {
        let (store, g) = toy_store();
        let m = StudentScorer::new(StudentKind::CrossEncoder, 3, 4, 2).unwrap();
        let zero = TrainConfig { steps: 0, ..Default::default() };
        assert_eq!(train(m.clone(), std::slice::from_ref(&g), &store, &zero).unwrap().model, m);
        let cfg = TrainConfig { steps: 50, peak_lr: 0.05, ..Default::default() };
        let a = train(m.clone(), std::slice::from_ref(&g), &store, &cfg).unwrap();
        let b = train(m, &[g], &store, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.trace, b.trace);
        assert!(a.trace.last().unwrap() < a.trace.first().unwrap());
    }

    #[test]
    fn missing_targets_are_rejected_before_training() {
        let (store, mut g) = toy_store();
        g.teacher_scores = None;
        let m = StudentScorer::new(StudentKind::BiEncoder, 3, 4, 2).unwrap();
        let cfg = TrainConfig { loss: LossKind::MarginMse, steps: 5, ..Default::default() };
        assert!(train(m, &[g], &store, &cfg).is_err());
    }

    #[test]
    fn agreement_counts() {
        let c = pairwise_agreement(&[3.0, 2.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(c, PairCounts { agree: 0, total: 3 });
        let c = pairwise_agreement(&[3.0, 2.0, 1.0], &[3.0, 3.0, 0.0]).unwrap();
        assert_eq!(c, PairCounts { agree: 2, total: 2 });
    }

    #[test]
    fn doc_map_scaling_scales_scores() {
        let m = StudentScorer::<f64>::new(StudentKind::BiEncoder, 2, 3, 4).unwrap();
        let mut scaled = m.clone();
        let r = m.block(Block::DocWeight).unwrap().start..m.block(Block::DocBias).unwrap().end;
        let vals: Vec<f64> = m.params()[r.clone()].iter().map(|p| 2.5 * p).collect();
        scaled.params[r].copy_from_slice(&vals);
        let (q, d) = ([0.3, -0.7], [0.9, 0.2]);
        assert_abs_diff_eq!(scaled.score_slices(&q, &d).unwrap(), 2.5 * m.score_slices(&q, &d).unwrap(), epsilon = 1e-12);
    }
}
