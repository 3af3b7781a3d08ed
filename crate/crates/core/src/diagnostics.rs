//! Empirical estimators of the quantities that enter the distillation
//! generalization bound: teacher entropy, misordering probability, essential
//! diameter of a candidate set, density ratio of a sampler, and the bound
//! itself.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::math::{cosine_distance, log_softmax, mean, norm, percentile, sample_std, sigmoid, stream_seed, xlogx};
use crate::types::{DocId, EmbeddingVector, QueryId, TrainingGroup};
use crate::{Error, Result, Scalar};

/// Translation target for non-positive teacher scores in [`density_ratio`].
pub const DENSITY_SHIFT_EPS: f64 = 1e-6;
pub const DEFAULT_SAMPLE_PAIRS: usize = 100_000;

/// Binary entropy in nats, with `0 ln 0 = 0`.
pub fn binary_entropy<T: Scalar>(p: T) -> Result<T> {
    if !(p >= T::zero() && p <= T::one()) {
        return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
    }
    Ok(-(xlogx(p) + xlogx(T::one() - p)))
}

/// Misordering lower bound `max(0, 1/2 - sqrt((ln 2 - H) / 2))` for
/// `H` in `[0, ln 2]`.
pub fn eta<T: Scalar>(h: T) -> Result<T> {
    if !(h >= T::zero() && h <= T::LN_2()) {
        return Err(Error::Domain(format!("entropy {h} outside [0, ln 2]")));
    }
    let half = T::of(0.5);
    Ok((half - ((T::LN_2() - h) * half).sqrt()).max(T::zero()))
}

/// Shannon entropy (nats) of `softmax(scores / tau)`.
pub fn listwise_entropy<T: Scalar>(scores: &[T], tau: T) -> Result<T> {
    if scores.is_empty() {
        return Err(Error::Invalid("entropy of an empty list".into()));
    }
    if tau.is_nan() || tau <= T::zero() {
        return Err(Error::Domain(format!("temperature must be > 0, got {tau}")));
    }
    let logp = log_softmax(scores, tau);
    let h: T = logp.iter().map(|&lp| -(lp.exp() * lp)).sum();
    Ok(h.max(T::zero()))
}

/// Mean over ordered pairs of the binary entropy of
/// `sigmoid((g_i - g_j) / temp)`: a smoothed version of the pairwise
/// indicator entropy.
pub fn pairwise_entropy<T: Scalar>(scores: &[T], temp: T) -> Result<T> {
    let m = scores.len();
    if m < 2 {
        return Err(Error::Invalid("pairwise entropy needs at least 2 scores".into()));
    }
    if temp.is_nan() || temp <= T::zero() {
        return Err(Error::Domain(format!("temperature must be > 0, got {temp}")));
    }
    let mut total = T::zero();
    for i in 0..m {
        for j in (0..m).filter(|&j| j != i) {
            total = total + binary_entropy(sigmoid((scores[i] - scores[j]) / temp))?;
        }
    }
    Ok(total / T::of_usize(m * (m - 1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiameterMode {
    Max,
    Percentile95,
}

impl std::str::FromStr for DiameterMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(DiameterMode::Max),
            "p95" | "percentile95" => Ok(DiameterMode::Percentile95),
            other => Err(Error::Invalid(format!("unknown diameter mode {other:?}"))),
        }
    }
}

/// Cosine-distance diameter of a set of vectors.
///
/// All `n (n - 1) / 2` pairs are used when that count is at most
/// `sample_pairs`; otherwise `sample_pairs` pairs are drawn uniformly with an
/// RNG seeded by `seed`.
pub fn diameter<T: Scalar>(
    embeddings: &[&[T]],
    mode: DiameterMode,
    sample_pairs: usize,
    seed: u64,
) -> Result<T> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::Invalid("diameter needs at least 2 vectors".into()));
    }
    let dim = embeddings[0].len();
    for e in embeddings {
        if e.len() != dim {
            return Err(Error::Dimension { expected: dim, got: e.len() });
        }
        if norm(e) == T::zero() {
            return Err(Error::Domain("zero vector has no cosine distance".into()));
        }
    }
    let total_pairs = n * (n - 1) / 2;
    let mut dists = Vec::with_capacity(total_pairs.min(sample_pairs.max(1)));
    if total_pairs <= sample_pairs {
        for i in 0..n {
            for j in i + 1..n {
                dists.push(cosine_distance(embeddings[i], embeddings[j]));
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..sample_pairs.max(1) {
            let i = rng.random_range(0..n);
            let mut j = rng.random_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            dists.push(cosine_distance(embeddings[i], embeddings[j]));
        }
    }
    Ok(match mode {
        DiameterMode::Max => dists.iter().copied().fold(T::zero(), T::max),
        DiameterMode::Percentile95 => percentile(&dists, 0.95),
    })
}

/// `max_j mu(j) / nu(j)` with `mu` uniform and `nu` proportional to the
/// teacher scores. Scores containing a non-positive value are first
/// translated so their minimum equals [`DENSITY_SHIFT_EPS`].
pub fn density_ratio<T: Scalar>(scores: &[T]) -> Result<T> {
    if scores.is_empty() {
        return Err(Error::Invalid("density ratio of an empty list".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Domain("non-finite teacher score".into()));
    }
    let min = scores.iter().copied().fold(T::infinity(), T::min);
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    if min == max {
        return Ok(T::one());
    }
    // Subtract first so the smallest score lands exactly on the target.
    let shifted = |s: T| {
        if min <= T::zero() {
            (s - min) + T::of(DENSITY_SHIFT_EPS)
        } else {
            s
        }
    };
    let total: T = scores.iter().map(|&s| shifted(s)).sum();
    let m = T::of_usize(scores.len());
    // max_j (1/m) / (s_j / total) is attained at the smallest score.
    let ratio = total / (m * shifted(min));
    Ok(ratio.max(T::one()))
}

/// Constants of the excess-risk bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundParams<T> {
    pub zeta: T,
    pub lipschitz: T,
    pub vc_dim: T,
    pub n: usize,
    pub delta: T,
    pub c: T,
}

impl<T: Scalar> BoundParams<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: T| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Invalid(format!("{name} must be > 0, got {v}")))
            }
        };
        positive("zeta", self.zeta)?;
        positive("lipschitz", self.lipschitz)?;
        positive("vc_dim", self.vc_dim)?;
        positive("c", self.c)?;
        if self.n == 0 {
            return Err(Error::Invalid("n must be >= 1".into()));
        }
        if !(self.delta > T::zero() && self.delta < T::one()) {
            return Err(Error::Invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }
}

/// `zeta L diameter eta(H) + C sqrt(kappa d ln(1/delta) / n)`, with `H`
/// clipped into `[0, ln 2]`. With `kappa = 1` this is the unbiased bound.
pub fn bound_value<T: Scalar>(params: &BoundParams<T>, diameter: T, entropy: T, kappa: T) -> Result<T> {
    params.validate()?;
    if !(diameter >= T::zero() && diameter.is_finite()) {
        return Err(Error::Invalid(format!("diameter must be >= 0, got {diameter}")));
    }
    if !(kappa >= T::one() && kappa.is_finite()) {
        return Err(Error::Invalid(format!("kappa must be >= 1, got {kappa}")));
    }
    if entropy.is_nan() {
        return Err(Error::Invalid("entropy is NaN".into()));
    }
    let h = entropy.max(T::zero()).min(T::LN_2());
    let locality = params.zeta * params.lipschitz * diameter * eta(h)?;
    let stat = params.c
        * (kappa * params.vc_dim * (T::one() / params.delta).ln() / T::of_usize(params.n)).sqrt();
    Ok(locality + stat)
}

// ---------------------------------------------------------------------------
// Corpus-level report
// ---------------------------------------------------------------------------

/// Lookup of document embeddings by id.
pub trait EmbeddingLookup<T> {
    fn embedding(&self, doc: &DocId) -> Option<&EmbeddingVector<T>>;
}

impl<T> EmbeddingLookup<T> for HashMap<DocId, EmbeddingVector<T>> {
    fn embedding(&self, doc: &DocId) -> Option<&EmbeddingVector<T>> {
        self.get(doc)
    }
}

impl<T> EmbeddingLookup<T> for BTreeMap<DocId, EmbeddingVector<T>> {
    fn embedding(&self, doc: &DocId) -> Option<&EmbeddingVector<T>> {
        self.get(doc)
    }
}

impl<T> EmbeddingLookup<T> for BTreeMap<String, EmbeddingVector<T>> {
    fn embedding(&self, doc: &DocId) -> Option<&EmbeddingVector<T>> {
        self.get(doc.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReportConfig {
    /// Softmax temperature of the listwise entropy.
    pub tau: f64,
    pub diameter_mode: DiameterMode,
    pub sample_pairs: usize,
    pub seed: u64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            diameter_mode: DiameterMode::Max,
            sample_pairs: DEFAULT_SAMPLE_PAIRS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryDiagnostics<T> {
    pub entropy: T,
    pub diameter: T,
    pub density_ratio: T,
}

/// 95th percentile over queries, with the sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Robust<T> {
    pub p95: T,
    pub std: T,
}

impl<T: Scalar> Robust<T> {
    fn of(values: &[T]) -> Self {
        Self {
            p95: percentile(values, 0.95),
            std: sample_std(values),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate<T> {
    pub entropy: Robust<T>,
    pub diameter: Robust<T>,
    pub density_ratio: Robust<T>,
    pub mean_entropy: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsReport<T> {
    pub per_query: BTreeMap<QueryId, QueryDiagnostics<T>>,
    pub aggregate: Aggregate<T>,
}

/// Diagnostics of a single group. The Monte-Carlo stream is derived from
/// `config.seed` and the query id, so results do not depend on evaluation
/// order.
pub fn query_diagnostics<T: Scalar>(
    group: &TrainingGroup<T>,
    embeddings: &impl EmbeddingLookup<T>,
    config: &ReportConfig,
) -> Result<QueryDiagnostics<T>> {
    let q = &group.query_id;
    let scores = group
        .teacher_scores
        .as_deref()
        .ok_or_else(|| Error::query(q, "group has no teacher scores"))?;
    let vectors = group
        .doc_ids
        .iter()
        .map(|d| {
            embeddings
                .embedding(d)
                .map(EmbeddingVector::as_slice)
                .ok_or_else(|| Error::query(q, format!("no embedding for document {d}")))
        })
        .collect::<Result<Vec<&[T]>>>()?;
    let entropy = listwise_entropy(scores, T::of(config.tau)).map_err(|e| Error::query(q, e.to_string()))?;
    let diameter = diameter(
        &vectors,
        config.diameter_mode,
        config.sample_pairs,
        stream_seed(config.seed, q.as_str()),
    )
    .map_err(|e| Error::query(q, e.to_string()))?;
    let density_ratio = density_ratio(scores).map_err(|e| Error::query(q, e.to_string()))?;
    Ok(QueryDiagnostics {
        entropy,
        diameter,
        density_ratio,
    })
}

/// Reduces per-query diagnostics to robust aggregates.
pub fn aggregate<T: Scalar>(
    per_query: BTreeMap<QueryId, QueryDiagnostics<T>>,
) -> Result<DiagnosticsReport<T>> {
    if per_query.is_empty() {
        return Err(Error::Invalid("no groups to report on".into()));
    }
    let collect = |f: fn(&QueryDiagnostics<T>) -> T| per_query.values().map(f).collect::<Vec<T>>();
    let entropy = collect(|d| d.entropy);
    let aggregate = Aggregate {
        entropy: Robust::of(&entropy),
        diameter: Robust::of(&collect(|d| d.diameter)),
        density_ratio: Robust::of(&collect(|d| d.density_ratio)),
        mean_entropy: mean(&entropy),
    };
    Ok(DiagnosticsReport { per_query, aggregate })
}

pub fn report<T: Scalar>(
    groups: &[TrainingGroup<T>],
    embeddings: &impl EmbeddingLookup<T>,
    config: &ReportConfig,
) -> Result<DiagnosticsReport<T>> {
    let mut per_query = BTreeMap::new();
    for g in groups {
        let d = query_diagnostics(g, embeddings, config)?;
        if per_query.insert(g.query_id.clone(), d).is_some() {
            return Err(Error::query(&g.query_id, "query appears in more than one group"));
        }
    }
    aggregate(per_query)
}

impl<T: Scalar> DiagnosticsReport<T> {
    /// Tab-separated: header, one row per query, then `p95` and `std` rows.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("qid\tentropy\tdiameter\tdensity_ratio\n");
        for (q, d) in &self.per_query {
            writeln!(
                out,
                "{q}\t{:.6}\t{:.6}\t{:.6}",
                d.entropy.to_f64_lossy(),
                d.diameter.to_f64_lossy(),
                d.density_ratio.to_f64_lossy()
            )
            .expect("writing to String");
        }
        let a = &self.aggregate;
        for (label, pick) in [("p95", 0usize), ("std", 1)] {
            let v = |r: &Robust<T>| if pick == 0 { r.p95 } else { r.std }.to_f64_lossy();
            writeln!(
                out,
                "{label}\t{:.6}\t{:.6}\t{:.6}",
                v(&a.entropy),
                v(&a.diameter),
                v(&a.density_ratio)
            )
            .expect("writing to String");
        }
        out
    }
}

impl<T: Scalar> fmt::Display for DiagnosticsReport<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let a = &self.aggregate;
        let cell = |r: &Robust<T>| format!("{:.3} ± {:.3}", r.p95.to_f64_lossy(), r.std.to_f64_lossy());
        writeln!(f, "{:<10} {:>20} {:>20} {:>20}", "queries", "H (p95)", "kappa (p95)", "diameter (p95)")?;
        writeln!(
            f,
            "{:<10} {:>20} {:>20} {:>20}",
            self.per_query.len(),
            cell(&a.entropy),
            cell(&a.density_ratio),
            cell(&a.diameter)
        )
    }
}
