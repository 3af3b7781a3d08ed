//! Negative sampling domains and entropy-quartile filtering.
//!
//! Four samplers draw `k` negatives for a (query, positive) pair:
//!
//! - `random`: uniform without replacement over the corpus;
//! - `bm25`: lexical top-k;
//! - `teacher`: a BM25 pool of `pool_depth` candidates rescored by the
//!   teacher, keeping the teacher's top-k;
//! - `ensemble`: the union of the constituents' pools, rescored by the
//!   teacher, with candidates too close to the positive filtered out, then the
//!   teacher's top-k.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diagnostics::EmbeddingLookup;
use crate::lexical::{bm25_topk, Bm25Params, InvertedIndex};
use crate::math::{cosine_distance, percentile, stream_seed};
use crate::types::{rank_order, DocId, QueryId, Qrels, TrainingGroup};
use crate::{Error, Result, Scalar};

/// Teacher scorer `g(Q, D)`.
pub trait Teacher {
    fn score(&self, query: &QueryId, doc: &DocId) -> Option<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SamplerKind {
    Random,
    Bm25,
    Teacher,
    Ensemble,
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplerKind::Random => "random",
            SamplerKind::Bm25 => "bm25",
            SamplerKind::Teacher => "teacher",
            SamplerKind::Ensemble => "ensemble",
        })
    }
}

impl FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(SamplerKind::Random),
            "bm25" => Ok(SamplerKind::Bm25),
            "teacher" | "ce" => Ok(SamplerKind::Teacher),
            "ensemble" => Ok(SamplerKind::Ensemble),
            other => Err(Error::Invalid(format!("unknown sampler {other:?}"))),
        }
    }
}

/// Distance used by the ensemble filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterDistance {
    /// |g(candidate) - g(positive)|
    TeacherScore,
    /// Cosine distance between candidate and positive embeddings.
    Embedding,
}

impl FromStr for FilterDistance {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher" => Ok(FilterDistance::TeacherScore),
            "embedding" => Ok(FilterDistance::Embedding),
            other => Err(Error::Invalid(format!("unknown filter distance {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    /// Negatives per query.
    pub k: usize,
    /// Candidate pool depth for teacher rescoring and ensemble constituents.
    pub pool_depth: usize,
    pub seed: u64,
    /// Ensemble members (ignored by other kinds).
    pub constituents: Vec<SamplerKind>,
    /// Ensemble filter: candidates at distance <= epsilon from the positive
    /// are dropped.
    pub epsilon: f64,
    pub filter: FilterDistance,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            kind: SamplerKind::Bm25,
            k: 15,
            pool_depth: 100,
            seed: 0,
            constituents: vec![SamplerKind::Random, SamplerKind::Bm25, SamplerKind::Teacher],
            epsilon: 0.0,
            filter: FilterDistance::TeacherScore,
        }
    }
}

impl SamplerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Invalid("sampler.k must be >= 1".into()));
        }
        if self.pool_depth < self.k {
            return Err(Error::Invalid(format!(
                "sampler.pool_depth ({}) must be >= k ({})",
                self.pool_depth, self.k
            )));
        }
        if self.epsilon.is_nan() || self.epsilon < 0.0 {
            return Err(Error::Invalid("sampler.epsilon must be >= 0".into()));
        }
        if self.kind == SamplerKind::Ensemble {
            if self.constituents.is_empty() {
                return Err(Error::Invalid("ensemble needs at least one constituent".into()));
            }
            if self.constituents.contains(&SamplerKind::Ensemble) {
                return Err(Error::Invalid("ensembles cannot nest".into()));
            }
        }
        Ok(())
    }
}

/// Everything a sampler may consult.
#[derive(Clone, Copy)]
pub struct CorpusHandles<'a> {
    pub doc_ids: &'a [DocId],
    pub index: Option<&'a InvertedIndex>,
    pub bm25: Bm25Params,
    pub teacher: Option<&'a dyn Teacher>,
    pub embeddings: Option<&'a dyn EmbeddingLookup<f64>>,
}

struct Ctx<'a, 'b> {
    spec: &'b SamplerSpec,
    query: &'b QueryId,
    text: &'b str,
    positive: &'b DocId,
    h: &'b CorpusHandles<'a>,
}

impl Ctx<'_, '_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::query(self.query, msg)
    }

    fn random(&self, n: usize) -> Vec<DocId> {
        let candidates: Vec<&DocId> = self.h.doc_ids.iter().filter(|d| *d != self.positive).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.spec.seed, self.query.as_str()));
        let amount = n.min(candidates.len());
        rand::seq::index::sample(&mut rng, candidates.len(), amount)
            .into_iter()
            .map(|i| candidates[i].clone())
            .collect()
    }

    fn bm25(&self, n: usize) -> Result<Vec<DocId>> {
        let index = self.h.index.ok_or_else(|| self.err("bm25 sampling needs an index"))?;
        let exclude: HashSet<DocId> = [self.positive.clone()].into();
        Ok(bm25_topk(index, &self.h.bm25, self.query, self.text, n, &exclude)
            .doc_ids()
            .cloned()
            .collect())
    }

    fn teacher_score(&self, doc: &DocId) -> Result<f64> {
        let teacher = self.h.teacher.ok_or_else(|| self.err("sampler needs a teacher"))?;
        teacher
            .score(self.query, doc)
            .ok_or_else(|| self.err(format!("teacher cannot score {doc}")))
    }

    /// Sorts candidates by teacher score descending, ids ascending.
    fn rescore(&self, docs: impl IntoIterator<Item = DocId>) -> Result<Vec<(DocId, f64)>> {
        let mut scored = docs
            .into_iter()
            .map(|d| Ok((d.clone(), self.teacher_score(&d)?)))
            .collect::<Result<Vec<_>>>()?;
        scored.sort_by(|a, b| rank_order((&a.0, a.1), (&b.0, b.1)));
        Ok(scored)
    }

    /// Candidate pool a sampler contributes to an ensemble.
    fn pool(&self, kind: SamplerKind) -> Result<Vec<DocId>> {
        let depth = self.spec.pool_depth;
        match kind {
            SamplerKind::Random => Ok(self.random(depth)),
            SamplerKind::Bm25 => self.bm25(depth),
            SamplerKind::Teacher => Ok(self.rescore(self.bm25(depth)?)?.into_iter().map(|(d, _)| d).collect()),
            SamplerKind::Ensemble => Err(self.err("ensembles cannot nest")),
        }
    }

    fn keep_k(&self, docs: Vec<DocId>) -> Result<Vec<DocId>> {
        let k = self.spec.k;
        if docs.len() < k {
            return Err(self.err(format!(
                "{} sampler produced {} candidates, fewer than k = {k}",
                self.spec.kind,
                docs.len()
            )));
        }
        Ok(docs.into_iter().take(k).collect())
    }

    fn sample(&self) -> Result<Vec<DocId>> {
        match self.spec.kind {
            SamplerKind::Random => self.keep_k(self.random(self.spec.k)),
            SamplerKind::Bm25 => self.keep_k(self.bm25(self.spec.k)?),
            SamplerKind::Teacher => self.keep_k(self.pool(SamplerKind::Teacher)?),
            SamplerKind::Ensemble => {
                let mut union = BTreeSet::new();
                for &kind in &self.spec.constituents {
                    union.extend(self.pool(kind)?);
                }
                let scored = self.rescore(union)?;
                let kept = self.filter(scored)?;
                self.keep_k(kept)
            }
        }
    }

    fn filter(&self, scored: Vec<(DocId, f64)>) -> Result<Vec<DocId>> {
        let eps = self.spec.epsilon;
        match self.spec.filter {
            FilterDistance::TeacherScore => {
                let pos = self.teacher_score(self.positive)?;
                Ok(scored
                    .into_iter()
                    .filter(|(_, g)| (g - pos).abs() > eps)
                    .map(|(d, _)| d)
                    .collect())
            }
            FilterDistance::Embedding => {
                let emb = self
                    .h
                    .embeddings
                    .ok_or_else(|| self.err("embedding filter needs embeddings"))?;
                let lookup = |d: &DocId| {
                    emb.embedding(d)
                        .map(|e| e.as_slice())
                        .ok_or_else(|| self.err(format!("no embedding for {d}")))
                };
                let pos = lookup(self.positive)?;
                let mut kept = Vec::with_capacity(scored.len());
                for (d, _) in scored {
                    if cosine_distance(lookup(&d)?, pos) > eps {
                        kept.push(d);
                    }
                }
                Ok(kept)
            }
        }
    }
}

/// Draws `spec.k` distinct negatives for `query`, never returning `positive`.
pub fn sample_negatives(
    spec: &SamplerSpec,
    query: (&QueryId, &str),
    positive: &DocId,
    handles: &CorpusHandles<'_>,
) -> Result<Vec<DocId>> {
    spec.validate()?;
    let ctx = Ctx {
        spec,
        query: query.0,
        text: query.1,
        positive,
        h: handles,
    };
    ctx.sample()
}

/// Highest-graded judged document for `query`, ties broken by smallest id.
pub fn positive_from_qrels(qrels: &Qrels, query: &QueryId) -> Option<DocId> {
    qrels
        .for_query(query)?
        .iter()
        .filter(|(_, &g)| g > 0)
        .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
        .map(|(d, _)| d.clone())
}

/// A group of `1 + k` documents: the positive first, then the negatives.
pub fn build_group<T: Scalar>(
    spec: &SamplerSpec,
    query: (&QueryId, &str),
    positive: &DocId,
    handles: &CorpusHandles<'_>,
) -> Result<TrainingGroup<T>> {
    let negatives = sample_negatives(spec, query, positive, handles)?;
    let mut doc_ids = Vec::with_capacity(negatives.len() + 1);
    doc_ids.push(positive.clone());
    doc_ids.extend(negatives);
    let mut labels = vec![0u8; doc_ids.len()];
    labels[0] = 1;
    Ok(TrainingGroup {
        query_id: query.0.clone(),
        doc_ids,
        teacher_scores: None,
        labels: Some(labels),
        positive_index: Some(0),
    })
}

/// Fills `teacher_scores` for every group from `teacher`.
pub fn label_groups<T: Scalar>(groups: &mut [TrainingGroup<T>], teacher: &dyn Teacher) -> Result<()> {
    for g in groups.iter_mut() {
        let scores = g
            .doc_ids
            .iter()
            .map(|d| {
                teacher
                    .score(&g.query_id, d)
                    .map(T::of)
                    .ok_or_else(|| Error::query(&g.query_id, format!("teacher cannot score {d}")))
            })
            .collect::<Result<Vec<T>>>()?;
        g.teacher_scores = Some(scores);
    }
    Ok(())
}

/// Band of the per-group entropy distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuartileBand {
    /// entropy < Q1
    Lower,
    /// Q1 <= entropy <= Q3
    Inner,
    /// entropy > Q3
    Upper,
    /// lower or upper
    Outlier,
}

impl FromStr for QuartileBand {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lower" => Ok(QuartileBand::Lower),
            "inner" => Ok(QuartileBand::Inner),
            "upper" => Ok(QuartileBand::Upper),
            "outlier" => Ok(QuartileBand::Outlier),
            other => Err(Error::Invalid(format!("unknown quartile band {other:?}"))),
        }
    }
}

impl fmt::Display for QuartileBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuartileBand::Lower => "lower",
            QuartileBand::Inner => "inner",
            QuartileBand::Upper => "upper",
            QuartileBand::Outlier => "outlier",
        })
    }
}

/// Quartile boundaries (Q1, Q3) of `values`, linear interpolation.
pub fn quartiles<T: Scalar>(values: &[T]) -> (T, T) {
    (percentile(values, 0.25), percentile(values, 0.75))
}

/// Keeps the groups whose entropy falls in `band`, preserving order.
pub fn quartile_filter<T, F>(groups: &[TrainingGroup<T>], band: QuartileBand, entropy_fn: F) -> Result<Vec<TrainingGroup<T>>>
where
    T: Scalar,
    F: Fn(&TrainingGroup<T>) -> Result<T>,
{
    if groups.is_empty() {
        return Err(Error::Invalid("quartile filter on an empty group list".into()));
    }
    let entropies = groups.iter().map(&entropy_fn).collect::<Result<Vec<T>>>()?;
    let (q1, q3) = quartiles(&entropies);
    Ok(groups
        .iter()
        .zip(&entropies)
        .filter(|(_, &h)| match band {
            QuartileBand::Lower => h < q1,
            QuartileBand::Inner => h >= q1 && h <= q3,
            QuartileBand::Upper => h > q3,
            QuartileBand::Outlier => h < q1 || h > q3,
        })
        .map(|(g, _)| g.clone())
        .collect())
}

/// Listwise teacher entropy at temperature `tau`, the default quartile key.
pub fn teacher_entropy<T: Scalar>(tau: T) -> impl Fn(&TrainingGroup<T>) -> Result<T> {
    move |g| {
        let scores = g
            .teacher_scores
            .as_deref()
            .ok_or_else(|| Error::query(&g.query_id, "group has no teacher scores"))?;
        crate::diagnostics::listwise_entropy(scores, tau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexical::build_index;
    use std::collections::HashMap;

    struct MapTeacher(HashMap<String, f64>);

    impl Teacher for MapTeacher {
        fn score(&self, _q: &QueryId, d: &DocId) -> Option<f64> {
            self.0.get(d.as_str()).copied()
        }
    }

    /// 20 documents all matching "apple" with varying term frequency; the
    /// teacher prefers higher ids, and d7 ties the positive d0.
    fn toy() -> (Vec<DocId>, InvertedIndex, MapTeacher) {
        let ids: Vec<DocId> = (0..20).map(|i| DocId::new(format!("d{i}")).unwrap()).collect();
        let texts: Vec<String> = (0..20)
            .map(|i| format!("{} filler{}", "apple ".repeat(1 + i % 4), i))
            .collect();
        let index = build_index(ids.iter().cloned().zip(texts)).unwrap();
        let mut scores: HashMap<String, f64> = (0..20).map(|i| (format!("d{i}"), i as f64 * 0.5)).collect();
        scores.insert("d0".into(), 3.5);
        (ids, index, MapTeacher(scores))
    }

    fn handles<'a>(ids: &'a [DocId], index: &'a InvertedIndex, teacher: &'a MapTeacher) -> CorpusHandles<'a> {
        CorpusHandles {
            doc_ids: ids,
            index: Some(index),
            bm25: Bm25Params::default(),
            teacher: Some(teacher),
            embeddings: None,
        }
    }

    fn q() -> QueryId {
        QueryId::new("q").unwrap()
    }

    #[test]
    fn random_is_deterministic_and_excludes_positive() {
        let (ids, index, teacher) = toy();
        let h = handles(&ids, &index, &teacher);
        let spec = SamplerSpec { kind: SamplerKind::Random, k: 10, seed: 3, ..Default::default() };
        let a = sample_negatives(&spec, (&q(), "apple"), &ids[0], &h).unwrap();
        let b = sample_negatives(&spec, (&q(), "apple"), &ids[0], &h).unwrap();
        assert_eq!(a, b);
        assert!(!a.contains(&ids[0]));
        assert_eq!(a.iter().collect::<HashSet<_>>().len(), 10);
    }

    #[test]
    fn teacher_with_full_pool_returns_sorted_pool() {
        let (ids, index, teacher) = toy();
        let h = handles(&ids, &index, &teacher);
        let spec = SamplerSpec { kind: SamplerKind::Teacher, k: 19, pool_depth: 19, ..Default::default() };
        let got = sample_negatives(&spec, (&q(), "apple"), &ids[0], &h).unwrap();
        let mut expected: Vec<DocId> = ids[1..].to_vec();
        expected.sort_by(|a, b| {
            let (sa, sb) = (teacher.0[a.as_str()], teacher.0[b.as_str()]);
            sb.partial_cmp(&sa).unwrap().then(a.cmp(b))
        });
        assert_eq!(got, expected);
    }

    #[test]
    fn ensemble_of_teacher_with_zero_epsilon_drops_only_exact_ties() {
        let (ids, index, teacher) = toy();
        let h = handles(&ids, &index, &teacher);
        let base = SamplerSpec { k: 8, pool_depth: 19, ..Default::default() };
        let teacher_spec = SamplerSpec { kind: SamplerKind::Teacher, k: 19, ..base.clone() };
        let full = sample_negatives(&teacher_spec, (&q(), "apple"), &ids[0], &h).unwrap();
        // set-algebra oracle: teacher pool minus exact-score ties, top 8
        let expected: Vec<DocId> = full
            .into_iter()
            .filter(|d| teacher.0[d.as_str()] != teacher.0["d0"])
            .take(8)
            .collect();
        let ens = SamplerSpec {
            kind: SamplerKind::Ensemble,
            constituents: vec![SamplerKind::Teacher],
            ..base
        };
        let got = sample_negatives(&ens, (&q(), "apple"), &ids[0], &h).unwrap();
        assert_eq!(got, expected);
        assert!(!got.contains(&ids[7]));
    }

    #[test]
    fn infinite_epsilon_empties_the_pool() {
        let (ids, index, teacher) = toy();
        let h = handles(&ids, &index, &teacher);
        let spec = SamplerSpec {
            kind: SamplerKind::Ensemble,
            epsilon: f64::INFINITY,
            ..Default::default()
        };
        let err = sample_negatives(&SamplerSpec { k: 5, pool_depth: 10, ..spec }, (&q(), "apple"), &ids[0], &h).unwrap_err();
        assert!(err.to_string().contains("query q"), "{err}");
    }

    #[test]
    fn small_pool_is_an_error() {
        let (ids, index, teacher) = toy();
        let h = handles(&ids, &index, &teacher);
        let spec = SamplerSpec { kind: SamplerKind::Bm25, k: 5, ..Default::default() };
        assert!(sample_negatives(&spec, (&q(), "nothing"), &ids[0], &h).is_err());
    }

    #[test]
    fn positive_prefers_grade_then_id() {
        let mut qrels = Qrels::new();
        let d = |s: &str| DocId::new(s).unwrap();
        qrels.insert(q(), d("b"), 2);
        qrels.insert(q(), d("a"), 2);
        qrels.insert(q(), d("c"), 1);
        assert_eq!(positive_from_qrels(&qrels, &q()), Some(d("a")));
        assert_eq!(positive_from_qrels(&qrels, &QueryId::new("other").unwrap()), None);
    }

    #[test]
    fn sampler_config_validation() {
        assert!(SamplerSpec { k: 0, ..Default::default() }.validate().is_err());
        assert!(SamplerSpec { k: 10, pool_depth: 5, ..Default::default() }.validate().is_err());
        let nested = SamplerSpec {
            kind: SamplerKind::Ensemble,
            constituents: vec![SamplerKind::Ensemble],
            ..Default::default()
        };
        assert!(nested.validate().is_err());
    }

    fn groups_with_entropies(hs: &[f64]) -> Vec<TrainingGroup<f64>> {
        hs.iter()
            .enumerate()
            .map(|(i, &h)| {
                let mut g = TrainingGroup::new(QueryId::new(format!("q{i}")).unwrap(), vec![DocId::new("d").unwrap()]);
                g.teacher_scores = Some(vec![h]);
                g
            })
            .collect()
    }

    fn key(g: &TrainingGroup<f64>) -> Result<f64> {
        Ok(g.teacher_scores.as_ref().unwrap()[0])
    }

    #[test]
    fn inner_band_of_one_to_eight() {
        let groups = groups_with_entropies(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let inner = quartile_filter(&groups, QuartileBand::Inner, key).unwrap();
        let kept: Vec<f64> = inner.iter().map(|g| key(g).unwrap()).collect();
        assert_eq!(kept, [3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn equal_entropies_are_all_inner() {
        let groups = groups_with_entropies(&[2.0; 6]);
        assert_eq!(quartile_filter(&groups, QuartileBand::Inner, key).unwrap().len(), 6);
        assert!(quartile_filter(&groups, QuartileBand::Outlier, key).unwrap().is_empty());
        assert!(quartile_filter(&[], QuartileBand::Inner, key).is_err());
    }

    proptest::proptest! {
        #[test]
        fn bands_partition_input(hs in proptest::collection::vec(0.0f64..5.0, 1..40)) {
            let groups = groups_with_entropies(&hs);
            let ids = |b| quartile_filter(&groups, b, key).unwrap().into_iter().map(|g| g.query_id).collect::<Vec<_>>();
            let (lo, inner, up, out) = (ids(QuartileBand::Lower), ids(QuartileBand::Inner), ids(QuartileBand::Upper), ids(QuartileBand::Outlier));
            proptest::prop_assert_eq!(lo.len() + inner.len() + up.len(), groups.len());
            let all: HashSet<_> = lo.iter().chain(&inner).chain(&up).collect();
            proptest::prop_assert_eq!(all.len(), groups.len());
            let mut lo_up: Vec<_> = lo.iter().chain(&up).cloned().collect();
            lo_up.sort();
            let mut out_sorted = out.clone();
            out_sorted.sort();
            proptest::prop_assert_eq!(lo_up, out_sorted);
        }
    }
}
