//! Seeded synthetic retrieval worlds.
//!
//! Topics are random unit vectors; documents and queries are noisy copies of
//! a topic. Text is drawn from a mixture of Zipf-weighted topic vocabularies,
//! weighted by the item's affinity to each topic, so lexical overlap tracks
//! latent similarity. Graded relevance buckets the latent cosine similarity;
//! the teacher is a scaled similarity plus per-pair Gaussian noise.

use std::collections::HashMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::math::{dot, stream_seed};
use crate::selection::Teacher;
use crate::types::{DocId, EmbeddingVector, QueryId, Qrels, ScoredList};
use crate::{Error, Result};

/// Similarity thresholds for grades 3, 2 and 1.
pub const GRADE_THRESHOLDS: [f64; 3] = [0.85, 0.7, 0.5];

#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub n_topics: usize,
    pub n_docs: usize,
    pub n_queries: usize,
    pub vocab_size: usize,
    pub embed_dim: usize,
    /// Norm of the perturbation added to a topic vector (before
    /// normalization) for documents and queries.
    pub doc_noise: f64,
    /// Standard deviation of the teacher's additive noise, in logit units.
    pub teacher_noise: f64,
    /// Teacher logits are `similarity / teacher_temp`.
    pub teacher_temp: f64,
    pub doc_len: usize,
    pub query_len: usize,
    /// Fraction of tokens drawn from the shared background vocabulary.
    pub background_rate: f64,
    /// Sharpness of the topic mixture used for text.
    pub topic_sharpness: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_topics: 10,
            n_docs: 500,
            n_queries: 100,
            vocab_size: 2000,
            embed_dim: 32,
            doc_noise: 0.6,
            teacher_noise: 0.25,
            teacher_temp: 0.1,
            doc_len: 40,
            query_len: 6,
            background_rate: 0.3,
            topic_sharpness: 8.0,
            seed: 7,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_topics", self.n_topics),
            ("n_docs", self.n_docs),
            ("n_queries", self.n_queries),
            ("vocab_size", self.vocab_size),
            ("embed_dim", self.embed_dim),
            ("doc_len", self.doc_len),
            ("query_len", self.query_len),
        ] {
            if v == 0 {
                return Err(Error::Invalid(format!("world.{name} must be >= 1")));
            }
        }
        if self.vocab_size < self.n_topics + 1 {
            return Err(Error::Invalid("world.vocab_size must exceed n_topics".into()));
        }
        for (name, v) in [("doc_noise", self.doc_noise), ("teacher_noise", self.teacher_noise)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Invalid(format!("world.{name} must be >= 0")));
            }
        }
        if !(self.teacher_temp > 0.0 && self.teacher_temp.is_finite()) {
            return Err(Error::Invalid("world.teacher_temp must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.background_rate) {
            return Err(Error::Invalid("world.background_rate must lie in [0, 1]".into()));
        }
        if !(self.topic_sharpness >= 0.0 && self.topic_sharpness.is_finite()) {
            return Err(Error::Invalid("world.topic_sharpness must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    config: WorldConfig,
    topics: Vec<Vec<f64>>,
    doc_ids: Vec<DocId>,
    doc_text: Vec<String>,
    doc_emb: Vec<EmbeddingVector<f64>>,
    doc_topic: Vec<usize>,
    query_ids: Vec<QueryId>,
    query_text: Vec<String>,
    query_emb: Vec<EmbeddingVector<f64>>,
    query_topic: Vec<usize>,
    doc_index: HashMap<DocId, usize>,
    query_index: HashMap<QueryId, usize>,
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = dot(&v, &v).sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn normalize(mut v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

/// Noisy copy of `topic`: `normalize(topic + noise * g / sqrt(dim))` with
/// `g` standard normal, so the perturbation has norm close to `noise`.
fn perturb(rng: &mut ChaCha8Rng, topic: &[f64], noise: f64) -> Vec<f64> {
    let scale = noise / (topic.len() as f64).sqrt();
    let v = topic
        .iter()
        .map(|&t| t + scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let v = normalize(v);
    if dot(&v, &v) == 0.0 {
        topic.to_vec()
    } else {
        v
    }
}

struct Vocabulary {
    /// Term ranges: [0] is background, [1 + t] belongs to topic t.
    slices: Vec<std::ops::Range<usize>>,
    zipf: Vec<WeightedIndex<f64>>,
}

impl Vocabulary {
    fn new(config: &WorldConfig) -> Self {
        let v = config.vocab_size;
        let n_slices = config.n_topics + 1;
        let base = v / n_slices;
        let mut slices = Vec::with_capacity(n_slices);
        let mut start = 0;
        for s in 0..n_slices {
            let len = base + usize::from(s < v % n_slices);
            slices.push(start..start + len);
            start += len;
        }
        let zipf = slices
            .iter()
            .map(|r| WeightedIndex::new((1..=r.len()).map(|k| 1.0 / k as f64)).expect("non-empty slice"))
            .collect();
        Self { slices, zipf }
    }

    fn text(&self, rng: &mut ChaCha8Rng, emb: &[f64], topics: &[Vec<f64>], config: &WorldConfig, len: usize) -> String {
        let affinity: Vec<f64> = topics
            .iter()
            .map(|t| (config.topic_sharpness * dot(emb, t)).exp())
            .collect();
        let mixture = WeightedIndex::new(&affinity).expect("positive affinities");
        let words: Vec<String> = (0..len)
            .map(|_| {
                let slice = if rng.random::<f64>() < config.background_rate {
                    0
                } else {
                    1 + mixture.sample(rng)
                };
                let term = self.slices[slice].start + self.zipf[slice].sample(rng);
                format!("w{term}")
            })
            .collect();
        words.join(" ")
    }
}

/// Generates a world; identical configs yield identical worlds.
pub fn generate(config: &WorldConfig) -> Result<SyntheticWorld> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, "world"));
    let topics: Vec<Vec<f64>> = (0..config.n_topics)
        .map(|_| unit_gaussian(&mut rng, config.embed_dim))
        .collect();
    let vocab = Vocabulary::new(config);

    let mut doc_ids = Vec::with_capacity(config.n_docs);
    let mut doc_text = Vec::with_capacity(config.n_docs);
    let mut doc_emb = Vec::with_capacity(config.n_docs);
    let mut doc_topic = Vec::with_capacity(config.n_docs);
    for i in 0..config.n_docs {
        let t = rng.random_range(0..config.n_topics);
        let e = perturb(&mut rng, &topics[t], config.doc_noise);
        doc_text.push(vocab.text(&mut rng, &e, &topics, config, config.doc_len));
        doc_emb.push(EmbeddingVector::new(e)?);
        doc_topic.push(t);
        doc_ids.push(DocId::new(format!("d{i}"))?);
    }

    let mut query_ids = Vec::with_capacity(config.n_queries);
    let mut query_text = Vec::with_capacity(config.n_queries);
    let mut query_emb = Vec::with_capacity(config.n_queries);
    let mut query_topic = Vec::with_capacity(config.n_queries);
    for i in 0..config.n_queries {
        let t = rng.random_range(0..config.n_topics);
        let e = perturb(&mut rng, &topics[t], config.doc_noise);
        query_text.push(vocab.text(&mut rng, &e, &topics, config, config.query_len));
        query_emb.push(EmbeddingVector::new(e)?);
        query_topic.push(t);
        query_ids.push(QueryId::new(format!("q{i}"))?);
    }

    let doc_index = doc_ids.iter().cloned().enumerate().map(|(i, d)| (d, i)).collect();
    let query_index = query_ids.iter().cloned().enumerate().map(|(i, q)| (q, i)).collect();
    Ok(SyntheticWorld {
        config: config.clone(),
        topics,
        doc_ids,
        doc_text,
        doc_emb,
        doc_topic,
        query_ids,
        query_text,
        query_emb,
        query_topic,
        doc_index,
        query_index,
    })
}

/// Grade for a latent similarity.
pub fn grade_of(similarity: f64) -> u32 {
    match similarity {
        s if s >= GRADE_THRESHOLDS[0] => 3,
        s if s >= GRADE_THRESHOLDS[1] => 2,
        s if s >= GRADE_THRESHOLDS[2] => 1,
        _ => 0,
    }
}

impl SyntheticWorld {
    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn topics(&self) -> &[Vec<f64>] {
        &self.topics
    }

    pub fn doc_ids(&self) -> &[DocId] {
        &self.doc_ids
    }

    pub fn query_ids(&self) -> &[QueryId] {
        &self.query_ids
    }

    pub fn doc_index(&self, doc: &DocId) -> Option<usize> {
        self.doc_index.get(doc).copied()
    }

    pub fn query_index(&self, query: &QueryId) -> Option<usize> {
        self.query_index.get(query).copied()
    }

    pub fn doc_text(&self, i: usize) -> &str {
        &self.doc_text[i]
    }

    pub fn query_text(&self, i: usize) -> &str {
        &self.query_text[i]
    }

    pub fn doc_embedding(&self, i: usize) -> &EmbeddingVector<f64> {
        &self.doc_emb[i]
    }

    pub fn query_embedding(&self, i: usize) -> &EmbeddingVector<f64> {
        &self.query_emb[i]
    }

    pub fn doc_topic(&self, i: usize) -> usize {
        self.doc_topic[i]
    }

    pub fn query_topic(&self, i: usize) -> usize {
        self.query_topic[i]
    }

    /// `(id, text)` pairs in generation order.
    pub fn corpus(&self) -> impl Iterator<Item = (&DocId, &String)> {
        self.doc_ids.iter().zip(&self.doc_text)
    }

    pub fn queries(&self) -> impl Iterator<Item = (&QueryId, &String)> {
        self.query_ids.iter().zip(&self.query_text)
    }

    pub fn doc_embeddings(&self) -> impl Iterator<Item = (&DocId, &EmbeddingVector<f64>)> {
        self.doc_ids.iter().zip(&self.doc_emb)
    }

    pub fn query_embeddings(&self) -> impl Iterator<Item = (&QueryId, &EmbeddingVector<f64>)> {
        self.query_ids.iter().zip(&self.query_emb)
    }

    /// Latent cosine similarity (embeddings are unit vectors).
    pub fn similarity_at(&self, q: usize, d: usize) -> f64 {
        dot(self.query_emb[q].as_slice(), self.doc_emb[d].as_slice())
    }

    pub fn grade_at(&self, q: usize, d: usize) -> u32 {
        grade_of(self.similarity_at(q, d))
    }

    /// Teacher logit: `similarity / teacher_temp + N(0, teacher_noise)`, the
    /// noise drawn from a stream keyed by the (query, document) pair.
    pub fn teacher_at(&self, q: usize, d: usize) -> f64 {
        let base = self.similarity_at(q, d) / self.config.teacher_temp;
        if self.config.teacher_noise == 0.0 {
            return base;
        }
        let key = format!("teacher\u{1f}{}\u{1f}{}", self.query_ids[q], self.doc_ids[d]);
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(self.config.seed, &key));
        let z: f64 = rng.sample(StandardNormal);
        base + self.config.teacher_noise * z
    }

    /// Judgments for every (query, document) pair with grade >= 1.
    pub fn qrels(&self) -> Qrels {
        let mut qrels = Qrels::new();
        for (qi, q) in self.query_ids.iter().enumerate() {
            for (di, d) in self.doc_ids.iter().enumerate() {
                let g = self.grade_at(qi, di);
                if g > 0 {
                    qrels.insert(q.clone(), d.clone(), g);
                }
            }
        }
        qrels
    }

    /// Top-`k` documents by true grade, ties by similarity then id. The
    /// score is `grade + (similarity + 1) / 4`, which preserves that order.
    pub fn oracle_ranking(&self, query: &QueryId, k: usize) -> Result<ScoredList<f64>> {
        let qi = self
            .query_index(query)
            .ok_or_else(|| Error::query(query, "not in world"))?;
        let mut entries: Vec<(DocId, f64)> = (0..self.doc_ids.len())
            .map(|di| {
                let sim = self.similarity_at(qi, di);
                (self.doc_ids[di].clone(), f64::from(grade_of(sim)) + (sim + 1.0) / 4.0)
            })
            .collect();
        entries.sort_by(|a, b| crate::types::rank_order((&a.0, a.1), (&b.0, b.1)));
        entries.truncate(k);
        ScoredList::new(query.clone(), entries)
    }

    /// Highest-ranked document of [`oracle_ranking`](Self::oracle_ranking):
    /// the positive used when mining groups.
    pub fn positive_for(&self, query: &QueryId) -> Result<DocId> {
        let top = self.oracle_ranking(query, 1)?;
        Ok(top.entries()[0].0.clone())
    }
}

impl Teacher for SyntheticWorld {
    fn score(&self, query: &QueryId, doc: &DocId) -> Option<f64> {
        Some(self.teacher_at(self.query_index(query)?, self.doc_index(doc)?))
    }
}
