//! Domain types shared by every module.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub struct $name(String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Result<Self> {
                let id = id.into();
                if id.is_empty() || id.chars().any(char::is_whitespace) {
                    return Err(Error::InvalidId(id));
                }
                Ok(Self(id))
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl TryFrom<String> for $name {
            type Error = Error;
            fn try_from(s: String) -> Result<Self> {
                Self::new(s)
            }
        }

        impl TryFrom<&str> for $name {
            type Error = Error;
            fn try_from(s: &str) -> Result<Self> {
                Self::new(s)
            }
        }

        impl From<$name> for String {
            fn from(id: $name) -> String {
                id.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }
    };
}

string_id!(
    /// Document identifier: non-empty, no whitespace.
    DocId
);
string_id!(
    /// Query identifier: non-empty, no whitespace.
    QueryId
);

/// One query with its `m` candidate documents and optional targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrainingGroup<T = f64> {
    pub query_id: QueryId,
    pub doc_ids: Vec<DocId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub teacher_scores: Option<Vec<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_index: Option<usize>,
}

impl<T: Scalar> TrainingGroup<T> {
    pub fn new(query_id: QueryId, doc_ids: Vec<DocId>) -> Self {
        Self {
            query_id,
            doc_ids,
            teacher_scores: None,
            labels: None,
            positive_index: None,
        }
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    /// Checks length, index and label invariants. The message names the
    /// offending field.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let m = self.doc_ids.len();
        if let Some(scores) = &self.teacher_scores {
            if scores.len() != m {
                return Err(format!(
                    "teacher_scores has length {} but doc_ids has length {m}",
                    scores.len()
                ));
            }
            if scores.iter().any(|s| !s.is_finite()) {
                return Err("teacher_scores contains a non-finite value".into());
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != m {
                return Err(format!(
                    "labels has length {} but doc_ids has length {m}",
                    labels.len()
                ));
            }
            if labels.iter().any(|&l| l > 1) {
                return Err("labels must be 0 or 1".into());
            }
        }
        if let Some(pos) = self.positive_index {
            if pos >= m {
                return Err(format!("positive_index {pos} out of range for m = {m}"));
            }
            if let Some(labels) = &self.labels {
                if labels[pos] != 1 {
                    return Err(format!("labels[{pos}] must be 1 at positive_index"));
                }
            }
        }
        Ok(())
    }

    /// Converts the teacher scores to another scalar type.
    pub fn cast<U: Scalar>(&self) -> TrainingGroup<U> {
        TrainingGroup {
            query_id: self.query_id.clone(),
            doc_ids: self.doc_ids.clone(),
            teacher_scores: self
                .teacher_scores
                .as_ref()
                .map(|s| s.iter().map(|&x| U::of(x.to_f64_lossy())).collect()),
            labels: self.labels.clone(),
            positive_index: self.positive_index,
        }
    }
}

/// Total order used for every ranking: score descending, then id ascending.
pub fn rank_order<T: Scalar>(a: (&DocId, T), b: (&DocId, T)) -> Ordering {
    b.1.partial_cmp(&a.1)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.0.cmp(b.0))
}

/// A ranked list of scored documents for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredList<T = f64> {
    query_id: QueryId,
    entries: Vec<(DocId, T)>,
}

impl<T: Scalar> ScoredList<T> {
    /// Sorts `entries` by the canonical order. Fails on duplicate documents or
    /// non-finite scores.
    pub fn new(query_id: QueryId, mut entries: Vec<(DocId, T)>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for (doc, score) in &entries {
            if !score.is_finite() {
                return Err(Error::query(&query_id, format!("non-finite score for {doc}")));
            }
            if !seen.insert(doc) {
                return Err(Error::query(&query_id, format!("duplicate document {doc}")));
            }
        }
        entries.sort_by(|a, b| rank_order((&a.0, a.1), (&b.0, b.1)));
        Ok(Self { query_id, entries })
    }

    pub fn empty(query_id: QueryId) -> Self {
        Self {
            query_id,
            entries: Vec::new(),
        }
    }

    pub fn query_id(&self) -> &QueryId {
        &self.query_id
    }

    pub fn entries(&self) -> &[(DocId, T)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &DocId> {
        self.entries.iter().map(|(d, _)| d)
    }

    pub fn scores(&self) -> impl Iterator<Item = T> + '_ {
        self.entries.iter().map(|(_, s)| *s)
    }

    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
    }
}

/// Graded relevance judgments.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    judgments: BTreeMap<QueryId, BTreeMap<DocId, u32>>,
}

impl Qrels {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query: QueryId, doc: DocId, grade: u32) {
        self.judgments.entry(query).or_default().insert(doc, grade);
    }

    /// Grade of `doc` for `query`, 0 when unjudged.
    pub fn grade(&self, query: &QueryId, doc: &DocId) -> u32 {
        self.judgments
            .get(query)
            .and_then(|docs| docs.get(doc))
            .copied()
            .unwrap_or(0)
    }

    pub fn for_query(&self, query: &QueryId) -> Option<&BTreeMap<DocId, u32>> {
        self.judgments.get(query)
    }

    pub fn queries(&self) -> impl Iterator<Item = &QueryId> {
        self.judgments.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&QueryId, &DocId, u32)> {
        self.judgments
            .iter()
            .flat_map(|(q, docs)| docs.iter().map(move |(d, &g)| (q, d, g)))
    }

    /// Number of documents with grade >= 1.
    pub fn relevant_count(&self, query: &QueryId) -> usize {
        self.for_query(query)
            .map(|docs| docs.values().filter(|&&g| g >= 1).count())
            .unwrap_or(0)
    }
}

/// Fixed-dimension vector with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector<T = f64>(Vec<T>);

impl<T: Scalar> EmbeddingVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Invalid("empty embedding".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("embedding contains a non-finite value".into()));
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingVector<U> {
        EmbeddingVector(self.0.iter().map(|&x| U::of(x.to_f64_lossy())).collect())
    }
}
