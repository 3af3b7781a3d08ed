use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use crate::io::RunMap;
use crate::types::{QueryId, Qrels, ScoredList};
use crate::{Error, Result, Scalar};

/// nDCG at cutoff `k` with raw-grade gain and `log2(r + 1)` discount.
/// Returns 0 when the query has no relevant documents.
pub fn ndcg_at_k<T: Scalar>(run: &ScoredList<T>, qrels: &Qrels, k: usize) -> T {
    let q = run.query_id();
    let discount = |r: usize| T::one() / T::of_usize(r + 1).log2();
    let dcg: T = run
        .doc_ids()
        .take(k)
        .enumerate()
        .map(|(i, d)| T::of(f64::from(qrels.grade(q, d))) * discount(i + 1))
        .sum();
    let mut ideal: Vec<u32> = qrels
        .for_query(q)
        .map(|docs| docs.values().copied().filter(|&g| g > 0).collect())
        .unwrap_or_default();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: T = ideal
        .iter()
        .take(k)
        .enumerate()
        .map(|(i, &g)| T::of(f64::from(g)) * discount(i + 1))
        .sum();
    if idcg == T::zero() {
        T::zero()
    } else {
        dcg / idcg
    }
}

/// Average precision over the full ranking; relevance means grade >= 1.
pub fn average_precision<T: Scalar>(run: &ScoredList<T>, qrels: &Qrels) -> T {
    let q = run.query_id();
    let total = qrels.relevant_count(q);
    if total == 0 {
        return T::zero();
    }
    let mut hits = 0usize;
    let mut sum = T::zero();
    for (i, d) in run.doc_ids().enumerate() {
        if qrels.grade(q, d) >= 1 {
            hits += 1;
            sum = sum + T::of_usize(hits) / T::of_usize(i + 1);
        }
    }
    sum / T::of_usize(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Ndcg { k: usize },
    Map,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Ndcg { k } => write!(f, "ndcg_cut_{k}"),
            Metric::Map => f.write_str("map"),
        }
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if s == "map" {
            return Ok(Metric::Map);
        }
        let k = s
            .strip_prefix("ndcg_cut_")
            .or_else(|| s.strip_prefix("ndcg@"))
            .ok_or_else(|| Error::Invalid(format!("unknown metric {s:?}")))?;
        let k: usize = k.parse().map_err(|_| Error::Invalid(format!("bad cutoff in {s:?}")))?;
        if k == 0 {
            return Err(Error::Invalid("metric cutoff must be >= 1".into()));
        }
        Ok(Metric::Ndcg { k })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricResult<T> {
    pub per_query: BTreeMap<QueryId, T>,
    pub mean: T,
}

/// Scores every query present in `runs`.
pub fn evaluate_run<T: Scalar>(runs: &RunMap<T>, qrels: &Qrels, metric: Metric) -> MetricResult<T> {
    let per_query: BTreeMap<QueryId, T> = runs
        .iter()
        .map(|(q, list)| {
            let v = match metric {
                Metric::Ndcg { k } => ndcg_at_k(list, qrels, k),
                Metric::Map => average_precision(list, qrels),
            };
            (q.clone(), v)
        })
        .collect();
    let mean = if per_query.is_empty() {
        T::zero()
    } else {
        per_query.values().copied().sum::<T>() / T::of_usize(per_query.len())
    };
    MetricResult { per_query, mean }
}

/// `metric TAB qid TAB value` rows plus an `all` row with the mean.
pub fn format_metric_tsv<T: Scalar>(metric: Metric, result: &MetricResult<T>) -> String {
    let mut out = String::new();
    for (q, v) in &result.per_query {
        writeln!(out, "{metric}\t{q}\t{:.6}", v.to_f64_lossy()).expect("writing to String");
    }
    writeln!(out, "{metric}\tall\t{:.6}", result.mean.to_f64_lossy()).expect("writing to String");
    out
}
