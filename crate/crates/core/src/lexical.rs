//! Tokenizer, inverted index and BM25 retrieval.
//!
//! Scores use the non-negative idf `ln(1 + (N - df + 0.5) / (df + 0.5))` and
//! the usual saturation term
//! `tf (k1 + 1) / (tf + k1 (1 - b + b dl / avgdl))`, summed over query token
//! occurrences.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use crate::types::{DocId, QueryId, ScoredList};
use crate::{Error, Result};

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    k1: f64,
    b: f64,
}

impl Bm25Params {
    pub fn new(k1: f64, b: f64) -> Result<Self> {
        if !(k1 >= 0.0 && k1.is_finite()) {
            return Err(Error::Invalid(format!("bm25 k1 must be >= 0, got {k1}")));
        }
        if !(0.0..=1.0).contains(&b) {
            return Err(Error::Invalid(format!("bm25 b must lie in [0, 1], got {b}")));
        }
        Ok(Self { k1, b })
    }

    pub fn k1(&self) -> f64 {
        self.k1
    }

    pub fn b(&self) -> f64 {
        self.b
    }
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone)]
pub struct InvertedIndex {
    /// term -> (internal doc id, term frequency), sorted by internal id.
    postings: HashMap<String, Vec<(u32, u32)>>,
    doc_lengths: Vec<u32>,
    avgdl: f64,
    doc_ids: Vec<DocId>,
    lookup: HashMap<DocId, u32>,
}

impl InvertedIndex {
    /// Number of indexed documents.
    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_length(&self, internal: u32) -> u32 {
        self.doc_lengths[internal as usize]
    }

    pub fn doc_id(&self, internal: u32) -> &DocId {
        &self.doc_ids[internal as usize]
    }

    pub fn doc_ids(&self) -> &[DocId] {
        &self.doc_ids
    }

    pub fn internal_id(&self, doc: &DocId) -> Option<u32> {
        self.lookup.get(doc).copied()
    }

    pub fn postings(&self, term: &str) -> &[(u32, u32)] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    /// BM25 score of every document for `query`, indexed by internal id.
    pub fn score_all(&self, params: &Bm25Params, query: &str) -> Vec<f64> {
        let mut acc = vec![0.0; self.len()];
        for term in tokenize(query) {
            let postings = self.postings(&term);
            if postings.is_empty() {
                continue;
            }
            let idf = self.idf(&term);
            for &(doc, tf) in postings {
                let tf = f64::from(tf);
                let dl = f64::from(self.doc_lengths[doc as usize]);
                let norm = params.k1 * (1.0 - params.b + params.b * dl / self.avgdl);
                acc[doc as usize] += idf * tf * (params.k1 + 1.0) / (tf + norm);
            }
        }
        acc
    }
}

/// Builds an index over `(id, text)` pairs. Internal ids follow input order.
pub fn build_index<I, S>(corpus: I) -> Result<InvertedIndex>
where
    I: IntoIterator<Item = (DocId, S)>,
    S: AsRef<str>,
{
    let mut postings: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
    let mut doc_lengths = Vec::new();
    let mut doc_ids = Vec::new();
    let mut lookup = HashMap::new();
    for (doc, text) in corpus {
        let internal = u32::try_from(doc_ids.len())
            .map_err(|_| Error::Invalid("corpus exceeds u32 documents".into()))?;
        if lookup.insert(doc.clone(), internal).is_some() {
            return Err(Error::Invalid(format!("duplicate document id {doc}")));
        }
        let tokens = tokenize(text.as_ref());
        doc_lengths.push(tokens.len() as u32);
        let mut tf: HashMap<String, u32> = HashMap::new();
        for t in tokens {
            *tf.entry(t).or_default() += 1;
        }
        for (term, count) in tf {
            postings.entry(term).or_default().push((internal, count));
        }
        doc_ids.push(doc);
    }
    if doc_ids.is_empty() {
        return Err(Error::Invalid("cannot index an empty corpus".into()));
    }
    let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
    // An all-empty corpus has no postings, so avgdl is never divided by.
    let avgdl = (total as f64 / doc_ids.len() as f64).max(f64::MIN_POSITIVE);
    Ok(InvertedIndex {
        postings,
        doc_lengths,
        avgdl,
        doc_ids,
        lookup,
    })
}

const INDEX_HEADER: &str = "#bm25-index v1";

/// Serializes an index as text: a header, one `doc` line per document in
/// internal order, then one `term` line per term in lexicographic order.
pub fn format_index(index: &InvertedIndex) -> String {
    let mut out = String::new();
    out.push_str(INDEX_HEADER);
    out.push('\n');
    for (doc, len) in index.doc_ids.iter().zip(&index.doc_lengths) {
        let _ = writeln!(out, "doc\t{doc}\t{len}");
    }
    let mut terms: Vec<&String> = index.postings.keys().collect();
    terms.sort();
    for term in terms {
        let _ = write!(out, "term\t{term}\t");
        for (i, (doc, tf)) in index.postings[term].iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{doc}:{tf}");
        }
        out.push('\n');
    }
    out
}

/// Parses the output of [`format_index`].
pub fn parse_index_str(text: &str, source: &str) -> Result<InvertedIndex> {
    let err = |line: usize, msg: String| Error::Parse {
        path: source.to_string(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, INDEX_HEADER)) => {}
        _ => return Err(err(1, format!("expected header {INDEX_HEADER:?}"))),
    }
    let mut doc_ids = Vec::new();
    let mut doc_lengths = Vec::new();
    let mut lookup = HashMap::new();
    let mut postings = HashMap::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let cols: Vec<&str> = line.split('\t').collect();
        match cols.as_slice() {
            ["doc", id, len] => {
                if !postings.is_empty() {
                    return Err(err(lineno, "doc line after term lines".into()));
                }
                let doc = DocId::new(*id).map_err(|e| err(lineno, e.to_string()))?;
                let len: u32 = len.parse().map_err(|_| err(lineno, format!("bad length {len:?}")))?;
                if lookup.insert(doc.clone(), doc_ids.len() as u32).is_some() {
                    return Err(err(lineno, format!("duplicate document id {doc}")));
                }
                doc_ids.push(doc);
                doc_lengths.push(len);
            }
            ["term", term, list] => {
                let mut entries = Vec::new();
                for item in list.split(' ') {
                    let (doc, tf) = item
                        .split_once(':')
                        .and_then(|(d, t)| Some((d.parse::<u32>().ok()?, t.parse::<u32>().ok()?)))
                        .ok_or_else(|| err(lineno, format!("bad posting {item:?}")))?;
                    if doc as usize >= doc_ids.len() || tf == 0 {
                        return Err(err(lineno, format!("posting {item:?} out of range")));
                    }
                    entries.push((doc, tf));
                }
                if postings.insert(term.to_string(), entries).is_some() {
                    return Err(err(lineno, format!("duplicate term {term:?}")));
                }
            }
            _ => return Err(err(lineno, "expected a doc or term line".into())),
        }
    }
    if doc_ids.is_empty() {
        return Err(err(1, "index has no documents".into()));
    }
    let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
    let avgdl = (total as f64 / doc_ids.len() as f64).max(f64::MIN_POSITIVE);
    Ok(InvertedIndex {
        postings,
        doc_lengths,
        avgdl,
        doc_ids,
        lookup,
    })
}

pub fn write_index_file(index: &InvertedIndex, path: impl AsRef<std::path::Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, format_index(index)).map_err(|e| Error::io(path, e))
}

pub fn read_index_file(path: impl AsRef<std::path::Path>) -> Result<InvertedIndex> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_index_str(&text, &path.display().to_string())
}

/// Top-`k` documents for `query`, skipping `exclude`. Documents matching no
/// query term are never returned.
pub fn bm25_topk(
    index: &InvertedIndex,
    params: &Bm25Params,
    query_id: &QueryId,
    query: &str,
    k: usize,
    exclude: &HashSet<DocId>,
) -> ScoredList<f64> {
    let scores = index.score_all(params, query);
    let mut hits: Vec<(DocId, f64)> = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > 0.0)
        .map(|(i, &s)| (index.doc_ids[i].clone(), s))
        .filter(|(d, _)| !exclude.contains(d))
        .collect();
    hits.sort_by(|a, b| crate::types::rank_order((&a.0, a.1), (&b.0, b.1)));
    hits.truncate(k);
    ScoredList::new(query_id.clone(), hits).expect("index ids are unique and scores finite")
}
