//! Plain-text file formats: TREC run files, JSONL training groups, qrels,
//! corpus / query TSV and embedding TSV.
//!
//! Writers are byte-deterministic for a given input.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::types::{DocId, EmbeddingVector, QueryId, Qrels, ScoredList, TrainingGroup};
use crate::{Error, Result, Scalar};

pub type RunMap<T = f64> = BTreeMap<QueryId, ScoredList<T>>;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn parse_err(source: &str, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: source.to_string(),
        line,
        msg: msg.into(),
    }
}

// ---------------------------------------------------------------------------
// Run files
// ---------------------------------------------------------------------------

/// Parses TREC run text. The rank column is ignored; lists are re-sorted by
/// score descending, then document id ascending.
pub fn parse_run_str(text: &str, source: &str) -> Result<RunMap> {
    let mut grouped: BTreeMap<QueryId, Vec<(DocId, f64)>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 6 {
            return Err(parse_err(
                source,
                lineno,
                format!("expected 6 columns, found {}", cols.len()),
            ));
        }
        if cols[1] != "Q0" {
            return Err(parse_err(source, lineno, format!("expected literal Q0, found {:?}", cols[1])));
        }
        let score: f64 = cols[4]
            .parse()
            .map_err(|_| parse_err(source, lineno, format!("non-numeric score {:?}", cols[4])))?;
        if !score.is_finite() {
            return Err(parse_err(source, lineno, "non-finite score"));
        }
        let qid = QueryId::new(cols[0]).map_err(|e| parse_err(source, lineno, e.to_string()))?;
        let doc = DocId::new(cols[2]).map_err(|e| parse_err(source, lineno, e.to_string()))?;
        grouped.entry(qid).or_default().push((doc, score));
    }
    grouped
        .into_iter()
        .map(|(q, entries)| {
            let list = ScoredList::new(q.clone(), entries)
                .map_err(|e| parse_err(source, 0, e.to_string()))?;
            Ok((q, list))
        })
        .collect()
}

pub fn parse_run_file(path: impl AsRef<Path>) -> Result<RunMap> {
    let path = path.as_ref();
    parse_run_str(&read(path)?, &path.display().to_string())
}

/// Renders run lines: queries in lexicographic order, scores at 6 decimals.
pub fn format_run<T: Scalar>(lists: &RunMap<T>, tag: &str) -> Result<String> {
    if tag.is_empty() || tag.chars().any(char::is_whitespace) {
        return Err(Error::Invalid(format!("run tag {tag:?} must be a single token")));
    }
    let mut out = String::new();
    for (qid, list) in lists {
        for (rank, (doc, score)) in list.entries().iter().enumerate() {
            writeln!(out, "{qid} Q0 {doc} {} {:.6} {tag}", rank + 1, score.to_f64_lossy())
                .expect("writing to String");
        }
    }
    Ok(out)
}

pub fn write_run_file<T: Scalar>(lists: &RunMap<T>, tag: &str, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &format_run(lists, tag)?)
}

// ---------------------------------------------------------------------------
// Training groups (JSONL)
// ---------------------------------------------------------------------------

pub fn parse_groups_str<T: Scalar>(text: &str, source: &str) -> Result<Vec<TrainingGroup<T>>> {
    let mut groups = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let group: TrainingGroup<T> =
            serde_json::from_str(line).map_err(|e| parse_err(source, lineno, e.to_string()))?;
        group.validate().map_err(|msg| Error::Validation {
            path: source.to_string(),
            line: lineno,
            msg,
        })?;
        groups.push(group);
    }
    Ok(groups)
}

pub fn parse_groups_jsonl<T: Scalar>(path: impl AsRef<Path>) -> Result<Vec<TrainingGroup<T>>> {
    let path = path.as_ref();
    parse_groups_str(&read(path)?, &path.display().to_string())
}

pub fn format_groups<T: Scalar>(groups: &[TrainingGroup<T>]) -> String {
    let mut out = String::new();
    for g in groups {
        out.push_str(&serde_json::to_string(g).expect("groups serialize"));
        out.push('\n');
    }
    out
}

pub fn write_groups_jsonl<T: Scalar>(groups: &[TrainingGroup<T>], path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &format_groups(groups))
}

// ---------------------------------------------------------------------------
// Qrels (qid 0 docid grade)
// ---------------------------------------------------------------------------

pub fn parse_qrels_str(text: &str, source: &str) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(parse_err(source, lineno, format!("expected 4 columns, found {}", cols.len())));
        }
        let grade: i64 = cols[3]
            .parse()
            .map_err(|_| parse_err(source, lineno, format!("non-integer grade {:?}", cols[3])))?;
        if grade < 0 {
            return Err(parse_err(source, lineno, "negative grade"));
        }
        let q = QueryId::new(cols[0]).map_err(|e| parse_err(source, lineno, e.to_string()))?;
        let d = DocId::new(cols[2]).map_err(|e| parse_err(source, lineno, e.to_string()))?;
        qrels.insert(q, d, grade as u32);
    }
    Ok(qrels)
}

pub fn parse_qrels_file(path: impl AsRef<Path>) -> Result<Qrels> {
    let path = path.as_ref();
    parse_qrels_str(&read(path)?, &path.display().to_string())
}

pub fn format_qrels(qrels: &Qrels) -> String {
    let mut out = String::new();
    for (q, d, g) in qrels.iter() {
        writeln!(out, "{q}\t0\t{d}\t{g}").expect("writing to String");
    }
    out
}

pub fn write_qrels_file(qrels: &Qrels, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &format_qrels(qrels))
}

// ---------------------------------------------------------------------------
// Two-column text TSV (corpus: docid TAB text, queries: qid TAB text)
// ---------------------------------------------------------------------------

/// Parses `id TAB text` lines, preserving order.
pub fn parse_text_tsv(text: &str, source: &str) -> Result<Vec<(String, String)>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (id, body) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(source, i + 1, "expected id<TAB>text"))?;
        if id.is_empty() || id.chars().any(char::is_whitespace) {
            return Err(parse_err(source, i + 1, format!("invalid id {id:?}")));
        }
        rows.push((id.to_string(), body.to_string()));
    }
    Ok(rows)
}

pub fn read_corpus_tsv(path: impl AsRef<Path>) -> Result<Vec<(DocId, String)>> {
    let path = path.as_ref();
    parse_text_tsv(&read(path)?, &path.display().to_string())?
        .into_iter()
        .map(|(id, text)| Ok((DocId::new(id)?, text)))
        .collect()
}

pub fn read_queries_tsv(path: impl AsRef<Path>) -> Result<Vec<(QueryId, String)>> {
    let path = path.as_ref();
    parse_text_tsv(&read(path)?, &path.display().to_string())?
        .into_iter()
        .map(|(id, text)| Ok((QueryId::new(id)?, text)))
        .collect()
}

pub fn format_text_tsv<'a, I, K>(rows: I) -> String
where
    I: IntoIterator<Item = (&'a K, &'a String)>,
    K: std::fmt::Display + 'a,
{
    let mut out = String::new();
    for (id, text) in rows {
        writeln!(out, "{id}\t{}", text.replace(['\t', '\n'], " ")).expect("writing to String");
    }
    out
}

pub fn write_text_tsv<'a, I, K>(rows: I, path: impl AsRef<Path>) -> Result<()>
where
    I: IntoIterator<Item = (&'a K, &'a String)>,
    K: std::fmt::Display + 'a,
{
    write(path.as_ref(), &format_text_tsv(rows))
}

// ---------------------------------------------------------------------------
// Embeddings (id TAB comma-separated floats)
// ---------------------------------------------------------------------------

pub fn parse_embeddings_str<T: Scalar>(
    text: &str,
    source: &str,
) -> Result<BTreeMap<String, EmbeddingVector<T>>> {
    let mut out = BTreeMap::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| parse_err(source, lineno, "expected id<TAB>values"))?;
        let parsed: std::result::Result<Vec<f64>, _> =
            values.split(',').map(|v| v.trim().parse::<f64>()).collect();
        let parsed = parsed.map_err(|e| parse_err(source, lineno, e.to_string()))?;
        let emb = EmbeddingVector::new(parsed.into_iter().map(T::of).collect())
            .map_err(|e| parse_err(source, lineno, e.to_string()))?;
        match dim {
            None => dim = Some(emb.dim()),
            Some(d) if d != emb.dim() => {
                return Err(parse_err(
                    source,
                    lineno,
                    format!("dimension {} differs from {d}", emb.dim()),
                ))
            }
            _ => {}
        }
        out.insert(id.to_string(), emb);
    }
    Ok(out)
}

pub fn read_embeddings_tsv<T: Scalar>(
    path: impl AsRef<Path>,
) -> Result<BTreeMap<String, EmbeddingVector<T>>> {
    let path = path.as_ref();
    parse_embeddings_str(&read(path)?, &path.display().to_string())
}

pub fn format_embeddings<'a, T, I, K>(rows: I) -> String
where
    T: Scalar,
    I: IntoIterator<Item = (&'a K, &'a EmbeddingVector<T>)>,
    K: std::fmt::Display + 'a,
{
    let mut out = String::new();
    for (id, emb) in rows {
        let vals: Vec<String> = emb.as_slice().iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{id}\t{}", vals.join(",")).expect("writing to String");
    }
    out
}

pub fn write_embeddings_tsv<'a, T, I, K>(rows: I, path: impl AsRef<Path>) -> Result<()>
where
    T: Scalar,
    I: IntoIterator<Item = (&'a K, &'a EmbeddingVector<T>)>,
    K: std::fmt::Display + 'a,
{
    write(path.as_ref(), &format_embeddings(rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_two_line_run() {
        let runs = parse_run_str("q1 Q0 d3 1 2.5 t\nq1 Q0 d7 2 1.0 t", "mem").unwrap();
        let list = &runs[&QueryId::new("q1").unwrap()];
        let got: Vec<(&str, f64)> = list.entries().iter().map(|(d, s)| (d.as_str(), *s)).collect();
        assert_eq!(got, vec![("d3", 2.5), ("d7", 1.0)]);
    }

    #[test]
    fn empty_run_is_empty_map() {
        assert!(parse_run_str("", "mem").unwrap().is_empty());
    }

    #[test]
    fn equal_scores_order_by_doc_id() {
        let runs = parse_run_str("q1 Q0 d2 1 1.0 t\nq1 Q0 d1 2 1.0 t", "mem").unwrap();
        let ids: Vec<_> = runs[&QueryId::new("q1").unwrap()].doc_ids().map(|d| d.as_str().to_string()).collect();
        assert_eq!(ids, ["d1", "d2"]);
    }

    #[test]
    fn rank_column_is_ignored() {
        let runs = parse_run_str("q1 Q0 a 1 0.1 t\nq1 Q0 b 2 0.9 t", "mem").unwrap();
        let first = &runs[&QueryId::new("q1").unwrap()].entries()[0];
        assert_eq!(first.0.as_str(), "b");
    }

    #[test]
    fn malformed_lines_report_line_number() {
        let err = parse_run_str("q1 Q0 d1 1 1.0 t\nq1 Q0 d2 2 1.0", "f.run").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_run_str("q1 Q0 d1 1 abc t", "f.run").unwrap_err();
        assert!(err.to_string().contains("non-numeric"), "{err}");
    }

    #[test]
    fn writes_six_decimal_scores() {
        let q = QueryId::new("q1").unwrap();
        let mut runs = RunMap::new();
        runs.insert(q.clone(), ScoredList::new(q, vec![(DocId::new("d3").unwrap(), 2.5)]).unwrap());
        assert_eq!(format_run(&runs, "tag").unwrap(), "q1 Q0 d3 1 2.500000 tag\n");

        let q = QueryId::new("q1").unwrap();
        let mut runs = RunMap::new();
        runs.insert(q.clone(), ScoredList::new(q, vec![(DocId::new("d").unwrap(), 1.0 / 3.0)]).unwrap());
        assert!(format_run(&runs, "t").unwrap().contains(" 0.333333 "));
    }

    #[test]
    fn group_lines_parse_and_validate() {
        let text = r#"{"query_id":"q1","doc_ids":["a","b"],"teacher_scores":[1.0,0.5]}"#;
        let groups: Vec<TrainingGroup<f64>> = parse_groups_str(text, "g.jsonl").unwrap();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].len(), 2);

        let bad = "{\"query_id\":\"q1\",\"doc_ids\":[\"a\"]}\n{\"query_id\":\"q2\",\"doc_ids\":[\"a\",\"b\"],\"teacher_scores\":[1,2,3]}";
        let err = parse_groups_str::<f64>(bad, "g.jsonl").unwrap_err();
        assert!(matches!(err, Error::Validation { line: 2, .. }), "{err}");

        let missing = r#"{"doc_ids":["a","b"]}"#;
        let err = parse_groups_str::<f64>(missing, "g.jsonl").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn qrels_round_trip() {
        let text = "q1\t0\td1\t2\nq1\t0\td2\t0\nq2\t0\td9\t3\n";
        let qrels = parse_qrels_str(text, "mem").unwrap();
        assert_eq!(qrels.grade(&QueryId::new("q2").unwrap(), &DocId::new("d9").unwrap()), 3);
        assert_eq!(format_qrels(&qrels), text);
        assert!(parse_qrels_str("q1 0 d1 -1", "mem").is_err());
    }

    #[test]
    fn embeddings_require_consistent_dimension() {
        let e = parse_embeddings_str::<f64>("a\t1,0\nb\t0.5,0.5\n", "mem").unwrap();
        assert_eq!(e["b"].as_slice(), &[0.5, 0.5]);
        assert!(parse_embeddings_str::<f64>("a\t1,0\nb\t1,2,3\n", "mem").is_err());
    }
}
