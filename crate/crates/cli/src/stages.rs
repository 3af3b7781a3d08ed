//! One function per pipeline stage. Each reads its declared inputs, writes
//! fixed file names into its output directory, then records a manifest.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use anyhow::Context;
use rankdistil::diagnostics::{aggregate, query_diagnostics};
use rankdistil::eval::{evaluate_run, format_metric_tsv, tost};
use rankdistil::io::{self, RunMap};
use rankdistil::lexical::{build_index, read_index_file, write_index_file};
use rankdistil::selection::{build_group, positive_from_qrels, quartile_filter, teacher_entropy, CorpusHandles};
use rankdistil::student::{check_targets, format_loss_trace, rank_docs, train, StudentScorer};
use rankdistil::synth::{generate, SyntheticWorld};
use rankdistil::{DocId, EmbeddingVector, QueryId, TrainingGroup};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::ConfigError;
use crate::manifest::Manifest;

pub const CORPUS_FILE: &str = "corpus.tsv";
pub const QUERIES_FILE: &str = "queries.tsv";
pub const EMBEDDINGS_FILE: &str = "embeddings.tsv";
pub const QRELS_FILE: &str = "qrels.tsv";
pub const INDEX_FILE: &str = "index.txt";
pub const GROUPS_FILE: &str = "groups.jsonl";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.tsv";
pub const MODEL_FILE: &str = "model.bin";
pub const LOSS_TRACE_FILE: &str = "loss_trace.tsv";
pub const RUN_FILE: &str = "run.tsv";
pub const METRICS_FILE: &str = "metrics.tsv";
pub const TOST_FILE: &str = "tost.tsv";

type Embeddings = BTreeMap<String, EmbeddingVector<f64>>;

/// Bookkeeping shared by every stage: output directory plus manifest.
struct Stage {
    dir: PathBuf,
    manifest: Manifest,
}

impl Stage {
    fn begin(name: &str, dir: &Path, config: &RunConfig) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: Manifest::new(name, config.hash(), config.world_hash()),
        })
    }

    fn input(&mut self, name: &str, path: &Path) -> anyhow::Result<()> {
        self.manifest.add_input(&self.dir, name, path)
    }

    fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    fn write_text(&self, file: &str, text: &str) -> anyhow::Result<()> {
        let p = self.path(file);
        std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
    }

    fn finish(mut self, outputs: &[&str]) -> anyhow::Result<()> {
        for f in outputs {
            self.manifest.add_output(&self.dir, f)?;
        }
        self.manifest.write(&self.dir)
    }
}

fn world(config: &RunConfig) -> anyhow::Result<SyntheticWorld> {
    generate(&config.world).context("generating synthetic world")
}

pub fn synth_gen(config: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let stage = Stage::begin("synth-gen", out, config)?;
    let w = world(config)?;
    io::write_text_tsv(w.corpus(), stage.path(CORPUS_FILE))?;
    io::write_text_tsv(w.queries(), stage.path(QUERIES_FILE))?;
    let mut emb = io::format_embeddings(w.doc_embeddings());
    emb.push_str(&io::format_embeddings(w.query_embeddings()));
    stage.write_text(EMBEDDINGS_FILE, &emb)?;
    io::write_qrels_file(&w.qrels(), stage.path(QRELS_FILE))?;
    stage.finish(&[CORPUS_FILE, QUERIES_FILE, EMBEDDINGS_FILE, QRELS_FILE])
}

pub fn index(config: &RunConfig, corpus: &Path, out: &Path) -> anyhow::Result<()> {
    let mut stage = Stage::begin("index", out, config)?;
    stage.input("corpus", corpus)?;
    let docs = io::read_corpus_tsv(corpus)?;
    let idx = build_index(docs.iter().map(|(d, t)| (d.clone(), t.as_str())))?;
    write_index_file(&idx, stage.path(INDEX_FILE))?;
    stage.finish(&[INDEX_FILE])
}

pub struct MineInputs<'p> {
    pub index: &'p Path,
    pub queries: &'p Path,
    pub qrels: &'p Path,
    pub embeddings: Option<&'p Path>,
}

pub fn mine(config: &RunConfig, inputs: &MineInputs<'_>, out: &Path) -> anyhow::Result<()> {
    let mut stage = Stage::begin("mine", out, config)?;
    stage.input("index", inputs.index)?;
    stage.input("queries", inputs.queries)?;
    stage.input("qrels", inputs.qrels)?;
    let embeddings: Option<Embeddings> = match inputs.embeddings {
        Some(p) => {
            stage.input("embeddings", p)?;
            Some(io::read_embeddings_tsv(p)?)
        }
        None => None,
    };
    let idx = read_index_file(inputs.index)?;
    let queries = io::read_queries_tsv(inputs.queries)?;
    let qrels = io::parse_qrels_file(inputs.qrels)?;
    // The teacher is a function of the world section of the config.
    let teacher = world(config)?;

    let jobs: Vec<(&QueryId, &str, DocId)> = queries
        .iter()
        .filter_map(|(q, text)| positive_from_qrels(&qrels, q).map(|p| (q, text.as_str(), p)))
        .collect();
    let skipped = queries.len() - jobs.len();
    if skipped > 0 {
        eprintln!("mine: skipped {skipped} queries without a judged positive");
    }
    let groups: Vec<TrainingGroup<f64>> = jobs
        .par_iter()
        .map(|(q, text, positive)| {
            let handles = CorpusHandles {
                doc_ids: idx.doc_ids(),
                index: Some(&idx),
                bm25: config.bm25,
                teacher: Some(&teacher),
                embeddings: embeddings.as_ref().map(|e| e as _),
            };
            build_group(&config.sampler, (q, text), positive, &handles)
        })
        .collect::<rankdistil::Result<_>>()?;
    io::write_groups_jsonl(&groups, stage.path(GROUPS_FILE))?;
    stage.finish(&[GROUPS_FILE])
}

pub fn label(config: &RunConfig, groups_path: &Path, out: &Path) -> anyhow::Result<()> {
    let mut stage = Stage::begin("label", out, config)?;
    stage.input("groups", groups_path)?;
    let mut groups: Vec<TrainingGroup<f64>> = io::parse_groups_jsonl(groups_path)?;
    let teacher = world(config)?;
    groups
        .par_iter_mut()
        .try_for_each(|g| rankdistil::selection::label_groups(std::slice::from_mut(g), &teacher))?;
    io::write_groups_jsonl(&groups, stage.path(GROUPS_FILE))?;
    stage.finish(&[GROUPS_FILE])
}

pub fn select(config: &RunConfig, groups_path: &Path, out: &Path) -> anyhow::Result<()> {
    let mut stage = Stage::begin("select", out, config)?;
    stage.input("groups", groups_path)?;
    let groups: Vec<TrainingGroup<f64>> = io::parse_groups_jsonl(groups_path)?;
    let kept = quartile_filter(&groups, config.band, teacher_entropy(config.select_tau))?;
    eprintln!("select: kept {} of {} groups in band {}", kept.len(), groups.len(), config.band);
    io::write_groups_jsonl(&kept, stage.path(GROUPS_FILE))?;
    stage.finish(&[GROUPS_FILE])
}

pub fn diagnose(config: &RunConfig, groups_path: &Path, embeddings: &Path, out: &Path) -> anyhow::Result<()> {
    let mut stage = Stage::begin("diagnose", out, config)?;
    stage.input("groups", groups_path)?;
    stage.input("embeddings", embeddings)?;
    let groups: Vec<TrainingGroup<f64>> = io::parse_groups_jsonl(groups_path)?;
    let emb: Embeddings = io::read_embeddings_tsv(embeddings)?;
    let rows = groups
        .par_iter()
        .map(|g| Ok((g.query_id.clone(), query_diagnostics(g, &emb, &config.diagnose)?)))
        .collect::<rankdistil::Result<Vec<_>>>()?;
    let mut per_query = BTreeMap::new();
    for (q, d) in rows {
        if per_query.insert(q.clone(), d).is_some() {
            return Err(ConfigError(format!("query {q} appears in more than one group")).into());
        }
    }
    let report = aggregate(per_query)?;
    stage.write_text(DIAGNOSTICS_FILE, &report.to_tsv())?;
    print!("{report}");
    stage.finish(&[DIAGNOSTICS_FILE])
}

pub fn train_stage(config: &RunConfig, groups_path: &Path, embeddings: &Path, out: &Path) -> anyhow::Result<()> {
    let groups: Vec<TrainingGroup<f64>> = io::parse_groups_jsonl(groups_path)?;
    // Incompatible loss/targets is a configuration problem: refuse before any work.
    for g in &groups {
        check_targets(config.train.loss, g)
            .map_err(|e| ConfigError(format!("train.loss={}: {e}", config.train.loss)))?;
    }
    let mut stage = Stage::begin("train", out, config)?;
    stage.input("groups", groups_path)?;
    stage.input("embeddings", embeddings)?;
    let emb: Embeddings = io::read_embeddings_tsv(embeddings)?;
    let dim = emb
        .values()
        .next()
        .map(EmbeddingVector::dim)
        .ok_or_else(|| ConfigError(format!("{} holds no vectors", embeddings.display())))?;
    let model = StudentScorer::<f64>::new(config.student_kind, dim, config.student_hidden, config.student_seed)?;
    let trained = train(model, &groups, &emb, &config.train)?;
    trained.model.save(stage.path(MODEL_FILE))?;
    stage.write_text(LOSS_TRACE_FILE, &format_loss_trace(&trained.trace))?;
    stage.finish(&[MODEL_FILE, LOSS_TRACE_FILE])
}

pub enum Candidates<'p> {
    Corpus(&'p Path),
    Run(&'p Path),
}

pub fn score(
    config: &RunConfig,
    model_path: &Path,
    embeddings: &Path,
    queries: &Path,
    candidates: Candidates<'_>,
    out: &Path,
) -> anyhow::Result<()> {
    let mut stage = Stage::begin("score", out, config)?;
    stage.input("model", model_path)?;
    stage.input("embeddings", embeddings)?;
    stage.input("queries", queries)?;
    let model = StudentScorer::<f64>::load(model_path)?;
    let emb: Embeddings = io::read_embeddings_tsv(embeddings)?;
    let queries = io::read_queries_tsv(queries)?;
    let pools: Vec<(QueryId, Vec<DocId>)> = match candidates {
        Candidates::Corpus(p) => {
            stage.input("corpus", p)?;
            let docs: Vec<DocId> = io::read_corpus_tsv(p)?.into_iter().map(|(d, _)| d).collect();
            queries.iter().map(|(q, _)| (q.clone(), docs.clone())).collect()
        }
        Candidates::Run(p) => {
            stage.input("candidates", p)?;
            let run = io::parse_run_file(p)?;
            queries
                .iter()
                .filter_map(|(q, _)| run.get(q).map(|l| (q.clone(), l.doc_ids().cloned().collect())))
                .collect()
        }
    };
    let lists = pools
        .par_iter()
        .map(|(q, docs)| rank_docs(&model, q, docs, &emb, config.depth))
        .collect::<rankdistil::Result<Vec<_>>>()?;
    let run: RunMap = lists.into_iter().map(|l| (l.query_id().clone(), l)).collect();
    io::write_run_file(&run, &config.run_tag, stage.path(RUN_FILE))?;
    stage.finish(&[RUN_FILE])
}

pub fn evaluate(config: &RunConfig, run_path: &Path, qrels_path: &Path, out: &Path) -> anyhow::Result<()> {
    let mut stage = Stage::begin("evaluate", out, config)?;
    stage.input("run", run_path)?;
    stage.input("qrels", qrels_path)?;
    let run = io::parse_run_file(run_path)?;
    let qrels = io::parse_qrels_file(qrels_path)?;
    let mut text = String::new();
    for &m in &config.metrics {
        text.push_str(&format_metric_tsv(m, &evaluate_run(&run, &qrels, m)));
    }
    stage.write_text(METRICS_FILE, &text)?;
    print!("{text}");
    stage.finish(&[METRICS_FILE])
}

/// Per-query values keyed by metric name, from a metrics TSV.
pub fn parse_metrics_tsv(text: &str, source: &str) -> anyhow::Result<BTreeMap<String, BTreeMap<String, f64>>> {
    let mut out: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || rankdistil::Error::Parse {
            path: source.into(),
            line: i + 1,
            msg: "expected metric<TAB>qid<TAB>value".into(),
        };
        if f.len() != 3 {
            return Err(bad().into());
        }
        let v: f64 = f[2].parse().map_err(|_| bad())?;
        out.entry(f[0].into()).or_default().insert(f[1].into(), v);
    }
    Ok(out)
}

pub const TOST_HEADER: &str = "metric\tn\tmean_a\tmean_b\ttheta\tp_lower\tp_upper\talpha\tequivalent\n";

pub fn tost_stage(config: &RunConfig, a: &Path, b: &Path, out: &Path) -> anyhow::Result<()> {
    let mut stage = Stage::begin("tost", out, config)?;
    stage.input("a", a)?;
    stage.input("b", b)?;
    let read = |p: &Path| -> anyhow::Result<_> {
        let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        parse_metrics_tsv(&text, &p.display().to_string())
    };
    let (ma, mb) = (read(a)?, read(b)?);
    let mut text = String::from(TOST_HEADER);
    for (metric, va) in &ma {
        let Some(vb) = mb.get(metric) else { continue };
        let qa: HashSet<&String> = va.keys().filter(|q| *q != "all").collect();
        let qb: HashSet<&String> = vb.keys().filter(|q| *q != "all").collect();
        if qa != qb {
            return Err(ConfigError(format!("{metric}: the two runs cover different queries")).into());
        }
        let keys: Vec<&String> = va.keys().filter(|q| *q != "all").collect();
        let xa: Vec<f64> = keys.iter().map(|q| va[*q]).collect();
        let xb: Vec<f64> = keys.iter().map(|q| vb[*q]).collect();
        let r = tost(&xa, &xb, config.tost_alpha, config.tost_epsilon)?;
        text.push_str(&format!(
            "{metric}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6e}\t{:.6e}\t{}\t{}\n",
            keys.len(),
            r.mu1,
            r.mu2,
            r.theta,
            r.p_lower,
            r.p_upper,
            r.alpha,
            r.equivalent
        ));
    }
    stage.write_text(TOST_FILE, &text)?;
    print!("{text}");
    stage.finish(&[TOST_FILE])
}

