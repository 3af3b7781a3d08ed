use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::process::{Command, Output};

use rankdistil::io::{format_run, parse_groups_jsonl, read_queries_tsv, RunMap};
use rankdistil::lexical::{bm25_topk, read_index_file, Bm25Params};
use rankdistil::selection::Teacher;
use rankdistil::synth::{generate, WorldConfig};
use rankdistil::{DocId, QueryId, TrainingGroup};

fn cli(dir: &Path, args: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rankdistil"))
        .current_dir(dir)
        .args(args.split_whitespace())
        .output()
        .expect("spawn rankdistil")
}

fn ok(dir: &Path, args: &str) -> Output {
    let out = cli(dir, args);
    assert!(
        out.status.success(),
        "`{args}` failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Small world so each test runs in well under a second.
const SMALL: &str = "--set world.n_docs=120 --set world.n_queries=20 --set world.n_topics=4";

fn small_config() -> WorldConfig {
    WorldConfig {
        n_docs: 120,
        n_queries: 20,
        n_topics: 4,
        ..WorldConfig::default()
    }
}

fn prepare(dir: &Path) {
    ok(dir, &format!("synth-gen {SMALL} --out world"));
    ok(dir, &format!("index {SMALL} --corpus world/corpus.tsv --out index"));
}

fn mine(dir: &Path, extra: &str, out: &str) {
    ok(
        dir,
        &format!(
            "mine {SMALL} {extra} --index index/index.txt --queries world/queries.tsv --qrels world/qrels.tsv --out {out}"
        ),
    );
}

fn groups(path: &Path) -> Vec<TrainingGroup<f64>> {
    parse_groups_jsonl(path).unwrap()
}

#[test]
fn synth_gen_writes_four_files_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), "synth-gen --out a");
    ok(tmp.path(), "synth-gen --out b");
    for f in ["corpus.tsv", "queries.tsv", "embeddings.tsv", "qrels.tsv", "manifest.tsv"] {
        let a = std::fs::read(tmp.path().join("a").join(f)).unwrap();
        let b = std::fs::read(tmp.path().join("b").join(f)).unwrap();
        assert!(!a.is_empty(), "{f} is empty");
        assert_eq!(a, b, "{f} differs between runs");
    }
    ok(tmp.path(), "synth-gen --set world.seed=8 --out c");
    assert_ne!(
        std::fs::read(tmp.path().join("a/corpus.tsv")).unwrap(),
        std::fs::read(tmp.path().join("c/corpus.tsv")).unwrap()
    );
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cli(tmp.path(), "synth-gen --set world.n_docs=0 --out w");
    assert_eq!(code(&out), 2);
    assert!(!tmp.path().join("w").exists());
    assert_eq!(code(&cli(tmp.path(), "synth-gen --set world.bogus=1 --out w")), 2);
    assert_eq!(code(&cli(tmp.path(), "synth-gen --set train.loss=listnet --out w")), 2);
    std::fs::write(tmp.path().join("run.conf"), "world.seed=1\nworld.seed=2\n").unwrap();
    assert_eq!(code(&cli(tmp.path(), "synth-gen --config run.conf --out w")), 2);
    assert_eq!(code(&cli(tmp.path(), "synth-gen --threads 0 --out w")), 2);
}

#[test]
fn config_file_is_honoured() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("run.conf"),
        "# small world\nworld.n_docs = 50\nworld.n_queries = 5\n",
    )
    .unwrap();
    ok(tmp.path(), "synth-gen --config run.conf --out w");
    let corpus = std::fs::read_to_string(tmp.path().join("w/corpus.tsv")).unwrap();
    assert_eq!(corpus.lines().count(), 50);
}

#[test]
fn missing_input_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&cli(tmp.path(), "index --corpus nope.tsv --out i")), 1);
}

#[test]
fn random_mining_gives_sixteen_documents() {
    let tmp = tempfile::tempdir().unwrap();
    prepare(tmp.path());
    mine(tmp.path(), "--set sampler.kind=random --set sampler.k=15", "m");
    let gs = groups(&tmp.path().join("m/groups.jsonl"));
    assert!(!gs.is_empty());
    for g in &gs {
        assert_eq!(g.len(), 16);
        assert_eq!(g.positive_index, Some(0));
        assert_eq!(g.doc_ids.iter().collect::<BTreeSet<_>>().len(), 16);
    }
}

#[test]
fn ensemble_negatives_come_from_constituent_pools() {
    let tmp = tempfile::tempdir().unwrap();
    prepare(tmp.path());
    let pool = "--set sampler.pool_depth=30 --set sampler.seed=3";
    mine(tmp.path(), &format!("{pool} --set sampler.k=10 --set sampler.kind=ensemble --set sampler.constituents=random,bm25"), "ens");
    // A random sampler drawing pool_depth documents reproduces the random pool.
    mine(tmp.path(), &format!("{pool} --set sampler.k=30 --set sampler.kind=random"), "random");
    let random: BTreeMap<QueryId, TrainingGroup<f64>> = groups(&tmp.path().join("random/groups.jsonl"))
        .into_iter()
        .map(|g| (g.query_id.clone(), g))
        .collect();
    let index = read_index_file(tmp.path().join("index/index.txt")).unwrap();
    let queries: BTreeMap<QueryId, String> = read_queries_tsv(tmp.path().join("world/queries.tsv"))
        .unwrap()
        .into_iter()
        .collect();
    for g in groups(&tmp.path().join("ens/groups.jsonl")) {
        let positive = g.doc_ids[0].clone();
        let bm25 = bm25_topk(
            &index,
            &Bm25Params::default(),
            &g.query_id,
            &queries[&g.query_id],
            30,
            &HashSet::from([positive]),
        );
        let bm25: BTreeSet<&DocId> = bm25.doc_ids().collect();
        let random: BTreeSet<&DocId> = random[&g.query_id].doc_ids[1..].iter().collect();
        for d in &g.doc_ids[1..] {
            assert!(bm25.contains(d) || random.contains(d), "{}: {d} in no pool", g.query_id);
        }
    }
}

#[test]
fn label_matches_teacher_and_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    prepare(tmp.path());
    mine(tmp.path(), "", "m");
    ok(tmp.path(), &format!("label {SMALL} --groups m/groups.jsonl --out l1"));
    ok(tmp.path(), &format!("label {SMALL} --groups l1/groups.jsonl --out l2"));
    let l1 = std::fs::read(tmp.path().join("l1/groups.jsonl")).unwrap();
    let l2 = std::fs::read(tmp.path().join("l2/groups.jsonl")).unwrap();
    assert_eq!(l1, l2);

    let world = generate(&small_config()).unwrap();
    let gs = groups(&tmp.path().join("l1/groups.jsonl"));
    let mut checked = 0;
    for g in &gs {
        let scores = g.teacher_scores.as_ref().expect("teacher scores");
        assert_eq!(scores.len(), g.len());
        if checked < 10 {
            let j = checked % g.len();
            let direct = world.score(&g.query_id, &g.doc_ids[j]).unwrap();
            assert!((scores[j] - direct).abs() <= 1e-12 * direct.abs().max(1.0));
            checked += 1;
        }
    }
    assert_eq!(checked, 10);
}

#[test]
fn select_bands_partition_the_groups() {
    let tmp = tempfile::tempdir().unwrap();
    prepare(tmp.path());
    mine(tmp.path(), "", "m");
    ok(tmp.path(), &format!("label {SMALL} --groups m/groups.jsonl --out l"));
    ok(tmp.path(), &format!("select {SMALL} --set select.band=inner --groups l/groups.jsonl --out inner"));
    ok(tmp.path(), &format!("select {SMALL} --set select.band=outlier --groups l/groups.jsonl --out outlier"));
    let ids = |dir: &str| -> BTreeSet<String> {
        groups(&tmp.path().join(dir).join("groups.jsonl"))
            .iter()
            .map(|g| g.query_id.as_str().to_string())
            .collect()
    };
    let (all, inner, outlier) = (ids("l"), ids("inner"), ids("outlier"));
    assert!(inner.is_disjoint(&outlier));
    assert_eq!(inner.union(&outlier).cloned().collect::<BTreeSet<_>>(), all);
    assert!(!inner.is_empty() && !outlier.is_empty());
}

#[test]
fn train_refuses_incompatible_targets_before_work() {
    let tmp = tempfile::tempdir().unwrap();
    prepare(tmp.path());
    mine(tmp.path(), "", "m");
    let out = cli(
        tmp.path(),
        &format!("train {SMALL} --groups m/groups.jsonl --embeddings world/embeddings.tsv --out t"),
    );
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("teacher"));
    assert!(!tmp.path().join("t").exists());
    // lce needs only the positive, which unlabelled groups have.
    ok(
        tmp.path(),
        &format!("train {SMALL} --set train.loss=lce --set train.steps=20 --groups m/groups.jsonl --embeddings world/embeddings.tsv --out t"),
    );
    let trace = std::fs::read_to_string(tmp.path().join("t/loss_trace.tsv")).unwrap();
    assert_eq!(trace.lines().count(), 20);
}

#[test]
fn oracle_run_scores_perfect_ndcg() {
    let tmp = tempfile::tempdir().unwrap();
    prepare(tmp.path());
    let world = generate(&small_config()).unwrap();
    let runs: RunMap = world
        .query_ids()
        .iter()
        .map(|q| (q.clone(), world.oracle_ranking(q, 100).unwrap()))
        .collect();
    std::fs::write(tmp.path().join("oracle.run"), format_run(&runs, "oracle").unwrap()).unwrap();
    ok(tmp.path(), &format!("evaluate {SMALL} --run oracle.run --qrels world/qrels.tsv --out ev"));
    let metrics = std::fs::read_to_string(tmp.path().join("ev/metrics.tsv")).unwrap();
    let all: Vec<&str> = metrics.lines().filter(|l| l.contains("\tall\t")).collect();
    assert!(all.iter().any(|l| l.starts_with("ndcg") && l.ends_with("\t1.000000")), "{all:?}");
}

fn full_pipeline(dir: &Path) {
    prepare(dir);
    mine(dir, "", "m");
    ok(dir, &format!("label {SMALL} --groups m/groups.jsonl --out l"));
    ok(dir, &format!("diagnose {SMALL} --groups l/groups.jsonl --embeddings world/embeddings.tsv --out d"));
    ok(
        dir,
        &format!("train {SMALL} --set train.steps=50 --groups l/groups.jsonl --embeddings world/embeddings.tsv --out t"),
    );
    ok(
        dir,
        &format!("score {SMALL} --model t/model.bin --embeddings world/embeddings.tsv --queries world/queries.tsv --corpus world/corpus.tsv --out s"),
    );
    ok(dir, &format!("evaluate {SMALL} --run s/run.tsv --qrels world/qrels.tsv --out e"));
    ok(dir, &format!("tost {SMALL} --a e/metrics.tsv --b e/metrics.tsv --out x"));
}

#[test]
fn report_summarises_every_stage() {
    let tmp = tempfile::tempdir().unwrap();
    full_pipeline(tmp.path());
    let out = ok(tmp.path(), "report --dir .");
    let table = String::from_utf8_lossy(&out.stdout);
    for section in ["[diagnostics]", "[metrics]", "[powerlaw]", "[tost]", "[training]"] {
        assert!(table.contains(section), "missing {section} in\n{table}");
    }
    let tsv = std::fs::read_to_string(tmp.path().join("report.tsv")).unwrap();
    assert!(tsv.starts_with("section\tsource\tfield\tvalue\n"));
    assert!(tsv.contains("diagnostics\td\tentropy_p95\t"));
    assert!(tsv.contains("training\tt\tsteps\t50"));
}

#[test]
fn report_refuses_tampered_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    full_pipeline(tmp.path());
    let metrics = tmp.path().join("e/metrics.tsv");
    let mut text = std::fs::read_to_string(&metrics).unwrap();
    text.push_str("map\textra\t1.0\n");
    std::fs::write(&metrics, text).unwrap();
    let out = cli(tmp.path(), "report --dir .");
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("modified"));
}

#[test]
fn report_refuses_mixed_worlds() {
    let tmp = tempfile::tempdir().unwrap();
    full_pipeline(tmp.path());
    ok(tmp.path(), &format!("synth-gen {SMALL} --set world.seed=99 --out other-world"));
    let out = cli(tmp.path(), "report --dir .");
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("different synthetic world"));
}

#[test]
fn report_refuses_stale_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("results");
    std::fs::create_dir_all(&root).unwrap();
    prepare(tmp.path());
    let world = generate(&small_config()).unwrap();
    let runs: RunMap = world
        .query_ids()
        .iter()
        .map(|q| (q.clone(), world.oracle_ranking(q, 20).unwrap()))
        .collect();
    std::fs::write(tmp.path().join("oracle.run"), format_run(&runs, "oracle").unwrap()).unwrap();
    ok(tmp.path(), &format!("evaluate {SMALL} --run oracle.run --qrels world/qrels.tsv --out results/ev"));
    ok(tmp.path(), "report --dir results");
    // Regenerating the run with a different depth after evaluation leaves
    // the recorded checksum stale.
    let shorter: RunMap = world
        .query_ids()
        .iter()
        .map(|q| (q.clone(), world.oracle_ranking(q, 10).unwrap()))
        .collect();
    std::fs::write(tmp.path().join("oracle.run"), format_run(&shorter, "oracle").unwrap()).unwrap();
    let out = cli(tmp.path(), "report --dir results");
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("changed since"));
}

#[test]
fn manifests_record_relative_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    prepare(tmp.path());
    let manifest = std::fs::read_to_string(tmp.path().join("index/manifest.tsv")).unwrap();
    let lines: Vec<&str> = manifest.lines().collect();
    assert_eq!(lines[0], "stage\tindex");
    assert!(lines[1].starts_with("config\t") && lines[1].len() == 7 + 64);
    assert!(lines[2].starts_with("world\t"));
    assert!(lines[3].starts_with("input\tcorpus\t../world/corpus.tsv\t"));
    assert!(lines[4].starts_with("output\tindex.txt\t"));
}

#[test]
fn help_lists_every_subcommand() {
    let tmp = tempfile::tempdir().unwrap();
    let out = ok(tmp.path(), "--help");
    let help = String::from_utf8_lossy(&out.stdout);
    for cmd in [
        "synth-gen", "index", "mine", "label", "select", "diagnose", "train", "score", "evaluate", "tost", "report",
    ] {
        assert!(help.contains(cmd), "--help lacks {cmd}");
    }
}
