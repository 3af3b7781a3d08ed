//! Seeded experiments on the default synthetic world, shared by the
//! acceptance suite and the `oracle_run` example that produced
//! `tests/data/oracle_runs.tsv`.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rankdistil::diagnostics::{report, Aggregate, ReportConfig};
use rankdistil::eval::{evaluate_run, Metric};
use rankdistil::lexical::{build_index, Bm25Params, InvertedIndex};
use rankdistil::losses::LossKind;
use rankdistil::selection::{
    build_group, label_groups, quartile_filter, teacher_entropy, CorpusHandles, QuartileBand, SamplerKind,
    SamplerSpec,
};
use rankdistil::student::{
    pairwise_agreement, rank_docs, train, FeatureStore, Features, PairCounts, StudentKind, StudentScorer, TrainConfig,
};
use rankdistil::synth::{generate, SyntheticWorld, WorldConfig};
use rankdistil::{DocId, EmbeddingVector, TrainingGroup};

pub const GROUP_NEGATIVES: usize = 15;
pub const POOL_DEPTH: usize = 100;
pub const TRAIN_STEPS: usize = 2000;
pub const PEAK_LR: f64 = 0.01;
pub const HIDDEN: usize = 32;
/// Sampler seed for every mined group set.
pub const SAMPLER_SEED: u64 = 1;
/// Student init and train-order seeds for the distillation runs.
pub const DISTILL_INIT_SEED: u64 = 3;
pub const DISTILL_TRAIN_SEED: u64 = 5;
pub const QUARTILE_SEEDS: std::ops::Range<u64> = 0..5;

pub fn data_path(file: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(file)
}

pub struct Lab {
    pub world: SyntheticWorld,
    pub index: InvertedIndex,
    pub features: FeatureStore<f64>,
    pub doc_emb: BTreeMap<DocId, EmbeddingVector<f64>>,
}

impl Lab {
    pub fn default_world() -> Self {
        let world = generate(&WorldConfig::default()).expect("default world");
        let index = build_index(world.corpus().map(|(d, t)| (d.clone(), t.clone()))).expect("index");
        let features = FeatureStore::from_world(&world);
        let doc_emb = world.doc_embeddings().map(|(d, e)| (d.clone(), e.clone())).collect();
        Self {
            world,
            index,
            features,
            doc_emb,
        }
    }

    /// Every fifth query (by world index) is held out.
    pub fn is_held_out(&self, group: &TrainingGroup<f64>) -> bool {
        self.world.query_index(&group.query_id).expect("world query").is_multiple_of(5)
    }

    /// Labelled groups for every query: oracle positive plus 15 negatives.
    pub fn mine(&self, kind: SamplerKind, seed: u64) -> Vec<TrainingGroup<f64>> {
        let handles = CorpusHandles {
            doc_ids: self.world.doc_ids(),
            index: Some(&self.index),
            bm25: Bm25Params::default(),
            teacher: Some(&self.world),
            embeddings: Some(&self.doc_emb),
        };
        let spec = SamplerSpec {
            kind,
            k: GROUP_NEGATIVES,
            pool_depth: POOL_DEPTH,
            seed,
            ..SamplerSpec::default()
        };
        let mut groups: Vec<TrainingGroup<f64>> = self
            .world
            .queries()
            .map(|(q, text)| {
                let positive = self.world.positive_for(q).expect("positive");
                build_group(&spec, (q, text.as_str()), &positive, &handles).expect("group")
            })
            .collect();
        label_groups(&mut groups, &self.world).expect("labels");
        groups
    }

    pub fn split(&self, groups: &[TrainingGroup<f64>], held_out: bool) -> Vec<TrainingGroup<f64>> {
        groups.iter().filter(|g| self.is_held_out(g) == held_out).cloned().collect()
    }

    fn student_scores(&self, model: &StudentScorer<f64>, g: &TrainingGroup<f64>) -> Vec<f64> {
        let q = self.features.query_features(&g.query_id).expect("query features");
        g.doc_ids
            .iter()
            .map(|d| model.score(q, self.features.doc_features(d).expect("doc features")).expect("score"))
            .collect()
    }
}

/// p95 aggregates of entropy and diameter for one sampler.
pub fn sampler_aggregate(lab: &Lab, kind: SamplerKind) -> Aggregate<f64> {
    let groups = lab.mine(kind, SAMPLER_SEED);
    report(&groups, &lab.doc_emb, &ReportConfig::default()).expect("report").aggregate
}

/// Pairwise agreement with the teacher on held-out random groups for a
/// student distilled with `loss` on the training queries.
pub fn distilled_agreement(lab: &Lab, kind: StudentKind, loss: LossKind) -> f64 {
    let groups = lab.mine(SamplerKind::Random, SAMPLER_SEED);
    let train_groups = lab.split(&groups, false);
    let model = StudentScorer::new(kind, lab.world.config().embed_dim, HIDDEN, DISTILL_INIT_SEED).expect("model");
    let cfg = TrainConfig {
        loss,
        steps: TRAIN_STEPS,
        peak_lr: PEAK_LR,
        seed: DISTILL_TRAIN_SEED,
        ..TrainConfig::default()
    };
    let out = train(model, &train_groups, &lab.features, &cfg).expect("training");
    let mut counts = PairCounts::default();
    for g in lab.split(&groups, true) {
        let s = lab.student_scores(&out.model, &g);
        counts = counts.merge(pairwise_agreement(&s, g.teacher_scores.as_ref().unwrap()).expect("agreement"));
    }
    counts.ratio().expect("pairs")
}

/// Agreement of the noiseless similarity with the noisy teacher on the same
/// held-out groups: the best any student can hope for.
pub fn oracle_ceiling(lab: &Lab) -> f64 {
    let groups = lab.mine(SamplerKind::Random, SAMPLER_SEED);
    let mut counts = PairCounts::default();
    for g in lab.split(&groups, true) {
        let qi = lab.world.query_index(&g.query_id).unwrap();
        let sims: Vec<f64> = g
            .doc_ids
            .iter()
            .map(|d| lab.world.similarity_at(qi, lab.world.doc_index(d).unwrap()))
            .collect();
        counts = counts.merge(pairwise_agreement(&sims, g.teacher_scores.as_ref().unwrap()).unwrap());
    }
    counts.ratio().unwrap()
}

/// Held-out nDCG@10 of a kl-distilled student trained on the `band` of the
/// BM25-mined training groups.
pub fn quartile_ndcg(lab: &Lab, kind: StudentKind, band: QuartileBand, seed: u64) -> f64 {
    let groups = lab.split(&lab.mine(SamplerKind::Bm25, SAMPLER_SEED), false);
    let selected = quartile_filter(&groups, band, teacher_entropy(1.0)).expect("quartile filter");
    let model = StudentScorer::new(kind, lab.world.config().embed_dim, HIDDEN, seed).expect("model");
    let cfg = TrainConfig {
        loss: LossKind::Kl,
        steps: TRAIN_STEPS,
        peak_lr: PEAK_LR,
        seed,
        ..TrainConfig::default()
    };
    let out = train(model, &selected, &lab.features, &cfg).expect("training");
    let runs = lab
        .world
        .query_ids()
        .iter()
        .filter(|q| lab.world.query_index(q).unwrap() % 5 == 0)
        .map(|q| {
            let list = rank_docs(&out.model, q, lab.world.doc_ids(), &lab.features, POOL_DEPTH).expect("ranking");
            (q.clone(), list)
        })
        .collect();
    evaluate_run(&runs, &lab.world.qrels(), Metric::Ndcg { k: 10 }).mean
}

/// `criterion TAB key TAB value` rows; `#` lines are comments.
pub fn read_oracle_runs() -> BTreeMap<(String, String), f64> {
    let path = data_path("oracle_runs.tsv");
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            assert_eq!(f.len(), 3, "bad oracle row {l:?}");
            ((f[0].to_string(), f[1].to_string()), f[2].parse().expect("number"))
        })
        .collect()
}
