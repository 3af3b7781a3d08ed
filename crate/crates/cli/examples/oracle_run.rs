//! Regenerates `tests/data/oracle_runs.tsv`: the reference numbers behind
//! the frozen thresholds of the distillation and quartile acceptance checks.
//!
//! `cargo run --release -p rankdistil-cli --example oracle_run > crates/cli/tests/data/oracle_runs.tsv`

#[path = "../tests/common/mod.rs"]
mod common;

use common::*;
use rankdistil::losses::LossKind;
use rankdistil::selection::QuartileBand;
use rankdistil::student::StudentKind;

/// Smallest per-seed inner minus outlier nDCG@10 tolerated.
const QUARTILE_SEED_MARGIN: f64 = -0.02;
const AGREEMENT_THRESHOLD: f64 = 0.9;

fn main() {
    let lab = Lab::default_world();
    println!("# criterion\tkey\tvalue");
    println!("# held-out teacher agreement, default world, cross-encoder students");
    println!("distill\tthreshold\t{AGREEMENT_THRESHOLD}");
    println!("distill\toracle_ceiling\t{:.6}", oracle_ceiling(&lab));
    for loss in [LossKind::RankNet, LossKind::MarginMse, LossKind::Kl] {
        let a = distilled_agreement(&lab, StudentKind::CrossEncoder, loss);
        println!("distill\t{loss}\t{a:.6}");
    }
    println!("# held-out nDCG@10, bi-encoder, kl, bm25-mined groups by teacher-entropy quartile band");
    println!("quartile\tseed_margin\t{QUARTILE_SEED_MARGIN}");
    for seed in QUARTILE_SEEDS {
        let inner = quartile_ndcg(&lab, StudentKind::BiEncoder, QuartileBand::Inner, seed);
        let outlier = quartile_ndcg(&lab, StudentKind::BiEncoder, QuartileBand::Outlier, seed);
        println!("quartile\tseed{seed}.inner\t{inner:.6}");
        println!("quartile\tseed{seed}.outlier\t{outlier:.6}");
    }
}
