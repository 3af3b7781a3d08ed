//! `rankdistil`: seeded ranking-distillation pipeline.

mod config;
mod error;
mod manifest;
mod report;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::stages::{Candidates, MineInputs};

#[derive(Parser)]
#[command(name = "rankdistil", version, about = "Seeded pipeline for distilling rankers from a teacher")]
struct Cli {
    /// Flat key=value config file; unspecified keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override one config key (repeatable), e.g. --set world.seed=3.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,

    /// Worker threads for per-query work. Outputs do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutDir {
    /// Stage output directory; receives the stage files and manifest.tsv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world: corpus, queries, embeddings and qrels.
    SynthGen(#[command(flatten)] OutDir),
    /// Build a BM25 inverted index from a corpus TSV.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        #[command(flatten)]
        out: OutDir,
    },
    /// Mine training groups (positive plus sampled negatives) per query.
    Mine {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// Needed when sampler.filter=embedding.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Attach teacher scores to every group.
    Label {
        #[arg(long)]
        groups: PathBuf,
        #[command(flatten)]
        out: OutDir,
    },
    /// Keep the groups whose teacher entropy falls in select.band.
    Select {
        #[arg(long)]
        groups: PathBuf,
        #[command(flatten)]
        out: OutDir,
    },
    /// Entropy, diameter and density-ratio diagnostics of labelled groups.
    Diagnose {
        #[arg(long)]
        groups: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[command(flatten)]
        out: OutDir,
    },
    /// Train a student scorer on groups.
    Train {
        #[arg(long)]
        groups: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[command(flatten)]
        out: OutDir,
    },
    /// Rank documents for every query with a trained student.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        queries: PathBuf,
        /// Rank the whole corpus.
        #[arg(long, conflicts_with = "candidates", required_unless_present = "candidates")]
        corpus: Option<PathBuf>,
        /// Rerank the documents of an existing run.
        #[arg(long)]
        candidates: Option<PathBuf>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Compute eval.metrics for a run against qrels.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        #[command(flatten)]
        out: OutDir,
    },
    /// Paired equivalence test between two metrics files.
    Tost {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[command(flatten)]
        out: OutDir,
    },
    /// Verify manifests under a directory and summarise every stage.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let config = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    if cli.threads == 0 {
        return Err(error::ConfigError("--threads must be >= 1".into()).into());
    }
    rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global()?;
    let c = &config;
    match cli.command {
        Command::SynthGen(o) => stages::synth_gen(c, &o.out),
        Command::Index { corpus, out } => stages::index(c, &corpus, &out.out),
        Command::Mine {
            index,
            queries,
            qrels,
            embeddings,
            out,
        } => {
            let inputs = MineInputs {
                index: &index,
                queries: &queries,
                qrels: &qrels,
                embeddings: embeddings.as_deref(),
            };
            stages::mine(c, &inputs, &out.out)
        }
        Command::Label { groups, out } => stages::label(c, &groups, &out.out),
        Command::Select { groups, out } => stages::select(c, &groups, &out.out),
        Command::Diagnose { groups, embeddings, out } => stages::diagnose(c, &groups, &embeddings, &out.out),
        Command::Train { groups, embeddings, out } => stages::train_stage(c, &groups, &embeddings, &out.out),
        Command::Score {
            model,
            embeddings,
            queries,
            corpus,
            candidates,
            out,
        } => {
            let pool = match (&corpus, &candidates) {
                (Some(p), _) => Candidates::Corpus(p),
                (None, Some(p)) => Candidates::Run(p),
                (None, None) => unreachable!("clap requires one of --corpus/--candidates"),
            };
            stages::score(c, &model, &embeddings, &queries, pool, &out.out)
        }
        Command::Evaluate { run, qrels, out } => stages::evaluate(c, &run, &qrels, &out.out),
        Command::Tost { a, b, out } => stages::tost_stage(c, &a, &b, &out.out),
        Command::Report { dir } => report::run(c, &dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(error::exit_code(&e) as u8)
        }
    }
}
