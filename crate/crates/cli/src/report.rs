//! Cross-stage summary table with provenance checks.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rankdistil::eval::powerlaw_fit_scores;
use rankdistil::io;

use crate::config::RunConfig;
use crate::error::ProvenanceError;
use crate::manifest::{relative_path, Manifest, MANIFEST_FILE};
use crate::stages::{parse_metrics_tsv, DIAGNOSTICS_FILE, LOSS_TRACE_FILE, METRICS_FILE, RUN_FILE, TOST_FILE};

pub const REPORT_FILE: &str = "report.tsv";

/// One `section, source, field, value` row.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub section: &'static str,
    pub source: String,
    pub field: String,
    pub value: String,
}

fn stage_dirs(root: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join(MANIFEST_FILE).is_file() {
            found.push(dir.clone());
        }
        for entry in std::fs::read_dir(&dir).with_context(|| format!("listing {}", dir.display()))? {
            let entry = entry?;
            if entry.file_type()?.is_dir() {
                stack.push(entry.path());
            }
        }
    }
    found.sort();
    Ok(found)
}

fn read(path: &Path) -> anyhow::Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Mean score at each rank over the queries whose list reaches that rank.
pub fn mean_score_curve(run: &io::RunMap) -> Vec<f64> {
    let depth = run.values().map(|l| l.len()).max().unwrap_or(0);
    let mut sum = vec![0.0; depth];
    let mut count = vec![0usize; depth];
    for list in run.values() {
        for (r, s) in list.scores().enumerate() {
            sum[r] += s;
            count[r] += 1;
        }
    }
    sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect()
}

pub fn build(config: &RunConfig, root: &Path) -> anyhow::Result<Vec<Row>> {
    let dirs = stage_dirs(root)?;
    if dirs.is_empty() {
        return Err(ProvenanceError(format!("no stage manifests under {}", root.display())).into());
    }
    let mut manifests = Vec::new();
    for d in &dirs {
        let m = Manifest::read(d)?;
        m.verify(d)?;
        manifests.push(m);
    }
    let world = &manifests[0].world_hash;
    if let Some((d, m)) = dirs.iter().zip(&manifests).find(|(_, m)| &m.world_hash != world) {
        return Err(ProvenanceError(format!(
            "{} ({}) was built from a different synthetic world than {} ({})",
            d.display(),
            m.stage,
            dirs[0].display(),
            manifests[0].stage
        ))
        .into());
    }

    let mut rows = Vec::new();
    for (dir, m) in dirs.iter().zip(&manifests) {
        let source = relative_path(root, dir)?;
        let mut push = |section, field: &str, value: String| {
            rows.push(Row {
                section,
                source: source.clone(),
                field: field.to_string(),
                value,
            })
        };
        match m.stage.as_str() {
            "diagnose" => {
                for line in read(&dir.join(DIAGNOSTICS_FILE))?.lines() {
                    let f: Vec<&str> = line.split('\t').collect();
                    if f.len() == 4 && (f[0] == "p95" || f[0] == "std") {
                        for (name, v) in ["entropy", "diameter", "density_ratio"].iter().zip(&f[1..]) {
                            push("diagnostics", &format!("{name}_{}", f[0]), v.to_string());
                        }
                    }
                }
            }
            "evaluate" => {
                let p = dir.join(METRICS_FILE);
                for (metric, values) in parse_metrics_tsv(&read(&p)?, &p.display().to_string())? {
                    if let Some(v) = values.get("all") {
                        push("metrics", &metric, format!("{v:.6}"));
                    }
                }
            }
            "tost" => {
                let text = read(&dir.join(TOST_FILE))?;
                let mut lines = text.lines();
                let header: Vec<&str> = lines.next().unwrap_or_default().split('\t').collect();
                for line in lines {
                    let f: Vec<&str> = line.split('\t').collect();
                    for (h, v) in header.iter().zip(&f).skip(1) {
                        push("tost", &format!("{}.{h}", f[0]), v.to_string());
                    }
                }
            }
            "score" => {
                let run = io::parse_run_file(dir.join(RUN_FILE))?;
                let curve = mean_score_curve(&run);
                match powerlaw_fit_scores(&curve, config.powerlaw_ranks.clone()) {
                    Ok(fit) => {
                        push("powerlaw", "exponent", format!("{:.6}", fit.exponent));
                        push("powerlaw", "r2", format!("{:.6}", fit.r2));
                        push("powerlaw", "elbow_rank", fit.elbow_rank.to_string());
                    }
                    Err(e) => push("powerlaw", "error", e.to_string()),
                }
            }
            "train" => {
                let trace: Vec<f64> = read(&dir.join(LOSS_TRACE_FILE))?
                    .lines()
                    .filter_map(|l| l.split_once('\t')?.1.parse().ok())
                    .collect();
                push("training", "steps", trace.len().to_string());
                if let (Some(first), Some(last)) = (trace.first(), trace.last()) {
                    let tail = &trace[trace.len().saturating_sub(100)..];
                    push("training", "loss_first", format!("{first:.6}"));
                    push("training", "loss_last", format!("{last:.6}"));
                    push(
                        "training",
                        "loss_tail_mean",
                        format!("{:.6}", tail.iter().sum::<f64>() / tail.len() as f64),
                    );
                }
            }
            _ => {}
        }
    }
    Ok(rows)
}

pub fn to_tsv(rows: &[Row]) -> String {
    let mut out = String::from("section\tsource\tfield\tvalue\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", r.section, r.source, r.field, r.value);
    }
    out
}

pub fn to_table(rows: &[Row]) -> String {
    let w_src = rows.iter().map(|r| r.source.len()).max().unwrap_or(6).max(6);
    let w_field = rows.iter().map(|r| r.field.len()).max().unwrap_or(5).max(5);
    let mut out = String::new();
    let mut section = "";
    for r in rows.iter() {
        if r.section != section {
            section = r.section;
            let _ = writeln!(out, "\n[{section}]");
        }
        let _ = writeln!(out, "  {:<w_src$}  {:<w_field$}  {}", r.source, r.field, r.value);
    }
    out
}

pub fn run(config: &RunConfig, root: &Path) -> anyhow::Result<()> {
    let mut rows = build(config, root)?;
    rows.sort_by(|a, b| a.section.cmp(b.section).then_with(|| a.source.cmp(&b.source)));
    let path = root.join(REPORT_FILE);
    std::fs::write(&path, to_tsv(&rows)).with_context(|| format!("writing {}", path.display()))?;
    print!("{}", to_table(&rows));
    Ok(())
}
