//! Per-stage provenance records.
//!
//! Every stage directory holds a `manifest.tsv`:
//!
//! ```text
//! stage   mine
//! config  <sha256 of the rendered config>
//! world   <sha256 of the world.* keys>
//! input   <name>  <path relative to the stage dir>  <sha256>
//! output  <file name>  <sha256>
//! ```

use std::fmt::Write as _;
use std::path::{Component, Path, PathBuf};

use anyhow::{bail, Context};
use sha2::{Digest, Sha256};

use crate::error::ProvenanceError;

pub const MANIFEST_FILE: &str = "manifest.tsv";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_hex(&bytes))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputRecord {
    pub name: String,
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputRecord {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    pub world_hash: String,
    pub inputs: Vec<InputRecord>,
    pub outputs: Vec<OutputRecord>,
}

/// Lexical path from `base` to `target`; both are made absolute first.
pub fn relative_path(base: &Path, target: &Path) -> anyhow::Result<String> {
    let base = std::path::absolute(base)?;
    let target = std::path::absolute(target)?;
    let base: Vec<Component> = normalize(&base);
    let target: Vec<Component> = normalize(&target);
    let common = base.iter().zip(&target).take_while(|(a, b)| a == b).count();
    let mut rel = PathBuf::new();
    for _ in common..base.len() {
        rel.push("..");
    }
    for c in &target[common..] {
        rel.push(c.as_os_str());
    }
    let rel = rel.to_str().context("non UTF-8 path")?.replace('\\', "/");
    Ok(if rel.is_empty() { ".".into() } else { rel })
}

fn normalize(path: &Path) -> Vec<Component<'_>> {
    let mut out = Vec::new();
    for c in path.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                if matches!(out.last(), Some(Component::Normal(_))) {
                    out.pop();
                }
            }
            other => out.push(other),
        }
    }
    out
}

impl Manifest {
    pub fn new(stage: &str, config_hash: String, world_hash: String) -> Self {
        Self {
            stage: stage.to_string(),
            config_hash,
            world_hash,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    /// Records an input file as seen from `stage_dir`.
    pub fn add_input(&mut self, stage_dir: &Path, name: &str, path: &Path) -> anyhow::Result<()> {
        self.inputs.push(InputRecord {
            name: name.to_string(),
            path: relative_path(stage_dir, path)?,
            sha256: file_sha256(path)?,
        });
        Ok(())
    }

    /// Records a file already written into `stage_dir`.
    pub fn add_output(&mut self, stage_dir: &Path, file: &str) -> anyhow::Result<()> {
        self.outputs.push(OutputRecord {
            file: file.to_string(),
            sha256: file_sha256(&stage_dir.join(file))?,
        });
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "stage\t{}", self.stage);
        let _ = writeln!(out, "config\t{}", self.config_hash);
        let _ = writeln!(out, "world\t{}", self.world_hash);
        for i in &self.inputs {
            let _ = writeln!(out, "input\t{}\t{}\t{}", i.name, i.path, i.sha256);
        }
        for o in &self.outputs {
            let _ = writeln!(out, "output\t{}\t{}", o.file, o.sha256);
        }
        out
    }

    pub fn parse(text: &str, source: &str) -> anyhow::Result<Self> {
        let mut stage = None;
        let mut config = None;
        let mut world = None;
        let mut inputs = Vec::new();
        let mut outputs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            match (f[0], f.len()) {
                ("stage", 2) => stage = Some(f[1].to_string()),
                ("config", 2) => config = Some(f[1].to_string()),
                ("world", 2) => world = Some(f[1].to_string()),
                ("input", 4) => inputs.push(InputRecord {
                    name: f[1].into(),
                    path: f[2].into(),
                    sha256: f[3].into(),
                }),
                ("output", 3) => outputs.push(OutputRecord {
                    file: f[1].into(),
                    sha256: f[2].into(),
                }),
                _ => bail!(ProvenanceError(format!("{source}:{}: malformed manifest line", i + 1))),
            }
        }
        match (stage, config, world) {
            (Some(stage), Some(config_hash), Some(world_hash)) => Ok(Self {
                stage,
                config_hash,
                world_hash,
                inputs,
                outputs,
            }),
            _ => bail!(ProvenanceError(format!("{source}: manifest lacks stage/config/world"))),
        }
    }

    pub fn write(&self, stage_dir: &Path) -> anyhow::Result<()> {
        let path = stage_dir.join(MANIFEST_FILE);
        std::fs::write(&path, self.render()).with_context(|| format!("writing {}", path.display()))
    }

    pub fn read(stage_dir: &Path) -> anyhow::Result<Self> {
        let path = stage_dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Checks that every recorded output is untouched and every recorded
    /// input still has the checksum it had when the stage ran.
    pub fn verify(&self, stage_dir: &Path) -> Result<(), ProvenanceError> {
        let here = stage_dir.display();
        for o in &self.outputs {
            match file_sha256(&stage_dir.join(&o.file)) {
                Ok(sha) if sha == o.sha256 => {}
                Ok(_) => return Err(ProvenanceError(format!("{here}: output {} was modified", o.file))),
                Err(_) => return Err(ProvenanceError(format!("{here}: output {} is missing", o.file))),
            }
        }
        for i in &self.inputs {
            match file_sha256(&stage_dir.join(&i.path)) {
                Ok(sha) if sha == i.sha256 => {}
                Ok(_) => {
                    return Err(ProvenanceError(format!(
                        "{here}: input {} ({}) changed since the stage ran",
                        i.name, i.path
                    )))
                }
                Err(_) => {
                    return Err(ProvenanceError(format!("{here}: input {} ({}) is missing", i.name, i.path)))
                }
            }
        }
        Ok(())
    }
}
