//! Flat `section.key=value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, Context};
use rankdistil::diagnostics::{DiameterMode, ReportConfig, DEFAULT_SAMPLE_PAIRS};
use rankdistil::eval::Metric;
use rankdistil::lexical::Bm25Params;
use rankdistil::losses::LossKind;
use rankdistil::selection::{FilterDistance, QuartileBand, SamplerKind, SamplerSpec};
use rankdistil::student::{StudentKind, TrainConfig};
use rankdistil::synth::WorldConfig;

use crate::error::ConfigError;
use crate::manifest::sha256_hex;

/// Every recognised key with its default value.
const DEFAULTS: &[(&str, &str)] = &[
    ("bm25.b", "0.75"),
    ("bm25.k1", "1.2"),
    ("diagnose.diameter", "max"),
    ("diagnose.sample_pairs", "100000"),
    ("diagnose.seed", "0"),
    ("diagnose.tau", "1"),
    ("eval.depth", "100"),
    ("eval.metrics", "ndcg@10,map"),
    ("eval.tag", "rankdistil"),
    ("eval.tost_alpha", "0.05"),
    ("eval.tost_epsilon", "0.05"),
    ("powerlaw.max_rank", "100"),
    ("powerlaw.min_rank", "1"),
    ("sampler.constituents", "random,bm25,teacher"),
    ("sampler.epsilon", "0"),
    ("sampler.filter", "teacher"),
    ("sampler.k", "15"),
    ("sampler.kind", "bm25"),
    ("sampler.pool_depth", "100"),
    ("sampler.seed", "0"),
    ("select.band", "inner"),
    ("select.tau", "1"),
    ("student.hidden", "32"),
    ("student.kind", "crossencoder"),
    ("student.seed", "0"),
    ("train.group_size", "16"),
    ("train.loss", "kl"),
    ("train.peak_lr", "0.01"),
    ("train.seed", "0"),
    ("train.steps", "2000"),
    ("train.tau", "1"),
    ("train.warmup_frac", "0.1"),
    ("train.weight_decay", "0.01"),
    ("world.background_rate", "0.3"),
    ("world.doc_len", "40"),
    ("world.doc_noise", "0.6"),
    ("world.embed_dim", "32"),
    ("world.n_docs", "500"),
    ("world.n_queries", "100"),
    ("world.n_topics", "10"),
    ("world.query_len", "6"),
    ("world.seed", "7"),
    ("world.teacher_noise", "0.25"),
    ("world.teacher_temp", "0.1"),
    ("world.topic_sharpness", "8"),
    ("world.vocab_size", "2000"),
];

/// Resolved configuration for every stage.
#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    pub world: WorldConfig,
    pub bm25: Bm25Params,
    pub sampler: SamplerSpec,
    pub band: QuartileBand,
    pub select_tau: f64,
    pub diagnose: ReportConfig,
    pub student_kind: StudentKind,
    pub student_hidden: usize,
    pub student_seed: u64,
    pub train: TrainConfig,
    pub metrics: Vec<Metric>,
    pub depth: usize,
    pub run_tag: String,
    pub tost_alpha: f64,
    pub tost_epsilon: f64,
    pub powerlaw_ranks: std::ops::RangeInclusive<usize>,
}

fn parse_text(text: &str, source: &str, into: &mut BTreeMap<String, String>) -> Result<(), ConfigError> {
    let mut seen = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("{source}:{}: expected key=value", i + 1)))?;
        let key = key.trim().to_string();
        if seen.insert(key.clone(), i + 1).is_some() {
            return Err(ConfigError(format!("{source}:{}: duplicate key {key}", i + 1)));
        }
        into.insert(key, value.trim().to_string());
    }
    Ok(())
}

fn get<T: std::str::FromStr>(values: &BTreeMap<String, String>, key: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    let raw = &values[key];
    raw.parse()
        .map_err(|e| ConfigError(format!("{key}={raw}: {e}")))
}

fn core<T>(r: rankdistil::Result<T>) -> Result<T, ConfigError> {
    r.map_err(|e| ConfigError(e.to_string()))
}

impl RunConfig {
    /// Defaults, then the optional config file, then `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let mut user = BTreeMap::new();
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            parse_text(&text, &path.display().to_string(), &mut user)?;
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("--set expects key=value, got {o:?}")))?;
            user.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self::from_values(user)?)
    }

    pub fn from_values(user: BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let mut values: BTreeMap<String, String> =
            DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        for (k, v) in user {
            if !values.contains_key(&k) {
                return Err(ConfigError(format!("unknown config key {k}")));
            }
            values.insert(k, v);
        }
        let v = &values;
        let world = WorldConfig {
            n_topics: get(v, "world.n_topics")?,
            n_docs: get(v, "world.n_docs")?,
            n_queries: get(v, "world.n_queries")?,
            vocab_size: get(v, "world.vocab_size")?,
            embed_dim: get(v, "world.embed_dim")?,
            doc_noise: get(v, "world.doc_noise")?,
            teacher_noise: get(v, "world.teacher_noise")?,
            teacher_temp: get(v, "world.teacher_temp")?,
            doc_len: get(v, "world.doc_len")?,
            query_len: get(v, "world.query_len")?,
            background_rate: get(v, "world.background_rate")?,
            topic_sharpness: get(v, "world.topic_sharpness")?,
            seed: get(v, "world.seed")?,
        };
        core(world.validate())?;
        let bm25 = core(Bm25Params::new(get(v, "bm25.k1")?, get(v, "bm25.b")?))?;
        let constituents = v["sampler.constituents"]
            .split(',')
            .map(|s| s.trim().parse::<SamplerKind>())
            .collect::<rankdistil::Result<Vec<_>>>();
        let sampler = SamplerSpec {
            kind: get(v, "sampler.kind")?,
            k: get(v, "sampler.k")?,
            pool_depth: get(v, "sampler.pool_depth")?,
            seed: get(v, "sampler.seed")?,
            constituents: core(constituents)?,
            epsilon: get(v, "sampler.epsilon")?,
            filter: get::<FilterDistance>(v, "sampler.filter")?,
        };
        core(sampler.validate())?;
        let select_tau: f64 = get(v, "select.tau")?;
        if !(select_tau > 0.0 && select_tau.is_finite()) {
            return Err(ConfigError("select.tau must be > 0".into()));
        }
        let diagnose = ReportConfig {
            tau: get(v, "diagnose.tau")?,
            diameter_mode: get::<DiameterMode>(v, "diagnose.diameter")?,
            sample_pairs: get(v, "diagnose.sample_pairs")?,
            seed: get(v, "diagnose.seed")?,
        };
        if !(diagnose.tau > 0.0 && diagnose.tau.is_finite()) {
            return Err(ConfigError("diagnose.tau must be > 0".into()));
        }
        if diagnose.sample_pairs == 0 {
            return Err(ConfigError(format!(
                "diagnose.sample_pairs must be >= 1 (default {DEFAULT_SAMPLE_PAIRS})"
            )));
        }
        let train = TrainConfig {
            loss: get::<LossKind>(v, "train.loss")?,
            steps: get(v, "train.steps")?,
            group_size: get(v, "train.group_size")?,
            peak_lr: get(v, "train.peak_lr")?,
            warmup_frac: get(v, "train.warmup_frac")?,
            seed: get(v, "train.seed")?,
            weight_decay: get(v, "train.weight_decay")?,
            tau: get(v, "train.tau")?,
        };
        core(train.validate())?;
        let student_hidden: usize = get(v, "student.hidden")?;
        if student_hidden == 0 {
            return Err(ConfigError("student.hidden must be >= 1".into()));
        }
        let metrics = v["eval.metrics"]
            .split(',')
            .map(|s| s.trim().parse::<Metric>())
            .collect::<rankdistil::Result<Vec<_>>>();
        let metrics = core(metrics)?;
        let depth: usize = get(v, "eval.depth")?;
        if depth == 0 {
            return Err(ConfigError("eval.depth must be >= 1".into()));
        }
        let run_tag = v["eval.tag"].clone();
        if run_tag.is_empty() || run_tag.chars().any(char::is_whitespace) {
            return Err(ConfigError("eval.tag must be a single non-empty token".into()));
        }
        let tost_alpha: f64 = get(v, "eval.tost_alpha")?;
        let tost_epsilon: f64 = get(v, "eval.tost_epsilon")?;
        if !(tost_alpha > 0.0 && tost_alpha < 1.0) {
            return Err(ConfigError("eval.tost_alpha must lie in (0, 1)".into()));
        }
        if !(tost_epsilon >= 0.0 && tost_epsilon.is_finite()) {
            return Err(ConfigError("eval.tost_epsilon must be >= 0".into()));
        }
        let (lo, hi): (usize, usize) = (get(v, "powerlaw.min_rank")?, get(v, "powerlaw.max_rank")?);
        if lo == 0 || hi < lo + 2 {
            return Err(ConfigError("powerlaw ranks need 1 <= min_rank and max_rank >= min_rank + 2".into()));
        }
        Ok(Self {
            band: get(v, "select.band")?,
            select_tau,
            student_kind: get(v, "student.kind")?,
            student_hidden,
            student_seed: get(v, "student.seed")?,
            world,
            bm25,
            sampler,
            diagnose,
            train,
            metrics,
            depth,
            run_tag,
            tost_alpha,
            tost_epsilon,
            powerlaw_ranks: lo..=hi,
            values,
        })
    }

    /// Every key with its resolved value, one `key=value` per line, sorted.
    pub fn render(&self) -> String {
        self.render_prefix("")
    }

    fn render_prefix(&self, prefix: &str) -> String {
        let mut out = String::new();
        for (k, v) in self.values.iter().filter(|(k, _)| k.starts_with(prefix)) {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.render().as_bytes())
    }

    /// Hash of the `world.*` section alone; stages built on different worlds
    /// never mix in a report.
    pub fn world_hash(&self) -> String {
        sha256_hex(self.render_prefix("world.").as_bytes())
    }
}

impl std::str::FromStr for RunConfig {
    type Err = anyhow::Error;
    fn from_str(text: &str) -> anyhow::Result<Self> {
        let mut user = BTreeMap::new();
        parse_text(text, "<config>", &mut user)?;
        Self::from_values(user).map_err(|e| anyhow!(e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let c: RunConfig = "".parse().unwrap();
        assert_eq!(c.world.seed, 7);
        assert_eq!(c.sampler.k, 15);
        assert_eq!(c.train.group_size, 16);
        assert!(c.render().lines().count() == DEFAULTS.len());
    }

    #[test]
    fn overrides_and_errors() {
        let c: RunConfig = "# comment\nworld.seed = 9\nsampler.kind=random\n".parse().unwrap();
        assert_eq!(c.world.seed, 9);
        assert_eq!(c.sampler.kind, SamplerKind::Random);
        assert!("world.nope=1".parse::<RunConfig>().is_err());
        assert!("world.n_docs=0".parse::<RunConfig>().is_err());
        assert!("world.seed=1\nworld.seed=2".parse::<RunConfig>().is_err());
        assert!("justtext".parse::<RunConfig>().is_err());
        assert!("train.loss=listnet".parse::<RunConfig>().is_err());
    }

    #[test]
    fn world_hash_ignores_other_sections() {
        let a: RunConfig = "train.steps=5".parse().unwrap();
        let b: RunConfig = "train.steps=6".parse().unwrap();
        assert_eq!(a.world_hash(), b.world_hash());
        assert_ne!(a.hash(), b.hash());
    }
}
