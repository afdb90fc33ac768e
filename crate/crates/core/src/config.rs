//! Run configuration: defaults, flat key-value parsing, overrides, validation.
//!
//! Config files are plain `key = value` lines (`#` for comments). Every
//! command accepts the same key set; command-line overrides are applied on
//! top of the file. Validation reports *all* violated constraints at once.
//! The resolved configuration is echoed into every artifact a run produces so
//! artifacts are self-describing.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::Dtype;

/// Which paths of the model are active. The variant is part of the model
/// definition: it affects training and must match at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Sequence transformer + social graph attention, fused.
    Full,
    /// Personal preference only; the social path is disabled.
    TransformerOnly,
    /// Personal encoder replaced by the mean of clicked item embeddings;
    /// the social path and fusion stay active.
    GatOnly,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::TransformerOnly => "transformer_only",
            Variant::GatOnly => "gat_only",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(Variant::Full),
            "transformer_only" => Ok(Variant::TransformerOnly),
            "gat_only" => Ok(Variant::GatOnly),
            other => Err(format!("unknown variant '{other}' (full|transformer_only|gat_only)")),
        }
    }
}

/// Neighbor sampling policy for the social graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Uniform,
    /// Weighted by the first edge attribute (shared-item count signal).
    Weighted,
}

impl SampleMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleMode::Uniform => "uniform",
            SampleMode::Weighted => "weighted",
        }
    }
}

impl fmt::Display for SampleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SampleMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uniform" => Ok(SampleMode::Uniform),
            "weighted" => Ok(SampleMode::Weighted),
            other => Err(format!("unknown sample_mode '{other}' (uniform|weighted)")),
        }
    }
}

/// Complete run configuration. Field defaults follow the reference setup:
/// 100-dim embeddings, 3 transformer layers, 2 graph layers, Adam at 1e-3,
/// batches of 128 with 1000 shared negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // Input paths (workdir-relative); commands may override with flags.
    pub events: Option<String>,
    pub edges: Option<String>,

    // Model shape.
    pub d: usize,
    pub heads: usize,
    pub m: usize,
    pub l_t: usize,
    pub l_g: usize,
    pub fanouts: Vec<usize>,
    pub dropout: f64,
    pub variant: Variant,
    pub sample_mode: SampleMode,
    pub replicas: usize,

    // Training.
    pub lr: f64,
    pub batch_size: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub seed: u64,
    pub precision: Dtype,
    pub stride: usize,
    pub shards: usize,

    // Evaluation.
    pub test_window: i64,
    pub eval_ks: Vec<usize>,

    // Retrieval.
    pub n_bits: usize,
    pub n_tables: usize,
    pub k_u: usize,
    pub k_a: usize,
    pub recent_window: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            events: None,
            edges: None,
            d: 100,
            heads: 2,
            m: 50,
            l_t: 3,
            l_g: 2,
            fanouts: vec![20, 20],
            dropout: 0.1,
            variant: Variant::Full,
            sample_mode: SampleMode::Uniform,
            replicas: 1,
            lr: 1e-3,
            batch_size: 128,
            negatives: 1000,
            epochs: 10,
            seed: 42,
            precision: Dtype::F32,
            stride: 1,
            shards: 1,
            test_window: 0,
            eval_ks: vec![1, 5, 10],
            n_bits: 16,
            n_tables: 8,
            k_u: 300,
            k_a: 10,
            recent_window: 10,
        }
    }
}

/// Keys accepted in config files and `--set` overrides, in echo order.
const KEYS: &[&str] = &[
    "events", "edges", "d", "heads", "m", "l_t", "l_g", "fanouts", "dropout", "variant",
    "sample_mode", "replicas", "lr", "batch_size", "negatives", "epochs", "seed", "precision",
    "stride", "shards", "test_window", "eval_ks", "n_bits", "n_tables", "k_u", "k_a",
    "recent_window",
];

fn join_usize(xs: &[usize]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    /// Parses `key = value` text; unknown keys and duplicate keys are errors.
    pub fn from_kv_text(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_kv_text(text)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_kv_text(&text)
    }

    /// Applies every `key = value` line in `text` on top of `self`.
    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        let mut problems = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                problems.push(format!("line {}: expected 'key = value', got '{line}'", lineno + 1));
                continue;
            };
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                problems.push(format!("line {}: duplicate key '{key}'", lineno + 1));
                continue;
            }
            if let Err(msg) = self.set(key, value) {
                problems.push(format!("line {}: {msg}", lineno + 1));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Applies `key=value` override pairs (e.g. from repeated `--set` flags).
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<()> {
        let mut problems = Vec::new();
        for pair in pairs {
            match pair.split_once('=') {
                Some((k, v)) => {
                    if let Err(msg) = self.set(k.trim(), v.trim()) {
                        problems.push(msg);
                    }
                }
                None => problems.push(format!("override '{pair}' is not of the form key=value")),
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Sets one key from its string form.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String>
        where
            T::Err: fmt::Display,
        {
            value.parse::<T>().map_err(|e| format!("bad value for {key}: '{value}' ({e})"))
        }
        fn parse_list(key: &str, value: &str) -> std::result::Result<Vec<usize>, String> {
            value
                .split(',')
                .map(|p| p.trim().parse::<usize>().map_err(|e| format!("bad value for {key}: '{value}' ({e})")))
                .collect()
        }
        match key {
            "events" => self.events = Some(value.to_string()),
            "edges" => self.edges = Some(value.to_string()),
            "d" => self.d = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "m" => self.m = parse(key, value)?,
            "l_t" => self.l_t = parse(key, value)?,
            "l_g" => self.l_g = parse(key, value)?,
            "fanouts" => self.fanouts = parse_list(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "variant" => self.variant = value.parse()?,
            "sample_mode" => self.sample_mode = value.parse()?,
            "replicas" => self.replicas = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "negatives" => self.negatives = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "precision" => {
                self.precision =
                    Dtype::parse(value).ok_or_else(|| format!("bad value for precision: '{value}' (f32|f64)"))?
            }
            "stride" => self.stride = parse(key, value)?,
            "shards" => self.shards = parse(key, value)?,
            "test_window" => self.test_window = parse(key, value)?,
            "eval_ks" => self.eval_ks = parse_list(key, value)?,
            "n_bits" => self.n_bits = parse(key, value)?,
            "n_tables" => self.n_tables = parse(key, value)?,
            "k_u" => self.k_u = parse(key, value)?,
            "k_a" => self.k_a = parse(key, value)?,
            "recent_window" => self.recent_window = parse(key, value)?,
            other => return Err(format!("unknown config key '{other}'")),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        match key {
            "events" => self.events.clone().unwrap_or_default(),
            "edges" => self.edges.clone().unwrap_or_default(),
            "d" => self.d.to_string(),
            "heads" => self.heads.to_string(),
            "m" => self.m.to_string(),
            "l_t" => self.l_t.to_string(),
            "l_g" => self.l_g.to_string(),
            "fanouts" => join_usize(&self.fanouts),
            "dropout" => self.dropout.to_string(),
            "variant" => self.variant.to_string(),
            "sample_mode" => self.sample_mode.to_string(),
            "replicas" => self.replicas.to_string(),
            "lr" => self.lr.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "negatives" => self.negatives.to_string(),
            "epochs" => self.epochs.to_string(),
            "seed" => self.seed.to_string(),
            "precision" => self.precision.to_string(),
            "stride" => self.stride.to_string(),
            "shards" => self.shards.to_string(),
            "test_window" => self.test_window.to_string(),
            "eval_ks" => join_usize(&self.eval_ks),
            "n_bits" => self.n_bits.to_string(),
            "n_tables" => self.n_tables.to_string(),
            "k_u" => self.k_u.to_string(),
            "k_a" => self.k_a.to_string(),
            "recent_window" => self.recent_window.to_string(),
            _ => unreachable!("get of unknown key {key}"),
        }
    }

    /// Canonical multi-line `key = value` form; parsing it back yields an
    /// equal configuration. Empty optional paths are omitted.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            let v = self.get(key);
            if v.is_empty() {
                continue;
            }
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    /// One-line `k=v` echo, used as a header comment in text artifacts.
    pub fn compact_echo(&self) -> String {
        let mut parts = Vec::new();
        for key in KEYS {
            let v = self.get(key);
            if v.is_empty() {
                continue;
            }
            parts.push(format!("{key}={v}"));
        }
        parts.join(" ")
    }

    /// Per-head attention width `d_s`.
    pub fn d_s(&self) -> usize {
        self.d / self.heads
    }

    /// Checks every constraint and reports all violations together.
    pub fn validate(&self) -> Result<()> {
        let mut v = Vec::new();
        if self.d == 0 {
            v.push("d must be >= 1".to_string());
        }
        if self.heads == 0 {
            v.push("heads must be >= 1".to_string());
        }
        if self.heads != 0 && self.d % self.heads != 0 {
            v.push(format!("d = {} must be divisible by heads = {} (d = heads * d_s)", self.d, self.heads));
        }
        if self.m == 0 {
            v.push("m must be >= 1".to_string());
        }
        if self.l_t == 0 {
            v.push("l_t must be >= 1".to_string());
        }
        if !(1..=2).contains(&self.l_g) {
            v.push(format!("l_g = {} must be 1 or 2", self.l_g));
        }
        if self.fanouts.len() != self.l_g {
            v.push(format!(
                "fanouts has {} entries but l_g = {} (one fanout per graph layer)",
                self.fanouts.len(),
                self.l_g
            ));
        }
        for (i, &f) in self.fanouts.iter().enumerate() {
            if f == 0 {
                v.push(format!("fanouts[{i}] must be >= 1"));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            v.push(format!("dropout = {} must be in [0, 1)", self.dropout));
        }
        if self.replicas == 0 {
            v.push("replicas must be >= 1".to_string());
        }
        if !(self.lr > 0.0) {
            v.push(format!("lr = {} must be positive", self.lr));
        }
        if self.batch_size == 0 {
            v.push("batch_size must be >= 1".to_string());
        }
        if self.negatives == 0 {
            v.push("negatives must be >= 1".to_string());
        }
        if self.stride == 0 {
            v.push("stride must be >= 1".to_string());
        }
        if self.shards == 0 {
            v.push("shards must be >= 1".to_string());
        }
        if self.eval_ks.is_empty() {
            v.push("eval_ks must not be empty".to_string());
        }
        if self.eval_ks.iter().any(|&k| k == 0) {
            v.push("eval_ks entries must be >= 1".to_string());
        }
        if !(1..=64).contains(&self.n_bits) {
            v.push(format!("n_bits = {} must be in 1..=64", self.n_bits));
        }
        if self.n_tables == 0 {
            v.push("n_tables must be >= 1".to_string());
        }
        if self.k_u == 0 {
            v.push("k_u must be >= 1".to_string());
        }
        if self.k_a == 0 {
            v.push("k_a must be >= 1".to_string());
        }
        if self.recent_window == 0 {
            v.push("recent_window must be >= 1".to_string());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }
}

/// Parses a flat `key = value` text into a map without interpreting keys.
/// Used by artifact readers that need to inspect echoed configuration.
pub fn parse_kv_text(text: &str) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    map
}
