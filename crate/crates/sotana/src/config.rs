//! Run configuration: a flat `key = value` file over built-in defaults,
//! with command-line overrides on top.
//!
//! Every key and its default lives in [`KEYS`]; unknown keys are rejected
//! so typos do not silently fall back to defaults.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sotana_core::dataforge::ForgeConfig;
use sotana_core::microlm::{ModelConfig, TrainConfig};

/// `(key, default, description)`.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("rng_seed", "0", "Seed for every random draw in a run."),
    ("log_level", "info", "error, warn, info, debug or trace."),
    ("forge.backend", "mock", "Completion backend: mock or http."),
    ("forge.endpoint", "http://127.0.0.1:8000", "Base URL of an OpenAI-compatible server (http backend)."),
    ("forge.model", "gpt-3.5-turbo", "Model name sent to the http backend."),
    ("forge.fixture", "", "Mock backend fixture JSONL (mock backend)."),
    ("forge.timeout_secs", "120", "Per-request timeout for the http backend."),
    ("forge.retries", "3", "Retries after a transport failure."),
    ("forge.initial_backoff_ms", "1000", "First retry wait; doubles on each retry."),
    ("forge.target_count", "100", "Accepted triples to produce."),
    ("forge.batch_completions", "5", "Instances requested per query."),
    ("forge.temperature", "1.0", "Sampling temperature sent to the backend."),
    ("forge.max_tokens", "3072", "Completion length limit sent to the backend."),
    ("forge.max_queries", "1000", "Query budget for one run."),
    ("forge.concurrency", "1", "Requests in flight per round."),
    ("model.d_model", "64", "Hidden width."),
    ("model.n_layers", "2", "Decoder layers."),
    ("model.n_heads", "2", "Attention heads; must divide model.d_model."),
    ("model.d_ff", "256", "Feed-forward width."),
    ("model.max_seq_len", "128", "Positions in the model."),
    ("train.rank", "8", "LoRA rank r."),
    ("train.alpha", "16", "LoRA scaling constant alpha."),
    ("train.learning_rate", "1e-4", "Adam learning rate (constant)."),
    ("train.batch_size", "32", "Sequences per step."),
    ("train.dropout", "0.05", "Dropout on the adapter input path."),
    ("train.max_seq_len", "128", "Training window; clamped to model.max_seq_len."),
    ("train.epochs", "5", "Passes over the data."),
    ("train.int8", "false", "Store frozen weights as int8."),
    ("generate.max_new_tokens", "64", "Greedy decoding length limit."),
    ("eval.runner", "python3 {file}", "Command template for codegen candidates."),
    ("eval.wall_secs", "10", "Wall-clock limit per candidate."),
    ("eval.output_bytes", "1048576", "Combined stdout and stderr cap per candidate."),
    ("eval.workers", "1", "Candidates executed concurrently."),
    ("eval.k", "1", "k in pass@k."),
    ("study.bind", "127.0.0.1", "Address the rating server listens on."),
    ("study.port", "8080", "Port the rating server listens on."),
    ("study.confidence_threshold", "2", "Ratings with confidence below this are queued for adjudication."),
    ("sweep.sizes", "1000,5000,10000,50000", "Training-set sizes, comma separated."),
];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{origin}: line {line} is not `key = value`")]
    Syntax { origin: String, line: usize },
    #[error("{origin}: unknown config key {key:?}")]
    UnknownKey { origin: String, key: String },
    #[error("config key {key}: cannot parse {value:?} as {expected}")]
    BadValue { key: String, value: String, expected: &'static str },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, (String, String)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let values = KEYS.iter().map(|(k, d, _)| (*k, (d.to_string(), "default".to_string()))).collect();
        Self { values }
    }
}

fn known(key: &str) -> Option<&'static str> {
    KEYS.iter().find(|(k, _, _)| *k == key).map(|(k, _, _)| *k)
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Io { path: path.to_path_buf(), message: e.to_string() })?;
        let mut cfg = Self::default();
        cfg.merge_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    /// Applies `key = value` lines; `#` starts a comment, blank lines are
    /// ignored and one pair of surrounding double quotes is stripped.
    pub fn merge_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { origin: origin.into(), line: i + 1 })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(ConfigError::Syntax { origin: origin.into(), line: i + 1 });
            }
            let v = v.trim();
            let v = v.strip_prefix('"').and_then(|x| x.strip_suffix('"')).unwrap_or(v);
            self.set(k, v, origin)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str, origin: &str) -> Result<(), ConfigError> {
        let key = known(key).ok_or_else(|| ConfigError::UnknownKey { origin: origin.into(), key: key.into() })?;
        self.values.insert(key, (value.to_string(), origin.to_string()));
        Ok(())
    }

    /// `key=value` from the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<(), ConfigError> {
        let (k, v) = pair.split_once('=').ok_or(ConfigError::Syntax { origin: "--set".into(), line: 1 })?;
        self.set(k.trim(), v.trim(), "--set")
    }

    /// Applies a flag value when the flag was given.
    pub fn set_opt<T: ToString>(&mut self, key: &str, value: Option<T>) -> Result<(), ConfigError> {
        match value {
            Some(v) => self.set(key, &v.to_string(), "flag"),
            None => Ok(()),
        }
    }

    pub fn str(&self, key: &str) -> &str {
        match self.values.get(key) {
            Some((v, _)) => v,
            None => panic!("config key {key} is not declared in KEYS"),
        }
    }

    fn parse<T: FromStr>(&self, key: &str, expected: &'static str) -> Result<T, ConfigError> {
        let v = self.str(key);
        v.parse().map_err(|_| ConfigError::BadValue { key: key.into(), value: v.into(), expected })
    }

    pub fn usize(&self, key: &str) -> Result<usize, ConfigError> {
        self.parse(key, "a non-negative integer")
    }

    pub fn u64(&self, key: &str) -> Result<u64, ConfigError> {
        self.parse(key, "a non-negative integer")
    }

    pub fn f64(&self, key: &str) -> Result<f64, ConfigError> {
        let x: f64 = self.parse(key, "a number")?;
        if x.is_finite() {
            Ok(x)
        } else {
            Err(ConfigError::BadValue { key: key.into(), value: self.str(key).into(), expected: "a finite number" })
        }
    }

    pub fn bool(&self, key: &str) -> Result<bool, ConfigError> {
        match self.str(key) {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            v => Err(ConfigError::BadValue { key: key.into(), value: v.into(), expected: "true or false" }),
        }
    }

    pub fn usize_list(&self, key: &str) -> Result<Vec<usize>, ConfigError> {
        let v = self.str(key);
        v.split(',')
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|_| ConfigError::BadValue {
                    key: key.into(),
                    value: v.into(),
                    expected: "comma-separated non-negative integers",
                })
            })
            .collect()
    }

    pub fn rng_seed(&self) -> Result<u64, ConfigError> {
        self.u64("rng_seed")
    }

    pub fn model_config(&self) -> Result<ModelConfig, ConfigError> {
        Ok(ModelConfig {
            d_model: self.usize("model.d_model")?,
            n_layers: self.usize("model.n_layers")?,
            n_heads: self.usize("model.n_heads")?,
            d_ff: self.usize("model.d_ff")?,
            max_seq_len: self.usize("model.max_seq_len")?,
            ..ModelConfig::default()
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig, ConfigError> {
        Ok(TrainConfig {
            rank: self.usize("train.rank")?,
            alpha: self.f64("train.alpha")?,
            learning_rate: self.f64("train.learning_rate")?,
            batch_size: self.usize("train.batch_size")?,
            dropout_p: self.f64("train.dropout")?,
            max_seq_len: self.usize("train.max_seq_len")?,
            epochs: self.usize("train.epochs")?,
            rng_seed: self.rng_seed()?,
            int8_frozen: self.bool("train.int8")?,
        })
    }

    pub fn forge_config(&self) -> Result<ForgeConfig, ConfigError> {
        Ok(ForgeConfig {
            target_count: self.usize("forge.target_count")?,
            batch_completions: self.usize("forge.batch_completions")?,
            temperature: self.f64("forge.temperature")?,
            max_tokens: self.usize("forge.max_tokens")?,
            rng_seed: self.rng_seed()?,
            max_queries: self.usize("forge.max_queries")?,
            concurrency: self.usize("forge.concurrency")?,
            ..ForgeConfig::default()
        })
    }

    /// One `key = value  (origin)` line per key, in key order.
    pub fn echo(&self) -> String {
        let mut out = String::new();
        for (k, (v, origin)) in &self.values {
            let _ = writeln!(out, "{k} = {v}  ({origin})");
        }
        out
    }
}
