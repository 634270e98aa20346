//! Flat `key=value` run configuration.
//!
//! ```text
//! # comment
//! data_dir = prepared
//! embeddings = vectors.cache
//! hidden_sizes = 256
//! epochs = 5
//! ```
//!
//! Blank lines and `#` comments are ignored, whitespace around keys and
//! values is trimmed, and unknown keys are rejected. Relative paths are
//! resolved against the directory of the config file.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

/// Every accepted key with a one-line description.
pub const KEY_DOCS: &[(&str, &str)] = &[
    ("data_dir", "directory written by `prepare` (required)"),
    ("embeddings", "embedding cache written by `embed`; required unless both word and sentence paths are off"),
    ("checkpoint", "output checkpoint path (default model.ckpt)"),
    ("log", "training log path (default train.log)"),
    ("char_emb_dim", "character embedding size (default 20)"),
    ("char_lstm_h", "hidden size of each character LSTM direction (default 64)"),
    ("hidden_sizes", "comma-separated dense layer sizes (default 256)"),
    ("use_word_path", "feed the current word vector (default true)"),
    ("use_sentence_path", "feed the sentence encoding (default true)"),
    ("word_dim", "word vector dimension, must match the cache (default 300)"),
    ("sent_lstm_h", "hidden size of each sentence LSTM direction (default 300)"),
    ("window", "character window length, odd (default 13)"),
    ("max_sent", "maximum sentence length in words (default 31)"),
    ("activation", "dense layer activation: relu or linear (default relu)"),
    ("sentence_repr", "final or current_word (default final)"),
    ("char_emb_init", "half-width of the uniform character embedding init (default 0.05)"),
    ("min_char_freq", "characters seen fewer times in training map to UNK (default 1)"),
    ("seed", "parameter init seed (default 0)"),
    ("epochs", "passes over the training split (default 5)"),
    ("batch_size", "examples per Adam step (default 256)"),
    ("lr", "Adam learning rate (default 0.001)"),
    ("class_weights", "four comma-separated loss weights or inverse_frequency (default 1,1,1,1)"),
    ("shuffle_seed", "batch order seed (default 0)"),
    ("clip_norm", "global gradient norm clip or off (default off)"),
    ("eval_batch", "examples per forward pass when evaluating (default 1024)"),
];

const PATH_KEYS: [&str; 4] = ["data_dir", "embeddings", "checkpoint", "log"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data_dir: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            data_dir: None,
            embeddings: None,
            checkpoint: PathBuf::from("model.ckpt"),
            log: PathBuf::from("train.log"),
            base_dir: PathBuf::new(),
        }
    }
}

impl RunConfig {
    /// Parses config text; relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: impl Into<PathBuf>) -> Result<RunConfig> {
        let mut cfg = RunConfig { base_dir: base_dir.into(), ..RunConfig::default() };
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key=value, got {line:?}", i + 1)))?;
            cfg.set(k.trim(), v.trim()).map_err(|e| Error::Config(format!("config line {}: {}", i + 1, strip_prefix(&e))))?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text, path.parent().unwrap_or(Path::new("")))
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "data_dir" => self.data_dir = Some(self.base_dir.join(v)),
            "embeddings" => self.embeddings = Some(self.base_dir.join(v)),
            "checkpoint" => self.checkpoint = self.base_dir.join(v),
            "log" => self.log = self.base_dir.join(v),
            _ => {
                if !self.model.set(key, v)? && !self.train.set(key, v)? {
                    return Err(Error::Config(format!("unknown key {key:?}")));
                }
            }
        }
        Ok(())
    }

    /// Applies a `key=value` override, as given on the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        // overrides are relative to the working directory
        let base = std::mem::take(&mut self.base_dir);
        let result = self.set(k.trim(), v.trim());
        self.base_dir = base;
        result
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data_dir.is_none() {
            return Err(Error::Config("data_dir is not set".into()));
        }
        Ok(())
    }

    /// Path and training settings, recorded alongside the model config.
    pub fn settings(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let paths = [("data_dir", self.data_dir.as_ref()), ("embeddings", self.embeddings.as_ref())];
        for (k, p) in paths {
            if let Some(p) = p {
                out.push((k.to_owned(), p.display().to_string()));
            }
        }
        out.push(("checkpoint".into(), self.checkpoint.display().to_string()));
        out.push(("log".into(), self.log.display().to_string()));
        out.extend(self.train.to_kv());
        out
    }

    /// Every effective setting as `key=value` lines.
    pub fn to_text(&self) -> String {
        self.model.to_kv().into_iter().chain(self.settings()).map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(msg) => msg.clone(),
        other => other.to_string(),
    }
}

pub fn is_known_key(key: &str) -> bool {
    PATH_KEYS.contains(&key) || ModelConfig::KEYS.contains(&key) || TrainConfig::KEYS.contains(&key)
}
