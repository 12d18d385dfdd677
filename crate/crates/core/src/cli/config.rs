//! Flat `key=value` run configuration.
//!
//! Resolution order, later wins: built-in defaults, `--profile`, `--preset`,
//! the config file, then `--set key=value` flags on the command line.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::corpus::{DEFAULT_MAX_SENTENCE_CHARS, FEATURE_VOCAB_SIZE};
use crate::decoding::BeamConfig;
use crate::error::{Error, Result};
use crate::io::read_utf8;
use crate::model::{AttentionScore, ModelConfig};
use crate::training::{LrSchedule, TrainConfig};

pub const SEED_ENV: &str = "RADNMT_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Plateau,
    Fixed,
    Constant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Total source embedding width p = p₁ + p₂.
    pub embed: usize,
    pub feature_embed: usize,
    pub hidden: usize,
    pub attention: AttentionScore,
    pub input_feed: bool,
    pub feature_path: bool,
    /// `schedule` is rebuilt from the three fields below after every change.
    pub train: TrainConfig,
    pub schedule: ScheduleKind,
    pub min_improvement: f64,
    pub decay_start: usize,
    pub beam: BeamConfig,
    pub min_count: usize,
    pub max_vocab: Option<usize>,
    pub max_sent_len: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            embed: 512,
            feature_embed: 64,
            hidden: 512,
            attention: AttentionScore::General,
            input_feed: true,
            feature_path: true,
            train: TrainConfig::default(),
            schedule: ScheduleKind::Plateau,
            min_improvement: 0.001,
            decay_start: 1,
            beam: BeamConfig::default(),
            min_count: 1,
            max_vocab: None,
            max_sent_len: DEFAULT_MAX_SENTENCE_CHARS,
        }
    }
}

/// Every accepted key with the type expected for its value.
pub const KEYS: &[(&str, &str)] = &[
    ("embed", "unsigned integer"),
    ("feature_embed", "unsigned integer"),
    ("hidden", "unsigned integer"),
    ("attention", "general|dot"),
    ("input_feed", "bool"),
    ("feature_path", "bool"),
    ("lr", "float"),
    ("lr_decay", "float"),
    ("schedule", "plateau|fixed|constant"),
    ("min_improvement", "float"),
    ("decay_start", "unsigned integer"),
    ("clip", "float"),
    ("batch_size", "unsigned integer"),
    ("dropout", "float"),
    ("epochs", "unsigned integer"),
    ("seed", "unsigned integer"),
    ("eval_every", "unsigned integer"),
    ("patience", "unsigned integer"),
    ("beam", "unsigned integer"),
    ("max_len", "unsigned integer or none"),
    ("alpha", "float"),
    ("min_count", "unsigned integer"),
    ("max_vocab", "unsigned integer or none"),
    ("max_sent_len", "unsigned integer"),
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| {
        let expected = KEYS.iter().find(|(k, _)| *k == key).map_or("?", |(_, t)| t);
        Error::Config(format!("{key}: expected {expected}, got {value:?}"))
    })
}

fn parse_opt(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

impl RunConfig {
    /// Named size profile: `toy` or `paper`.
    pub fn apply_profile(&mut self, name: &str) -> Result<()> {
        match name {
            "toy" => {
                self.embed = 64;
                self.feature_embed = 16;
                self.hidden = 64;
            }
            "paper" => {
                self.embed = 512;
                self.feature_embed = 64;
                self.hidden = 512;
            }
            other => return Err(Error::Config(format!("unknown profile {other:?} (expected toy or paper)"))),
        }
        Ok(())
    }

    /// Named dropout preset: `paper-default` (0.8) or `paper-best` (0.3).
    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        self.train.dropout = match name {
            "paper-default" => 0.8,
            "paper-best" => 0.3,
            other => {
                return Err(Error::Config(format!(
                    "unknown preset {other:?} (expected paper-default or paper-best)"
                )))
            }
        };
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let t = &mut self.train;
        match key {
            "embed" => self.embed = parse(key, value)?,
            "feature_embed" => self.feature_embed = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "attention" => self.attention = value.parse()?,
            "input_feed" => self.input_feed = parse(key, value)?,
            "feature_path" => self.feature_path = parse(key, value)?,
            "lr" => t.lr = parse(key, value)?,
            "lr_decay" => t.lr_decay = parse(key, value)?,
            "schedule" => {
                self.schedule = match value {
                    "plateau" => ScheduleKind::Plateau,
                    "fixed" => ScheduleKind::Fixed,
                    "constant" => ScheduleKind::Constant,
                    _ => return Err(Error::Config(format!("schedule: expected plateau|fixed|constant, got {value:?}"))),
                }
            }
            "min_improvement" => self.min_improvement = parse(key, value)?,
            "decay_start" => self.decay_start = parse(key, value)?,
            "clip" => t.max_norm = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "dropout" => t.dropout = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "eval_every" => t.eval_every = parse(key, value)?,
            "patience" => t.patience = parse(key, value)?,
            "beam" => self.beam.beam_size = parse(key, value)?,
            "max_len" => self.beam.max_len = parse_opt(key, value)?,
            "alpha" => self.beam.alpha = parse(key, value)?,
            "min_count" => self.min_count = parse(key, value)?,
            "max_vocab" => self.max_vocab = parse_opt(key, value)?,
            "max_sent_len" => self.max_sent_len = parse(key, value)?,
            other => {
                let known: Vec<&str> = KEYS.iter().map(|(k, _)| *k).collect();
                return Err(Error::Config(format!(
                    "unknown config key {other:?}; valid keys: {}",
                    known.join(", ")
                )));
            }
        }
        self.train.schedule = match self.schedule {
            ScheduleKind::Plateau => LrSchedule::Plateau {
                min_improvement: self.min_improvement,
            },
            ScheduleKind::Fixed => LrSchedule::FixedEpoch {
                start_epoch: self.decay_start,
            },
            ScheduleKind::Constant => LrSchedule::Constant,
        };
        Ok(())
    }

    /// Applies a `key=value` file. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: origin.to_path_buf(),
                line: i + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            self.set(key.trim(), value).map_err(|e| match e {
                Error::Config(msg) => Error::Config(format!("{}:{}: {msg}", origin.display(), i + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides given on the command line.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (key, value) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects key=value, got {o:?}")))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn model_config(&self, src_vocab: usize, tgt_vocab: usize) -> Result<ModelConfig> {
        let p2 = if self.feature_path { self.feature_embed } else { 0 };
        if p2 >= self.embed {
            return Err(Error::Config(format!(
                "feature_embed ({p2}) must be smaller than embed ({})",
                self.embed
            )));
        }
        let config = ModelConfig {
            char_embed: self.embed - p2,
            feature_embed: p2,
            hidden: self.hidden,
            layers: 1,
            src_vocab,
            tgt_vocab,
            feature_vocab: FEATURE_VOCAB_SIZE,
            attention: self.attention,
            input_feed: self.input_feed,
            feature_path: self.feature_path,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model_config(4, 4)?;
        if self.beam.beam_size == 0 {
            return Err(Error::Config("beam must be at least 1".into()));
        }
        Ok(())
    }

    /// Resolved values of every key, for run manifests.
    pub fn to_pairs(&self) -> BTreeMap<String, String> {
        let t = &self.train;
        let opt = |v: Option<usize>| v.map_or_else(|| "none".to_string(), |v| v.to_string());
        let schedule = match self.schedule {
            ScheduleKind::Plateau => "plateau",
            ScheduleKind::Fixed => "fixed",
            ScheduleKind::Constant => "constant",
        };
        [
            ("embed", self.embed.to_string()),
            ("feature_embed", self.feature_embed.to_string()),
            ("hidden", self.hidden.to_string()),
            ("attention", self.attention.to_string()),
            ("input_feed", self.input_feed.to_string()),
            ("feature_path", self.feature_path.to_string()),
            ("lr", t.lr.to_string()),
            ("lr_decay", t.lr_decay.to_string()),
            ("schedule", schedule.to_string()),
            ("min_improvement", self.min_improvement.to_string()),
            ("decay_start", self.decay_start.to_string()),
            ("clip", t.max_norm.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("dropout", t.dropout.to_string()),
            ("epochs", t.epochs.to_string()),
            ("seed", t.seed.to_string()),
            ("eval_every", t.eval_every.to_string()),
            ("patience", t.patience.to_string()),
            ("beam", self.beam.beam_size.to_string()),
            ("max_len", opt(self.beam.max_len)),
            ("alpha", self.beam.alpha.to_string()),
            ("min_count", self.min_count.to_string()),
            ("max_vocab", opt(self.max_vocab)),
            ("max_sent_len", self.max_sent_len.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

/// Defaults overridden by the file at `path`.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    config.apply_text(&read_utf8(path)?, path)?;
    Ok(config)
}

/// The configuration sources of one run, lowest precedence first.
#[derive(Clone, Debug, Default)]
pub struct ConfigLayers<'a> {
    pub profile: Option<&'a str>,
    pub preset: Option<&'a str>,
    pub env_seed: Option<u64>,
    /// File contents and the path used in error messages.
    pub file: Option<(&'a str, &'a Path)>,
    pub overrides: &'a [String],
    pub seed: Option<u64>,
}

impl ConfigLayers<'_> {
    /// Defaults, then profile, preset, environment seed, file, overrides and
    /// finally the explicit seed flag.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(p) = self.profile {
            cfg.apply_profile(p)?;
        }
        if let Some(p) = self.preset {
            cfg.apply_preset(p)?;
        }
        if let Some(s) = self.env_seed {
            cfg.train.seed = s;
        }
        if let Some((text, origin)) = self.file {
            cfg.apply_text(text, origin)?;
        }
        cfg.apply_overrides(self.overrides)?;
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Seed from the environment fallback, if set.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}: expected unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}
