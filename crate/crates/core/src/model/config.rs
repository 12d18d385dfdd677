use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::FEATURE_VOCAB_SIZE;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionScore {
    /// `sᵀ W_a h`
    General,
    /// `sᵀ (h_fwd + h_bwd)`; the annotation halves are summed so both sides have width q.
    Dot,
}

impl fmt::Display for AttentionScore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionScore::General => "general",
            AttentionScore::Dot => "dot",
        })
    }
}

impl FromStr for AttentionScore {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "general" => Ok(AttentionScore::General),
            "dot" => Ok(AttentionScore::Dot),
            other => Err(Error::Config(format!(
                "attention must be `general` or `dot`, got {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Character embedding width p₁, also used for target embeddings.
    pub char_embed: usize,
    /// Radical embedding width p₂; total source embedding is p₁ + p₂.
    pub feature_embed: usize,
    /// LSTM cells q.
    pub hidden: usize,
    pub layers: usize,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub feature_vocab: usize,
    pub attention: AttentionScore,
    pub input_feed: bool,
    /// When false the radical embedding table does not exist at all.
    pub feature_path: bool,
}

impl ModelConfig {
    pub fn new(src_vocab: usize, tgt_vocab: usize) -> Self {
        ModelConfig {
            char_embed: 448,
            feature_embed: 64,
            hidden: 512,
            layers: 1,
            src_vocab,
            tgt_vocab,
            feature_vocab: FEATURE_VOCAB_SIZE,
            attention: AttentionScore::General,
            input_feed: true,
            feature_path: true,
        }
    }

    /// Same architecture without the radical embedding.
    pub fn baseline(&self) -> Self {
        ModelConfig {
            feature_embed: 0,
            feature_path: false,
            ..self.clone()
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.char_embed + if self.feature_path { self.feature_embed } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.char_embed < 1 {
            return fail("char_embed must be at least 1".into());
        }
        if self.hidden < 1 {
            return fail("hidden must be at least 1".into());
        }
        if self.layers != 1 {
            return fail(format!("only single-layer models are supported, got {}", self.layers));
        }
        if self.src_vocab < 4 || self.tgt_vocab < 4 {
            return fail("vocabularies must include the four reserved ids".into());
        }
        if self.feature_vocab < 1 {
            return fail("feature_vocab must be at least 1".into());
        }
        Ok(())
    }
}
