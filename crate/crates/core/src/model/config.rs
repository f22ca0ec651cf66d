use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// How code-position tokens are embedded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Separation {
    /// One table for both modalities.
    Shared,
    /// Code-specific rows for the tokens of a separation set.
    Pes,
    /// A complete second table for code positions.
    Fes,
}

impl Separation {
    pub const ALL: [Separation; 3] = [Separation::Shared, Separation::Pes, Separation::Fes];

    pub fn as_str(self) -> &'static str {
        match self {
            Separation::Shared => "shared",
            Separation::Pes => "pes",
            Separation::Fes => "fes",
        }
    }
}

impl fmt::Display for Separation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Separation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(Separation::Shared),
            "pes" => Ok(Separation::Pes),
            "fes" => Ok(Separation::Fes),
            other => Err(Error::Config(format!("unknown separation `{other}` (expected shared, pes or fes)"))),
        }
    }
}

/// Transformer shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layers: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
    pub heads: usize,
    /// Maximum sequence length.
    pub context: usize,
    pub vocab_size: usize,
    pub separation: Separation,
    /// Token ids with a code-specific row; only meaningful under `pes`.
    #[serde(default)]
    pub separation_set: Option<Vec<u32>>,
    /// Score the output against the input embeddings instead of a free
    /// projection.
    #[serde(default = "default_true")]
    pub tie_output: bool,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    /// 2 layers, width 64, context 256.
    pub fn toy(vocab_size: usize) -> Self {
        ModelConfig {
            layers: 2,
            model_dim: 64,
            ffn_dim: 256,
            heads: 4,
            context: 256,
            vocab_size,
            separation: Separation::Shared,
            separation_set: None,
            tie_output: true,
        }
    }

    /// 4 layers, width 128, context 512.
    pub fn small(vocab_size: usize) -> Self {
        ModelConfig {
            layers: 4,
            model_dim: 128,
            ffn_dim: 512,
            heads: 4,
            context: 512,
            vocab_size,
            separation: Separation::Shared,
            separation_set: None,
            tie_output: true,
        }
    }

    pub fn preset(name: &str, vocab_size: usize) -> Result<Self> {
        match name {
            "toy" => Ok(Self::toy(vocab_size)),
            "small" => Ok(Self::small(vocab_size)),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected toy or small)"))),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.model_dim == 0 || self.ffn_dim == 0 || self.heads == 0 {
            return fail("layers, model_dim, ffn_dim and heads must be positive".into());
        }
        if self.model_dim % self.heads != 0 {
            return fail(format!("model_dim {} is not divisible by heads {}", self.model_dim, self.heads));
        }
        if self.context == 0 {
            return fail("context must be at least 1".into());
        }
        if self.vocab_size == 0 {
            return fail("vocab_size must be positive".into());
        }
        match (self.separation, &self.separation_set) {
            (Separation::Pes, None) => return fail("pes separation requires a separation set".into()),
            (Separation::Pes, Some(set)) => {
                if let Some(bad) = set.iter().find(|id| **id as usize >= self.vocab_size) {
                    return fail(format!("separation set id {bad} is outside the vocabulary"));
                }
                if set.windows(2).any(|w| w[0] >= w[1]) {
                    return fail("separation set ids must be strictly increasing".into());
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Token ids owning a code-specific row, in overlay-row order.
    pub fn overlay_ids(&self) -> Vec<u32> {
        match self.separation {
            Separation::Shared => Vec::new(),
            Separation::Pes => self.separation_set.clone().unwrap_or_default(),
            Separation::Fes => (0..self.vocab_size as u32).collect(),
        }
    }
}
