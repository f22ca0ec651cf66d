use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::PackedSample;
use crate::{Error, Result};

/// Attention pattern inside one segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionRegime {
    Causal,
    /// The prefix (everything before `[python]`) attends bidirectionally
    /// within itself; later positions are causal.
    PrefixBidirectional,
}

impl fmt::Display for AttentionRegime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionRegime::Causal => "causal",
            AttentionRegime::PrefixBidirectional => "prefix_bidirectional",
        })
    }
}

impl FromStr for AttentionRegime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causal" => Ok(AttentionRegime::Causal),
            "prefix_bidirectional" => Ok(AttentionRegime::PrefixBidirectional),
            other => Err(Error::Config(format!("unknown attention regime `{other}`"))),
        }
    }
}

/// A contiguous run of positions that attend only to each other.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub range: Range<usize>,
    /// Leading positions with bidirectional attention; 0 is plain causal.
    pub prefix: usize,
}

impl Block {
    /// Whether block-relative position `i` may attend to `j`.
    pub fn allows(&self, i: usize, j: usize) -> bool {
        j <= i || (i < self.prefix && j < self.prefix)
    }
}

/// Block-diagonal attention mask. Positions outside every block (padding)
/// attend to nothing and are attended by nothing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttentionMask {
    len: usize,
    blocks: Vec<Block>,
}

impl AttentionMask {
    pub fn new(len: usize, blocks: Vec<Block>) -> Result<Self> {
        let mut end = 0;
        for b in &blocks {
            if b.range.start < end || b.range.end > len || b.range.is_empty() {
                return Err(Error::Data(format!("attention block {:?} is out of order or out of range", b.range)));
            }
            if b.prefix > b.range.len() {
                return Err(Error::Data(format!(
                    "prefix length {} exceeds segment length {}",
                    b.prefix,
                    b.range.len()
                )));
            }
            end = b.range.end;
        }
        Ok(AttentionMask { len, blocks })
    }

    /// One segment spanning the whole sequence.
    pub fn single(len: usize, prefix: usize) -> Result<Self> {
        if len == 0 {
            return Self::new(0, Vec::new());
        }
        Self::new(len, vec![Block { range: 0..len, prefix }])
    }

    pub fn for_sample(sample: &PackedSample, regime: AttentionRegime) -> Result<Self> {
        let blocks = sample
            .segments
            .iter()
            .map(|seg| Block {
                range: seg.range(),
                prefix: match regime {
                    AttentionRegime::Causal => 0,
                    AttentionRegime::PrefixBidirectional => seg.prefix_len(),
                },
            })
            .collect();
        Self::new(sample.len(), blocks)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.blocks.iter().any(|b| {
            b.range.contains(&i) && b.range.contains(&j) && b.allows(i - b.range.start, j - b.range.start)
        })
    }

    /// `dense()[i][j]` is true iff position `i` may attend to `j`.
    pub fn dense(&self) -> Vec<Vec<bool>> {
        (0..self.len).map(|i| (0..self.len).map(|j| self.allowed(i, j)).collect()).collect()
    }
}

/// Dense boolean attention mask for a packed sample.
pub fn build_attention_mask(sample: &PackedSample, regime: AttentionRegime) -> Result<Vec<Vec<bool>>> {
    Ok(AttentionMask::for_sample(sample, regime)?.dense())
}
