//! The four modality-relative training objectives, each a combination of a
//! loss mask, an attention regime and an optional docstring corruption.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::control::MASK;
use crate::dataset::{Instance, PackedSample};
use crate::model::{AttentionMask, AttentionRegime, Sequence};
use crate::tokenizer::{TokenId, Vocabulary};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    /// Causal LM over every token.
    TextCode,
    /// Causal LM scored on code tokens only.
    Code,
    /// `Code` with a randomly corrupted docstring.
    CorruptCode,
    /// `Code` with bidirectional attention over the prefix.
    PrefixCode,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 4] = [
        ObjectiveKind::TextCode,
        ObjectiveKind::Code,
        ObjectiveKind::CorruptCode,
        ObjectiveKind::PrefixCode,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ObjectiveKind::TextCode => "text-code",
            ObjectiveKind::Code => "code",
            ObjectiveKind::CorruptCode => "corrupt-code",
            ObjectiveKind::PrefixCode => "prefix-code",
        }
    }

    pub fn regime(self) -> AttentionRegime {
        match self {
            ObjectiveKind::PrefixCode => AttentionRegime::PrefixBidirectional,
            _ => AttentionRegime::Causal,
        }
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ObjectiveKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown objective `{s}` (expected text-code, code, corrupt-code or prefix-code)")))
    }
}

/// An objective with its corruption settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    pub kind: ObjectiveKind,
    /// Chance that each docstring token is selected for corruption.
    pub corruption_prob: f64,
    /// Probabilities of the mask / random-token / keep branches.
    pub branch_probs: [f64; 3],
}

impl Objective {
    pub fn new(kind: ObjectiveKind) -> Self {
        Objective {
            kind,
            corruption_prob: 0.15,
            branch_probs: [0.8, 0.1, 0.1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.corruption_prob) {
            return Err(Error::Config(format!("corruption_prob {} is outside [0, 1]", self.corruption_prob)));
        }
        if self.branch_probs.iter().any(|p| !(0.0..=1.0).contains(p)) || (self.branch_probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("branch probabilities {:?} must sum to 1", self.branch_probs)));
        }
        Ok(())
    }
}

/// How one selected docstring token is replaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Replacement {
    Mask,
    Random(TokenId),
    Keep,
}

/// The corrupted docstring positions and what replaced each.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CorruptionPlan {
    pub indices: Vec<usize>,
    pub replacement: Vec<Replacement>,
}

/// Token ids the corruption draws from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorruptionVocab {
    pub mask_id: TokenId,
    /// Candidates for the random branch: every non-control token.
    pub random_ids: Vec<TokenId>,
}

impl CorruptionVocab {
    pub fn from_vocabulary(vocab: &Vocabulary) -> Self {
        CorruptionVocab {
            mask_id: vocab.control_id(MASK),
            random_ids: vocab.non_control_ids(),
        }
    }
}

/// Target-indexed loss mask for one instance: entry `t` is 1 when token `t`
/// is predicted. Code-only objectives score the code body and `[eoc]`.
pub fn build_loss_mask(instance: &Instance, kind: ObjectiveKind) -> Vec<u8> {
    let n = instance.len();
    match kind {
        ObjectiveKind::TextCode => (0..n).map(|t| u8::from(t > 0)).collect(),
        _ => (0..n)
            .map(|t| u8::from(t > 0 && (instance.code_span.contains(&t) || t + 1 == n)))
            .collect(),
    }
}

/// Replaces randomly selected docstring tokens. Spans and modality labels
/// are left unchanged.
pub fn corrupt_docstring<R: Rng + ?Sized>(
    instance: &Instance,
    objective: &Objective,
    vocab: &CorruptionVocab,
    rng: &mut R,
) -> (Instance, CorruptionPlan) {
    let mut out = instance.clone();
    let mut plan = CorruptionPlan::default();
    let [mask_p, random_p, _] = objective.branch_probs;
    for i in instance.doc_span.clone() {
        if rng.random::<f64>() >= objective.corruption_prob {
            continue;
        }
        let u = rng.random::<f64>();
        let replacement = if u < mask_p {
            Replacement::Mask
        } else if u < mask_p + random_p && !vocab.random_ids.is_empty() {
            Replacement::Random(vocab.random_ids[rng.random_range(0..vocab.random_ids.len())])
        } else {
            Replacement::Keep
        };
        match replacement {
            Replacement::Mask => out.ids[i] = vocab.mask_id,
            Replacement::Random(id) => out.ids[i] = id,
            Replacement::Keep => {}
        }
        plan.indices.push(i);
        plan.replacement.push(replacement);
    }
    (out, plan)
}

/// Applies an objective to a packed sample: per-segment loss masks, docstring
/// corruption when the objective asks for it, and the attention regime.
pub fn prepare_sample<R: Rng + ?Sized>(
    sample: &PackedSample,
    objective: &Objective,
    vocab: &CorruptionVocab,
    rng: &mut R,
) -> Result<Sequence> {
    let mut ids = sample.ids.clone();
    let mut loss_mask = vec![0u8; sample.len()];
    for (k, seg) in sample.segments.iter().enumerate() {
        let mut inst = sample.segment_instance(k);
        if objective.kind == ObjectiveKind::CorruptCode {
            inst = corrupt_docstring(&inst, objective, vocab, rng).0;
        }
        ids[seg.range()].copy_from_slice(&inst.ids);
        loss_mask[seg.range()].copy_from_slice(&build_loss_mask(&inst, objective.kind));
    }
    Ok(Sequence {
        ids,
        modality: sample.modality.clone(),
        positions: sample.position_ids.clone(),
        mask: AttentionMask::for_sample(sample, objective.kind.regime())?,
        loss_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Style;
    use crate::dataset::Modality;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn instance(doc: usize, code: usize) -> Instance {
        let n = 1 + doc + 1 + 1 + code + 1;
        let mut modality = vec![Modality::Nl; 1 + doc];
        modality.resize(n, Modality::Code);
        Instance {
            ids: (0..n as u32).map(|i| 20 + i).collect(),
            modality,
            doc_span: 1..1 + doc,
            sig_span: 2 + doc..3 + doc,
            code_span: 3 + doc..3 + doc + code,
            style: Style::Pangu,
        }
    }

    fn vocab() -> CorruptionVocab {
        CorruptionVocab {
            mask_id: 8,
            random_ids: (9..100).collect(),
        }
    }

    #[test]
    fn code_mask_counts_code_and_eoc() {
        let m = build_loss_mask(&instance(5, 4), ObjectiveKind::Code);
        assert_eq!(m.iter().map(|v| *v as usize).sum::<usize>(), 5);
        assert_eq!(*m.last().unwrap(), 1);
    }

    #[test]
    fn text_code_mask_skips_only_first() {
        let m = build_loss_mask(&instance(5, 4), ObjectiveKind::TextCode);
        assert_eq!(m[0], 0);
        assert!(m[1..].iter().all(|v| *v == 1));
    }

    #[test]
    fn zero_probability_leaves_instance_unchanged() {
        let mut obj = Objective::new(ObjectiveKind::CorruptCode);
        obj.corruption_prob = 0.0;
        let inst = instance(6, 3);
        let (out, plan) = corrupt_docstring(&inst, &obj, &vocab(), &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(out, inst);
        assert!(plan.indices.is_empty());
    }

    #[test]
    fn forced_mask_branch_masks_whole_docstring() {
        let obj = Objective {
            kind: ObjectiveKind::CorruptCode,
            corruption_prob: 1.0,
            branch_probs: [1.0, 0.0, 0.0],
        };
        let inst = instance(6, 3);
        let (out, plan) = corrupt_docstring(&inst, &obj, &vocab(), &mut ChaCha8Rng::seed_from_u64(1));
        assert!(out.ids[inst.doc_span.clone()].iter().all(|id| *id == 8));
        assert_eq!(plan.indices, inst.doc_span.clone().collect::<Vec<_>>());
        assert_eq!(out.ids[inst.doc_span.end..], inst.ids[inst.doc_span.end..]);
        assert_eq!(out.modality, inst.modality);
    }

    #[test]
    fn seeded_plan_replays() {
        let obj = Objective::new(ObjectiveKind::CorruptCode);
        let inst = instance(40, 3);
        let a = corrupt_docstring(&inst, &obj, &vocab(), &mut ChaCha8Rng::seed_from_u64(9));
        let b = corrupt_docstring(&inst, &obj, &vocab(), &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert!(a.1.indices.iter().all(|i| inst.doc_span.contains(i)));
    }

    #[test]
    fn parses_cli_names() {
        for kind in ObjectiveKind::ALL {
            assert_eq!(kind.as_str().parse::<ObjectiveKind>().unwrap(), kind);
        }
        assert!("mlm".parse::<ObjectiveKind>().is_err());
    }
}
