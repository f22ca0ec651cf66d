use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Instance, Modality};
use crate::corpus::Style;
use crate::tokenizer::TokenId;
use crate::{Error, Result};

/// Segment id carried by padding positions.
pub const PAD_SEGMENT: u32 = u32::MAX;

/// Placement of one instance inside a packed sample. Spans are relative to
/// `start`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
    pub instance: u32,
    pub doc_span: Range<usize>,
    pub sig_span: Range<usize>,
    pub code_span: Range<usize>,
    pub style: Style,
}

impl Segment {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }

    pub fn prefix_len(&self) -> usize {
        self.doc_span.end
    }

    pub fn abs(&self, span: &Range<usize>) -> Range<usize> {
        self.start + span.start..self.start + span.end
    }
}

/// A fixed-length training row.
///
/// `loss_mask[i] == 1` marks token `i` as a prediction target, i.e. the
/// logits at position `i - 1` are scored against `ids[i]`. The first token of
/// a segment and all padding are never targets. [`pack`] fills the mask for
/// plain causal modelling; objectives overwrite it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedSample {
    pub ids: Vec<TokenId>,
    pub position_ids: Vec<u32>,
    pub segment_ids: Vec<u32>,
    pub loss_mask: Vec<u8>,
    pub modality: Vec<Modality>,
    pub pad_len: usize,
    pub segments: Vec<Segment>,
}

impl PackedSample {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn empty(context: usize, pad_id: TokenId) -> Self {
        PackedSample {
            ids: vec![pad_id; context],
            position_ids: vec![0; context],
            segment_ids: vec![PAD_SEGMENT; context],
            loss_mask: vec![0; context],
            modality: vec![Modality::Code; context],
            pad_len: context,
            segments: Vec::new(),
        }
    }

    fn used(&self) -> usize {
        self.ids.len() - self.pad_len
    }

    fn append(&mut self, inst: &Instance, instance: u32) {
        let start = self.used();
        for (offset, (&id, &m)) in inst.ids.iter().zip(&inst.modality).enumerate() {
            let at = start + offset;
            self.ids[at] = id;
            self.position_ids[at] = offset as u32;
            self.segment_ids[at] = instance;
            self.modality[at] = m;
            self.loss_mask[at] = u8::from(offset > 0);
        }
        self.pad_len -= inst.len();
        self.segments.push(Segment {
            start,
            len: inst.len(),
            instance,
            doc_span: inst.doc_span.clone(),
            sig_span: inst.sig_span.clone(),
            code_span: inst.code_span.clone(),
            style: inst.style,
        });
    }

    /// A sample holding exactly one instance and no padding.
    pub fn solo(inst: &Instance, pad_id: TokenId) -> Self {
        let mut sample = PackedSample::empty(inst.len(), pad_id);
        sample.append(inst, 0);
        sample
    }

    /// The instance tokens of segment `k`, reassembled.
    pub fn segment_instance(&self, k: usize) -> Instance {
        let seg = &self.segments[k];
        Instance {
            ids: self.ids[seg.range()].to_vec(),
            modality: self.modality[seg.range()].to_vec(),
            doc_span: seg.doc_span.clone(),
            sig_span: seg.sig_span.clone(),
            code_span: seg.code_span.clone(),
            style: seg.style,
        }
    }
}

/// Greedy sequential packing: instances are appended while they fit; the
/// first one that does not fit starts the next sample, and the finished
/// sample is padded to `context`.
pub fn pack(instances: &[Instance], context: usize, pad_id: TokenId) -> Result<Vec<PackedSample>> {
    let mut samples = Vec::new();
    let mut current = PackedSample::empty(context, pad_id);
    for (index, inst) in instances.iter().enumerate() {
        if inst.len() > context {
            return Err(Error::InstanceTooLong {
                len: inst.len(),
                context,
            });
        }
        if inst.is_empty() {
            continue;
        }
        if current.pad_len < inst.len() {
            samples.push(std::mem::replace(&mut current, PackedSample::empty(context, pad_id)));
        }
        current.append(inst, index as u32);
    }
    if !current.segments.is_empty() {
        samples.push(current);
    }
    Ok(samples)
}

/// Deterministic shuffle of instances.
pub fn shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    items.shuffle(&mut rng);
}
