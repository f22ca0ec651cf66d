//! Tokenized, modality-labelled instances and fixed-length packed samples.

mod pack;
mod records;

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub use pack::{pack, shuffle, PackedSample, Segment, PAD_SEGMENT};
pub use records::{read_packed, write_packed, PackedHeader};

use crate::control::{DESCR, EOC, PYTHON, SOS};
use crate::corpus::{FormattedPair, Style};
use crate::tokenizer::{TokenId, Vocabulary};
use crate::{Error, Result};

/// Which embedding space a token belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Nl,
    Code,
}

impl Modality {
    pub fn as_u8(self) -> u8 {
        match self {
            Modality::Nl => 0,
            Modality::Code => 1,
        }
    }

    pub fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Modality::Nl),
            1 => Ok(Modality::Code),
            other => Err(Error::Data(format!("bad modality byte {other}"))),
        }
    }
}

/// One docstring/signature/code example.
///
/// Spans index into `ids`. The template markers (`[descr]`, `[python]`,
/// `[eoc]`, and `[sos]` for the PyCodeGPT layout) lie outside all spans, so
/// `len == doc + sig + code + markers`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub ids: Vec<TokenId>,
    pub modality: Vec<Modality>,
    pub doc_span: Range<usize>,
    pub sig_span: Range<usize>,
    pub code_span: Range<usize>,
    pub style: Style,
}

impl Instance {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of template markers.
    pub fn marker_count(&self) -> usize {
        match self.style {
            Style::Pangu => 3,
            Style::Pycodegpt => 4,
        }
    }

    /// Length of the bidirectional prefix: everything before `[python]`.
    /// For the PanGu layout that is `[descr]` plus the docstring, for the
    /// PyCodeGPT layout it also covers the signature.
    pub fn prefix_len(&self) -> usize {
        self.doc_span.end
    }
}

fn push(ids: &mut Vec<TokenId>, modality: &mut Vec<Modality>, new: &[TokenId], m: Modality) -> Range<usize> {
    let start = ids.len();
    ids.extend_from_slice(new);
    modality.extend(std::iter::repeat_n(m, new.len()));
    start..ids.len()
}

/// Tokenizes a pair into an instance. Instances longer than `context` are
/// rejected rather than truncated.
pub fn tokenize_pair(pair: &FormattedPair, vocab: &Vocabulary, context: usize) -> Result<Instance> {
    let mut ids = Vec::new();
    let mut modality = Vec::new();
    let doc = vocab.encode(&format!(" {} ", pair.docstring));
    let code = vocab.encode(&format!(" {} ", pair.code));
    let marker = |s: &str| [vocab.control_id(s)];
    let (doc_span, sig_span);
    match pair.format_style {
        Style::Pangu => {
            push(&mut ids, &mut modality, &marker(DESCR), Modality::Nl);
            doc_span = push(&mut ids, &mut modality, &doc, Modality::Nl);
            push(&mut ids, &mut modality, &marker(PYTHON), Modality::Code);
            let sig = vocab.encode(&format!(" {}", pair.signature));
            sig_span = push(&mut ids, &mut modality, &sig, Modality::Code);
        }
        Style::Pycodegpt => {
            push(&mut ids, &mut modality, &marker(SOS), Modality::Code);
            let sig = vocab.encode(&format!(" {} ", pair.signature));
            sig_span = push(&mut ids, &mut modality, &sig, Modality::Code);
            push(&mut ids, &mut modality, &marker(DESCR), Modality::Nl);
            doc_span = push(&mut ids, &mut modality, &doc, Modality::Nl);
            push(&mut ids, &mut modality, &marker(PYTHON), Modality::Code);
        }
    }
    let code_span = push(&mut ids, &mut modality, &code, Modality::Code);
    push(&mut ids, &mut modality, &marker(EOC), Modality::Code);
    if ids.len() > context {
        return Err(Error::InstanceTooLong {
            len: ids.len(),
            context,
        });
    }
    Ok(Instance {
        ids,
        modality,
        doc_span,
        sig_span,
        code_span,
        style: pair.format_style,
    })
}

/// Tokenizes all pairs, dropping (and logging) over-length ones.
pub fn tokenize_all(pairs: &[FormattedPair], vocab: &Vocabulary, context: usize) -> (Vec<Instance>, usize) {
    let mut dropped = 0;
    let instances = pairs
        .iter()
        .filter_map(|p| match tokenize_pair(p, vocab, context) {
            Ok(inst) => Some(inst),
            Err(err) => {
                log::info!("dropping pair from {}: {err}", p.source_path);
                dropped += 1;
                None
            }
        })
        .collect();
    (instances, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control;
    use crate::corpus::format_pair;
    use crate::corpus::RawFunction;
    use crate::tokenizer::train_vocabulary;

    fn gcd_pair(style: Style) -> FormattedPair {
        let f = RawFunction {
            signature_text: "def gcd(a: int, b: int) -> int:".into(),
            docstring_text: Some("Return a greatest common divisor of two integers a and b".into()),
            body_text: "while b:\n    a, b = b, a\nreturn a".into(),
            source_path: String::new(),
            line_span: (1, 1),
        };
        format_pair(&f, style).unwrap()
    }

    fn vocab() -> Vocabulary {
        let texts = [gcd_pair(Style::Pangu).text(), gcd_pair(Style::Pycodegpt).text()];
        train_vocabulary(texts.iter().map(String::as_str), 320, &control::ALL).unwrap()
    }

    #[test]
    fn pangu_spans_and_modalities() {
        let v = vocab();
        let pair = gcd_pair(Style::Pangu);
        let inst = tokenize_pair(&pair, &v, 1024).unwrap();
        assert_eq!(inst.ids[0], v.control_id(control::DESCR));
        assert_eq!(v.decode(&inst.ids[inst.doc_span.clone()]).trim(), pair.docstring);
        assert_eq!(v.decode(&inst.ids[inst.sig_span.clone()]).trim(), pair.signature);
        assert_eq!(inst.ids[inst.doc_span.end], v.control_id(control::PYTHON));
        assert!(inst.doc_span.clone().all(|i| inst.modality[i] == Modality::Nl));
        assert!(inst.code_span.clone().all(|i| inst.modality[i] == Modality::Code));
        assert_eq!(
            inst.len(),
            inst.doc_span.len() + inst.sig_span.len() + inst.code_span.len() + inst.marker_count()
        );
        assert_eq!(v.decode(&inst.ids), pair.text());
    }

    #[test]
    fn pycodegpt_signature_precedes_docstring() {
        let v = vocab();
        let pair = gcd_pair(Style::Pycodegpt);
        let inst = tokenize_pair(&pair, &v, 1024).unwrap();
        assert!(inst.sig_span.end < inst.doc_span.start);
        assert_eq!(inst.modality[0], Modality::Code);
        assert_eq!(v.decode(&inst.ids), pair.text());
        assert_eq!(inst.prefix_len(), inst.doc_span.end);
        assert_eq!(inst.ids[inst.prefix_len()], v.control_id(control::PYTHON));
    }

    #[test]
    fn over_length_is_rejected() {
        let v = vocab();
        let err = tokenize_pair(&gcd_pair(Style::Pangu), &v, 8).unwrap_err();
        assert!(matches!(err, Error::InstanceTooLong { context: 8, .. }));
    }
}
