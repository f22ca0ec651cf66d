//! Modality-relative continual pre-training for text-to-code models.
//!
//! The crate covers the whole desk-scale pipeline: extracting docstring/code
//! pairs from Python sources, training a subword vocabulary with atomic
//! control symbols, packing tokenized instances, a small GPT-style decoder
//! with shared, partially separated or fully separated docstring/code
//! embeddings, the four modality-relative objectives, an Adam trainer,
//! nucleus decoding, and a functional-correctness harness with pass@k and
//! incremental pass@k.

pub mod analysis;
pub mod corpus;
pub mod dataset;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod model;
pub mod objectives;
pub mod tokenizer;
pub mod trainer;

pub use error::{Error, Result};

/// Control symbols that the tokenizer never splits.
pub mod control {
    pub const PAD: &str = "[pad]";
    pub const DESCR: &str = "[descr]";
    pub const PYTHON: &str = "[python]";
    pub const EOC: &str = "[eoc]";
    pub const SOS: &str = "[sos]";
    pub const NEW_LINE: &str = "[new_line]";
    pub const INDENT: &str = "[indent]";
    pub const DEDENT: &str = "[dedent]";
    pub const MASK: &str = "[MASK]";

    /// All control symbols in id order.
    pub const ALL: [&str; 9] = [PAD, DESCR, PYTHON, EOC, SOS, NEW_LINE, INDENT, DEDENT, MASK];

    /// Whitespace markers produced by code normalization.
    pub const WHITESPACE_MARKERS: [&str; 3] = [NEW_LINE, INDENT, DEDENT];

    pub fn contains_any(text: &str) -> bool {
        ALL.iter().any(|c| text.contains(c))
    }
}
