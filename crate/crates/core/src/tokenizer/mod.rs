//! Byte-pair subword vocabulary with atomic control symbols and byte
//! fallback, plus the programming-language token set used for partial
//! embedding separation.

mod sepset;
mod train;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use sepset::{build_separation_set, SeparationSet, DEFAULT_EXTRA, PYTHON_BUILTINS, PYTHON_KEYWORDS};
pub use train::train_vocabulary;

use crate::{control, Error, Result};

/// Marks a word that was preceded by a space.
pub const WORD_BOUNDARY: char = '\u{2581}';
const WORD_BOUNDARY_STR: &str = "\u{2581}";

pub type TokenId = u32;

fn byte_token(b: u8) -> String {
    format!("<0x{b:02X}>")
}

fn parse_byte_token(s: &str) -> Option<u8> {
    let hex = s.strip_prefix("<0x")?.strip_suffix('>')?;
    if hex.len() != 2 {
        return None;
    }
    u8::from_str_radix(hex, 16).ok()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct VocabularyFile {
    tokens: Vec<String>,
    merges: Vec<(String, String)>,
    control_tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

/// A trained subword vocabulary. Immutable after construction; encoding and
/// decoding take `&self` and are safe to share across threads.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
    merges: Vec<(String, String)>,
    merge_ranks: HashMap<(String, String), usize>,
    control_tokens: Vec<String>,
    control_ids: Vec<TokenId>,
    byte_ids: Vec<TokenId>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens && self.merges == other.merges && self.control_tokens == other.control_tokens
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Sym {
    Text(String),
    Byte(u8),
}

impl Vocabulary {
    pub(crate) fn from_parts(
        tokens: Vec<String>,
        merges: Vec<(String, String)>,
        control_tokens: Vec<String>,
    ) -> Result<Self> {
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Data(format!("duplicate token {t:?} in vocabulary")));
            }
        }
        let control_ids = control_tokens
            .iter()
            .map(|c| ids.get(c).copied().ok_or_else(|| Error::Data(format!("control token {c} missing"))))
            .collect::<Result<Vec<_>>>()?;
        let byte_ids = (0..=255u8)
            .map(|b| {
                ids.get(&byte_token(b))
                    .copied()
                    .ok_or_else(|| Error::Data(format!("byte token {} missing", byte_token(b))))
            })
            .collect::<Result<Vec<_>>>()?;
        let merge_ranks = merges
            .iter()
            .enumerate()
            .map(|(rank, pair)| (pair.clone(), rank))
            .collect();
        Ok(Vocabulary {
            tokens,
            ids,
            merges,
            merge_ranks,
            control_tokens,
            control_ids,
            byte_ids,
        })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn control_tokens(&self) -> &[String] {
        &self.control_tokens
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    /// Id of a control symbol; panics if `symbol` is not one.
    pub fn control_id(&self, symbol: &str) -> TokenId {
        self.id(symbol)
            .filter(|id| self.control_ids.contains(id))
            .unwrap_or_else(|| panic!("{symbol} is not a control token"))
    }

    pub fn is_control(&self, id: TokenId) -> bool {
        self.control_ids.contains(&id)
    }

    pub fn pad_id(&self) -> TokenId {
        self.control_id(control::PAD)
    }

    /// Ids eligible as random replacement tokens (everything but controls).
    pub fn non_control_ids(&self) -> Vec<TokenId> {
        (0..self.size() as TokenId).filter(|id| !self.is_control(*id)).collect()
    }

    /// Surface form of a token with the word-boundary marker removed.
    pub fn surface(&self, id: TokenId) -> Option<&str> {
        self.token(id).map(|t| t.trim_start_matches(WORD_BOUNDARY))
    }

    /// Content hash of the token list and merges.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.tokens {
            hasher.update(t.as_bytes());
            hasher.update([0]);
        }
        for (a, b) in &self.merges {
            hasher.update(a.as_bytes());
            hasher.update([1]);
            hasher.update(b.as_bytes());
            hasher.update([0]);
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        for (chunk, is_control) in split_controls(text, &self.control_tokens) {
            if is_control {
                out.push(self.ids[chunk]);
                continue;
            }
            for piece in pretokenize(chunk) {
                self.encode_piece(piece, &mut out);
            }
        }
        out
    }

    fn encode_piece(&self, piece: Vec<Sym>, out: &mut Vec<TokenId>) {
        let mut syms: Vec<Sym> = piece
            .into_iter()
            .flat_map(|s| match s {
                Sym::Text(t) if self.ids.contains_key(&t) => vec![Sym::Text(t)],
                Sym::Text(t) => t.into_bytes().into_iter().map(Sym::Byte).collect(),
                byte => vec![byte],
            })
            .collect();
        loop {
            let best = syms
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| match (&w[0], &w[1]) {
                    (Sym::Text(a), Sym::Text(b)) => self
                        .merge_ranks
                        .get(&(a.clone(), b.clone()))
                        .map(|rank| (*rank, i)),
                    _ => None,
                })
                .min();
            let Some((_, i)) = best else { break };
            let Sym::Text(right) = syms.remove(i + 1) else { unreachable!() };
            if let Sym::Text(left) = &mut syms[i] {
                left.push_str(&right);
            }
        }
        for sym in syms {
            out.push(match sym {
                Sym::Text(t) => self.ids[&t],
                Sym::Byte(b) => self.byte_ids[b as usize],
            });
        }
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        let mut bytes = Vec::new();
        for &id in ids {
            let Some(token) = self.token(id) else { continue };
            if let Some(b) = parse_byte_token(token).filter(|b| self.byte_ids[*b as usize] == id) {
                bytes.push(b);
            } else if self.control_ids.contains(&id) {
                bytes.extend_from_slice(token.as_bytes());
            } else {
                bytes.extend_from_slice(token.replace(WORD_BOUNDARY, " ").as_bytes());
            }
        }
        String::from_utf8_lossy(&bytes).into_owned()
    }

    pub fn save(&self, path: &Path, config_hash: Option<&str>) -> Result<()> {
        let file = VocabularyFile {
            tokens: self.tokens.clone(),
            merges: self.merges.clone(),
            control_tokens: self.control_tokens.clone(),
            config_hash: config_hash.map(str::to_owned),
        };
        let json = serde_json::to_string(&file)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "tokens": self.tokens,
            "merges": self.merges,
            "control_tokens": self.control_tokens,
        })
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        let file: VocabularyFile = serde_json::from_value(value)?;
        Vocabulary::from_parts(file.tokens, file.merges, file.control_tokens)
    }

    /// Loads a vocabulary file, returning the config hash it was written with.
    pub fn load(path: &Path) -> Result<(Self, Option<String>)> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: VocabularyFile = serde_json::from_str(&text)?;
        let hash = file.config_hash.clone();
        Ok((Vocabulary::from_parts(file.tokens, file.merges, file.control_tokens)?, hash))
    }
}

/// Splits `text` into alternating plain chunks and control symbols.
fn split_controls<'a>(text: &'a str, controls: &[String]) -> Vec<(&'a str, bool)> {
    let mut out = Vec::new();
    let mut plain_start = 0usize;
    let mut pos = 0usize;
    while pos < text.len() {
        let rest = &text[pos..];
        if let Some(c) = controls.iter().find(|c| rest.starts_with(c.as_str())) {
            if plain_start < pos {
                out.push((&text[plain_start..pos], false));
            }
            out.push((&text[pos..pos + c.len()], true));
            pos += c.len();
            plain_start = pos;
        } else {
            pos += rest.chars().next().map_or(1, char::len_utf8);
        }
    }
    if plain_start < text.len() {
        out.push((&text[plain_start..], false));
    }
    out
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Pre-tokenization: word runs and single non-word characters, each
/// optionally carrying the boundary marker for one preceding space.
/// A literal boundary-marker character in the input is forced to bytes.
fn pretokenize(chunk: &str) -> Vec<Vec<Sym>> {
    let mut pieces: Vec<Vec<Sym>> = Vec::new();
    let mut current: Vec<Sym> = Vec::new();
    let mut in_word = false;
    let mut pending_space = false;
    let flush = |current: &mut Vec<Sym>, pieces: &mut Vec<Vec<Sym>>| {
        if !current.is_empty() {
            pieces.push(std::mem::take(current));
        }
    };
    for c in chunk.chars() {
        if c == ' ' {
            flush(&mut current, &mut pieces);
            in_word = false;
            if pending_space {
                pieces.push(vec![Sym::Text(WORD_BOUNDARY_STR.into())]);
            }
            pending_space = true;
            continue;
        }
        let word = is_word_char(c);
        if !(word && in_word) {
            flush(&mut current, &mut pieces);
            if pending_space {
                current.push(Sym::Text(WORD_BOUNDARY_STR.into()));
                pending_space = false;
            }
        }
        if c == WORD_BOUNDARY {
            current.extend(c.to_string().into_bytes().into_iter().map(Sym::Byte));
        } else {
            current.push(Sym::Text(c.to_string()));
        }
        in_word = word;
    }
    flush(&mut current, &mut pieces);
    if pending_space {
        pieces.push(vec![Sym::Text(WORD_BOUNDARY_STR.into())]);
    }
    pieces
}
