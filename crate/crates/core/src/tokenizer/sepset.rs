use std::collections::{BTreeSet, HashSet};
use std::path::Path;

use super::{TokenId, Vocabulary};
use crate::{Error, Result};

/// Python 3 keywords and soft keywords.
pub const PYTHON_KEYWORDS: &[&str] = &[
    "False", "None", "True", "and", "as", "assert", "async", "await", "break", "class", "continue",
    "def", "del", "elif", "else", "except", "finally", "for", "from", "global", "if", "import", "in",
    "is", "lambda", "nonlocal", "not", "or", "pass", "raise", "return", "try", "while", "with",
    "yield", "match", "case",
];

/// Python built-in functions and types.
pub const PYTHON_BUILTINS: &[&str] = &[
    "abs", "aiter", "all", "anext", "any", "ascii", "bin", "bool", "breakpoint", "bytearray", "bytes",
    "callable", "chr", "classmethod", "compile", "complex", "delattr", "dict", "dir", "divmod",
    "enumerate", "eval", "exec", "filter", "float", "format", "frozenset", "getattr", "globals",
    "hasattr", "hash", "help", "hex", "id", "input", "int", "isinstance", "issubclass", "iter", "len",
    "list", "locals", "map", "max", "memoryview", "min", "next", "object", "oct", "open", "ord", "pow",
    "print", "property", "range", "repr", "reversed", "round", "set", "setattr", "slice", "sorted",
    "staticmethod", "str", "sum", "super", "tuple", "type", "vars", "zip", "__import__",
];

/// Common methods of the standard container and string types.
pub const DEFAULT_EXTRA: &[&str] = &[
    "join", "split", "strip", "lstrip", "rstrip", "replace", "startswith", "endswith", "find",
    "lower", "upper", "format", "encode", "decode", "append", "extend", "insert", "pop", "remove",
    "index", "count", "sort", "reverse", "copy", "clear", "get", "items", "keys", "values", "update",
    "setdefault", "add", "discard", "union", "intersection", "difference", "read", "write", "close",
    "readline", "readlines", "self", "cls",
];

/// Vocabulary ids whose tokens get a separate code-modality embedding.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SeparationSet {
    token_ids: BTreeSet<TokenId>,
}

impl SeparationSet {
    pub fn from_ids(ids: impl IntoIterator<Item = TokenId>) -> Self {
        SeparationSet {
            token_ids: ids.into_iter().collect(),
        }
    }

    pub fn contains(&self, id: TokenId) -> bool {
        self.token_ids.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Ids in ascending order.
    pub fn ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.token_ids.iter().copied()
    }

    pub fn is_subset(&self, other: &SeparationSet) -> bool {
        self.token_ids.is_subset(&other.token_ids)
    }

    /// Writes the set as a JSON array of ids.
    pub fn save(&self, path: &Path) -> Result<()> {
        let ids: Vec<TokenId> = self.ids().collect();
        std::fs::write(path, serde_json::to_string(&ids)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ids: Vec<TokenId> = serde_json::from_str(&text)?;
        Ok(SeparationSet::from_ids(ids))
    }
}

/// A token is selected iff its surface form (boundary marker stripped)
/// equals an entry of `keywords ∪ builtins ∪ extra`. Words the vocabulary
/// splits into several pieces therefore never contribute.
pub fn build_separation_set(vocab: &Vocabulary, keywords: &[&str], builtins: &[&str], extra: &[&str]) -> SeparationSet {
    let wanted: HashSet<&str> = keywords.iter().chain(builtins).chain(extra).copied().collect();
    SeparationSet::from_ids(
        (0..vocab.size() as TokenId)
            .filter(|id| !vocab.is_control(*id))
            .filter(|id| vocab.surface(*id).is_some_and(|s| wanted.contains(s))),
    )
}
