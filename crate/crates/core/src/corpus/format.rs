//! Training-text templates for docstring/code pairs.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::extract::RawFunction;
use super::normalize::normalize_whitespace;
use crate::control::{DEDENT, DESCR, EOC, INDENT, NEW_LINE, PYTHON, SOS};
use crate::{Error, Result};

/// Input layout of the backbone being trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Style {
    /// `[descr] docstring [python] signature code [eoc]`
    Pangu,
    /// `[sos] signature [descr] docstring [python] code [eoc]`
    Pycodegpt,
}

impl std::str::FromStr for Style {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pangu" => Ok(Style::Pangu),
            "pycodegpt" => Ok(Style::Pycodegpt),
            other => Err(Error::Config(format!("unknown style {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormattedPair {
    pub docstring: String,
    pub signature: String,
    /// Normalized body, starting with `[new_line] [indent]` and closed by a
    /// matching `[dedent]`.
    pub code: String,
    #[serde(rename = "style")]
    pub format_style: Style,
    #[serde(default)]
    pub source_path: String,
    #[serde(skip)]
    pub dedup_key: String,
}

/// Collapses whitespace runs to one space and trims the ends.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn dedup_key(docstring: &str, signature: &str, code: &str) -> String {
    let mut hasher = Sha256::new();
    for part in [docstring, signature, code] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part.as_bytes());
    }
    let digest = hasher.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Normalizes a function body into the code segment of a pair.
pub fn normalize_body(body: &str) -> Result<String> {
    let inner = normalize_whitespace(body)?;
    Ok(format!("{NEW_LINE} {INDENT} {inner} {DEDENT}"))
}

impl FormattedPair {
    pub fn new(docstring: String, signature: String, code: String, style: Style, source_path: String) -> Self {
        let dedup_key = dedup_key(&docstring, &signature, &code);
        FormattedPair {
            docstring,
            signature,
            code,
            format_style: style,
            source_path,
            dedup_key,
        }
    }

    /// Recomputes the key after deserialization.
    pub fn rekey(mut self) -> Self {
        self.dedup_key = dedup_key(&self.docstring, &self.signature, &self.code);
        self
    }

    /// The training text for this pair's style.
    pub fn text(&self) -> String {
        let (d, s, c) = (&self.docstring, &self.signature, &self.code);
        match self.format_style {
            Style::Pangu => format!("{DESCR} {d} {PYTHON} {s} {c} {EOC}"),
            Style::Pycodegpt => format!("{SOS} {s} {DESCR} {d} {PYTHON} {c} {EOC}"),
        }
    }

    /// Splits a rendered training text back into (docstring, signature, code).
    pub fn parse_text(text: &str, style: Style) -> Result<(String, String, String)> {
        let bad = || Error::Data(format!("text does not match the {style:?} template"));
        let body = text.strip_suffix(&format!(" {EOC}")).ok_or_else(bad)?;
        match style {
            Style::Pangu => {
                let rest = body.strip_prefix(&format!("{DESCR} ")).ok_or_else(bad)?;
                let (doc, rest) = rest.split_once(&format!(" {PYTHON} ")).ok_or_else(bad)?;
                let (sig, code) = rest.split_once(&format!(" {NEW_LINE}")).ok_or_else(bad)?;
                Ok((doc.to_owned(), sig.to_owned(), format!("{NEW_LINE}{code}")))
            }
            Style::Pycodegpt => {
                let rest = body.strip_prefix(&format!("{SOS} ")).ok_or_else(bad)?;
                let (sig, rest) = rest.split_once(&format!(" {DESCR} ")).ok_or_else(bad)?;
                let (doc, code) = rest.split_once(&format!(" {PYTHON} ")).ok_or_else(bad)?;
                Ok((doc.to_owned(), sig.to_owned(), code.to_owned()))
            }
        }
    }
}

/// Turns an extracted function into a training pair.
pub fn format_pair(func: &RawFunction, style: Style) -> Result<FormattedPair> {
    let raw_doc = func.docstring_text.as_deref().ok_or(Error::MissingDocstring)?;
    let docstring = collapse_whitespace(raw_doc);
    if docstring.is_empty() {
        return Err(Error::MissingDocstring);
    }
    if crate::control::contains_any(&docstring) {
        return Err(Error::Unnormalizable("docstring contains a control symbol".into()));
    }
    let code = normalize_body(&func.body_text)?;
    Ok(FormattedPair::new(
        docstring,
        func.signature_text.clone(),
        code,
        style,
        func.source_path.clone(),
    ))
}
