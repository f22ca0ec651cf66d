//! Thin helpers over the embedded Python 3 lexer and parser.

use std::sync::OnceLock;

use regex::Regex;
use rustpython_parser::ast::{self};
use rustpython_parser::Parse;
use rustpython_parser::lexer::{lex, LexicalErrorType};
use rustpython_parser::text_size::TextRange;
use rustpython_parser::{Mode, StringKind, Tok};

use crate::{Error, Result};

/// A lexed token with its byte range in the source.
pub(crate) struct Token {
    pub tok: Tok,
    pub start: usize,
    pub end: usize,
}

impl Token {
    fn new(tok: Tok, range: TextRange) -> Self {
        Token {
            tok,
            start: range.start().into(),
            end: range.end().into(),
        }
    }
}

pub(crate) fn line_of(src: &str, offset: usize) -> usize {
    src[..offset.min(src.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Lexes `src`, dropping comment and non-logical newline tokens.
pub(crate) fn tokens(src: &str) -> Result<Vec<Token>> {
    let mut out = Vec::new();
    for item in lex(src, Mode::Module) {
        match item {
            Ok((Tok::EndOfFile, _)) => {}
            Ok((tok, range)) => out.push(Token::new(tok, range)),
            Err(err) => {
                let line = line_of(src, err.location.into());
                return Err(match err.error {
                    LexicalErrorType::IndentationError => Error::Indentation { line },
                    other => Error::Syntax {
                        line,
                        message: other.to_string(),
                    },
                });
            }
        }
    }
    Ok(out)
}

pub(crate) fn parse(src: &str) -> Result<ast::Suite> {
    ast::Suite::parse(src, "<source>").map_err(|err| Error::Syntax {
        line: line_of(src, err.offset.into()),
        message: err.error.to_string(),
    })
}

/// Whether `src` is a syntactically valid Python 3 module.
pub fn parses(src: &str) -> bool {
    parse(src).is_ok()
}

fn range_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"range: (?:\d+\.\.\d+|\(\)), ").expect("valid regex"))
}

/// Location-free rendering of the syntax tree of `src`. Two sources have the
/// same fingerprint iff they parse to the same tree.
pub fn syntax_fingerprint(src: &str) -> Result<String> {
    let suite = parse(src)?;
    let debug = format!("{suite:?}");
    Ok(range_pattern().replace_all(&debug, "").into_owned())
}

pub(crate) fn is_raw(kind: StringKind) -> bool {
    matches!(
        kind,
        StringKind::RawString | StringKind::RawFString | StringKind::RawBytes
    )
}

/// Whether the byte offset lies strictly inside a multi-line string token.
pub(crate) fn inside_string(tokens: &[Token], offset: usize) -> bool {
    tokens
        .iter()
        .any(|t| matches!(t.tok, Tok::String { .. }) && t.start < offset && offset < t.end)
}
