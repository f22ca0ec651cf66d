//! Function and docstring extraction from parsed Python sources.

use rustpython_parser::ast::{self, Constant, Expr, Stmt};
use rustpython_parser::Tok;
use serde::{Deserialize, Serialize};

use super::normalize::strip_comments;
use super::pysrc::{self, Token};
use super::SourceFile;
use crate::{Error, Result};

/// A function lifted out of a source file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawFunction {
    /// Header from `def` to the closing colon, continuation lines joined.
    pub signature_text: String,
    /// PEP 257-cleaned docstring, if the body starts with a string literal.
    pub docstring_text: Option<String>,
    /// Body without the docstring, dedented to column 0, comments removed.
    pub body_text: String,
    pub source_path: String,
    /// 1-based inclusive line range of the whole definition.
    pub line_span: (usize, usize),
}

/// Why a function-level construct was skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    EmptyBody,
    Malformed,
}

#[derive(Debug, Default, Clone)]
pub struct Extraction {
    pub functions: Vec<RawFunction>,
    pub skipped: Vec<(SkipReason, String)>,
}

/// Extracts every function defined at module level or inside (nested)
/// class bodies, in source order. Function bodies are not searched for
/// nested definitions.
pub fn extract_functions(file: &SourceFile) -> Result<Extraction> {
    let src = file.text.as_str();
    let suite = pysrc::parse(src)?;
    let tokens = pysrc::tokens(src)?;
    let mut defs = Vec::new();
    collect_defs(&suite, &mut defs);

    let mut out = Extraction::default();
    for def in defs {
        match extract_one(src, &tokens, def, &file.path_string()) {
            Ok(func) => out.functions.push(func),
            Err((reason, detail)) => out.skipped.push((reason, detail)),
        }
    }
    Ok(out)
}

struct FnDef<'a> {
    name: &'a str,
    start: usize,
    end: usize,
    body: &'a [Stmt],
}

fn collect_defs<'a>(stmts: &'a [Stmt], out: &mut Vec<FnDef<'a>>) {
    for stmt in stmts {
        match stmt {
            Stmt::FunctionDef(f) => out.push(FnDef {
                name: f.name.as_str(),
                start: f.range.start().into(),
                end: f.range.end().into(),
                body: &f.body,
            }),
            Stmt::AsyncFunctionDef(f) => out.push(FnDef {
                name: f.name.as_str(),
                start: f.range.start().into(),
                end: f.range.end().into(),
                body: &f.body,
            }),
            Stmt::ClassDef(c) => collect_defs(&c.body, out),
            _ => {}
        }
    }
}

fn stmt_range(stmt: &Stmt) -> (usize, usize) {
    use rustpython_parser::ast::Ranged;
    (stmt.start().into(), stmt.end().into())
}

/// Returns the literal value when `stmt` is a bare string expression.
pub(crate) fn docstring_of(stmt: &Stmt) -> Option<&str> {
    if let Stmt::Expr(ast::StmtExpr { value, .. }) = stmt {
        if let Expr::Constant(ast::ExprConstant {
            value: Constant::Str(text),
            ..
        }) = value.as_ref()
        {
            return Some(text.as_str());
        }
    }
    None
}

fn extract_one(
    src: &str,
    tokens: &[Token],
    def: FnDef<'_>,
    path: &str,
) -> std::result::Result<RawFunction, (SkipReason, String)> {
    let malformed = |what: &str| (SkipReason::Malformed, format!("{}: {what}", def.name));
    let (sig_start, sig_end) =
        header_span(tokens, def.start).ok_or_else(|| malformed("no function header"))?;
    let signature_text = join_lines(&src[sig_start..sig_end]).map_err(|e| malformed(&e.to_string()))?;

    let (docstring_text, rest) = match def.body.split_first() {
        Some((first, rest)) => match docstring_of(first) {
            Some(doc) => (Some(cleandoc(doc)), rest),
            None => (None, def.body),
        },
        None => (None, def.body),
    };
    let (Some(first), Some(last)) = (rest.first(), rest.last()) else {
        return Err((SkipReason::EmptyBody, def.name.to_owned()));
    };
    let body_start = stmt_range(first).0;
    let body_end = stmt_range(last).1;
    let body = dedent_block(src, tokens, body_start, body_end);
    let body_text = strip_comments(&body).map_err(|e| malformed(&e.to_string()))?;
    let body_text = body_text.trim_end().to_owned();
    if body_text.is_empty() {
        return Err((SkipReason::EmptyBody, def.name.to_owned()));
    }
    Ok(RawFunction {
        signature_text,
        docstring_text,
        body_text,
        source_path: path.to_owned(),
        line_span: (pysrc::line_of(src, sig_start), pysrc::line_of(src, def.end)),
    })
}

/// Byte span of `def ... :` starting at the first `def`/`async` token at or
/// after `from` (skipping decorators).
fn header_span(tokens: &[Token], from: usize) -> Option<(usize, usize)> {
    let begin = tokens
        .iter()
        .position(|t| t.start >= from && matches!(t.tok, Tok::Def | Tok::Async))?;
    let mut depth = 0i32;
    for token in &tokens[begin..] {
        match token.tok {
            Tok::Lpar | Tok::Lsqb | Tok::Lbrace => depth += 1,
            Tok::Rpar | Tok::Rsqb | Tok::Rbrace => depth -= 1,
            Tok::Colon if depth == 0 => return Some((tokens[begin].start, token.end)),
            _ => {}
        }
    }
    None
}

/// Joins the physical lines of a single logical line with single spaces.
pub(crate) fn join_lines(text: &str) -> Result<String> {
    let normalized = super::normalize::normalize_whitespace(text)?;
    if normalized.contains(crate::control::NEW_LINE) {
        return Err(Error::Unnormalizable(format!(
            "{text:?} is not a single logical line"
        )));
    }
    Ok(normalized)
}

/// Source of `[start, end)` with the indentation of the first line removed
/// from every following line, except lines inside multi-line strings.
fn dedent_block(src: &str, tokens: &[Token], start: usize, end: usize) -> String {
    let line_start = src[..start].rfind('\n').map_or(0, |p| p + 1);
    let prefix = &src[line_start..start];
    let width = if prefix.chars().all(|c| c == ' ' || c == '\t') {
        prefix.len()
    } else {
        0
    };
    let mut out = String::with_capacity(end - start);
    let mut offset = start;
    for (i, line) in src[start..end].split_inclusive('\n').enumerate() {
        if i == 0 || pysrc::inside_string(tokens, offset) {
            out.push_str(line);
        } else {
            let strip = line
                .bytes()
                .take(width)
                .take_while(|b| *b == b' ' || *b == b'\t')
                .count();
            out.push_str(&line[strip..]);
        }
        offset += line.len();
    }
    out
}

/// PEP 257 docstring trimming, as `inspect.cleandoc` does it.
pub fn cleandoc(doc: &str) -> String {
    let expanded = doc.replace('\t', "        ");
    let lines: Vec<&str> = expanded.lines().collect();
    if lines.is_empty() {
        return String::new();
    }
    let indent = lines[1..]
        .iter()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.len() - l.trim_start().len())
        .min()
        .unwrap_or(0);
    let mut trimmed: Vec<String> = Vec::with_capacity(lines.len());
    trimmed.push(lines[0].trim().to_owned());
    for line in &lines[1..] {
        let cut = indent.min(line.len() - line.trim_start().len());
        trimmed.push(line[cut..].trim_end().to_owned());
    }
    while trimmed.last().is_some_and(|l| l.is_empty()) {
        trimmed.pop();
    }
    let first = trimmed.iter().position(|l| !l.is_empty()).unwrap_or(trimmed.len());
    trimmed[first..].join("\n")
}
