//! Whitespace normalization: newlines and indentation changes become
//! `[new_line]`, `[indent]` and `[dedent]` markers so a function fits on one
//! line of text.

use rustpython_parser::Tok;

use super::pysrc::{self, Token};
use crate::control::{DEDENT, INDENT, NEW_LINE};
use crate::{Error, Result};

/// Spaces emitted per indentation level when markers are expanded.
pub const INDENT_UNIT: &str = "    ";

enum Event {
    Line(String),
    Indent,
    Dedent,
}

/// Normalizes `code` into single-line marker form, closing every open block
/// with a trailing `[dedent]`.
pub fn normalize_whitespace(code: &str) -> Result<String> {
    Ok(render(&events(code)?, true))
}

/// Like [`normalize_whitespace`] but leaves open blocks open, for partial
/// solutions that the model is expected to continue.
pub fn normalize_partial(code: &str) -> Result<String> {
    Ok(render(&events(code)?, false))
}

fn render(events: &[Event], close_blocks: bool) -> String {
    let mut parts: Vec<&str> = Vec::new();
    let mut seen_line = false;
    let mut pending: Vec<&str> = Vec::new();
    for event in events {
        match event {
            Event::Indent => pending.push(INDENT),
            Event::Dedent => pending.push(DEDENT),
            Event::Line(text) => {
                if seen_line {
                    parts.push(NEW_LINE);
                }
                parts.append(&mut pending);
                parts.push(text);
                seen_line = true;
            }
        }
    }
    if close_blocks {
        parts.extend(pending.iter().filter(|m| **m == DEDENT));
    }
    parts.join(" ")
}

fn events(code: &str) -> Result<Vec<Event>> {
    let tokens = pysrc::tokens(code)?;
    let mut events = Vec::new();
    let mut line = String::new();
    let mut last_end: Option<usize> = None;
    for token in &tokens {
        match &token.tok {
            Tok::Newline => {
                if !line.is_empty() {
                    events.push(Event::Line(std::mem::take(&mut line)));
                }
                last_end = None;
            }
            Tok::Indent => events.push(Event::Indent),
            Tok::Dedent => events.push(Event::Dedent),
            tok => {
                if let Some(prev) = last_end {
                    let gap = &code[prev..token.start];
                    if gap.contains(['\n', '\r', '\\', '#']) {
                        line.push(' ');
                    } else {
                        line.push_str(gap);
                    }
                }
                line.push_str(&token_text(code, token, tok)?);
                last_end = Some(token.end);
            }
        }
    }
    if !line.is_empty() {
        events.push(Event::Line(line));
    }
    Ok(events)
}

fn token_text(code: &str, token: &Token, tok: &Tok) -> Result<String> {
    let text = &code[token.start..token.end];
    if crate::control::contains_any(text) {
        return Err(Error::Unnormalizable(format!(
            "token {text:?} contains a control symbol"
        )));
    }
    match tok {
        Tok::String { kind, .. } if text.contains(['\n', '\r']) => {
            if pysrc::is_raw(*kind) {
                return Err(Error::Unnormalizable(format!(
                    "raw string spans lines at line {}",
                    pysrc::line_of(code, token.start)
                )));
            }
            Ok(escape_string_newlines(text))
        }
        _ => Ok(text.to_owned()),
    }
}

/// Rewrites literal line breaks inside a (non-raw) string literal as escape
/// sequences; backslash-newline continuations are dropped.
fn escape_string_newlines(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\\' => match chars.next() {
                Some('\n') => {}
                Some('\r') => {
                    if chars.peek() == Some(&'\n') {
                        chars.next();
                    }
                }
                Some(other) => {
                    out.push('\\');
                    out.push(other);
                }
                None => out.push('\\'),
            },
            '\r' => {
                if chars.peek() == Some(&'\n') {
                    chars.next();
                }
                out.push_str("\\n");
            }
            '\n' => out.push_str("\\n"),
            other => out.push(other),
        }
    }
    out
}

/// Expands markers back into source text with [`INDENT_UNIT`] indentation.
///
/// Expansion is prefix-consistent: the expansion of a marker-aligned prefix
/// of `text` is a prefix of the expansion of `text`.
pub fn denormalize(text: &str) -> String {
    let mut out = String::new();
    let mut level = 0usize;
    let mut at_line_start = true;
    for piece in text.split(' ') {
        match piece {
            NEW_LINE => {
                out.push('\n');
                at_line_start = true;
            }
            INDENT => level += 1,
            DEDENT => level = level.saturating_sub(1),
            _ => {
                if at_line_start {
                    if piece.is_empty() {
                        continue;
                    }
                    for _ in 0..level {
                        out.push_str(INDENT_UNIT);
                    }
                    at_line_start = false;
                    out.push_str(piece);
                } else {
                    if !out.is_empty() && !out.ends_with('\n') {
                        out.push(' ');
                    }
                    out.push_str(piece);
                }
            }
        }
    }
    out
}

/// Removes `#` comments from `src`. Lines left empty by the removal are
/// dropped; string literals are never touched.
pub fn strip_comments(src: &str) -> Result<String> {
    let tokens = pysrc::tokens(src)?;
    let mut out = String::with_capacity(src.len());
    let mut cursor = 0usize;
    let mut emptied_lines = Vec::new();
    let mut gaps: Vec<(usize, usize)> = Vec::new();
    for token in &tokens {
        if token.start > cursor {
            gaps.push((cursor, token.start));
        }
        cursor = cursor.max(token.end);
    }
    if cursor < src.len() {
        gaps.push((cursor, src.len()));
    }
    let mut copied = 0usize;
    for (start, end) in gaps {
        let gap = &src[start..end];
        if !gap.contains('#') {
            continue;
        }
        out.push_str(&src[copied..start]);
        let mut first = true;
        for segment in gap.split('\n') {
            if !first {
                out.push('\n');
            }
            first = false;
            match segment.find('#') {
                Some(pos) => {
                    out.push_str(segment[..pos].trim_end_matches([' ', '\t']));
                    emptied_lines.push(pysrc::line_of(&out, out.len()));
                }
                None => out.push_str(segment),
            }
        }
        copied = end;
    }
    out.push_str(&src[copied..]);
    if emptied_lines.is_empty() {
        return Ok(out);
    }
    let kept: Vec<&str> = out
        .split('\n')
        .enumerate()
        .filter(|(idx, line)| !(line.trim().is_empty() && emptied_lines.contains(&(idx + 1))))
        .map(|(_, line)| line)
        .collect();
    Ok(kept.join("\n"))
}

/// Splits a (dedented) function body into the lines used for incremental
/// prompts. A multi-line statement stays one line; blank lines count as lines.
pub fn body_lines(body: &str) -> Result<Vec<String>> {
    let tokens = pysrc::tokens(body)?;
    let physical: Vec<&str> = body.split_inclusive('\n').collect();
    let mut line_starts = Vec::with_capacity(physical.len());
    let mut offset = 0usize;
    for line in &physical {
        line_starts.push(offset);
        offset += line.len();
    }
    let line_index = |pos: usize| match line_starts.binary_search(&pos) {
        Ok(i) => i,
        Err(i) => i - 1,
    };
    // Physical line ranges covered by each logical line.
    let mut logical: Vec<(usize, usize)> = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    for token in &tokens {
        match token.tok {
            Tok::Indent | Tok::Dedent => {}
            Tok::Newline => {
                if let Some(range) = current.take() {
                    logical.push(range);
                }
            }
            _ => {
                let first = line_index(token.start);
                let last = line_index(token.end.saturating_sub(1).max(token.start));
                current = Some(match current {
                    None => (first, last),
                    Some((a, b)) => (a, b.max(last)),
                });
            }
        }
    }
    if let Some(range) = current {
        logical.push(range);
    }
    let mut lines = Vec::new();
    let mut next = 0usize;
    for (first, last) in logical {
        for blank in next..first {
            lines.push(physical[blank].to_owned());
        }
        lines.push(physical[first..=last].concat());
        next = last + 1;
    }
    for rest in physical.iter().skip(next) {
        if rest.trim().is_empty() {
            lines.push((*rest).to_owned());
        }
    }
    Ok(lines)
}
