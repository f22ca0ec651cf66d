//! Corpus construction: scan a tree of Python files, filter, extract
//! functions with docstrings, normalize whitespace, format and deduplicate.

mod dedup;
mod extract;
mod filter;
mod format;
mod normalize;
pub mod pysrc;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use dedup::{deduplicate, SeenKeys};
pub use extract::{cleandoc, extract_functions, Extraction, RawFunction, SkipReason};
pub use filter::{scan_and_filter, FilterRules, RejectReason, Rejection, ScanEvent};
pub use format::{collapse_whitespace, dedup_key, format_pair, normalize_body, FormattedPair, Style};
pub use normalize::{body_lines, denormalize, normalize_partial, normalize_whitespace, strip_comments, INDENT_UNIT};

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SourceFile {
    pub path: PathBuf,
    pub text: String,
    pub size_bytes: usize,
}

impl SourceFile {
    pub fn new(path: impl Into<PathBuf>, text: String) -> Self {
        SourceFile {
            path: path.into(),
            size_bytes: text.len(),
            text,
        }
    }

    pub fn path_string(&self) -> String {
        self.path.to_string_lossy().into_owned()
    }
}

/// Counters reported by [`run_pipeline`].
#[derive(Debug, Default, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub files_seen: usize,
    pub files_accepted: usize,
    pub files_rejected: BTreeMap<String, usize>,
    pub functions_extracted: usize,
    pub constructs_skipped: BTreeMap<String, usize>,
    pub pairs_rejected: BTreeMap<String, usize>,
    pub pairs_formatted: usize,
    pub duplicates_dropped: usize,
    pub pairs_emitted: usize,
}

#[derive(Debug)]
pub struct CorpusOutput {
    pub pairs: Vec<FormattedPair>,
    pub functions: Vec<RawFunction>,
    pub rejections: Vec<Rejection>,
    pub stats: CorpusStats,
}

fn pair_reject_reason(err: &Error) -> &'static str {
    match err {
        Error::MissingDocstring => "no-docstring",
        Error::Indentation { .. } => "indentation",
        _ => "normalization",
    }
}

/// Full extraction pipeline over a directory tree. Files are processed by up
/// to `workers` threads; deduplication runs in file order afterwards so the
/// output is identical for any worker count.
pub fn run_pipeline(root: &Path, rules: &FilterRules, style: Style, workers: usize) -> Result<CorpusOutput> {
    if !root.is_dir() {
        return Err(Error::MissingInput(format!("{} is not a directory", root.display())));
    }
    let mut stats = CorpusStats::default();
    let (files, rejections) = scan_and_filter(root, rules);
    stats.files_seen = files.len() + rejections.len();
    stats.files_accepted = files.len();
    for r in &rejections {
        *stats.files_rejected.entry(r.reason.to_string()).or_default() += 1;
    }

    let workers = workers.max(1).min(files.len().max(1));
    let chunk = files.len().div_ceil(workers).max(1);
    let per_file: Vec<Result<Extraction>> = std::thread::scope(|scope| {
        let handles: Vec<_> = files
            .chunks(chunk)
            .map(|slice| scope.spawn(move || slice.iter().map(extract_functions).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("extraction worker panicked"))
            .collect()
    });

    let mut functions = Vec::new();
    let mut formatted = Vec::new();
    for (file, extraction) in files.iter().zip(per_file) {
        let extraction = match extraction {
            Ok(e) => e,
            Err(err) => {
                log::warn!("extraction failed for {}: {err}", file.path.display());
                *stats.constructs_skipped.entry("file".into()).or_default() += 1;
                continue;
            }
        };
        for (reason, detail) in &extraction.skipped {
            log::debug!("skipped {detail} in {}: {reason:?}", file.path.display());
            let key = serde_json::to_value(reason)?.as_str().unwrap_or("other").to_owned();
            *stats.constructs_skipped.entry(key).or_default() += 1;
        }
        stats.functions_extracted += extraction.functions.len();
        for func in extraction.functions {
            match format_pair(&func, style) {
                Ok(pair) => formatted.push(pair),
                Err(err) => *stats.pairs_rejected.entry(pair_reject_reason(&err).into()).or_default() += 1,
            }
            functions.push(func);
        }
    }
    stats.pairs_formatted = formatted.len();
    let (pairs, dropped) = deduplicate(formatted);
    stats.duplicates_dropped = dropped;
    stats.pairs_emitted = pairs.len();
    Ok(CorpusOutput {
        pairs,
        functions,
        rejections,
        stats,
    })
}

#[derive(Serialize, Deserialize)]
struct PairRecord<'a> {
    docstring: std::borrow::Cow<'a, str>,
    signature: std::borrow::Cow<'a, str>,
    code: std::borrow::Cow<'a, str>,
    source_path: std::borrow::Cow<'a, str>,
    style: Style,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

/// Writes pairs as JSON lines: `{docstring, signature, code, source_path, style}`.
pub fn write_pairs_jsonl(path: &Path, pairs: &[FormattedPair], config_hash: Option<&str>) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for pair in pairs {
        let record = PairRecord {
            docstring: pair.docstring.as_str().into(),
            signature: pair.signature.as_str().into(),
            code: pair.code.as_str().into(),
            source_path: pair.source_path.as_str().into(),
            style: pair.format_style,
            config_hash: config_hash.map(str::to_owned),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads pairs written by [`write_pairs_jsonl`], returning the config hash of
/// the first record if present.
pub fn read_pairs_jsonl(path: &Path) -> Result<(Vec<FormattedPair>, Option<String>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    let mut hash = None;
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PairRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        if hash.is_none() {
            hash = record.config_hash.clone();
        }
        pairs.push(FormattedPair::new(
            record.docstring.into_owned(),
            record.signature.into_owned(),
            record.code.into_owned(),
            record.style,
            record.source_path.into_owned(),
        ));
    }
    Ok((pairs, hash))
}
