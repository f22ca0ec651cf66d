//! File-level filters applied while scanning a source tree.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pysrc;
use super::SourceFile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterRules {
    /// Files must be strictly smaller than this many bytes.
    pub max_file_bytes: usize,
    /// Mean line length (characters, newline excluded) must stay below this.
    pub max_mean_line_chars: f64,
    /// Every line must be strictly shorter than this many characters.
    pub max_line_chars: usize,
}

impl Default for FilterRules {
    fn default() -> Self {
        FilterRules {
            max_file_bytes: 1_000_000,
            max_mean_line_chars: 100.0,
            max_line_chars: 1_000,
        }
    }
}

/// First rule a file failed. Rules are checked in declaration order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    Unreadable,
    Size,
    MaxLine,
    MeanLine,
    Syntax,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            RejectReason::Unreadable => "unreadable",
            RejectReason::Size => "size",
            RejectReason::MaxLine => "max-line",
            RejectReason::MeanLine => "mean-line",
            RejectReason::Syntax => "syntax",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rejection {
    pub path: PathBuf,
    pub reason: RejectReason,
    pub detail: String,
}

#[derive(Debug)]
pub enum ScanEvent {
    Accepted(SourceFile),
    Rejected(Rejection),
}

impl FilterRules {
    /// Checks an in-memory file against all rules, cheapest first.
    pub fn check(&self, file: &SourceFile) -> Result<(), (RejectReason, String)> {
        if file.size_bytes >= self.max_file_bytes {
            return Err((RejectReason::Size, format!("{} bytes", file.size_bytes)));
        }
        let mut lines = 0usize;
        let mut chars = 0usize;
        for line in file.text.lines() {
            let n = line.chars().count();
            if n >= self.max_line_chars {
                return Err((RejectReason::MaxLine, format!("line {} has {n} chars", lines + 1)));
            }
            lines += 1;
            chars += n;
        }
        if lines > 0 {
            let mean = chars as f64 / lines as f64;
            if mean >= self.max_mean_line_chars {
                return Err((RejectReason::MeanLine, format!("mean line length {mean:.1}")));
            }
        }
        if let Err(err) = pysrc::parse(&file.text) {
            return Err((RejectReason::Syntax, err.to_string()));
        }
        Ok(())
    }

    /// Walks `root` (sorted, recursively) and yields one event per `.py` file.
    pub fn scan<'a>(&'a self, root: &Path) -> impl Iterator<Item = ScanEvent> + 'a {
        walkdir::WalkDir::new(root)
            .sort_by_file_name()
            .into_iter()
            .filter_map(move |entry| {
                let entry = match entry {
                    Ok(entry) => entry,
                    Err(err) => {
                        let path = err.path().map(Path::to_path_buf).unwrap_or_default();
                        log::warn!("skipping {}: {err}", path.display());
                        return Some(ScanEvent::Rejected(Rejection {
                            path,
                            reason: RejectReason::Unreadable,
                            detail: err.to_string(),
                        }));
                    }
                };
                let path = entry.path();
                if !entry.file_type().is_file() || path.extension().is_none_or(|e| e != "py") {
                    return None;
                }
                Some(self.load_and_check(path))
            })
    }

    fn load_and_check(&self, path: &Path) -> ScanEvent {
        let reject = |reason, detail: String| {
            log::info!("rejected {} ({reason}): {detail}", path.display());
            ScanEvent::Rejected(Rejection {
                path: path.to_path_buf(),
                reason,
                detail,
            })
        };
        let bytes = match std::fs::read(path) {
            Ok(bytes) => bytes,
            Err(err) => return reject(RejectReason::Unreadable, err.to_string()),
        };
        if bytes.len() >= self.max_file_bytes {
            return reject(RejectReason::Size, format!("{} bytes", bytes.len()));
        }
        let text = match String::from_utf8(bytes) {
            Ok(text) => text,
            Err(err) => return reject(RejectReason::Unreadable, err.to_string()),
        };
        let file = SourceFile::new(path, text);
        match self.check(&file) {
            Ok(()) => ScanEvent::Accepted(file),
            Err((reason, detail)) => reject(reason, detail),
        }
    }
}

/// Scans `root` and splits the events into accepted files and rejections.
pub fn scan_and_filter(root: &Path, rules: &FilterRules) -> (Vec<SourceFile>, Vec<Rejection>) {
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for event in rules.scan(root) {
        match event {
            ScanEvent::Accepted(file) => accepted.push(file),
            ScanEvent::Rejected(r) => rejected.push(r),
        }
    }
    (accepted, rejected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) {
        std::fs::write(dir.join(name), text).unwrap();
    }

    #[test]
    fn rejection_reasons() {
        let dir = tempfile::tempdir().unwrap();
        let big = "x = 1\n".repeat(2_000_000 / 6 + 1);
        write(dir.path(), "big.py", &big);
        let mut long = "y = 2\n".repeat(30);
        long.push_str(&format!("s = '{}'\n", "a".repeat(1_200)));
        write(dir.path(), "long.py", &long);
        write(dir.path(), "wide.py", &format!("z = '{}'\n", "b".repeat(150)));
        write(dir.path(), "bad.py", "def f(:\n");
        write(dir.path(), "good.py", "def f():\n    return 1\n");
        write(dir.path(), "notes.txt", "ignored");
        let (ok, rejected) = scan_and_filter(dir.path(), &FilterRules::default());
        assert_eq!(ok.len(), 1);
        let reasons: Vec<_> = rejected
            .iter()
            .map(|r| (r.path.file_name().unwrap().to_str().unwrap().to_owned(), r.reason))
            .collect();
        assert_eq!(
            reasons,
            [
                ("bad.py".to_owned(), RejectReason::Syntax),
                ("big.py".to_owned(), RejectReason::Size),
                ("long.py".to_owned(), RejectReason::MaxLine),
                ("wide.py".to_owned(), RejectReason::MeanLine),
            ]
        );
    }

    #[test]
    fn empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        let (ok, rejected) = scan_and_filter(dir.path(), &FilterRules::default());
        assert!(ok.is_empty() && rejected.is_empty());
    }
}
