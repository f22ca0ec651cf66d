//! Benchmark problems, incremental prompt augmentation and program assembly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{body_lines, collapse_whitespace, extract_functions, normalize_body, SourceFile, Style};
use crate::decoder::{code_text, given_marker_text, Job, Prompt};
use crate::{Error, Result};

/// One line of a HumanEval/MBPP-style problem file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemRecord {
    pub task_id: String,
    /// Imports, signature and docstring.
    pub prompt: String,
    pub canonical_solution: String,
    pub test: String,
    pub entry_point: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalProblem {
    pub task_id: String,
    pub description: String,
    /// `def` header of the entry point.
    pub signature: String,
    /// Source preceding the entry point: imports and helpers.
    pub preamble: String,
    /// Reference body, dedented, comments removed.
    pub reference_solution: String,
    /// Test source, ending with the call that runs the checks.
    pub unit_tests: String,
    pub entry_point: String,
}

impl EvalProblem {
    pub fn from_record(rec: &ProblemRecord) -> Result<Self> {
        let bad = |why: &str| Error::Data(format!("problem {}: {why}", rec.task_id));
        let src = format!("{}{}", rec.prompt, rec.canonical_solution);
        let file = SourceFile::new(rec.task_id.clone(), src.clone());
        let extraction = extract_functions(&file).map_err(|e| bad(&e.to_string()))?;
        let func = extraction
            .functions
            .iter()
            .rev()
            .find(|f| defines(&f.signature_text, &rec.entry_point))
            .ok_or_else(|| bad("entry point not found"))?;
        let description = collapse_whitespace(func.docstring_text.as_deref().unwrap_or_default());
        if description.is_empty() {
            return Err(bad("empty description"));
        }
        let preamble: String = src.split_inclusive('\n').take(func.line_span.0 - 1).collect();
        let mut unit_tests = rec.test.trim_end().to_owned();
        unit_tests.push('\n');
        if rec.test.contains("def check(") {
            unit_tests.push_str(&format!("\n\ncheck({})\n", rec.entry_point));
        }
        Ok(EvalProblem {
            task_id: rec.task_id.clone(),
            description,
            signature: func.signature_text.clone(),
            preamble,
            reference_solution: func.body_text.clone(),
            unit_tests,
            entry_point: rec.entry_point.clone(),
        })
    }

    /// Reference body split into incremental-prompt lines.
    pub fn reference_lines(&self) -> Result<Vec<String>> {
        body_lines(&self.reference_solution)
    }

    pub fn prompt(&self, style: Style, lines_given: usize) -> Result<Prompt> {
        let lines = self.reference_lines()?;
        if lines_given > lines.len() {
            return Err(Error::Data(format!(
                "{}: {lines_given} lines requested from a {}-line body",
                self.task_id,
                lines.len()
            )));
        }
        Ok(Prompt {
            description: self.description.clone(),
            signature: self.signature.clone(),
            style,
            prepended_code: lines[..lines_given].to_vec(),
        })
    }

    /// Prepended lines as they appear in assembled programs.
    pub fn given_text(&self, lines_given: usize) -> Result<String> {
        let lines = self.reference_lines()?;
        Ok(code_text(&given_marker_text(&lines[..lines_given.min(lines.len())])?))
    }

    /// The full program for a completion of the prompt with `lines_given`
    /// reference lines.
    pub fn program(&self, lines_given: usize, completion: &str) -> Result<String> {
        Ok(format!(
            "{}{}\n{}{}",
            self.preamble,
            self.signature,
            self.given_text(lines_given)?,
            completion
        ))
    }

    /// The completion that reproduces the reference body exactly.
    pub fn reference_completion(&self, lines_given: usize) -> Result<String> {
        let full = code_text(&normalize_body(&self.reference_solution)?);
        let given = self.given_text(lines_given)?;
        let mut rest = full.strip_prefix(&given).unwrap_or(&full).to_owned();
        if !rest.is_empty() && !rest.ends_with('\n') {
            rest.push('\n');
        }
        Ok(rest)
    }
}

fn defines(signature: &str, name: &str) -> bool {
    let sig = signature.trim_start();
    let sig = sig.strip_prefix("async ").unwrap_or(sig).trim_start();
    sig.strip_prefix("def ")
        .map(|rest| rest.trim_start().strip_prefix(name).is_some_and(|r| r.trim_start().starts_with('(')))
        .unwrap_or(false)
}

pub fn read_problem_records(path: &Path) -> Result<Vec<ProblemRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

pub fn read_problems(path: &Path) -> Result<Vec<EvalProblem>> {
    read_problem_records(path)?.iter().map(EvalProblem::from_record).collect()
}

/// A prompt carrying `lines_given` reference lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedPrompt {
    pub task_id: String,
    pub lines_given: usize,
    pub prompt: Prompt,
}

impl AugmentedPrompt {
    pub fn job(&self) -> Job {
        Job {
            task_id: self.task_id.clone(),
            lines_given: self.lines_given,
            prompt: self.prompt.clone(),
        }
    }
}

/// Prompts with 0..L-1 reference lines prepended (0..=L with
/// `include_full_body`), where L is the reference line count.
pub fn augment_incremental(problem: &EvalProblem, style: Style, include_full_body: bool) -> Result<Vec<AugmentedPrompt>> {
    let count = problem.reference_lines()?.len();
    if count == 0 {
        return Err(Error::Data(format!("{}: reference body is empty", problem.task_id)));
    }
    let last = if include_full_body { count } else { count - 1 };
    (0..=last)
        .map(|lines_given| {
            Ok(AugmentedPrompt {
                task_id: problem.task_id.clone(),
                lines_given,
                prompt: problem.prompt(style, lines_given)?,
            })
        })
        .collect()
}

/// Problems whose whitespace-stripped description equals some
/// whitespace-stripped training docstring, as `(task_id, training index)`.
pub fn contamination_check(problems: &[EvalProblem], docstrings: &[String]) -> Vec<(String, usize)> {
    let strip = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
    let mut index: std::collections::HashMap<String, Vec<usize>> = std::collections::HashMap::new();
    for (i, d) in docstrings.iter().enumerate() {
        index.entry(strip(d)).or_default().push(i);
    }
    let mut out = Vec::new();
    for p in problems {
        if let Some(hits) = index.get(&strip(&p.description)) {
            out.extend(hits.iter().map(|i| (p.task_id.clone(), *i)));
        }
    }
    out
}
