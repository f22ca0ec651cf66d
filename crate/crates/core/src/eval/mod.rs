//! Functional-correctness scoring: pass@k, incremental prompts, execution
//! through a verdict source, and result tables.

pub mod passk;
pub mod problems;
pub mod runner;
pub mod stats;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub use passk::{mean_pass_at_k, pass_at_k};
pub use problems::{
    augment_incremental, contamination_check, read_problem_records, read_problems, AugmentedPrompt, EvalProblem,
    ProblemRecord,
};
pub use runner::{ExecutionRequest, ReferenceMatch, Status, SubprocessRunner, Verdict, VerdictSource};
pub use stats::{correlation_table, pearson, CheckpointSeries, CorrelationTable};

use crate::decoder::SampleRecord;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Original prompts only, averaged over problems.
    Standard,
    /// Original and line-augmented prompts, pooled with equal weight.
    Incremental,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Mode::Standard),
            "incremental" => Ok(Mode::Incremental),
            other => Err(Error::Config(format!("unknown evaluation mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub mode: Mode,
    /// Also score the prompt that already holds the whole reference body.
    pub include_full_body: bool,
    pub timeout_seconds: f64,
    pub memory_limit_mb: u64,
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ks: vec![1, 10, 100],
            mode: Mode::Standard,
            include_full_body: false,
            timeout_seconds: 10.0,
            memory_limit_mb: 1024,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
        }
    }
}

/// Outcome for one (problem, lines given) prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptResult {
    pub task_id: String,
    pub lines_given: usize,
    pub n: usize,
    pub c: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassKReport {
    pub mode: Mode,
    /// pass@k keyed by k.
    pub pass_at_k: BTreeMap<usize, f64>,
    pub prompts: Vec<PromptResult>,
    /// Verdict counts by status over every execution.
    pub statuses: BTreeMap<String, usize>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

/// The prompts scored in `mode`, in problem order.
pub fn prompt_keys(problems: &[EvalProblem], mode: Mode, include_full_body: bool) -> Result<Vec<(usize, usize)>> {
    let mut keys = Vec::new();
    for (index, p) in problems.iter().enumerate() {
        match mode {
            Mode::Standard => keys.push((index, 0)),
            Mode::Incremental => {
                let lines = p.reference_lines()?.len();
                if lines == 0 {
                    return Err(Error::Data(format!("{}: reference body is empty", p.task_id)));
                }
                let last = if include_full_body { lines } else { lines - 1 };
                keys.extend((0..=last).map(|l| (index, l)));
            }
        }
    }
    Ok(keys)
}

/// Executes every sample of every scored prompt and aggregates pass@k.
pub fn evaluate(
    problems: &[EvalProblem],
    samples: &[SampleRecord],
    opts: &EvalOptions,
    source: &dyn VerdictSource,
) -> Result<PassKReport> {
    let keys = prompt_keys(problems, opts.mode, opts.include_full_body)?;
    let mut by_prompt: HashMap<(&str, usize), Vec<&SampleRecord>> = HashMap::new();
    for s in samples {
        by_prompt.entry((s.task_id.as_str(), s.lines_given)).or_default().push(s);
    }
    let mut gaps = Vec::new();
    let mut jobs: Vec<(usize, ExecutionRequest)> = Vec::new();
    let mut counts = Vec::with_capacity(keys.len());
    for (slot, &(index, lines)) in keys.iter().enumerate() {
        let p = &problems[index];
        let Some(list) = by_prompt.get(&(p.task_id.as_str(), lines)) else {
            gaps.push(format!("{}@{lines}", p.task_id));
            continue;
        };
        let mut seen = std::collections::HashSet::new();
        for s in list {
            if !seen.insert(s.sample_index) {
                return Err(Error::Data(format!(
                    "{}@{lines}: duplicate sample index {}",
                    p.task_id, s.sample_index
                )));
            }
            jobs.push((
                slot,
                ExecutionRequest {
                    program_text: p.program(lines, &s.completion)?,
                    test_text: p.unit_tests.clone(),
                    timeout_seconds: opts.timeout_seconds,
                    memory_limit_mb: opts.memory_limit_mb,
                },
            ));
        }
        counts.push(list.len());
    }
    if !gaps.is_empty() {
        return Err(Error::MissingSamples(gaps.join(", ")));
    }
    let passed = Mutex::new(vec![0usize; keys.len()]);
    let statuses = Mutex::new(BTreeMap::<String, usize>::new());
    let failure = Mutex::new(None);
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..opts.workers.clamp(1, jobs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((slot, request)) = jobs.get(i) else { break };
                match source.execute(request) {
                    Ok(v) => {
                        let name = serde_json::to_value(v.status).ok().and_then(|s| s.as_str().map(str::to_owned));
                        *statuses.lock().unwrap().entry(name.unwrap_or_default()).or_default() += 1;
                        if v.passed() {
                            passed.lock().unwrap()[*slot] += 1;
                        }
                    }
                    Err(e) => {
                        failure.lock().unwrap().get_or_insert(e);
                        next.store(jobs.len(), Ordering::Relaxed);
                        break;
                    }
                }
            });
        }
    });
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let passed = passed.into_inner().unwrap();
    let prompts: Vec<PromptResult> = keys
        .iter()
        .enumerate()
        .map(|(slot, &(index, lines))| PromptResult {
            task_id: problems[index].task_id.clone(),
            lines_given: lines,
            n: counts[slot],
            c: passed[slot],
        })
        .collect();
    let nc: Vec<(usize, usize)> = prompts.iter().map(|p| (p.n, p.c)).collect();
    let mut pass = BTreeMap::new();
    for &k in &opts.ks {
        pass.insert(k, mean_pass_at_k(&nc, k)?);
    }
    Ok(PassKReport {
        mode: opts.mode,
        pass_at_k: pass,
        prompts,
        statuses: statuses.into_inner().unwrap(),
        metadata: serde_json::Value::Null,
    })
}

/// Reads a samples JSONL file.
pub fn read_samples(path: &Path) -> Result<Vec<SampleRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

pub fn write_samples(path: &Path, samples: &[SampleRecord]) -> Result<()> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// One row of a results table: a model variant and its scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    pub objective: String,
    pub separation: String,
    /// Column name to percentage.
    pub scores: BTreeMap<String, f64>,
}

fn cell(row: &TableRow, column: &str) -> String {
    row.scores.get(column).map_or(String::new(), |v| format!("{v:.2}"))
}

/// Writes rows as CSV with the given score columns in order.
pub fn write_table_csv(path: &Path, columns: &[String], rows: &[TableRow]) -> Result<()> {
    let fail = |e: csv::Error| Error::Data(format!("writing {}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(fail)?;
    let mut header = vec!["model".to_owned(), "objective".to_owned(), "separation".to_owned()];
    header.extend(columns.iter().cloned());
    w.write_record(&header).map_err(fail)?;
    for r in rows {
        let mut rec = vec![r.model.clone(), r.objective.clone(), r.separation.clone()];
        rec.extend(columns.iter().map(|c| cell(r, c)));
        w.write_record(&rec).map_err(fail)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// The same table as Markdown.
pub fn table_markdown(columns: &[String], rows: &[TableRow]) -> String {
    let mut out = format!("| model | objective | separation | {} |\n", columns.join(" | "));
    out.push_str(&format!("|---|---|---|{}\n", "---|".repeat(columns.len())));
    for r in rows {
        let cells: Vec<String> = columns.iter().map(|c| cell(r, c)).collect();
        out.push_str(&format!("| {} | {} | {} | {} |\n", r.model, r.objective, r.separation, cells.join(" | ")));
    }
    out
}
