//! Verdict sources: the sandbox runner's stdin/stdout JSON protocol and
//! in-process fakes.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::problems::EvalProblem;
use crate::corpus::pysrc::syntax_fingerprint;
use crate::{Error, Result};

/// One candidate program and its tests, sent to the runner on stdin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRequest {
    pub program_text: String,
    pub test_text: String,
    pub timeout_seconds: f64,
    pub memory_limit_mb: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Timeout,
    Crash,
}

/// The runner's answer, one JSON object on stdout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub status: Status,
    #[serde(default)]
    pub stderr_excerpt: String,
    /// Seconds.
    #[serde(default)]
    pub wall_time: f64,
}

impl Verdict {
    pub fn new(status: Status) -> Self {
        Verdict {
            status,
            stderr_excerpt: String::new(),
            wall_time: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }
}

/// Anything that can judge a request. `Err` means the judging machinery
/// failed, as opposed to the candidate failing.
pub trait VerdictSource: Sync {
    fn execute(&self, request: &ExecutionRequest) -> Result<Verdict>;
}

impl<F> VerdictSource for F
where
    F: Fn(&ExecutionRequest) -> Result<Verdict> + Sync,
{
    fn execute(&self, request: &ExecutionRequest) -> Result<Verdict> {
        self(request)
    }
}

/// Spawns an external runner process per request.
#[derive(Debug, Clone)]
pub struct SubprocessRunner {
    pub program: String,
    pub args: Vec<String>,
    /// Extra wall time granted to the runner beyond the request timeout
    /// before it is treated as hung.
    pub grace: Duration,
}

impl SubprocessRunner {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        SubprocessRunner {
            program: program.into(),
            args,
            grace: Duration::from_secs(10),
        }
    }

    /// Parses a command line such as `python3 -m sandbox_runner`.
    pub fn from_command_line(line: &str) -> Result<Self> {
        let mut parts = line.split_whitespace().map(str::to_owned);
        let program = parts.next().ok_or_else(|| Error::Config("empty runner command".into()))?;
        Ok(SubprocessRunner::new(program, parts.collect()))
    }
}

impl VerdictSource for SubprocessRunner {
    fn execute(&self, request: &ExecutionRequest) -> Result<Verdict> {
        let infra = |why: String| Error::Sandbox(format!("{}: {why}", self.program));
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| infra(e.to_string()))?;
        let payload = serde_json::to_vec(request)?;
        {
            let mut stdin = child.stdin.take().expect("piped stdin");
            stdin.write_all(&payload).map_err(|e| infra(e.to_string()))?;
        }
        let mut stdout = child.stdout.take().expect("piped stdout");
        let mut stderr = child.stderr.take().expect("piped stderr");
        let out_reader = std::thread::spawn(move || {
            let mut buf = String::new();
            stdout.read_to_string(&mut buf).map(|_| buf)
        });
        let err_reader = std::thread::spawn(move || {
            let mut buf = String::new();
            let _ = stderr.read_to_string(&mut buf);
            buf
        });
        let deadline = Instant::now() + Duration::from_secs_f64(request.timeout_seconds.max(0.0)) + self.grace;
        let status = loop {
            match child.try_wait().map_err(|e| infra(e.to_string()))? {
                Some(status) => break status,
                None if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(infra("runner did not answer in time".into()));
                }
                None => std::thread::sleep(Duration::from_millis(5)),
            }
        };
        let out = out_reader
            .join()
            .expect("stdout reader panicked")
            .map_err(|e| infra(e.to_string()))?;
        let err = err_reader.join().expect("stderr reader panicked");
        if !status.success() {
            return Err(infra(format!("exited with {status}: {}", err.trim())));
        }
        let line = out
            .lines()
            .rev()
            .find(|l| !l.trim().is_empty())
            .ok_or_else(|| infra("no verdict on stdout".into()))?;
        serde_json::from_str(line).map_err(|e| infra(format!("bad verdict {line:?}: {e}")))
    }
}

/// Passes a program iff it parses to the same syntax tree as the reference
/// program for the same tests. Needs no interpreter.
#[derive(Debug, Clone, Default)]
pub struct ReferenceMatch {
    references: HashMap<String, Vec<String>>,
}

impl ReferenceMatch {
    pub fn new(problems: &[EvalProblem]) -> Result<Self> {
        let mut references: HashMap<String, Vec<String>> = HashMap::new();
        for p in problems {
            let program = p.program(0, &p.reference_completion(0)?)?;
            references
                .entry(p.unit_tests.clone())
                .or_default()
                .push(syntax_fingerprint(&program)?);
        }
        Ok(ReferenceMatch { references })
    }
}

impl VerdictSource for ReferenceMatch {
    fn execute(&self, request: &ExecutionRequest) -> Result<Verdict> {
        let Ok(fingerprint) = syntax_fingerprint(&request.program_text) else {
            let mut v = Verdict::new(Status::Crash);
            v.stderr_excerpt = "SyntaxError".into();
            return Ok(v);
        };
        let hit = self
            .references
            .get(&request.test_text)
            .is_some_and(|refs| refs.contains(&fingerprint));
        Ok(Verdict::new(if hit { Status::Pass } else { Status::Fail }))
    }
}
