//! Prompt assembly and autoregressive generation: greedy and
//! temperature/nucleus sampling with a key/value cache.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::{DESCR, EOC, INDENT, NEW_LINE, PYTHON, SOS};
use crate::corpus::{collapse_whitespace, denormalize, normalize_partial, Style};
use crate::dataset::Modality;
use crate::model::{Parameters, Session};
use crate::tokenizer::{TokenId, Vocabulary};
use crate::{Error, Result};

/// A generation request in the pre-training layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompt {
    pub description: String,
    /// `def` header up to the colon.
    pub signature: String,
    pub style: Style,
    /// Leading reference-body source lines (dedented, newline-terminated)
    /// the model should continue from.
    pub prepended_code: Vec<String>,
}

/// A prompt as model input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub ids: Vec<TokenId>,
    pub modality: Vec<Modality>,
    /// Tokens before `[python]`; these attend bidirectionally under a
    /// prefix-trained checkpoint.
    pub prefix: usize,
    /// Marker-form text of the prepended code exactly as it was encoded.
    pub given: String,
}

fn push(r: &mut RenderedPrompt, ids: &[TokenId], m: Modality) {
    r.ids.extend_from_slice(ids);
    r.modality.extend(std::iter::repeat_n(m, ids.len()));
}

/// Marker-form text for prepended lines, ending on a `[new_line]` so the
/// continuation starts a fresh line.
pub fn given_marker_text(lines: &[String]) -> Result<String> {
    if lines.is_empty() {
        return Ok(String::new());
    }
    let inner = normalize_partial(&lines.concat())?;
    if inner.is_empty() {
        return Ok(String::new());
    }
    Ok(format!(" {NEW_LINE} {INDENT} {inner} {NEW_LINE}"))
}

/// Source text (4-space indented, relative to the def) of marker-form code.
pub fn code_text(marker_text: &str) -> String {
    let text = denormalize(marker_text);
    match text.strip_prefix('\n') {
        Some(rest) => rest.to_owned(),
        None => text,
    }
}

pub fn render_prompt(prompt: &Prompt, vocab: &Vocabulary) -> Result<RenderedPrompt> {
    let description = collapse_whitespace(&prompt.description);
    if description.is_empty() {
        return Err(Error::Data("prompt has an empty description".into()));
    }
    let signature = prompt.signature.trim();
    let given = given_marker_text(&prompt.prepended_code)?;
    let mut r = RenderedPrompt {
        ids: Vec::new(),
        modality: Vec::new(),
        prefix: 0,
        given: given.clone(),
    };
    let marker = |s: &str| [vocab.control_id(s)];
    match prompt.style {
        Style::Pangu => {
            push(&mut r, &marker(DESCR), Modality::Nl);
            push(&mut r, &vocab.encode(&format!(" {description} ")), Modality::Nl);
            r.prefix = r.ids.len();
            push(&mut r, &marker(PYTHON), Modality::Code);
            push(&mut r, &vocab.encode(&format!(" {signature}")), Modality::Code);
        }
        Style::Pycodegpt => {
            push(&mut r, &marker(SOS), Modality::Code);
            push(&mut r, &vocab.encode(&format!(" {signature} ")), Modality::Code);
            push(&mut r, &marker(DESCR), Modality::Nl);
            push(&mut r, &vocab.encode(&format!(" {description} ")), Modality::Nl);
            r.prefix = r.ids.len();
            push(&mut r, &marker(PYTHON), Modality::Code);
        }
    }
    push(&mut r, &vocab.encode(&given), Modality::Code);
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub max_new_tokens: usize,
    pub num_samples: usize,
    pub seed: u64,
    /// Argmax decoding; temperature and nucleus are ignored.
    #[serde(default)]
    pub greedy: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            temperature: 0.95,
            top_p: 0.8,
            max_new_tokens: 256,
            num_samples: 200,
            seed: 0,
            greedy: false,
        }
    }
}

impl DecodeConfig {
    pub fn greedy(max_new_tokens: usize) -> Self {
        DecodeConfig {
            max_new_tokens,
            num_samples: 1,
            greedy: true,
            ..DecodeConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        if self.num_samples == 0 {
            return Err(Error::Config("num_samples must be at least 1".into()));
        }
        Ok(())
    }
}

/// Index of the largest logit, lowest id on ties.
pub fn argmax(logits: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    best
}

/// Temperature-scaled softmax in f64.
pub fn softmax(logits: &[f32], temperature: f64) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v as f64));
    let mut p: Vec<f64> = logits.iter().map(|v| ((*v as f64 - max) / temperature).exp()).collect();
    let total: f64 = p.iter().sum();
    for v in &mut p {
        *v /= total;
    }
    p
}

/// Smallest set of ids, taken in descending probability (ascending id on
/// ties), whose mass reaches `top_p`. The boundary token is included.
pub fn nucleus(probs: &[f64], top_p: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|a, b| probs[*b].total_cmp(&probs[*a]).then(a.cmp(b)));
    let mut mass = 0.0;
    let mut keep = 0;
    for &i in &order {
        keep += 1;
        mass += probs[i];
        if mass >= top_p {
            break;
        }
    }
    order.truncate(keep.max(1));
    order
}

pub fn sample_next(logits: &[f32], cfg: &DecodeConfig, rng: &mut impl Rng) -> TokenId {
    if cfg.greedy {
        return argmax(logits) as TokenId;
    }
    let probs = softmax(logits, cfg.temperature);
    let set = nucleus(&probs, cfg.top_p);
    let total: f64 = set.iter().map(|i| probs[*i]).sum();
    let mut draw = rng.random::<f64>() * total;
    for &i in &set {
        draw -= probs[i];
        if draw < 0.0 {
            return i as TokenId;
        }
    }
    *set.last().expect("nucleus is never empty") as TokenId
}

/// RNG for one sample, independent of every other sample.
pub fn sample_rng(seed: u64, task_id: &str, sample_index: usize) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((task_id.len() as u64).to_le_bytes());
    h.update(task_id.as_bytes());
    h.update((sample_index as u64).to_le_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    /// Generated ids, stop token excluded.
    pub ids: Vec<TokenId>,
    /// Continuation source text after the prepended lines.
    pub text: String,
}

/// Decodes generated ids into marker-form text with exactly one space on
/// each side of every control symbol.
fn marker_text(vocab: &Vocabulary, ids: &[TokenId]) -> String {
    let mut out = String::new();
    let mut run: Vec<TokenId> = Vec::new();
    let flush = |out: &mut String, run: &mut Vec<TokenId>| {
        if !run.is_empty() {
            out.push_str(&vocab.decode(run));
            run.clear();
        }
    };
    let mut after_control = false;
    for &id in ids {
        if vocab.is_control(id) {
            flush(&mut out, &mut run);
            if !out.ends_with(' ') {
                out.push(' ');
            }
            out.push_str(vocab.token(id).unwrap_or_default());
            after_control = true;
        } else {
            if after_control {
                let piece = vocab.decode(&[id]);
                if !piece.starts_with(' ') {
                    out.push(' ');
                }
                after_control = false;
            }
            run.push(id);
        }
    }
    flush(&mut out, &mut run);
    out
}

fn trim_line_end(line: &str) -> String {
    match line.strip_suffix('\n') {
        Some(body) => format!("{}\n", body.trim_end()),
        None => line.trim_end().to_owned(),
    }
}

/// Turns generated ids into the source continuation of `given`.
pub fn completion_text(vocab: &Vocabulary, given: &str, generated: &[TokenId]) -> String {
    let tail = marker_text(vocab, generated);
    let sep = if !given.is_empty() && !tail.starts_with(' ') { " " } else { "" };
    let full = code_text(&format!("{given}{sep}{tail}"));
    let head = code_text(given);
    let rest = full.strip_prefix(&head).unwrap_or(&full);
    let mut text: String = rest.split_inclusive('\n').map(trim_line_end).collect();
    if !text.trim().is_empty() && !text.ends_with('\n') {
        text.push('\n');
    }
    text
}

/// Decodes one continuation of `prompt`. Generation stops at `[eoc]`, after
/// `max_new_tokens`, or when the context window is full.
pub fn generate_one(
    params: &Parameters<f32>,
    vocab: &Vocabulary,
    prompt: &RenderedPrompt,
    bidirectional_prefix: bool,
    cfg: &DecodeConfig,
    rng: &mut impl Rng,
) -> Result<Completion> {
    if prompt.ids.len() > params.config.context {
        return Err(Error::InstanceTooLong {
            len: prompt.ids.len(),
            context: params.config.context,
        });
    }
    let eoc = vocab.control_id(EOC);
    let mut ids = Vec::new();
    if cfg.max_new_tokens > 0 {
        let prefix = if bidirectional_prefix { prompt.prefix } else { 0 };
        let mut session = Session::new(params);
        let mut logits = session.prefill(&prompt.ids, &prompt.modality, prefix)?;
        loop {
            let next = sample_next(logits.as_slice().expect("contiguous logits"), cfg, rng);
            if next == eoc {
                break;
            }
            ids.push(next);
            if ids.len() >= cfg.max_new_tokens || session.remaining() == 0 {
                break;
            }
            logits = session.step(next, Modality::Code)?;
        }
    }
    let text = completion_text(vocab, &prompt.given, &ids);
    Ok(Completion { ids, text })
}

/// `cfg.num_samples` independent completions for one task.
pub fn generate(
    params: &Parameters<f32>,
    vocab: &Vocabulary,
    prompt: &Prompt,
    bidirectional_prefix: bool,
    cfg: &DecodeConfig,
    task_id: &str,
) -> Result<Vec<Completion>> {
    cfg.validate()?;
    let rendered = render_prompt(prompt, vocab)?;
    (0..cfg.num_samples)
        .map(|i| {
            let mut rng = sample_rng(cfg.seed, task_id, i);
            generate_one(params, vocab, &rendered, bidirectional_prefix, cfg, &mut rng)
        })
        .collect()
}

/// One line of a samples file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub task_id: String,
    pub sample_index: usize,
    pub completion: String,
    /// Reference lines prepended to the prompt; absent means the original
    /// prompt.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub lines_given: usize,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

/// A prompt to decode, keyed for the samples file.
#[derive(Debug, Clone)]
pub struct Job {
    pub task_id: String,
    pub lines_given: usize,
    pub prompt: Prompt,
}

/// Decodes every job on `workers` threads. Parameters are shared read-only
/// and each sample owns its RNG, so the output is independent of the
/// thread count.
pub fn generate_all(
    params: &Parameters<f32>,
    vocab: &Vocabulary,
    jobs: &[Job],
    bidirectional_prefix: bool,
    cfg: &DecodeConfig,
    workers: usize,
) -> Result<Vec<SampleRecord>> {
    cfg.validate()?;
    let rendered: Vec<RenderedPrompt> = jobs.iter().map(|j| render_prompt(&j.prompt, vocab)).collect::<Result<_>>()?;
    let units: Vec<(usize, usize)> = (0..jobs.len())
        .flat_map(|j| (0..cfg.num_samples).map(move |s| (j, s)))
        .collect();
    let workers = workers.clamp(1, units.len().max(1));
    let chunk = units.len().div_ceil(workers).max(1);
    let results: Vec<Result<Vec<SampleRecord>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = units
            .chunks(chunk)
            .map(|part| {
                let rendered = &rendered;
                scope.spawn(move || {
                    part.iter()
                        .map(|&(j, s)| {
                            let job = &jobs[j];
                            let stream = format!("{}#{}", job.task_id, job.lines_given);
                            let mut rng = sample_rng(cfg.seed, &stream, s);
                            let c = generate_one(params, vocab, &rendered[j], bidirectional_prefix, cfg, &mut rng)?;
                            Ok(SampleRecord {
                                task_id: job.task_id.clone(),
                                sample_index: s,
                                completion: c.text,
                                lines_given: job.lines_given,
                            })
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("decode worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(units.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}
