//! Experiment configuration, artifact bookkeeping and the pipeline steps the
//! command line wires together, including the objective x separation grid.

mod grid;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use grid::{run_grid, GridReport, GridRow};

use crate::analysis::{nearest_neighbors, project_2d, NeighborReport, Projection};
use crate::corpus::{read_pairs_jsonl, run_pipeline, write_pairs_jsonl, CorpusStats, FilterRules, Style};
use crate::dataset::{pack, read_packed, shuffle, tokenize_all, write_packed, Modality, PackedHeader};
use crate::decoder::{generate_all, DecodeConfig, SampleRecord};
use crate::eval::{augment_incremental, evaluate, EvalOptions, EvalProblem, Mode, PassKReport, VerdictSource};
use crate::model::{Checkpoint, ModelConfig, Parameters, Phase, Separation};
use crate::objectives::{CorruptionVocab, Objective, ObjectiveKind};
use crate::tokenizer::{build_separation_set, train_vocabulary, SeparationSet, Vocabulary, DEFAULT_EXTRA, PYTHON_BUILTINS, PYTHON_KEYWORDS};
use crate::trainer::{train, OptimizerConfig, RunOutput, TrainConfig};
use crate::{Error, Result};

/// Length and optimizer settings of one training phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSettings {
    pub epochs: usize,
    pub batch_size: usize,
    /// 0 writes only the final checkpoint.
    #[serde(default)]
    pub checkpoint_every: u64,
    pub optimizer: OptimizerConfig,
}

impl PhaseSettings {
    pub fn mapt() -> Self {
        PhaseSettings {
            epochs: 10,
            batch_size: 4,
            checkpoint_every: 0,
            optimizer: OptimizerConfig::mapt(),
        }
    }

    pub fn mrpt() -> Self {
        PhaseSettings {
            epochs: 2,
            batch_size: 4,
            checkpoint_every: 0,
            optimizer: OptimizerConfig::mrpt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Benchmark {
    pub name: String,
    /// HumanEval-schema problem file.
    pub problems: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSettings {
    pub ks: Vec<usize>,
    pub incremental: bool,
    /// Also decode greedily and report its pass@1 as a separate column.
    pub greedy: bool,
    pub include_full_body: bool,
    pub timeout_seconds: f64,
    pub memory_limit_mb: u64,
    /// Sandbox runner command; `None` scores by syntax-tree match against the
    /// reference solution.
    pub runner: Option<String>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            ks: vec![1, 10, 100],
            incremental: true,
            greedy: true,
            include_full_body: false,
            timeout_seconds: 10.0,
            memory_limit_mb: 1024,
            runner: None,
        }
    }
}

/// The single JSON configuration file behind a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub style: Style,
    pub model_preset: String,
    /// Overrides the preset's context size.
    pub context: Option<usize>,
    pub vocab_size: usize,
    pub seed: u64,
    pub workers: usize,
    pub filter: FilterRules,
    /// Extra identifiers for the partial-separation set; `None` uses the
    /// built-in list of common method names.
    pub sepset_extra: Option<Vec<String>>,
    pub mapt: PhaseSettings,
    pub mrpt: PhaseSettings,
    pub decode: DecodeConfig,
    pub eval: EvalSettings,
    pub corpus_root: Option<PathBuf>,
    pub benchmarks: Vec<Benchmark>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            style: Style::Pangu,
            model_preset: "toy".into(),
            context: None,
            vocab_size: 1000,
            seed: 0,
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            filter: FilterRules::default(),
            sepset_extra: None,
            mapt: PhaseSettings::mapt(),
            mrpt: PhaseSettings::mrpt(),
            decode: DecodeConfig::default(),
            eval: EvalSettings::default(),
            corpus_root: None,
            benchmarks: Vec::new(),
        }
    }
}

/// A configuration plus the hash stamped into every artifact it produces.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl LoadedConfig {
    /// Reads a config file; relative paths inside it are taken relative to
    /// the file. The hash covers the file's bytes.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInput(format!("config file {}", path.display())));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut config: ExperimentConfig =
            serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(root) = config.corpus_root.as_mut() {
            resolve(root);
        }
        for b in &mut config.benchmarks {
            resolve(&mut b.problems);
        }
        config.validate()?;
        Ok(LoadedConfig {
            config,
            hash: sha256_hex(&bytes),
        })
    }

    /// Built-in defaults, hashed by their JSON rendering.
    pub fn defaults() -> Self {
        let config = ExperimentConfig::default();
        let hash = sha256_hex(&serde_json::to_vec(&config).expect("config serializes"));
        LoadedConfig { config, hash }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        ModelConfig::preset(&self.model_preset, self.vocab_size)?;
        self.decode.validate()?;
        self.mapt.optimizer.validate()?;
        self.mrpt.optimizer.validate()?;
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(Error::Config("eval.ks must be non-empty positive integers".into()));
        }
        if let Some(k) = self.eval.ks.iter().find(|k| **k > self.decode.num_samples) {
            return Err(Error::Config(format!(
                "eval.ks contains {k} but decode.num_samples is {}",
                self.decode.num_samples
            )));
        }
        for (name, p) in [("mapt", &self.mapt), ("mrpt", &self.mrpt)] {
            if p.epochs == 0 || p.batch_size == 0 {
                return Err(Error::Config(format!("{name}: epochs and batch_size must be positive")));
            }
        }
        Ok(())
    }

    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::preset(&self.model_preset, vocab_size)?;
        if let Some(c) = self.context {
            cfg.context = c;
        }
        Ok(cfg)
    }

    pub fn sepset_extra(&self) -> Vec<String> {
        self.sepset_extra
            .clone()
            .unwrap_or_else(|| DEFAULT_EXTRA.iter().map(|s| (*s).to_owned()).collect())
    }
}

/// Refuses an artifact stamped by a different config unless `force` is set.
pub fn check_hash(artifact: &Path, found: Option<&str>, expected: &str, force: bool) -> Result<()> {
    match found {
        Some(found) if found != expected => {
            if force {
                log::warn!("{} was produced by config {found}; continuing (forced)", artifact.display());
                Ok(())
            } else {
                Err(Error::ConfigHashMismatch {
                    artifact: artifact.display().to_string(),
                    found: found.to_owned(),
                    expected: expected.to_owned(),
                })
            }
        }
        Some(_) => Ok(()),
        None => {
            log::warn!("{} carries no config hash", artifact.display());
            Ok(())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub command: String,
    pub config_hash: String,
    pub artifacts: Vec<String>,
}

/// `manifest.json` of a run directory: one entry per command executed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join("manifest.json")
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = Self::path(dir);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Appends an entry to the manifest in `dir`.
    pub fn record(dir: &Path, command: &str, config_hash: &str, artifacts: &[PathBuf]) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut m = Self::load(dir)?;
        m.entries.push(ManifestEntry {
            command: command.to_owned(),
            config_hash: config_hash.to_owned(),
            artifacts: artifacts.iter().map(|p| p.display().to_string()).collect(),
        });
        let path = Self::path(dir);
        std::fs::write(&path, serde_json::to_string_pretty(&m)?).map_err(|e| Error::io(&path, e))
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingInput(format!("{what} {}", path.display())))
    }
}

/// Corpus extraction: writes the pairs file and `<out>.stats.json`.
pub fn extract(root: &Path, style: Style, rules: &FilterRules, workers: usize, out: &Path, hash: &str) -> Result<CorpusStats> {
    let output = run_pipeline(root, rules, style, workers)?;
    write_pairs_jsonl(out, &output.pairs, Some(hash))?;
    write_json(&out.with_extension("stats.json"), &output.stats)?;
    Ok(output.stats)
}

fn load_pairs(path: &Path, hash: &str, force: bool) -> Result<Vec<crate::corpus::FormattedPair>> {
    require(path, "pairs file")?;
    let (pairs, found) = read_pairs_jsonl(path)?;
    check_hash(path, found.as_deref(), hash, force)?;
    Ok(pairs)
}

pub fn load_vocabulary(path: &Path, hash: &str, force: bool) -> Result<Vocabulary> {
    require(path, "vocabulary")?;
    let (vocab, found) = Vocabulary::load(path)?;
    check_hash(path, found.as_deref(), hash, force)?;
    Ok(vocab)
}

pub fn train_tokenizer(pairs: &Path, size: usize, out: &Path, hash: &str, force: bool) -> Result<Vocabulary> {
    let pairs = load_pairs(pairs, hash, force)?;
    let texts: Vec<String> = pairs.iter().map(|p| p.text()).collect();
    let vocab = train_vocabulary(texts.iter().map(String::as_str), size, &crate::control::ALL)?;
    vocab.save(out, Some(hash))?;
    Ok(vocab)
}

pub fn build_sepset(vocab: &Path, extra: &[String], out: &Path, hash: &str, force: bool) -> Result<SeparationSet> {
    let vocab = load_vocabulary(vocab, hash, force)?;
    let extra: Vec<&str> = extra.iter().map(String::as_str).collect();
    let set = build_separation_set(&vocab, PYTHON_KEYWORDS, PYTHON_BUILTINS, &extra);
    set.save(out)?;
    Ok(set)
}

/// Tokenizes, shuffles (seeded) and packs the pairs. Returns the header.
pub fn pack_dataset(pairs: &Path, vocab: &Path, context: usize, seed: u64, out: &Path, hash: &str, force: bool) -> Result<PackedHeader> {
    let pairs = load_pairs(pairs, hash, force)?;
    let vocab = load_vocabulary(vocab, hash, force)?;
    let (instances, dropped) = tokenize_all(&pairs, &vocab, context);
    if dropped > 0 {
        log::warn!("{dropped} pairs exceed the context of {context} tokens and were dropped");
    }
    let mut instances = instances;
    shuffle(&mut instances, seed);
    let samples = pack(&instances, context, vocab.pad_id())?;
    let header = PackedHeader {
        context,
        vocab_hash: vocab.hash(),
        num_samples: samples.len(),
        seed,
        config_hash: Some(hash.to_owned()),
    };
    write_packed(out, &header, &samples)?;
    Ok(header)
}

/// Inputs of one training run.
#[derive(Debug, Clone)]
pub struct TrainRequest {
    pub data: PathBuf,
    pub vocab: PathBuf,
    pub phase: Phase,
    pub objective: ObjectiveKind,
    pub separation: Separation,
    /// Required for `pes`.
    pub sepset: Option<PathBuf>,
    /// Starting weights; fresh initialization when absent.
    pub init: Option<PathBuf>,
    /// Continue an interrupted run from this checkpoint.
    pub resume: Option<PathBuf>,
    pub settings: PhaseSettings,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub steps: u64,
    pub last_loss: Option<f64>,
}

pub fn train_model(req: &TrainRequest, cfg: &ExperimentConfig, hash: &str, force: bool) -> Result<TrainSummary> {
    if req.phase == Phase::Mapt && req.separation != Separation::Shared {
        return Err(Error::Config(format!(
            "separation: mapt trains shared embeddings, got {}",
            req.separation
        )));
    }
    require(&req.data, "dataset")?;
    let vocab = load_vocabulary(&req.vocab, hash, force)?;
    let (header, data) = read_packed(&req.data)?;
    check_hash(&req.data, header.config_hash.as_deref(), hash, force)?;
    if header.vocab_hash != vocab.hash() {
        return Err(Error::Data(format!(
            "{} was packed with a different vocabulary than {}",
            req.data.display(),
            req.vocab.display()
        )));
    }
    let sepset = match (&req.sepset, req.separation) {
        (Some(path), _) => {
            require(path, "separation set")?;
            Some(SeparationSet::load(path)?.ids().collect::<Vec<_>>())
        }
        (None, Separation::Pes) => return Err(Error::Config("separation: pes requires --sepset".into())),
        (None, _) => None,
    };
    let (params, resume) = if let Some(path) = &req.resume {
        require(path, "checkpoint")?;
        let ckpt = Checkpoint::load(path)?;
        check_hash(path, ckpt.meta.config_hash.as_deref(), hash, force)?;
        (ckpt.params, ckpt.optimizer)
    } else {
        let base = match &req.init {
            Some(path) => {
                require(path, "checkpoint")?;
                let ckpt = Checkpoint::load(path)?;
                check_hash(path, ckpt.meta.config_hash.as_deref(), hash, force)?;
                ckpt.params
            }
            None => {
                let mut model = cfg.model_config(vocab.size())?;
                model.context = model.context.max(header.context);
                Parameters::init(&model, cfg.seed)?
            }
        };
        let params = if req.separation == Separation::Shared {
            base
        } else {
            base.separate(req.separation, sepset.as_deref())?
        };
        (params, None)
    };
    if params.config.vocab_size != vocab.size() {
        return Err(Error::Data("checkpoint and vocabulary sizes differ".into()));
    }
    if params.config.context < header.context {
        return Err(Error::Config(format!(
            "context: model holds {} tokens, data is packed to {}",
            params.config.context, header.context
        )));
    }
    let tc = TrainConfig {
        phase: req.phase,
        objective: Objective::new(req.objective),
        optimizer: req.settings.optimizer,
        epochs: req.settings.epochs,
        batch_size: req.settings.batch_size,
        seed: cfg.seed,
        checkpoint_every: req.settings.checkpoint_every,
    };
    let output = RunOutput {
        dir: Some(req.out_dir.clone()),
        vocabulary: Some(vocab.to_json()),
        config_hash: Some(hash.to_owned()),
    };
    let outcome = train(params, resume, &data, &tc, &CorruptionVocab::from_vocabulary(&vocab), &output, None)?;
    let checkpoint = req.out_dir.join(Checkpoint::file_name(req.phase, outcome.optimizer.step));
    Ok(TrainSummary {
        checkpoint,
        steps: outcome.optimizer.step,
        last_loss: outcome.log.last().map(|l| l.loss),
    })
}

/// Loads a checkpoint together with the vocabulary stored inside it.
pub fn load_model(path: &Path, hash: &str, force: bool) -> Result<(Checkpoint, Vocabulary)> {
    require(path, "checkpoint")?;
    let ckpt = Checkpoint::load(path)?;
    check_hash(path, ckpt.meta.config_hash.as_deref(), hash, force)?;
    let vocab = ckpt
        .vocabulary
        .clone()
        .ok_or_else(|| Error::Data(format!("{} carries no vocabulary", path.display())))?;
    let vocab = Vocabulary::from_json(vocab)?;
    Ok((ckpt, vocab))
}

/// Decodes every prompt of `problems` (all augmented prompts in incremental
/// mode) with the checkpoint.
pub fn generate_samples(
    ckpt: &Checkpoint,
    vocab: &Vocabulary,
    problems: &[EvalProblem],
    style: Style,
    mode: Mode,
    include_full_body: bool,
    decode: &DecodeConfig,
    workers: usize,
) -> Result<Vec<SampleRecord>> {
    let mut jobs = Vec::new();
    for p in problems {
        match mode {
            Mode::Standard => jobs.push(crate::decoder::Job {
                task_id: p.task_id.clone(),
                lines_given: 0,
                prompt: p.prompt(style, 0)?,
            }),
            Mode::Incremental => jobs.extend(augment_incremental(p, style, include_full_body)?.iter().map(|a| a.job())),
        }
    }
    let bidirectional = ckpt.meta.objective == Some(ObjectiveKind::PrefixCode);
    generate_all(&ckpt.params, vocab, &jobs, bidirectional, decode, workers)
}

/// Scores samples and stamps the report with its provenance.
pub fn evaluate_samples(
    problems: &[EvalProblem],
    samples: &[SampleRecord],
    opts: &EvalOptions,
    source: &dyn VerdictSource,
    metadata: serde_json::Value,
) -> Result<PassKReport> {
    let mut report = evaluate(problems, samples, opts, source)?;
    report.metadata = metadata;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub neighbors: NeighborReport,
    pub projection: Option<Projection>,
}

/// Nearest neighbours of `token` in `space`, plus a 2D layout of the query
/// and its neighbours when `project` is set.
pub fn analyze(ckpt: &Checkpoint, vocab: &Vocabulary, token: &str, space: Modality, top_k: usize, project: bool, seed: u64) -> Result<AnalysisReport> {
    let neighbors = nearest_neighbors(&ckpt.params, vocab, token, space, top_k)?;
    let projection = if project {
        let mut ids = vec![crate::analysis::resolve_token(vocab, token)?];
        ids.extend(neighbors.neighbors.iter().map(|n| n.id));
        Some(project_2d(&ckpt.params, vocab, &ids, space, seed)?)
    } else {
        None
    };
    Ok(AnalysisReport { neighbors, projection })
}
