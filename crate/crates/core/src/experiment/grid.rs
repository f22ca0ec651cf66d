//! The full matrix: one shared-embedding baseline, then every objective under
//! every separation mode, each decoded and scored on every benchmark.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    build_sepset, evaluate_samples, extract, generate_samples, load_model, pack_dataset, train_model, train_tokenizer,
    LoadedConfig, Manifest, TrainRequest,
};
use crate::corpus::read_pairs_jsonl;
use crate::decoder::DecodeConfig;
use crate::eval::{
    contamination_check, read_problems, table_markdown, write_samples, write_table_csv, EvalOptions, EvalProblem, Mode,
    PassKReport, ReferenceMatch, SubprocessRunner, TableRow, VerdictSource,
};
use crate::model::{Phase, Separation};
use crate::objectives::ObjectiveKind;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub benchmark: String,
    pub standard: PassKReport,
    pub incremental: Option<PassKReport>,
    pub greedy: Option<PassKReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub phase: Phase,
    pub objective: Option<ObjectiveKind>,
    pub separation: Option<Separation>,
    pub checkpoint: PathBuf,
    pub last_loss: Option<f64>,
    pub results: Vec<BenchmarkResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contamination {
    pub benchmark: String,
    pub task_id: String,
    pub training_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub config_hash: String,
    pub rows: Vec<GridRow>,
    pub columns: Vec<String>,
    pub table: Vec<TableRow>,
    pub contamination: Vec<Contamination>,
}

fn verdict_source(runner: Option<&str>, problems: &[EvalProblem]) -> Result<Box<dyn VerdictSource>> {
    Ok(match runner {
        Some(cmd) => Box::new(SubprocessRunner::from_command_line(cmd)?),
        None => Box::new(ReferenceMatch::new(problems)?),
    })
}

/// Runs extraction through scoring under `out`. `source` overrides the
/// verdict source chosen by the config.
pub fn run_grid(loaded: &LoadedConfig, out: &Path, force: bool, source: Option<&dyn VerdictSource>) -> Result<GridReport> {
    let cfg = &loaded.config;
    let hash = loaded.hash.as_str();
    let root = cfg
        .corpus_root
        .as_deref()
        .ok_or_else(|| Error::MissingInput("corpus_root is not set in the config".into()))?;
    if cfg.benchmarks.is_empty() {
        return Err(Error::MissingInput("no benchmarks configured".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut artifacts = Vec::new();

    let pairs = out.join("pairs.jsonl");
    let stats = extract(root, cfg.style, &cfg.filter, cfg.workers, &pairs, hash)?;
    log::info!("extracted {} pairs", stats.pairs_emitted);
    let vocab = out.join("vocab.json");
    train_tokenizer(&pairs, cfg.vocab_size, &vocab, hash, force)?;
    let sepset = out.join("sepset.json");
    build_sepset(&vocab, &cfg.sepset_extra(), &sepset, hash, force)?;
    let data = out.join("train.bin");
    let context = cfg.model_config(cfg.vocab_size)?.context;
    pack_dataset(&pairs, &vocab, context, cfg.seed, &data, hash, force)?;
    artifacts.extend([pairs.clone(), vocab.clone(), sepset.clone(), data.clone()]);

    let request = |phase, objective, separation, init: Option<PathBuf>, dir: PathBuf| TrainRequest {
        data: data.clone(),
        vocab: vocab.clone(),
        phase,
        objective,
        separation,
        sepset: (separation == Separation::Pes).then(|| sepset.clone()),
        init,
        resume: None,
        settings: if phase == Phase::Mapt { cfg.mapt.clone() } else { cfg.mrpt.clone() },
        out_dir: dir,
    };
    let baseline = train_model(
        &request(Phase::Mapt, ObjectiveKind::TextCode, Separation::Shared, None, out.join("mapt")),
        cfg,
        hash,
        force,
    )?;
    log::info!("baseline trained: loss {:?}", baseline.last_loss);
    let mut models = vec![(Phase::Mapt, None, None, baseline.clone())];
    for objective in ObjectiveKind::ALL {
        for separation in Separation::ALL {
            let dir = out.join("mrpt").join(format!("{objective}-{separation}"));
            let summary = train_model(
                &request(Phase::Mrpt, objective, separation, Some(baseline.checkpoint.clone()), dir),
                cfg,
                hash,
                force,
            )?;
            log::info!("{objective}/{separation} trained: loss {:?}", summary.last_loss);
            models.push((Phase::Mrpt, Some(objective), Some(separation), summary));
        }
    }

    let (training_pairs, _) = read_pairs_jsonl(&pairs)?;
    let docstrings: Vec<String> = training_pairs.iter().map(|p| p.docstring.clone()).collect();
    let mut suites = Vec::new();
    let mut contamination = Vec::new();
    for b in &cfg.benchmarks {
        if !b.problems.exists() {
            return Err(Error::MissingInput(format!("problems file {}", b.problems.display())));
        }
        let problems = read_problems(&b.problems)?;
        for (task_id, training_index) in contamination_check(&problems, &docstrings) {
            contamination.push(Contamination {
                benchmark: b.name.clone(),
                task_id,
                training_index,
            });
        }
        let own = match source {
            Some(_) => None,
            None => Some(verdict_source(cfg.eval.runner.as_deref(), &problems)?),
        };
        suites.push((b.name.clone(), problems, own));
    }

    let ev = &cfg.eval;
    let options = |mode: Mode, ks: Vec<usize>| EvalOptions {
        ks,
        mode,
        include_full_body: ev.include_full_body,
        timeout_seconds: ev.timeout_seconds,
        memory_limit_mb: ev.memory_limit_mb,
        workers: cfg.workers,
    };
    let sample_mode = if ev.incremental { Mode::Incremental } else { Mode::Standard };
    let greedy_cfg = DecodeConfig {
        greedy: true,
        num_samples: 1,
        ..cfg.decode
    };
    let mut rows = Vec::new();
    for (phase, objective, separation, summary) in &models {
        let (ckpt, vocab) = load_model(&summary.checkpoint, hash, force)?;
        let label = match (objective, separation) {
            (Some(o), Some(s)) => format!("{o}-{s}"),
            _ => "mapt".to_owned(),
        };
        let mut results = Vec::new();
        for (name, problems, own) in &suites {
            let source: &dyn VerdictSource = match (source, own) {
                (Some(s), _) => s,
                (None, Some(s)) => s.as_ref(),
                (None, None) => unreachable!("a verdict source is always chosen"),
            };
            let samples = generate_samples(&ckpt, &vocab, problems, cfg.style, sample_mode, ev.include_full_body, &cfg.decode, cfg.workers)?;
            let samples_path = out.join("samples").join(&label).join(format!("{name}.jsonl"));
            std::fs::create_dir_all(samples_path.parent().expect("has parent")).map_err(|e| Error::io(&samples_path, e))?;
            write_samples(&samples_path, &samples)?;
            artifacts.push(samples_path);
            let meta = serde_json::json!({
                "checkpoint": summary.checkpoint,
                "benchmark": name,
                "decode": cfg.decode,
                "config_hash": hash,
            });
            let standard = evaluate_samples(problems, &samples, &options(Mode::Standard, ev.ks.clone()), source, meta.clone())?;
            let incremental = if ev.incremental {
                Some(evaluate_samples(problems, &samples, &options(Mode::Incremental, ev.ks.clone()), source, meta.clone())?)
            } else {
                None
            };
            let greedy = if ev.greedy {
                let g = generate_samples(&ckpt, &vocab, problems, cfg.style, Mode::Standard, false, &greedy_cfg, cfg.workers)?;
                Some(evaluate_samples(problems, &g, &options(Mode::Standard, vec![1]), source, meta)?)
            } else {
                None
            };
            results.push(BenchmarkResult {
                benchmark: name.clone(),
                standard,
                incremental,
                greedy,
            });
        }
        rows.push(GridRow {
            phase: *phase,
            objective: *objective,
            separation: *separation,
            checkpoint: summary.checkpoint.clone(),
            last_loss: summary.last_loss,
            results,
        });
    }

    let mut columns = Vec::new();
    for b in &cfg.benchmarks {
        columns.extend(ev.ks.iter().map(|k| format!("{} p@{k}", b.name)));
        if ev.incremental {
            columns.extend(ev.ks.iter().map(|k| format!("INCR {} p@{k}", b.name)));
        }
        if ev.greedy {
            columns.push(format!("{} greedy p@1", b.name));
        }
    }
    let table: Vec<TableRow> = rows.iter().map(table_row).collect();
    let report = GridReport {
        config_hash: hash.to_owned(),
        rows,
        columns,
        table,
        contamination,
    };
    let json = out.join("report.json");
    super::write_json(&json, &report)?;
    let csv = out.join("report.csv");
    write_table_csv(&csv, &report.columns, &report.table)?;
    let md = out.join("report.md");
    std::fs::write(&md, table_markdown(&report.columns, &report.table)).map_err(|e| Error::io(&md, e))?;
    artifacts.extend(report.rows.iter().map(|r| r.checkpoint.clone()));
    artifacts.extend([json, csv, md]);
    Manifest::record(out, "grid", hash, &artifacts)?;
    Ok(report)
}

fn table_row(row: &GridRow) -> TableRow {
    let mut scores = BTreeMap::new();
    for r in &row.results {
        for (k, v) in &r.standard.pass_at_k {
            scores.insert(format!("{} p@{k}", r.benchmark), 100.0 * v);
        }
        if let Some(inc) = &r.incremental {
            for (k, v) in &inc.pass_at_k {
                scores.insert(format!("INCR {} p@{k}", r.benchmark), 100.0 * v);
            }
        }
        if let Some(g) = &r.greedy {
            if let Some(v) = g.pass_at_k.get(&1) {
                scores.insert(format!("{} greedy p@1", r.benchmark), 100.0 * v);
            }
        }
    }
    TableRow {
        model: row.phase.to_string(),
        objective: row.objective.map_or("-".into(), |o| o.to_string()),
        separation: row.separation.map_or("-".into(), |s| s.to_string()),
        scores,
    }
}
