//! Command-line entry point. Every command writes under a run directory and
//! appends to that directory's `manifest.json`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mrpt_core::corpus::Style;
use mrpt_core::dataset::Modality;
use mrpt_core::decoder::DecodeConfig;
use mrpt_core::eval::{
    correlation_table, read_problems, read_samples, write_samples, CheckpointSeries, EvalOptions, Mode, ReferenceMatch,
    SubprocessRunner, VerdictSource,
};
use mrpt_core::experiment::{self as exp, LoadedConfig, Manifest, TrainRequest};
use mrpt_core::model::{Phase, Separation};
use mrpt_core::objectives::ObjectiveKind;
use mrpt_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "mrpt", version, about = "Modality-relative pre-training and pass@k evaluation")]
struct Cli {
    /// Experiment configuration (JSON). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Accept artifacts produced under a different config hash.
    #[arg(long, global = true)]
    force: bool,
    /// Override the config's worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output; repeat for debug.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract docstring/code pairs from a tree of Python files.
    Extract {
        #[arg(long)]
        root: Option<PathBuf>,
        #[arg(long)]
        style: Option<Style>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the subword vocabulary on extracted pairs.
    TrainTokenizer {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the token set that gets code-specific rows under `pes`.
    BuildSepset {
        #[arg(long)]
        vocab: PathBuf,
        /// Extra identifiers, comma separated.
        #[arg(long, value_delimiter = ',')]
        extra: Option<Vec<String>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tokenize, shuffle and pack pairs into fixed-length samples.
    Pack {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long)]
        context: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model.
    Train(TrainArgs),
    /// Sample completions for a problem file.
    Generate(GenerateArgs),
    /// Execute samples and report pass@k.
    Evaluate(EvaluateArgs),
    /// Nearest neighbours and a 2D layout of embedding rows.
    Analyze {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        token: String,
        #[arg(long, default_value = "code", value_parser = parse_modality)]
        space: Modality,
        #[arg(long, default_value_t = 20)]
        topk: usize,
        /// Also lay the query and its neighbours out in 2D.
        #[arg(long)]
        project: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Baseline plus every objective x separation pair, scored on every
    /// configured benchmark.
    Grid {
        #[arg(long)]
        out: PathBuf,
    },
    /// Mean Pearson correlation between benchmarks across checkpoints.
    Correlate {
        /// JSON array of `{name, scores: {benchmark: [score per checkpoint]}}`.
        #[arg(long)]
        series: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, default_value = "mrpt")]
    phase: Phase,
    #[arg(long)]
    objective: ObjectiveKind,
    #[arg(long, default_value = "shared")]
    separation: Separation,
    #[arg(long)]
    sepset: Option<PathBuf>,
    /// Starting checkpoint; fresh weights when omitted.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Continue an interrupted run.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_lr: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    problems: PathBuf,
    #[arg(long, default_value = "standard")]
    mode: Mode,
    /// Samples per prompt.
    #[arg(long)]
    n: Option<usize>,
    /// Nucleus mass.
    #[arg(long)]
    p: Option<f64>,
    /// Temperature.
    #[arg(long)]
    t: Option<f64>,
    #[arg(long)]
    max_new_tokens: Option<usize>,
    /// One argmax decode per prompt.
    #[arg(long)]
    greedy: bool,
    #[arg(long)]
    include_full_body: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    problems: PathBuf,
    #[arg(long)]
    samples: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
    #[arg(long, default_value = "standard")]
    mode: Mode,
    #[arg(long)]
    include_full_body: bool,
    /// Sandbox runner command line; overrides the config.
    #[arg(long)]
    runner: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_modality(s: &str) -> std::result::Result<Modality, String> {
    match s {
        "nl" | "text" => Ok(Modality::Nl),
        "code" => Ok(Modality::Code),
        other => Err(format!("unknown space `{other}` (expected nl or code)")),
    }
}

fn run_dir(out: &Path) -> PathBuf {
    match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn ensure_parent(out: &Path) -> Result<()> {
    let dir = run_dir(out);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))
}

fn verdict_source(runner: Option<&str>, problems: &[mrpt_core::eval::EvalProblem]) -> Result<Box<dyn VerdictSource>> {
    match runner {
        Some(cmd) => Ok(Box::new(SubprocessRunner::from_command_line(cmd)?)),
        None => {
            log::warn!("no sandbox runner configured; scoring by syntax-tree match against the reference solutions");
            Ok(Box::new(ReferenceMatch::new(problems)?))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut loaded = match &cli.config {
        Some(path) => LoadedConfig::load(path)?,
        None => LoadedConfig::defaults(),
    };
    if let Some(w) = cli.workers {
        loaded.config.workers = w.max(1);
    }
    if let Some(s) = cli.seed {
        loaded.config.seed = s;
    }
    let cfg = loaded.config.clone();
    let hash = loaded.hash.clone();
    let force = cli.force;
    match cli.command {
        Command::Extract { root, style, out } => {
            let root = root
                .or_else(|| cfg.corpus_root.clone())
                .ok_or_else(|| Error::MissingInput("--root (or corpus_root in the config)".into()))?;
            if !root.is_dir() {
                return Err(Error::MissingInput(format!("corpus directory {}", root.display())));
            }
            ensure_parent(&out)?;
            let stats = exp::extract(&root, style.unwrap_or(cfg.style), &cfg.filter, cfg.workers, &out, &hash)?;
            log::info!("{} pairs from {} files", stats.pairs_emitted, stats.files_seen);
            let stats_path = PathBuf::from(format!("{}.stats.json", out.display()));
            Manifest::record(&run_dir(&out), "extract", &hash, &[out, stats_path])
        }
        Command::TrainTokenizer { pairs, vocab_size, out } => {
            ensure_parent(&out)?;
            let vocab = exp::train_tokenizer(&pairs, vocab_size.unwrap_or(cfg.vocab_size), &out, &hash, force)?;
            log::info!("vocabulary of {} tokens", vocab.size());
            Manifest::record(&run_dir(&out), "train-tokenizer", &hash, &[out])
        }
        Command::BuildSepset { vocab, extra, out } => {
            ensure_parent(&out)?;
            let extra = extra.unwrap_or_else(|| cfg.sepset_extra());
            let set = exp::build_sepset(&vocab, &extra, &out, &hash, force)?;
            log::info!("separation set of {} tokens", set.ids().count());
            Manifest::record(&run_dir(&out), "build-sepset", &hash, &[out])
        }
        Command::Pack { pairs, vocab, context, out } => {
            ensure_parent(&out)?;
            let context = match context {
                Some(c) => c,
                None => cfg.model_config(cfg.vocab_size)?.context,
            };
            let header = exp::pack_dataset(&pairs, &vocab, context, cfg.seed, &out, &hash, force)?;
            log::info!("{} samples of {} tokens", header.num_samples, header.context);
            Manifest::record(&run_dir(&out), "pack", &hash, &[out])
        }
        Command::Train(a) => {
            let mut settings = match a.phase {
                Phase::Mapt => cfg.mapt.clone(),
                Phase::Mrpt => cfg.mrpt.clone(),
            };
            if let Some(e) = a.epochs {
                settings.epochs = e;
            }
            if let Some(b) = a.batch_size {
                settings.batch_size = b;
            }
            if let Some(lr) = a.max_lr {
                settings.optimizer.max_lr = lr;
                settings.optimizer.min_lr = settings.optimizer.min_lr.min(lr);
            }
            settings.optimizer.validate()?;
            let req = TrainRequest {
                data: a.data,
                vocab: a.vocab,
                phase: a.phase,
                objective: a.objective,
                separation: a.separation,
                sepset: a.sepset,
                init: a.init,
                resume: a.resume,
                settings,
                out_dir: a.out.clone(),
            };
            let summary = exp::train_model(&req, &cfg, &hash, force)?;
            println!("{}", serde_json::to_string(&summary)?);
            Manifest::record(&a.out, "train", &hash, &[summary.checkpoint])
        }
        Command::Generate(a) => {
            if !a.problems.exists() {
                return Err(Error::MissingInput(format!("problems file {}", a.problems.display())));
            }
            let (ckpt, vocab) = exp::load_model(&a.ckpt, &hash, force)?;
            let problems = read_problems(&a.problems)?;
            let mut decode = cfg.decode;
            if let Some(n) = a.n {
                decode.num_samples = n;
            }
            if let Some(p) = a.p {
                decode.top_p = p;
            }
            if let Some(t) = a.t {
                decode.temperature = t;
            }
            if let Some(m) = a.max_new_tokens {
                decode.max_new_tokens = m;
            }
            if a.greedy {
                decode = DecodeConfig::greedy(decode.max_new_tokens);
            }
            decode.seed = cfg.seed;
            decode.validate()?;
            let samples = exp::generate_samples(&ckpt, &vocab, &problems, cfg.style, a.mode, a.include_full_body, &decode, cfg.workers)?;
            ensure_parent(&a.out)?;
            write_samples(&a.out, &samples)?;
            log::info!("{} samples written", samples.len());
            Manifest::record(&run_dir(&a.out), "generate", &hash, &[a.out])
        }
        Command::Evaluate(a) => {
            let samples_path = a
                .samples
                .ok_or_else(|| Error::MissingInput("--samples is required: evaluate scores an existing samples file".into()))?;
            for (what, p) in [("problems file", &a.problems), ("samples file", &samples_path)] {
                if !p.exists() {
                    return Err(Error::MissingInput(format!("{what} {}", p.display())));
                }
            }
            let problems = read_problems(&a.problems)?;
            let samples = read_samples(&samples_path)?;
            let runner = a.runner.or(cfg.eval.runner.clone());
            let source = verdict_source(runner.as_deref(), &problems)?;
            let opts = EvalOptions {
                ks: a.k.unwrap_or_else(|| cfg.eval.ks.clone()),
                mode: a.mode,
                include_full_body: a.include_full_body,
                timeout_seconds: cfg.eval.timeout_seconds,
                memory_limit_mb: cfg.eval.memory_limit_mb,
                workers: cfg.workers,
            };
            let meta = serde_json::json!({
                "problems": a.problems,
                "samples": samples_path,
                "runner": runner,
                "config_hash": hash,
            });
            let report = exp::evaluate_samples(&problems, &samples, &opts, source.as_ref(), meta)?;
            for (k, v) in &report.pass_at_k {
                println!("pass@{k} = {v:.4}");
            }
            exp::write_json(&a.out, &report)?;
            Manifest::record(&run_dir(&a.out), "evaluate", &hash, &[a.out])
        }
        Command::Analyze {
            ckpt,
            token,
            space,
            topk,
            project,
            out,
        } => {
            let (ckpt, vocab) = exp::load_model(&ckpt, &hash, force)?;
            let report = exp::analyze(&ckpt, &vocab, &token, space, topk, project, cfg.seed)?;
            exp::write_json(&out, &report)?;
            Manifest::record(&run_dir(&out), "analyze", &hash, &[out])
        }
        Command::Grid { out } => {
            let report = exp::run_grid(&loaded, &out, force, None)?;
            print!("{}", mrpt_core::eval::table_markdown(&report.columns, &report.table));
            Ok(())
        }
        Command::Correlate { series, out } => {
            if !series.exists() {
                return Err(Error::MissingInput(format!("series file {}", series.display())));
            }
            let text = std::fs::read_to_string(&series).map_err(|e| Error::io(&series, e))?;
            let series: Vec<CheckpointSeries> = serde_json::from_str(&text)?;
            let table = correlation_table(&series)?;
            print!("{}", table.to_markdown());
            exp::write_json(&out, &table)?;
            Manifest::record(&run_dir(&out), "correlate", &hash, &[out])
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
