//! Adam with decoupled weight decay, warm-up plus cosine schedule, global
//! gradient clipping, checkpointing and exact resumption.

use std::path::{Path, PathBuf};

use ndarray::NdFloat;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::PackedSample;
use crate::model::{loss_and_grad, Checkpoint, CheckpointMeta, OptimizerState, Parameters, Phase};
use crate::objectives::{prepare_sample, CorruptionVocab, Objective};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub max_lr: f64,
    pub min_lr: f64,
    /// Share of all steps spent ramping the learning rate up from zero.
    pub warmup_fraction: f64,
    pub clip_norm: f64,
    pub epsilon: f64,
}

impl OptimizerConfig {
    /// Settings for shared-embedding pre-training.
    pub fn mapt() -> Self {
        OptimizerConfig {
            beta1: 0.9,
            beta2: 0.95,
            weight_decay: 0.01,
            max_lr: 3e-4,
            min_lr: 3e-5,
            warmup_fraction: 0.01,
            clip_norm: 3.0,
            epsilon: 1e-8,
        }
    }

    /// Settings for continued pair training.
    pub fn mrpt() -> Self {
        OptimizerConfig {
            max_lr: 1e-5,
            min_lr: 5e-6,
            clip_norm: 1.0,
            ..Self::mapt()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if !(self.min_lr > 0.0 && self.min_lr <= self.max_lr) {
            return fail("learning rates must satisfy 0 < min_lr <= max_lr");
        }
        if self.clip_norm <= 0.0 {
            return fail("clip_norm must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("betas must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return fail("warmup_fraction must lie in [0, 1]");
        }
        if self.epsilon <= 0.0 || self.weight_decay < 0.0 {
            return fail("epsilon must be positive and weight_decay non-negative");
        }
        Ok(())
    }
}

/// Learning rate at `step` of `total_steps`: a linear ramp from 0 to
/// `max_lr` over the warm-up, then cosine decay reaching `min_lr` at the
/// last step.
pub fn lr_at(step: u64, total_steps: u64, cfg: &OptimizerConfig) -> Result<f64> {
    if total_steps == 0 {
        return Err(Error::Config("total_steps must be positive".into()));
    }
    let step = step.min(total_steps) as f64;
    let total = total_steps as f64;
    let warmup = (cfg.warmup_fraction * total).round();
    if step < warmup {
        return Ok(cfg.max_lr * step / warmup);
    }
    if total <= warmup {
        return Ok(cfg.max_lr);
    }
    let progress = (step - warmup) / (total - warmup);
    let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
    Ok(cfg.min_lr + (cfg.max_lr - cfg.min_lr) * cosine)
}

/// Rescales `grads` so their global L2 norm is at most `clip_norm`, and
/// returns the norm before clipping.
pub fn clip_gradients<F: NdFloat>(grads: &mut Parameters<F>, clip_norm: f64) -> Result<f64> {
    if let Some((name, _, _)) = grads.tensors().into_iter().find(|(_, t, _)| t.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFiniteGradient(name));
    }
    let norm = grads.l2_norm().to_f64().expect("finite");
    if norm > clip_norm {
        grads.scale(F::from(clip_norm / norm).expect("finite"));
    }
    Ok(norm)
}

/// One Adam step on a flat tensor. `t` is the 1-based step count used for
/// bias correction. Weight decay is applied to the weights directly rather
/// than folded into the gradient.
pub fn adam_update<F: NdFloat>(param: &mut [F], grad: &[F], m: &mut [F], v: &mut [F], t: u64, lr: f64, cfg: &OptimizerConfig) {
    let f = |x: f64| F::from(x).expect("finite");
    let (b1, b2) = (f(cfg.beta1), f(cfg.beta2));
    let c1 = f(1.0 - cfg.beta1.powi(t as i32));
    let c2 = f(1.0 - cfg.beta2.powi(t as i32));
    let (lr, wd, eps) = (f(lr), f(cfg.weight_decay), f(cfg.epsilon));
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (F::one() - b1) * g;
        v[i] = b2 * v[i] + (F::one() - b2) * g * g;
        let mhat = m[i] / c1;
        let vhat = v[i] / c2;
        param[i] -= lr * (mhat / (vhat.sqrt() + eps) + wd * param[i]);
    }
}

/// Applies [`adam_update`] to every tensor.
pub fn adam_step<F: NdFloat>(
    params: &mut Parameters<F>,
    grads: &Parameters<F>,
    m: &mut Parameters<F>,
    v: &mut Parameters<F>,
    t: u64,
    lr: f64,
    cfg: &OptimizerConfig,
) {
    let g = grads.tensors();
    for (((p, (_, g, _)), m), v) in params.tensors_mut().into_iter().zip(g).zip(m.tensors_mut()).zip(v.tensors_mut()) {
        adam_update(p, g, m, v, t, lr, cfg);
    }
}

/// Everything a training run needs besides weights and data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub phase: Phase,
    pub objective: Objective,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    /// Packed samples per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    /// Write a checkpoint every this many steps (0: only at the end).
    pub checkpoint_every: u64,
}

impl TrainConfig {
    pub fn steps_per_epoch(&self, samples: usize) -> u64 {
        samples.div_ceil(self.batch_size.max(1)) as u64
    }

    pub fn total_steps(&self, samples: usize) -> u64 {
        self.steps_per_epoch(samples) * self.epochs as u64
    }
}

/// One line of the loss log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

pub struct TrainOutcome {
    pub params: Parameters<f32>,
    pub optimizer: OptimizerState,
    pub log: Vec<StepLog>,
    pub checkpoints: Vec<PathBuf>,
}

/// Where and how a run persists its artifacts.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub dir: Option<PathBuf>,
    pub vocabulary: Option<serde_json::Value>,
    pub config_hash: Option<String>,
}

fn mix(seed: u64, stream: u64, index: u64) -> u64 {
    let mut x = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    x ^= x >> 31;
    x = x.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x ^ (x >> 29)
}

/// Sample order for one epoch; a pure function of seed and epoch, so a
/// resumed run sees the same batches.
fn epoch_order(samples: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..samples).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed, 1, epoch)));
    order
}

fn write_log(dir: &Path, log: &[StepLog], append: bool) -> Result<()> {
    let path = dir.join("loss.csv");
    let exists = path.exists();
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(append)
        .write(true)
        .truncate(!append)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(!(append && exists)).from_writer(file);
    for row in log {
        w.serialize(row).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Trains `params` on `data`, starting after `resume` if given. Stops early
/// after `stop_after` steps in total (the schedule still spans the full run).
pub fn train(
    mut params: Parameters<f32>,
    resume: Option<OptimizerState>,
    data: &[PackedSample],
    cfg: &TrainConfig,
    corruption: &CorruptionVocab,
    output: &RunOutput,
    stop_after: Option<u64>,
) -> Result<TrainOutcome> {
    cfg.optimizer.validate()?;
    cfg.objective.validate()?;
    if data.is_empty() || cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::Config("training needs data, a positive batch size and at least one epoch".into()));
    }
    let per_epoch = cfg.steps_per_epoch(data.len());
    let total = cfg.total_steps(data.len());
    let end = stop_after.map_or(total, |s| s.min(total));
    let mut state = resume.unwrap_or_else(|| OptimizerState {
        step: 0,
        m: params.zeros_like(),
        v: params.zeros_like(),
    });
    if let Some(dir) = &output.dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut log = Vec::new();
    let mut checkpoints = Vec::new();
    let mut order = Vec::new();
    let mut order_epoch = u64::MAX;
    let save = |params: &Parameters<f32>, state: &OptimizerState, loss: Option<f64>| -> Result<Option<PathBuf>> {
        let Some(dir) = &output.dir else { return Ok(None) };
        let path = dir.join(Checkpoint::file_name(cfg.phase, state.step));
        Checkpoint {
            params: params.clone(),
            meta: CheckpointMeta {
                phase: cfg.phase,
                step: state.step,
                total_steps: total,
                objective: Some(cfg.objective.kind),
                seed: cfg.seed,
                last_loss: loss,
                config_hash: output.config_hash.clone(),
            },
            vocabulary: output.vocabulary.clone(),
            optimizer: Some(state.clone()),
        }
        .save(&path)?;
        Ok(Some(path))
    };
    let first_step = state.step;
    while state.step < end {
        let step = state.step;
        let epoch = step / per_epoch;
        if epoch != order_epoch {
            order = epoch_order(data.len(), cfg.seed, epoch);
            order_epoch = epoch;
        }
        let within = (step % per_epoch) as usize;
        let batch = &order[within * cfg.batch_size..((within + 1) * cfg.batch_size).min(data.len())];
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 2, step));
        let seqs = batch
            .iter()
            .map(|i| prepare_sample(&data[*i], &cfg.objective, corruption, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let (loss, mut grads) = match loss_and_grad(&params, &seqs) {
            Err(Error::EmptyLossMask) => {
                log::warn!("step {step}: batch has nothing to predict, skipped");
                state.step += 1;
                continue;
            }
            other => other?,
        };
        let loss = loss as f64;
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        let grad_norm = clip_gradients(&mut grads, cfg.optimizer.clip_norm)?;
        let lr = lr_at(step, total, &cfg.optimizer)?;
        state.step += 1;
        adam_step(&mut params, &grads, &mut state.m, &mut state.v, state.step, lr, &cfg.optimizer);
        log.push(StepLog {
            step: state.step,
            lr,
            loss,
            grad_norm,
        });
        log::debug!("step {} lr {lr:.3e} loss {loss:.5} grad_norm {grad_norm:.4}", state.step);
        if cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 && state.step < end {
            checkpoints.extend(save(&params, &state, Some(loss))?);
        }
    }
    if let Some(dir) = &output.dir {
        write_log(dir, &log, first_step > 0)?;
        checkpoints.extend(save(&params, &state, log.last().map(|l| l.loss))?);
    }
    Ok(TrainOutcome {
        params,
        optimizer: state,
        log,
        checkpoints,
    })
}
