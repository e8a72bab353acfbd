//! Objective, optimiser and the two-phase training loop.
//!
//! Phase 1 trains the restoration net on `|P(x) - y_l|` and the colorization
//! net on `|S(y_l, z) - y_ab|` side by side (the clean luminance stands in
//! for the untrained restoration output). Phase 2 trains both end to end on
//! `|P(x) - y_l| + beta * |S(P(x), z) - y_ab|`. Every term is a mean L1.

pub mod adadelta;
pub mod checkpoint;

use std::io::Write;
use std::path::Path;
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::degrade::TrainingSample;
use crate::error::{Error, Result};
use crate::networks::{ModelConfig, RemasterModel};
use crate::tensor::{Graph, Mode, ParamStore, Var};
pub use adadelta::{Adadelta, AdadeltaConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Weight of the chrominance term.
    pub beta: f32,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { beta: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidInput {
                op: "loss config",
                reason: format!("beta must be finite and non-negative, got {}", self.beta),
            });
        }
        Ok(())
    }
}

/// `mean|pred_l - y_l| + beta * mean|pred_ab - y_ab|`.
pub fn joint_loss(g: &mut Graph<'_>, pred_l: Var, pred_ab: Var, y_l: Var, y_ab: Var, cfg: LossConfig) -> Result<Var> {
    cfg.validate()?;
    let l = g.l1_mean(pred_l, y_l)?;
    let ab = g.l1_mean(pred_ab, y_ab)?;
    let ab = g.scale_const(ab, cfg.beta);
    g.add(l, ab)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    /// Both nets on their own terms.
    Separate,
    /// End to end on the joint loss.
    Joint,
}

impl Phase {
    pub fn number(self) -> u8 {
        match self {
            Phase::Separate => 1,
            Phase::Joint => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub phase1_iters: usize,
    pub phase2_iters: usize,
    /// Samples per optimiser step; gradients are averaged over them.
    pub batch: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub schedule: Schedule,
    pub loss: LossConfig,
    pub optimizer: AdadeltaConfig,
    /// Validation interval; `None` means `max(1, phase_iters / 20)`.
    pub val_every: Option<usize>,
    /// Capacity of the sample prefetch queue, 0 for none.
    pub prefetch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule {
                phase1_iters: 0,
                phase2_iters: 0,
                batch: 1,
            },
            loss: LossConfig::default(),
            optimizer: AdadeltaConfig::default(),
            val_every: None,
            prefetch: 4,
        }
    }
}

/// One line of the loss log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    /// Global optimiser step, 0 before training.
    pub iter: usize,
    pub phase: u8,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub log: Vec<LogRow>,
    /// Step whose parameters were kept (0 = initialisation).
    pub best_iter: usize,
    pub best_val: Option<f64>,
}

/// Training samples addressed by their position in the stream.
pub trait SampleSource: Sync {
    fn sample(&self, index: u64) -> Result<TrainingSample>;
}

impl<F> SampleSource for F
where
    F: Fn(u64) -> Result<TrainingSample> + Sync,
{
    fn sample(&self, index: u64) -> Result<TrainingSample> {
        self(index)
    }
}

fn constant(g: &mut Graph<'_>, t: &crate::tensor::Tensor5) -> Var {
    g.constant(t.clone().with_requires_grad(false))
}

fn references(g: &mut Graph<'_>, s: &TrainingSample) -> Option<Var> {
    (s.z.dims().t > 0).then(|| constant(g, &s.z))
}

/// Loss of one sample under `phase`.
pub fn sample_loss(model: &RemasterModel, g: &mut Graph<'_>, s: &TrainingSample, phase: Phase, cfg: LossConfig) -> Result<Var> {
    let x = constant(g, &s.x);
    let y_l = constant(g, &s.y_l);
    let y_ab = constant(g, &s.y_ab);
    let z = references(g, s);
    let pred_l = model.preprocess(g, x)?;
    match phase {
        Phase::Separate => {
            let l = g.l1_mean(pred_l, y_l)?;
            let pred_ab = model.colorize(g, y_l, z)?;
            let ab = g.l1_mean(pred_ab, y_ab)?;
            g.add(l, ab)
        }
        Phase::Joint => {
            let pred_ab = model.colorize(g, pred_l, z)?;
            joint_loss(g, pred_l, pred_ab, y_l, y_ab, cfg)
        }
    }
}

/// Mean joint loss in evaluation mode.
pub fn validation_loss(model: &RemasterModel, samples: &[TrainingSample], cfg: LossConfig) -> Result<f64> {
    let mut total = 0.0;
    for s in samples {
        let mut g = model.graph(Mode::Eval);
        let loss = sample_loss(model, &mut g, s, Phase::Joint, cfg)?;
        total += g.value(loss).item() as f64;
    }
    Ok(total / samples.len().max(1) as f64)
}

/// Forward, backward and one optimiser update over `batch`. Returns the mean
/// training loss.
pub fn train_step(
    model: &mut RemasterModel,
    opt: &mut Adadelta,
    batch: &[TrainingSample],
    phase: Phase,
    cfg: LossConfig,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    model.params.zero_grads();
    let scale = 1.0 / batch.len() as f32;
    let mut total = 0.0;
    for s in batch {
        let (value, grads, stats) = {
            let mut g = model.graph(Mode::Train);
            let loss = sample_loss(model, &mut g, s, phase, cfg)?;
            let value = g.value(loss).item() as f64;
            let stats = g.take_stat_updates();
            (value, g.backward(loss)?, stats)
        };
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "training loss", index: 0 });
        }
        model.params.accumulate(&grads, scale);
        model.params.apply_stat_updates(&stats);
        total += value;
    }
    // Parameters outside this batch's graphs (attention without references)
    // get a zero gradient.
    let ids = model.params.trainable_ids();
    for &id in &ids {
        let t = model.params.tensor_mut(id);
        if t.grad.is_none() {
            t.grad = Some(vec![0.0; t.numel()]);
        }
    }
    opt.step(&mut model.params, &ids)?;
    Ok(total / batch.len() as f64)
}

/// Runs both phases, validating periodically and leaving the parameters
/// with the lowest validation loss in `model` (the initialisation counts).
pub fn train(
    model: &mut RemasterModel,
    cfg: &TrainConfig,
    source: &dyn SampleSource,
    val: &[TrainingSample],
    mut on_row: impl FnMut(&LogRow),
) -> Result<TrainReport> {
    cfg.loss.validate()?;
    let Schedule {
        phase1_iters,
        phase2_iters,
        batch,
    } = cfg.schedule;
    let batch = batch.max(1);
    let total = (phase1_iters + phase2_iters) * batch;

    let mut opt = Adadelta::new(cfg.optimizer);
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut record = |row: LogRow, log: &mut Vec<LogRow>| {
        on_row(&row);
        log.push(row);
    };

    if !val.is_empty() {
        let v = validation_loss(model, val, cfg.loss)?;
        best = Some((v, 0, model.params.clone()));
        record(
            LogRow {
                iter: 0,
                phase: 0,
                train_loss: None,
                val_loss: Some(v),
            },
            &mut log,
        );
    }

    std::thread::scope(|scope| -> Result<()> {
        let (tx, rx) = mpsc::sync_channel::<Result<TrainingSample>>(cfg.prefetch.max(1));
        let produce = cfg.prefetch > 0 && total > 0;
        if produce {
            scope.spawn(move || {
                for i in 0..total as u64 {
                    if tx.send(source.sample(i)).is_err() {
                        break;
                    }
                }
            });
        } else {
            drop(tx);
        }
        let mut next = 0u64;
        let mut fetch = || -> Result<TrainingSample> {
            let s = if produce {
                rx.recv().map_err(|_| Error::EmptyDataset)?
            } else {
                source.sample(next)
            };
            next += 1;
            s
        };

        let mut iter = 0;
        for (phase, iters) in [(Phase::Separate, phase1_iters), (Phase::Joint, phase2_iters)] {
            let every = cfg.val_every.unwrap_or((iters / 20).max(1)).max(1);
            for k in 1..=iters {
                let samples = (0..batch).map(|_| fetch()).collect::<Result<Vec<_>>>()?;
                let loss = train_step(model, &mut opt, &samples, phase, cfg.loss)?;
                iter += 1;
                let val_loss = if !val.is_empty() && (k % every == 0 || k == iters) {
                    let v = validation_loss(model, val, cfg.loss)?;
                    if best.as_ref().is_none_or(|b| v < b.0) {
                        best = Some((v, iter, model.params.clone()));
                    }
                    Some(v)
                } else {
                    None
                };
                record(
                    LogRow {
                        iter,
                        phase: phase.number(),
                        train_loss: Some(loss),
                        val_loss,
                    },
                    &mut log,
                );
            }
        }
        Ok(())
    })?;

    let (best_val, best_iter) = match best {
        Some((v, it, params)) => {
            model.params = params;
            (Some(v), it)
        }
        None => (None, phase1_iters + phase2_iters),
    };
    model.params.zero_grads();
    Ok(TrainReport {
        log,
        best_iter,
        best_val,
    })
}

pub const CSV_HEADER: &str = "iter,phase,train_loss,val_loss";

fn opt_field(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.9}")).unwrap_or_default()
}

pub fn csv_line(row: &LogRow) -> String {
    format!(
        "{},{},{},{}",
        row.iter,
        row.phase,
        opt_field(row.train_loss),
        opt_field(row.val_loss)
    )
}

pub fn write_csv(path: &Path, rows: &[LogRow]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(f, "{}", csv_line(r))?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<LogRow>> {
    let text = std::fs::read_to_string(path)?;
    let bad = |line: &str| Error::InvalidInput {
        op: "loss log",
        reason: format!("malformed line `{line}`"),
    };
    let field = |s: &str, line: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| bad(line))
        }
    };
    let mut rows = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(bad(line));
        }
        rows.push(LogRow {
            iter: parts[0].parse().map_err(|_| bad(line))?,
            phase: parts[1].parse().map_err(|_| bad(line))?,
            train_loss: field(parts[2], line)?,
            val_loss: field(parts[3], line)?,
        });
    }
    Ok(rows)
}

/// Everything needed to reproduce a training run, written next to the
/// checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub seed: u64,
    pub crop_size: u32,
    pub train_videos: usize,
    pub val_videos: usize,
    pub val_samples: usize,
    pub best_iter: usize,
    pub best_val_loss: Option<f64>,
    pub trainable_parameters: usize,
}
