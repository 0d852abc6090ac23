use std::collections::BTreeSet;
use std::fmt;

use chrono::NaiveDateTime;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::StrategyId;
use crate::data::{Role, Windows};
use crate::error::{Error, Result};
use crate::evaluation::MetricSet;
use crate::models::Forecaster;
use crate::tensor::{Adam, AdamConfig, RngStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub pretrain_lr: f64,
    pub finetune_lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Defaults to `max_epochs`.
    pub finetune_max_epochs: Option<usize>,
    /// Validation evaluations without improvement before stopping.
    pub early_stop_patience: usize,
    /// Per-epoch multiplicative learning-rate decay.
    pub lr_decay: f64,
    pub max_steps_per_epoch: Option<usize>,
    /// Spacing between consecutive training windows.
    pub window_stride: usize,
    /// Spacing between consecutive validation windows.
    pub eval_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pretrain_lr: 1e-4,
            finetune_lr: 1e-5,
            batch_size: 32,
            max_epochs: 100,
            finetune_max_epochs: None,
            early_stop_patience: 10,
            lr_decay: 0.8,
            max_steps_per_epoch: None,
            window_stride: 1,
            eval_stride: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, strategy: StrategyId) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        for lr in [self.pretrain_lr, self.finetune_lr] {
            if !(lr > 0.0 && lr.is_finite()) {
                return fail("learning rates must be positive");
            }
        }
        if strategy.fine_tunes() && self.finetune_lr >= self.pretrain_lr {
            return fail("finetune_lr must be below pretrain_lr");
        }
        if self.batch_size == 0 || self.window_stride == 0 || self.eval_stride == 0 {
            return fail("batch_size, window_stride and eval_stride must be positive");
        }
        if self.early_stop_patience == 0 {
            return fail("early_stop_patience must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail("lr_decay must lie in (0, 1]");
        }
        if self.max_steps_per_epoch == Some(0) {
            return fail("max_steps_per_epoch must be positive");
        }
        Ok(())
    }

    fn finetune_epochs(&self) -> usize {
        self.finetune_max_epochs.unwrap_or(self.max_epochs)
    }
}

/// Training and validation windows of one corpus.
#[derive(Clone, Debug)]
pub struct Corpus<'a> {
    pub train: Windows<'a>,
    pub val: Windows<'a>,
    /// Registry dataset behind each block, used for provenance tracing.
    pub bases: Vec<String>,
}

impl<'a> Corpus<'a> {
    pub fn new(train: Windows<'a>, val: Windows<'a>, bases: Vec<String>) -> Result<Self> {
        if bases.len() != train.dataset.blocks.len() || !std::ptr::eq(train.dataset, val.dataset) {
            return Err(Error::Contract("corpus windows and provenance disagree".into()));
        }
        Ok(Self { train, val, bases })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Pretrain,
    FineTune,
}

impl Phase {
    fn stream(self) -> u64 {
        match self {
            Phase::Pretrain => 0,
            Phase::FineTune => 1,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Pretrain => "pretrain",
            Phase::FineTune => "finetune",
        })
    }
}

/// One timestamp of one dataset consumed during training.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TraceRow {
    pub dataset: String,
    pub role: Role,
    pub timestamp: NaiveDateTime,
    pub phase: Phase,
}

/// Every row read by the training loop, inputs and targets alike.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trace {
    rows: BTreeSet<TraceRow>,
}

impl Trace {
    pub fn insert(&mut self, row: TraceRow) {
        self.rows.insert(row);
    }

    pub fn rows(&self) -> impl Iterator<Item = &TraceRow> {
        self.rows.iter()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn extend(&mut self, other: Trace) {
        self.rows.extend(other.rows);
    }
}

/// Row bitmap per block, flushed into a [`Trace`] at the end of a phase.
struct Touched(Vec<Vec<bool>>);

impl Touched {
    fn new(w: &Windows) -> Self {
        Self(vec![vec![false; w.dataset.len()]; w.dataset.blocks.len()])
    }

    fn mark(&mut self, w: &Windows, idx: impl IntoIterator<Item = usize>) {
        let span = w.lookback + w.horizon;
        for i in idx {
            let r = &w.refs[i];
            self.0[r.block][r.start..r.start + span].fill(true);
        }
    }

    fn flush(self, corpus: &Corpus, phase: Phase, trace: &mut Trace) {
        let ds = corpus.train.dataset;
        for (b, rows) in self.0.into_iter().enumerate() {
            let block = &ds.blocks[b];
            for t in (0..rows.len()).filter(|&t| rows[t]) {
                let role = block
                    .segments
                    .iter()
                    .find(|s| s.start <= t && t < s.end)
                    .map_or(Role::ZeroPad, |s| s.role);
                trace.insert(TraceRow {
                    dataset: corpus.bases[b].clone(),
                    role,
                    timestamp: ds.timestamps[t],
                    phase,
                });
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub phase: Phase,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub best_val_loss: f64,
    pub lr: f64,
    pub steps: usize,
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub model: Forecaster,
    /// False when no optimisation step was taken.
    pub trained: bool,
    /// Validation loss of the returned parameters.
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub log: Vec<LogRow>,
}

/// MAE and MSE of eval-mode forecasts over every window, in standardized units.
pub fn evaluate(model: &Forecaster, windows: &Windows, batch_size: usize) -> Result<MetricSet> {
    if windows.is_empty() {
        return Err(Error::Contract("no windows to evaluate".into()));
    }
    let idx: Vec<usize> = (0..windows.len()).collect();
    let parts = idx
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let b = windows.batch(chunk)?;
            let pred = model.predict(&b.x_past)?;
            Ok((pred.into_data(), b.y_future.into_data()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (mut pred, mut actual) = (Vec::new(), Vec::new());
    for (p, a) in parts {
        pred.extend(p);
        actual.extend(a);
    }
    MetricSet::from_predictions(&pred, &actual, windows.horizon)
}

/// Trains a fresh or given model on `corpus` at the pretraining learning rate.
pub fn pretrain(model: Forecaster, corpus: &Corpus, cfg: &TrainConfig, seed: u64, trace: &mut Trace) -> Result<TrainedModel> {
    train_phase(model, corpus, cfg, Phase::Pretrain, seed, trace)
}

/// Continues training every parameter on the target corpus at the fine-tuning rate.
pub fn fine_tune(
    model: TrainedModel,
    corpus: &Corpus,
    cfg: &TrainConfig,
    seed: u64,
    trace: &mut Trace,
) -> Result<TrainedModel> {
    if model.model.input_width() != corpus.train.layout.width() {
        return Err(Error::Config(format!(
            "model expects {} input channels, target corpus provides {}",
            model.model.input_width(),
            corpus.train.layout.width()
        )));
    }
    let mut log = model.log;
    let mut out = train_phase(model.model, corpus, cfg, Phase::FineTune, seed, trace)?;
    log.append(&mut out.log);
    out.log = log;
    out.trained |= model.trained;
    Ok(out)
}

fn train_phase(
    model: Forecaster,
    corpus: &Corpus,
    cfg: &TrainConfig,
    phase: Phase,
    seed: u64,
    trace: &mut Trace,
) -> Result<TrainedModel> {
    let (lr, max_epochs) = match phase {
        Phase::Pretrain => (cfg.pretrain_lr, cfg.max_epochs),
        Phase::FineTune => (cfg.finetune_lr, cfg.finetune_epochs()),
    };
    let (train, val) = (&corpus.train, &corpus.val);
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config(format!(
            "corpus '{}' has {} training and {} validation windows",
            train.dataset.id,
            train.len(),
            val.len()
        )));
    }
    if model.input_width() != train.layout.width() {
        return Err(Error::Config("model input width does not match the corpus layout".into()));
    }
    if max_epochs == 0 {
        let best_val_loss = evaluate(&model, val, cfg.batch_size)?.mse;
        return Ok(TrainedModel {
            model,
            trained: false,
            best_val_loss,
            epochs_run: 0,
            log: Vec::new(),
        });
    }

    let mut train_seen = Touched::new(train);
    let mut val_seen = Touched::new(val);
    val_seen.mark(val, 0..val.len());

    let mut shuffle = RngStream::Shuffle.rng(seed, phase.stream());
    let mut ctx = model.train_ctx(seed, phase.stream());
    let mut opt = Adam::new(AdamConfig::with_lr(lr))?;
    let mut model = model;
    let mut best_val_loss = evaluate(&model, val, cfg.batch_size)?.mse;
    let mut best = model.clone();
    let mut since_best = 0;
    let mut log = Vec::new();
    let mut epochs_run = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=max_epochs {
        let epoch_lr = lr * cfg.lr_decay.powi(epoch as i32 - 1);
        opt.set_lr(epoch_lr)?;
        order.shuffle(&mut shuffle);
        let steps = cfg.max_steps_per_epoch.map_or(usize::MAX, |m| m);
        let (mut loss_sum, mut n_steps) = (0.0, 0);
        for (step, chunk) in order.chunks(cfg.batch_size).take(steps).enumerate() {
            let batch = train.batch(chunk)?;
            train_seen.mark(train, chunk.iter().copied());
            let (loss, grads) = model.loss_and_grads(&batch, &mut ctx).map_err(|e| match e {
                Error::Numeric(m) => Error::Training(format!("{phase} diverged at epoch {epoch}, step {step}: {m}")),
                e => e,
            })?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::Training(format!(
                    "{phase} diverged at epoch {epoch}, step {step}: loss {loss}, lr {epoch_lr:e}, \
                     last logged val loss {best_val_loss}"
                )));
            }
            let grads: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            let mut params: Vec<&mut [f64]> = model
                .params_mut()
                .tensors_mut()
                .iter_mut()
                .map(|t| t.data_mut())
                .collect();
            opt.step(&mut params, &grads)?;
            loss_sum += loss;
            n_steps += 1;
        }
        let val_loss = evaluate(&model, val, cfg.batch_size)?.mse;
        if !val_loss.is_finite() {
            return Err(Error::Training(format!("{phase} validation loss is {val_loss} after epoch {epoch}")));
        }
        epochs_run = epoch;
        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
        }
        log.push(LogRow {
            phase,
            epoch,
            train_loss: loss_sum / n_steps as f64,
            val_loss,
            best_val_loss,
            lr: epoch_lr,
            steps: n_steps,
        });
        if since_best >= cfg.early_stop_patience {
            break;
        }
    }
    train_seen.flush(corpus, phase, trace);
    val_seen.flush(corpus, phase, trace);
    Ok(TrainedModel {
        model: best,
        trained: true,
        best_val_loss,
        epochs_run,
        log,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub row: TraceRow,
    pub reason: &'static str,
}

/// Rows of `trace` that the strategy must never have consumed.
pub fn verify_isolation(strategy: StrategyId, target_base: &str, baseline: bool, trace: &Trace) -> Vec<Violation> {
    trace
        .rows()
        .filter_map(|row| {
            let reason = if row.role == Role::Test {
                "test-split row consumed during training"
            } else if row.dataset == target_base
                && !baseline
                && !strategy.target_in_pretraining()
                && row.phase == Phase::Pretrain
            {
                "target data consumed before fine-tuning"
            } else if row.dataset == target_base && !baseline && strategy.is_zero_shot() {
                "zero-shot strategy consumed target data"
            } else {
                return None;
            };
            Some(Violation {
                row: row.clone(),
                reason,
            })
        })
        .collect()
}
