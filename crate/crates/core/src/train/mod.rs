//! Training loop: loss, optimizer, learning-rate schedule, checkpointing
//! and cross-validation orchestration.

mod adam;
mod checkpoint;
mod run;

pub use adam::{Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{Checkpoint, CheckpointMeta, TensorRecord, CHECKPOINT_VERSION};
pub use run::{
    load_samples, predict_heatmap, run_cv, train_fold, CvResult, FoldData, FoldOutcome, Sample,
};

use std::io::{BufRead, Write};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::dataio::DataError;
use crate::eval::EvalError;
use crate::tensor::{Graph, Tensor, TensorError, TensorId};
use crate::unet::{UNetConfig, UNetError};

/// Best-epoch selection never looks past this many epochs, even if a run
/// was configured to train longer.
pub const REPORT_EPOCH_LIMIT: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("fold has no {0} samples")]
    EmptySet(&'static str),
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("run record line {line}: {msg}")]
    Csv { line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Net(#[from] UNetError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Hyperparameters for one training run. `sigma` is the Gaussian width used
/// to encode target heatmaps; `match_radius` the pairing radius used when a
/// cross-validation run evaluates its folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs_max: usize,
    pub initial_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_patience: usize,
    pub min_lr: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub sigma: f64,
    pub match_radius: f64,
    pub augment: AugmentConfig,
    pub unet: UNetConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs_max: 200,
            initial_lr: 1e-3,
            lr_decay_factor: 0.1,
            lr_patience: 10,
            min_lr: 1e-6,
            batch_size: 8,
            seed: 0,
            sigma: 1.0,
            match_radius: crate::eval::DEFAULT_MATCH_RADIUS,
            augment: AugmentConfig::default(),
            unet: UNetConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs_max == 0 {
            return Err(TrainError::Config("epochs_max must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if !(self.initial_lr > 0.0) {
            return Err(TrainError::Config(format!(
                "initial_lr must be positive, got {}",
                self.initial_lr
            )));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return Err(TrainError::Config(format!(
                "lr_decay_factor must be in (0, 1), got {}",
                self.lr_decay_factor
            )));
        }
        if self.lr_patience == 0 {
            return Err(TrainError::Config("lr_patience must be at least 1".into()));
        }
        if !(self.sigma > 0.0) {
            return Err(TrainError::Config(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.match_radius > 0.0) {
            return Err(TrainError::Config(format!(
                "match_radius must be positive, got {}",
                self.match_radius
            )));
        }
        self.unet.validate()?;
        Ok(())
    }
}

pub(crate) use crate::seeds::derive_seed;

pub(crate) const SEED_MODEL: u64 = 1;
pub(crate) const SEED_SHUFFLE: u64 = 2;
pub(crate) const SEED_AUGMENT: u64 = 3;
pub(crate) const SEED_DROPOUT: u64 = 4;
pub(crate) const SEED_FOLD_SPLIT: u64 = 5;
pub(crate) const SEED_FOLD_RUN: u64 = 6;

/// Appends the training loss `mse(pred, target) − soft_dice(pred, target)`
/// to the graph. Perfect prediction approaches −1, a fully inverted one
/// approaches +1.
pub fn loss(g: &mut Graph, pred: TensorId, target: TensorId) -> Result<TensorId, TensorError> {
    let m = g.mse(pred, target)?;
    let d = g.soft_dice(pred, target)?;
    g.sub(m, d)
}

/// The same loss as a plain number, for validation passes that do not need
/// gradients.
pub fn loss_value(pred: &Tensor, target: &Tensor) -> Result<f64, TensorError> {
    let mut g = Graph::new();
    let p = g.leaf(pred.clone());
    let t = g.leaf(target.clone());
    let l = loss(&mut g, p, t)?;
    Ok(g.value(l).item())
}

/// Reduce-on-plateau learning-rate schedule: when the validation loss has
/// not improved for `patience` consecutive epochs, the rate is multiplied
/// by `factor` (floored at `min_lr`) and the counter restarts.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauSchedule {
    lr: f64,
    factor: f64,
    patience: usize,
    min_lr: f64,
    best: Option<f64>,
    since_best: usize,
}

impl PlateauSchedule {
    pub fn new(initial_lr: f64, factor: f64, patience: usize, min_lr: f64) -> Self {
        PlateauSchedule {
            lr: initial_lr,
            factor,
            patience,
            min_lr,
            best: None,
            since_best: 0,
        }
    }

    pub fn from_config(config: &TrainConfig) -> Self {
        Self::new(
            config.initial_lr,
            config.lr_decay_factor,
            config.lr_patience,
            config.min_lr,
        )
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Feed one epoch's validation loss; returns the rate for the next
    /// epoch. Only strict improvement resets the plateau counter.
    pub fn observe(&mut self, val_loss: f64) -> f64 {
        let improved = match self.best {
            None => true,
            Some(b) => val_loss < b,
        };
        if improved {
            self.best = Some(val_loss);
            self.since_best = 0;
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                self.lr = (self.lr * self.factor).max(self.min_lr);
                self.since_best = 0;
            }
        }
        self.lr
    }
}

/// One epoch of a run: losses and the learning rate in effect.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

/// Full per-epoch history of one fold's training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub fold_id: usize,
    pub rows: Vec<EpochRow>,
    pub best_epoch: usize,
}

impl RunRecord {
    /// Index of the lowest validation loss among the first
    /// [`REPORT_EPOCH_LIMIT`] epochs; ties go to the earlier epoch.
    pub fn compute_best_epoch(rows: &[EpochRow]) -> usize {
        let limit = rows.len().min(REPORT_EPOCH_LIMIT);
        let mut best = 0;
        for (i, row) in rows.iter().enumerate().take(limit) {
            if row.val_loss < rows[best].val_loss {
                best = i;
            }
        }
        best
    }

    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "epoch,train_loss,val_loss,lr")?;
        for row in &self.rows {
            // Default float formatting is shortest-round-trip, so reading
            // the file back recovers the exact bits.
            writeln!(w, "{},{},{},{}", row.epoch, row.train_loss, row.val_loss, row.lr)?;
        }
        Ok(())
    }

    pub fn read_csv(fold_id: usize, r: impl BufRead) -> Result<RunRecord, TrainError> {
        let mut lines = r.lines().enumerate();
        let (_, header) = lines.next().ok_or(TrainError::Csv {
            line: 1,
            msg: "empty file".into(),
        })?;
        let header = header.map_err(|e| TrainError::Csv {
            line: 1,
            msg: e.to_string(),
        })?;
        if header.trim() != "epoch,train_loss,val_loss,lr" {
            return Err(TrainError::Csv {
                line: 1,
                msg: format!("unexpected header {header:?}"),
            });
        }
        let mut rows = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line.map_err(|e| TrainError::Csv {
                line: line_no,
                msg: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(TrainError::Csv {
                    line: line_no,
                    msg: format!("expected 4 fields, got {}", fields.len()),
                });
            }
            let parse = |s: &str, what: &str| -> Result<f64, TrainError> {
                s.trim().parse().map_err(|_| TrainError::Csv {
                    line: line_no,
                    msg: format!("bad {what} value {s:?}"),
                })
            };
            rows.push(EpochRow {
                epoch: fields[0].trim().parse().map_err(|_| TrainError::Csv {
                    line: line_no,
                    msg: format!("bad epoch value {:?}", fields[0]),
                })?,
                train_loss: parse(fields[1], "train_loss")?,
                val_loss: parse(fields[2], "val_loss")?,
                lr: parse(fields[3], "lr")?,
            });
        }
        if rows.is_empty() {
            return Err(TrainError::Csv {
                line: 2,
                msg: "no epoch rows".into(),
            });
        }
        let best_epoch = Self::compute_best_epoch(&rows);
        Ok(RunRecord {
            fold_id,
            rows,
            best_epoch,
        })
    }
}
