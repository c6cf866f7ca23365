//! Fixed-budget training with Adam or SAM, plus scoring helpers.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::harness::config::{ExperimentConfig, OptimizerChoice};
use crate::metrics::{compute_eer, EerResult, ScoreSet};
use crate::model::{BatchObjective, MlpModel};
use crate::optim::{descent_step, sam_step, Adam, AdamConfig, StepReport};
use crate::rng::derive_seed;

/// Scores are computed this many rows at a time.
const SCORE_CHUNK: usize = 1024;

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub log: Vec<StepReport>,
}

impl TrainOutcome {
    pub fn log_csv(&self) -> String {
        let mut out = String::from(StepReport::CSV_HEADER);
        out.push('\n');
        for r in &self.log {
            out.push_str(&r.csv_row());
            out.push('\n');
        }
        out
    }
}

pub fn batches_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

/// Adam settings with the schedule stretched over the whole run.
pub fn scheduled_adam(cfg: &ExperimentConfig, n_train: usize) -> AdamConfig {
    let mut adam = cfg.optimizer.adam().clone();
    adam.total_steps = (cfg.epochs * batches_per_epoch(n_train, cfg.batch_size)).max(1);
    adam
}

/// Trains a freshly initialized model on `train`. Deterministic per
/// `(cfg, seed)`: initialization and each epoch's shuffle draw from seeds
/// derived from `seed`.
pub fn train_model(cfg: &ExperimentConfig, train: &Dataset, seed: u64) -> Result<TrainOutcome> {
    cfg.validate()?;
    let spec = cfg.spec()?;
    if train.dim() != spec.layer_dims[0] {
        return Err(Error::Shape(format!(
            "training data has dim {}, model expects {}",
            train.dim(),
            spec.layer_dims[0]
        )));
    }
    let mut model = MlpModel::init(spec, derive_seed(seed, "init", 0))?;
    let mut adam = Adam::new(scheduled_adam(cfg, train.len()), model.params())?;
    let mut log = Vec::with_capacity(cfg.epochs * batches_per_epoch(train.len(), cfg.batch_size));
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let batches = train.batches(cfg.batch_size, Some(derive_seed(seed, "shuffle", epoch as u64)))?;
        for (batch_id, batch) in batches.iter().enumerate() {
            let objective = BatchObjective::new(&model, batch, cfg.class_weights);
            let w = model.params();
            let outcome = match &cfg.optimizer {
                OptimizerChoice::Adam { .. } => descent_step(&objective, w, &mut adam, step),
                OptimizerChoice::Sam {
                    rho,
                    force_zero_perturbation,
                    ..
                } => sam_step(&objective, w, &mut adam, *rho, *force_zero_perturbation, step),
            };
            let diverged = |reason: String| Error::Diverged {
                step,
                lr: crate::optim::cosine_lr(&adam.cfg, step).unwrap_or(f64::NAN),
                batch: batch_id,
                reason,
            };
            let (next, report) = match outcome {
                Ok(v) => v,
                Err(e) if e.is_numerical() => return Err(diverged(e.to_string())),
                Err(e) => return Err(e),
            };
            if !report.loss_w.is_finite() {
                return Err(diverged(format!("loss is {}", report.loss_w)));
            }
            if let Some(i) = next.first_non_finite() {
                return Err(diverged(format!("parameter {i} became {}", next.values()[i])));
            }
            model.set_params(next)?;
            log.push(report);
            step += 1;
        }
    }
    Ok(TrainOutcome { model, log })
}

/// Bona-fide logit minus spoof logit for every sample, in dataset order.
pub fn score_dataset(model: &MlpModel, dataset: &Dataset) -> Result<Vec<f64>> {
    let mut scores = Vec::with_capacity(dataset.len());
    for batch in dataset.batches(SCORE_CHUNK, None)? {
        scores.extend(model.scores(&batch)?);
    }
    Ok(scores)
}

pub fn dataset_eer(model: &MlpModel, dataset: &Dataset) -> Result<EerResult> {
    let scores = score_dataset(model, dataset)?;
    compute_eer(&ScoreSet::from_labeled(&scores, dataset.labels())?)
}
