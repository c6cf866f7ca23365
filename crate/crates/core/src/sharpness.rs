//! m-sharpness: the largest increase of the batch loss under a weight
//! perturbation of L2 norm at most ρ, computed per batch and averaged over
//! a dataset.
//!
//! The inner maximization has no closed form, so each batch takes the best
//! of several candidates:
//!
//! * `eps = 0`, which makes every value non-negative;
//! * the one-step point `rho * g / ‖g‖` (exact for linear losses);
//! * `restarts` runs of normalized projected gradient ascent from random
//!   starts inside the ball, keeping the best iterate of each run.
//!
//! The ball is a single global L2 ball over all parameters.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::model::{BatchObjective, ClassWeights, MlpModel};
use crate::objective::Objective;
use crate::rng::{derive_seed, stream};
use crate::tensor::ParamVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SharpnessConfig {
    pub rho: f64,
    pub batch_size: usize,
    pub ascent_steps: usize,
    /// Step length of each ascent step; `rho / 10` when unset.
    pub ascent_lr: Option<f64>,
    pub restarts: usize,
    pub seed: u64,
    pub class_weights: ClassWeights,
}

impl Default for SharpnessConfig {
    fn default() -> Self {
        Self {
            rho: 0.05,
            batch_size: 32,
            ascent_steps: 20,
            ascent_lr: None,
            restarts: 3,
            seed: 0,
            class_weights: ClassWeights::default(),
        }
    }
}

impl SharpnessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(Error::Config(format!("rho must be positive, got {}", self.rho)));
        }
        if self.ascent_steps == 0 || self.restarts == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "ascent_steps, restarts and batch_size must all be at least 1".into(),
            ));
        }
        if let Some(lr) = self.ascent_lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("ascent_lr must be positive, got {lr}")));
            }
        }
        self.class_weights.validate()
    }

    pub fn step_len(&self) -> f64 {
        self.ascent_lr.unwrap_or(self.rho / 10.0)
    }

    pub fn with_rho(&self, rho: f64) -> Self {
        Self { rho, ..self.clone() }
    }
}

/// Result of the inner maximization on one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSharpness {
    pub value: f64,
    pub base_loss: f64,
    /// Norm of the perturbation achieving `value`.
    pub argmax_norm: f64,
    /// Ascent runs abandoned because the loss became non-finite.
    pub discarded: usize,
}

fn project(eps: &mut [f64], rho: f64) {
    let n = eps.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > rho {
        let s = rho / n;
        eps.iter_mut().for_each(|v| *v *= s);
    }
}

fn uniform_in_ball<R: Rng>(rng: &mut R, dim: usize, rho: f64) -> Vec<f64> {
    let mut d: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
    let u: f64 = rng.random();
    let r = rho * u.powf(1.0 / dim as f64);
    if n > 0.0 {
        d.iter_mut().for_each(|v| *v *= r / n);
    }
    d
}

fn add(w: &ParamVector, eps: &[f64]) -> Result<ParamVector> {
    w.with_values(w.values().iter().zip(eps).map(|(a, b)| a + b).collect())
}

/// Sharpness of an arbitrary objective around `w`. `seed` drives the random
/// restarts.
pub fn sharpness_of<O: Objective + ?Sized>(
    objective: &O,
    w: &ParamVector,
    cfg: &SharpnessConfig,
    seed: u64,
) -> Result<BatchSharpness> {
    cfg.validate()?;
    if let Some(i) = w.first_non_finite() {
        return Err(Error::NonFinite(format!("parameter {i} is {}", w.values()[i])));
    }
    let (base, g) = objective.loss_and_grad(w)?;
    if !base.is_finite() {
        return Err(Error::NonFinite(format!("unperturbed loss is {base}")));
    }
    let rho = cfg.rho;
    let mut best = base;
    let mut best_norm = 0.0;
    let mut discarded = 0;

    let gn = g.norm2();
    if gn > crate::optim::DEGENERATE_GRAD_NORM {
        let eps: Vec<f64> = g.values().iter().map(|v| rho * v / gn).collect();
        let l = objective.loss(&add(w, &eps)?)?;
        if l.is_finite() {
            if l > best {
                best = l;
                best_norm = rho;
            }
        } else {
            discarded += 1;
        }
    }

    let mut rng = stream(seed, "sharpness-restart", 0);
    let step = cfg.step_len();
    for _ in 0..cfg.restarts {
        let mut eps = uniform_in_ball(&mut rng, w.len(), rho);
        for t in 0..=cfg.ascent_steps {
            let (l, g) = objective.loss_and_grad(&add(w, &eps)?)?;
            if !l.is_finite() || g.first_non_finite().is_some() {
                discarded += 1;
                break;
            }
            if l > best {
                best = l;
                best_norm = eps.iter().map(|v| v * v).sum::<f64>().sqrt();
            }
            if t == cfg.ascent_steps {
                break;
            }
            let gn = g.norm2();
            if gn.is_nan() || gn <= crate::optim::DEGENERATE_GRAD_NORM {
                break;
            }
            for (e, gi) in eps.iter_mut().zip(g.values()) {
                *e += step * gi / gn;
            }
            project(&mut eps, rho);
        }
    }
    Ok(BatchSharpness {
        value: (best - base).max(0.0),
        base_loss: base,
        argmax_norm: best_norm,
        discarded,
    })
}

/// Sharpness of the model's weighted cross-entropy on one batch.
pub fn batch_sharpness(model: &MlpModel, batch: &Batch, cfg: &SharpnessConfig) -> Result<f64> {
    batch_sharpness_detail(model, batch, cfg).map(|b| b.value)
}

/// Restart seed of a batch: a function of the configured seed and the batch
/// contents, so equal batches always get equal estimates.
fn batch_seed(cfg_seed: u64, batch: &Batch) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for v in batch.features().data() {
        h.update(v.to_bits().to_le_bytes());
    }
    for &y in batch.labels() {
        h.update((y as u64).to_le_bytes());
    }
    let d = h.finalize();
    derive_seed(
        cfg_seed,
        "sharpness-batch",
        u64::from_le_bytes(d[..8].try_into().unwrap()),
    )
}

pub fn batch_sharpness_detail(model: &MlpModel, batch: &Batch, cfg: &SharpnessConfig) -> Result<BatchSharpness> {
    if batch.is_empty() {
        return Err(Error::Empty("sharpness of an empty batch".into()));
    }
    let obj = BatchObjective::new(model, batch, cfg.class_weights);
    sharpness_of(&obj, model.params(), cfg, batch_seed(cfg.seed, batch))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharpnessReport {
    pub model_id: String,
    pub dataset: String,
    pub config: SharpnessConfig,
    pub per_batch: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Whether the last batch is shorter than `batch_size`.
    pub partial_last_batch: bool,
    pub discarded_candidates: usize,
}

impl SharpnessReport {
    pub const CSV_HEADER: &'static str = "model,dataset,rho,batch_size,n_batches,mean,std";

    pub fn csv_summary(&self) -> String {
        format!(
            "{}\n{},{},{:?},{},{},{:?},{:?}\n",
            Self::CSV_HEADER,
            self.model_id,
            self.dataset,
            self.config.rho,
            self.config.batch_size,
            self.per_batch.len(),
            self.mean,
            self.std
        )
    }
}

/// Arithmetic mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// m-sharpness over a dataset. Batches are taken in dataset order and
/// processed in parallel; results are reduced in batch order.
pub fn dataset_sharpness(model: &MlpModel, dataset: &Dataset, cfg: &SharpnessConfig) -> Result<SharpnessReport> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty(format!("dataset {} has no samples", dataset.name)));
    }
    let batches = dataset.batches(cfg.batch_size, None)?;
    let results: Vec<BatchSharpness> = batches
        .par_iter()
        .map(|b| batch_sharpness_detail(model, b, cfg))
        .collect::<Result<_>>()?;
    let per_batch: Vec<f64> = results.iter().map(|r| r.value).collect();
    let (mean, std) = mean_std(&per_batch);
    Ok(SharpnessReport {
        model_id: model.fingerprint(),
        dataset: dataset.name.clone(),
        config: cfg.clone(),
        per_batch,
        mean,
        std,
        partial_last_batch: !dataset.len().is_multiple_of(cfg.batch_size),
        discarded_candidates: results.iter().map(|r| r.discarded).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, MlpSpec};
    use crate::objective::FnObjective;
    use crate::tensor::Tensor;

    fn cfg(rho: f64) -> SharpnessConfig {
        SharpnessConfig {
            rho,
            ..SharpnessConfig::default()
        }
    }

    #[test]
    fn quadratic_at_minimum() {
        let obj = FnObjective::new(|w: &[f64]| 0.5 * w[0] * w[0], |w: &[f64]| vec![w[0]]);
        let s = sharpness_of(&obj, &ParamVector::from_slice(&[0.0]), &cfg(0.05), 1).unwrap();
        let exact = 0.5 * 0.05f64.powi(2);
        assert!((s.value - exact).abs() / exact < 0.05, "{} vs {exact}", s.value);
    }

    #[test]
    fn linear_loss_hits_rho_times_norm() {
        let a = [0.3, -1.2, 2.0];
        let obj = FnObjective::new(
            move |w: &[f64]| w.iter().zip(&a).map(|(x, c)| x * c).sum(),
            move |_: &[f64]| a.to_vec(),
        );
        let s = sharpness_of(&obj, &ParamVector::from_slice(&[1.0, 2.0, -0.5]), &cfg(0.05), 3).unwrap();
        let exact = 0.05 * (0.09f64 + 1.44 + 4.0).sqrt();
        assert!((s.value - exact).abs() < 1e-9);
    }

    #[test]
    fn constant_loss_is_flat() {
        let obj = FnObjective::new(|_: &[f64]| 1.5, |w: &[f64]| vec![0.0; w.len()]);
        let s = sharpness_of(&obj, &ParamVector::from_slice(&[0.1, 0.2]), &cfg(0.05), 0).unwrap();
        assert_eq!(s.value, 0.0);
    }

    #[test]
    fn more_steps_never_hurt() {
        let obj = FnObjective::new(
            |w: &[f64]| (3.0 * w[0]).sin() + w[1] * w[1] * w[0],
            |w: &[f64]| vec![3.0 * (3.0 * w[0]).cos() + w[1] * w[1], 2.0 * w[0] * w[1]],
        );
        let w = ParamVector::from_slice(&[0.4, -0.3]);
        let mut prev = 0.0;
        for steps in 1..30 {
            let c = SharpnessConfig {
                ascent_steps: steps,
                ..cfg(0.3)
            };
            let v = sharpness_of(&obj, &w, &c, 9).unwrap().value;
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn non_finite_candidates_are_discarded() {
        // Loss blows up on one side of the ball.
        let obj = FnObjective::new(
            |w: &[f64]| if w[0] > 0.02 { f64::NAN } else { w[0] },
            |w: &[f64]| vec![1.0; w.len()],
        );
        let s = sharpness_of(&obj, &ParamVector::from_slice(&[0.0]), &cfg(0.05), 0).unwrap();
        assert!(s.discarded > 0);
        assert!(s.value >= 0.0 && s.value <= 0.02);
    }

    #[test]
    fn dataset_report_fields() {
        let spec = MlpSpec::new(vec![2, 4, 2], Activation::Tanh).unwrap();
        let m = MlpModel::init(spec, 2).unwrap();
        let feats: Vec<f64> = (0..140).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let labels = (0..70).map(|i| i % 2).collect();
        let d = Dataset::new("toy", 2, feats, labels).unwrap();
        let r = dataset_sharpness(&m, &d, &cfg(0.05)).unwrap();
        assert_eq!(r.per_batch.len(), 3);
        assert!(r.partial_last_batch);
        assert!(r.per_batch.iter().all(|&v| v >= 0.0));
        assert_eq!(r.mean, r.per_batch.iter().sum::<f64>() / 3.0);
        assert_eq!(r, dataset_sharpness(&m, &d, &cfg(0.05)).unwrap());
    }

    #[test]
    fn empty_batch_rejected() {
        let t = Tensor::zeros(vec![0, 2]);
        assert!(Batch::new(t, vec![]).is_err());
    }
}
