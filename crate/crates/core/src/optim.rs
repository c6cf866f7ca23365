//! Adam with decoupled weight decay and a cosine learning-rate schedule, and
//! the sharpness-aware (SAM) two-gradient update built on top of it.
//!
//! One SAM step on a batch:
//!
//! 1. `g1 = ∇L(w)`
//! 2. `eps = rho * g1 / ‖g1‖₂`, the first-order maximizer of `L(w + eps)`
//!    over the ρ-ball
//! 3. `g2 = ∇L(w + eps)` on the same batch
//! 4. the base optimizer applies `g2` at the original `w`
//!
//! The perturbation keeps the sign of the gradient; an element-wise
//! absolute value would not ascend the loss.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::tensor::ParamVector;

/// Gradients with a norm at or below this are treated as zero.
pub const DEGENERATE_GRAD_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    /// Length of the cosine schedule. Training overrides it with the run's
    /// step count, so configs may leave it out.
    #[serde(default = "default_total_steps")]
    pub total_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

fn default_total_steps() -> usize {
    1000
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr_max: 1e-4,
            lr_min: 5e-6,
            total_steps: default_total_steps(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.lr_min >= 0.0
            && self.lr_min <= self.lr_max
            && self.lr_max.is_finite()
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid Adam settings: {self:?}")))
        }
    }

    /// Constant learning rate.
    pub fn fixed(lr: f64, total_steps: usize) -> Self {
        Self {
            lr_max: lr,
            lr_min: lr,
            total_steps,
            ..Self::default()
        }
    }
}

/// `lr_min + ½ (lr_max − lr_min)(1 + cos(π t / T))`.
pub fn cosine_lr(cfg: &AdamConfig, step: usize) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(Error::Config(format!(
            "step {step} beyond schedule length {}",
            cfg.total_steps
        )));
    }
    if step == 0 || cfg.total_steps == 0 {
        return Ok(cfg.lr_max);
    }
    if step == cfg.total_steps {
        return Ok(cfg.lr_min);
    }
    let c = (PI * step as f64 / cfg.total_steps as f64).cos();
    Ok(cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + c))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: ParamVector,
    pub second_moment: ParamVector,
    pub step_count: u64,
}

impl AdamState {
    pub fn new(like: &ParamVector) -> Self {
        Self {
            first_moment: ParamVector::zeros(like.layout().clone()),
            second_moment: ParamVector::zeros(like.layout().clone()),
            step_count: 0,
        }
    }
}

fn check_grad(grad: &ParamVector) -> Result<()> {
    if let Some(i) = grad.first_non_finite() {
        let (block, at) = grad.locate(i).unwrap_or(("?", i));
        return Err(Error::NonFinite(format!(
            "gradient coordinate {i} ({block}[{at}]) is {}",
            grad.values()[i]
        )));
    }
    Ok(())
}

/// One Adam update at the scheduled learning rate. Weight decay is applied
/// to `w` before the adaptive step.
pub fn adam_step(
    state: &mut AdamState,
    cfg: &AdamConfig,
    w: &ParamVector,
    grad: &ParamVector,
    step: usize,
) -> Result<ParamVector> {
    w.check_compatible(grad)?;
    w.check_compatible(&state.first_moment)?;
    check_grad(grad)?;
    let lr = cosine_lr(cfg, step)?;
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = lr * cfg.weight_decay;
    let mut out = w.values().to_vec();
    let m = state.first_moment.values_mut();
    for (i, &g) in grad.values().iter().enumerate() {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
    }
    let v = state.second_moment.values_mut();
    for (i, &g) in grad.values().iter().enumerate() {
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
    }
    let m = state.first_moment.values();
    let v = state.second_moment.values();
    for i in 0..out.len() {
        out[i] -= decay * out[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        out[i] -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    w.with_values(out)
}

/// Something that turns a gradient into a parameter update.
pub trait Descent {
    /// Learning rate the update at `step` will use.
    fn lr_at(&self, step: usize) -> f64;

    fn update(&mut self, w: &ParamVector, grad: &ParamVector, step: usize) -> Result<ParamVector>;
}

/// Adam bound to its configuration.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: AdamConfig,
    pub state: AdamState,
}

impl Adam {
    pub fn new(cfg: AdamConfig, like: &ParamVector) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            state: AdamState::new(like),
            cfg,
        })
    }
}

impl Descent for Adam {
    fn lr_at(&self, step: usize) -> f64 {
        cosine_lr(&self.cfg, step).unwrap_or(f64::NAN)
    }

    fn update(&mut self, w: &ParamVector, grad: &ParamVector, step: usize) -> Result<ParamVector> {
        adam_step(&mut self.state, &self.cfg, w, grad, step)
    }
}

/// Plain gradient descent with a constant rate.
#[derive(Debug, Clone, Copy)]
pub struct Sgd {
    pub lr: f64,
}

impl Descent for Sgd {
    fn lr_at(&self, _step: usize) -> f64 {
        self.lr
    }

    fn update(&mut self, w: &ParamVector, grad: &ParamVector, _step: usize) -> Result<ParamVector> {
        check_grad(grad)?;
        ParamVector::axpy(-self.lr, grad, w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamConfig {
    pub rho: f64,
    pub base: AdamConfig,
    /// Forces a zero perturbation, which reduces SAM to its base optimizer.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub force_zero_perturbation: bool,
}

impl SamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Config(format!("rho must lie in (0, 1], got {}", self.rho)));
        }
        self.base.validate()
    }
}

/// Outcome of the perturbation computation.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub eps: ParamVector,
    pub degenerate: bool,
}

/// `rho * grad / ‖grad‖₂`, or zero (flagged) when the gradient vanishes.
pub fn sam_perturbation(grad: &ParamVector, rho: f64) -> Perturbation {
    let norm = grad.norm2();
    if norm.is_nan() || norm <= DEGENERATE_GRAD_NORM {
        return Perturbation {
            eps: ParamVector::zeros(grad.layout().clone()),
            degenerate: true,
        };
    }
    Perturbation {
        eps: grad.scale(rho / norm),
        degenerate: false,
    }
}

/// Per-step record streamed into the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: usize,
    pub lr: f64,
    pub loss_w: f64,
    /// Loss at the perturbed point; equals `loss_w` for plain Adam.
    pub loss_w_plus_eps: f64,
    pub eps_norm: f64,
    pub degenerate: bool,
}

impl StepReport {
    pub const CSV_HEADER: &'static str = "step,lr,loss_w,loss_w_plus_eps,eps_norm,degenerate_flag";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:?},{:?},{:?},{:?},{}",
            self.step,
            self.lr,
            self.loss_w,
            self.loss_w_plus_eps,
            self.eps_norm,
            u8::from(self.degenerate)
        )
    }
}

/// One SAM update of `w` on the batch behind `objective`. Always costs two
/// gradient evaluations; with a degenerate or forced-zero perturbation the
/// second one is taken at `w` itself, which makes the step identical to the
/// base optimizer's.
pub fn sam_step<O: Objective + ?Sized, D: Descent>(
    objective: &O,
    w: &ParamVector,
    base: &mut D,
    rho: f64,
    force_zero: bool,
    step: usize,
) -> Result<(ParamVector, StepReport)> {
    let (loss_w, g1) = objective.loss_and_grad(w)?;
    check_grad(&g1)?;
    let pert = if force_zero {
        Perturbation {
            eps: ParamVector::zeros(w.layout().clone()),
            degenerate: true,
        }
    } else {
        sam_perturbation(&g1, rho)
    };
    let perturbed = if pert.degenerate {
        w.clone()
    } else {
        ParamVector::axpy(1.0, &pert.eps, w)?
    };
    let (loss_eps, g2) = objective.loss_and_grad(&perturbed)?;
    let next = base.update(w, &g2, step)?;
    Ok((
        next,
        StepReport {
            step,
            lr: base.lr_at(step),
            loss_w,
            loss_w_plus_eps: loss_eps,
            eps_norm: pert.eps.norm2(),
            degenerate: pert.degenerate,
        },
    ))
}

/// Plain Adam step on the batch behind `objective`, reported in the same
/// shape as a SAM step.
pub fn descent_step<O: Objective + ?Sized, D: Descent>(
    objective: &O,
    w: &ParamVector,
    base: &mut D,
    step: usize,
) -> Result<(ParamVector, StepReport)> {
    let (loss_w, g) = objective.loss_and_grad(w)?;
    let next = base.update(w, &g, step)?;
    Ok((
        next,
        StepReport {
            step,
            lr: base.lr_at(step),
            loss_w,
            loss_w_plus_eps: loss_w,
            eps_norm: 0.0,
            degenerate: false,
        },
    ))
}
