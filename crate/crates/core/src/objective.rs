//! The loss-surface interface consumed by the optimizers, the sharpness
//! estimator and the landscape sampler.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::Result;
use crate::tensor::ParamVector;

/// A differentiable scalar loss over a parameter vector.
pub trait Objective: Sync {
    fn loss(&self, w: &ParamVector) -> Result<f64>;

    fn loss_and_grad(&self, w: &ParamVector) -> Result<(f64, ParamVector)>;
}

impl<T: Objective + ?Sized> Objective for &T {
    fn loss(&self, w: &ParamVector) -> Result<f64> {
        (**self).loss(w)
    }

    fn loss_and_grad(&self, w: &ParamVector) -> Result<(f64, ParamVector)> {
        (**self).loss_and_grad(w)
    }
}

/// Objective from a pair of closures. Mostly used for analytic toy losses.
pub struct FnObjective<L, G> {
    loss: L,
    grad: G,
}

impl<L, G> FnObjective<L, G>
where
    L: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
{
    pub fn new(loss: L, grad: G) -> Self {
        Self { loss, grad }
    }
}

impl<L, G> Objective for FnObjective<L, G>
where
    L: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
{
    fn loss(&self, w: &ParamVector) -> Result<f64> {
        Ok((self.loss)(w.values()))
    }

    fn loss_and_grad(&self, w: &ParamVector) -> Result<(f64, ParamVector)> {
        let g = (self.grad)(w.values());
        Ok(((self.loss)(w.values()), w.with_values(g)?))
    }
}

/// Wraps an objective and counts gradient evaluations.
pub struct CountingObjective<O> {
    inner: O,
    grads: AtomicUsize,
    losses: AtomicUsize,
}

impl<O: Objective> CountingObjective<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            grads: AtomicUsize::new(0),
            losses: AtomicUsize::new(0),
        }
    }

    pub fn grad_evals(&self) -> usize {
        self.grads.load(Ordering::Relaxed)
    }

    pub fn loss_evals(&self) -> usize {
        self.losses.load(Ordering::Relaxed)
    }
}

impl<O: Objective> Objective for CountingObjective<O> {
    fn loss(&self, w: &ParamVector) -> Result<f64> {
        self.losses.fetch_add(1, Ordering::Relaxed);
        self.inner.loss(w)
    }

    fn loss_and_grad(&self, w: &ParamVector) -> Result<(f64, ParamVector)> {
        self.grads.fetch_add(1, Ordering::Relaxed);
        self.inner.loss_and_grad(w)
    }
}
