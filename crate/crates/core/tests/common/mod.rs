//! Independent reference implementations used as test oracles. Everything
//! here is written the slow, obvious way and shares no code with the
//! library beyond its public types.

#![allow(dead_code)]

use flatland::model::{ClassWeights, MlpModel, MlpSpec};
use flatland::{Activation, Batch, Objective, ParamVector, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random architecture (1 or 2 hidden layers), random parameters and a
/// random labelled batch.
pub fn random_case(seed: u64, activation: Activation) -> (MlpModel, Batch) {
    let mut r = rng(seed);
    let input = r.random_range(2..6);
    let mut dims = vec![input];
    for _ in 0..r.random_range(1..3) {
        dims.push(r.random_range(2..7));
    }
    dims.push(2);
    let spec = MlpSpec::new(dims, activation).unwrap();
    let mut model = MlpModel::init(spec, seed).unwrap();
    // Non-zero biases so every block is exercised.
    let vals: Vec<f64> = model
        .params()
        .values()
        .iter()
        .map(|v| v + r.random_range(-0.3..0.3))
        .collect();
    model.set_params(model.params().with_values(vals).unwrap()).unwrap();
    let m = r.random_range(3..9);
    let x: Vec<f64> = (0..m * input).map(|_| r.random_range(-2.0..2.0)).collect();
    let labels = (0..m).map(|_| r.random_range(0..2)).collect();
    (
        model,
        Batch::new(Tensor::new(vec![m, input], x).unwrap(), labels).unwrap(),
    )
}

/// Largest relative disagreement between the analytic gradient and central
/// differences with step `h`. Coordinates whose analytic value is below
/// `abs_floor` in magnitude are compared absolutely instead.
pub fn gradient_check(model: &MlpModel, batch: &Batch, weights: ClassWeights, h: f64, abs_floor: f64) -> f64 {
    let (_, g) = model.loss_and_grad(batch, weights).unwrap();
    let w = model.params().values().to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..w.len() {
        let at = |delta: f64| {
            let mut p = w.clone();
            p[i] += delta;
            let m = model.with_params(model.params().with_values(p).unwrap()).unwrap();
            m.loss(batch, weights).unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        let a = g.values()[i];
        let err = if a.abs() < abs_floor {
            (a - fd).abs()
        } else {
            (a - fd).abs() / a.abs().max(fd.abs())
        };
        worst = worst.max(err);
    }
    worst
}

/// Logits for one row, evaluated layer by layer with explicit loops over the
/// flat parameter vector.
pub fn straight_line_logits(dims: &[usize], activation: Activation, params: &[f64], row: &[f64]) -> Vec<f64> {
    let mut h = row.to_vec();
    let mut off = 0;
    for l in 0..dims.len() - 1 {
        let (n_in, n_out) = (dims[l], dims[l + 1]);
        let weight = &params[off..off + n_in * n_out];
        let bias = &params[off + n_in * n_out..off + n_in * n_out + n_out];
        off += n_in * n_out + n_out;
        let mut next = vec![0.0; n_out];
        for o in 0..n_out {
            let mut acc = bias[o];
            for i in 0..n_in {
                acc += weight[o * n_in + i] * h[i];
            }
            next[o] = acc;
        }
        if l + 2 < dims.len() {
            for v in &mut next {
                *v = match activation {
                    Activation::Relu => v.max(0.0),
                    Activation::Tanh => v.tanh(),
                };
            }
        }
        h = next;
    }
    h
}

/// EER by scanning every candidate threshold and counting errors from
/// scratch at each one.
pub fn brute_eer(bona: &[f64], spoof: &[f64]) -> f64 {
    let mut ts: Vec<f64> = bona.iter().chain(spoof).copied().collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts.push(f64::INFINITY);
    let rates = |t: f64| {
        let fa = spoof.iter().filter(|&&s| s >= t).count();
        let fr = bona.iter().filter(|&&s| s < t).count();
        (fa as f64 / spoof.len() as f64, fr as f64 / bona.len() as f64)
    };
    let mut prev: Option<(f64, f64)> = None;
    for t in ts {
        let (far, frr) = rates(t);
        if far - frr <= 0.0 {
            return match prev {
                Some((far0, frr0)) if far - frr != 0.0 => {
                    let (d0, d1) = (far0 - frr0, far - frr);
                    far0 + d0 / (d0 - d1) * (far - far0)
                }
                _ => far,
            };
        }
        prev = Some((far, frr));
    }
    unreachable!()
}

pub fn brute_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx.sqrt() * vy.sqrt())
}

/// Rank of each value counted directly: 1 + (number below) + half the
/// number of other equal values.
pub fn brute_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .enumerate()
        .map(|(i, a)| {
            let below = x.iter().filter(|b| *b < a).count() as f64;
            let equal = x.iter().enumerate().filter(|(j, b)| *j != i && *b == a).count() as f64;
            1.0 + below + equal / 2.0
        })
        .collect()
}

pub fn brute_spearman(x: &[f64], y: &[f64]) -> f64 {
    brute_pearson(&brute_ranks(x), &brute_ranks(y))
}

/// Tau-b by enumerating all pairs.
pub fn brute_kendall(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let (mut conc, mut disc, mut tx, mut ty) = (0i64, 0i64, 0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let dx = (x[i] - x[j]).signum() * f64::from(u8::from(x[i] != x[j]));
            let dy = (y[i] - y[j]).signum() * f64::from(u8::from(y[i] != y[j]));
            if dx == 0.0 && dy == 0.0 {
                continue;
            } else if dx == 0.0 {
                tx += 1;
            } else if dy == 0.0 {
                ty += 1;
            } else if dx * dy > 0.0 {
                conc += 1;
            } else {
                disc += 1;
            }
        }
    }
    let c_minus_d = (conc - disc) as f64;
    let a = (conc + disc + tx) as f64;
    let b = (conc + disc + ty) as f64;
    c_minus_d / (a * b).sqrt()
}

/// A plain loss over a flat parameter vector.
pub type ToyLoss = Box<dyn Fn(&[f64]) -> f64 + Sync>;

/// Largest `loss(w + eps) - loss(w)` over a dense polar/spherical grid of
/// the radius-`rho` ball, for 2 or 3 parameters.
pub fn grid_sharpness(loss: &dyn Fn(&[f64]) -> f64, w: &[f64], rho: f64) -> (f64, usize) {
    let base = loss(w);
    let mut best = 0.0f64;
    let mut count = 0;
    let mut visit = |eps: &[f64]| {
        let p: Vec<f64> = w.iter().zip(eps).map(|(a, b)| a + b).collect();
        best = best.max(loss(&p) - base);
        count += 1;
    };
    let pi = std::f64::consts::PI;
    match w.len() {
        2 => {
            for ri in 1..=60 {
                let r = rho * ri as f64 / 60.0;
                for k in 0..360 {
                    let th = 2.0 * pi * k as f64 / 360.0;
                    visit(&[r * th.cos(), r * th.sin()]);
                }
            }
        }
        3 => {
            for ri in 1..=20 {
                let r = rho * ri as f64 / 20.0;
                for a in 0..=60 {
                    let th = pi * a as f64 / 60.0;
                    for b in 0..120 {
                        let ph = 2.0 * pi * b as f64 / 120.0;
                        visit(&[r * th.sin() * ph.cos(), r * th.sin() * ph.sin(), r * th.cos()]);
                    }
                }
            }
        }
        d => panic!("grid oracle supports 2 or 3 parameters, got {d}"),
    }
    (best, count)
}

/// Central-difference gradient of a closure, for toy objectives.
pub fn numeric_grad(f: &dyn Fn(&[f64]) -> f64, w: &[f64]) -> Vec<f64> {
    let h = 1e-6;
    (0..w.len())
        .map(|i| {
            let mut a = w.to_vec();
            let mut b = w.to_vec();
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

/// Adapts a plain function of a flat vector to the library's objective
/// trait, differentiating it numerically.
pub struct NumericObjective<F: Fn(&[f64]) -> f64 + Sync>(pub F);

impl<F: Fn(&[f64]) -> f64 + Sync> Objective for NumericObjective<F> {
    fn loss(&self, w: &ParamVector) -> flatland::Result<f64> {
        Ok((self.0)(w.values()))
    }

    fn loss_and_grad(&self, w: &ParamVector) -> flatland::Result<(f64, ParamVector)> {
        let g = numeric_grad(&self.0, w.values());
        Ok(((self.0)(w.values()), w.with_values(g)?))
    }
}

/// Per-coordinate mean of each class's rows.
pub fn class_means(ds: &flatland::Dataset, label: usize) -> Vec<f64> {
    let mut sum = vec![0.0; ds.dim()];
    let mut n = 0.0;
    for i in 0..ds.len() {
        let (x, y) = ds.sample(i);
        if y == label {
            sum.iter_mut().zip(x).for_each(|(s, v)| *s += v);
            n += 1.0;
        }
    }
    sum.iter().map(|s| s / n).collect()
}
