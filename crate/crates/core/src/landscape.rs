//! Two-dimensional loss slices around a trained model along random,
//! block-normalized directions.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{forward_with, weighted_cross_entropy, ClassWeights, MlpModel};
use crate::rng::stream;
use crate::tensor::ParamVector;

/// Rows per chunk when evaluating a dataset loss.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Each layout block of a direction gets the norm of the same block of
    /// the weights (weights and biases are separate blocks).
    Filter,
    /// The whole direction gets the norm of the whole weight vector.
    Global,
    None,
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "filter" => Ok(Self::Filter),
            "global" => Ok(Self::Global),
            "none" => Ok(Self::None),
            other => Err(Error::Parse(format!("unknown normalization `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionPair {
    pub d1: ParamVector,
    pub d2: ParamVector,
    pub seed: u64,
    pub normalization: Normalization,
    /// Blocks zeroed because the matching weight block has zero norm.
    pub zeroed_blocks: Vec<String>,
}

fn normalize(d: &mut ParamVector, w: &ParamVector, how: Normalization, zeroed: &mut Vec<String>) {
    match how {
        Normalization::None => {}
        Normalization::Global => {
            let (dn, wn) = (d.norm2(), w.norm2());
            let s = if dn > 0.0 { wn / dn } else { 0.0 };
            d.values_mut().iter_mut().for_each(|v| *v *= s);
        }
        Normalization::Filter => {
            for e in w.layout().entries() {
                let wn = w.block(e).iter().map(|v| v * v).sum::<f64>().sqrt();
                let block = d.block_mut(e);
                let dn = block.iter().map(|v| v * v).sum::<f64>().sqrt();
                if wn == 0.0 || dn == 0.0 {
                    block.iter_mut().for_each(|v| *v = 0.0);
                    if !zeroed.contains(&e.name) {
                        zeroed.push(e.name.clone());
                    }
                } else {
                    let s = wn / dn;
                    block.iter_mut().for_each(|v| *v *= s);
                }
            }
        }
    }
}

/// Two independent Gaussian directions in weight space, normalized as
/// requested. Deterministic per seed.
pub fn sample_directions(model: &MlpModel, seed: u64, normalization: Normalization) -> Result<DirectionPair> {
    let w = model.params();
    if let Some(i) = w.first_non_finite() {
        return Err(Error::NonFinite(format!("parameter {i} is {}", w.values()[i])));
    }
    let mut zeroed = Vec::new();
    let mut draw = |index: u64| {
        let mut rng = stream(seed, "landscape-direction", index);
        let vals: Vec<f64> = (0..w.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut d = ParamVector::zeros(w.layout().clone());
        d.values_mut().copy_from_slice(&vals);
        normalize(&mut d, w, normalization, &mut zeroed);
        d
    };
    let d1 = draw(1);
    let d2 = draw(2);
    Ok(DirectionPair {
        d1,
        d2,
        seed,
        normalization,
        zeroed_blocks: zeroed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandscapeGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// `losses[i][j]` is the loss at `(alphas[i], betas[j])`; `None` marks a
    /// non-finite value.
    pub losses: Vec<Vec<Option<f64>>>,
    pub origin_loss: f64,
    pub direction_seed: u64,
    pub normalization: Normalization,
    pub dataset: String,
}

/// `resolution` evenly spaced points from `-half_range` to `half_range`.
/// Coordinates of a `2r - 1` grid coincide bit-for-bit with those of an
/// `r` grid at shared points, and the center is exactly zero.
pub fn grid_axis(half_range: f64, resolution: usize) -> Vec<f64> {
    let den = (resolution - 1) as f64;
    (0..resolution)
        .map(|i| {
            let num = 2 * i as i64 - (resolution as i64 - 1);
            half_range * num as f64 / den
        })
        .collect()
}

/// Mean weighted cross-entropy of the whole dataset at parameters `w`.
pub fn dataset_loss(model: &MlpModel, w: &ParamVector, dataset: &Dataset, weights: ClassWeights) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Empty(format!("dataset {} has no samples", dataset.name)));
    }
    let mut total = 0.0;
    for batch in dataset.batches(EVAL_CHUNK, None)? {
        let logits = forward_with(model.spec(), w, batch.features())?;
        if logits.first_non_finite().is_some() {
            return Ok(f64::INFINITY);
        }
        let (_, per) = weighted_cross_entropy(&logits, batch.labels(), weights)?;
        // One running sum over examples, so the result matches the loss of
        // the whole dataset as a single batch bit for bit.
        for v in per {
            total += v;
        }
    }
    Ok(total / dataset.len() as f64)
}

/// Loss at `w + alpha * d1 + beta * d2` for every grid point.
pub fn evaluate_grid(
    model: &MlpModel,
    dataset: &Dataset,
    dirs: &DirectionPair,
    half_range: f64,
    resolution: usize,
    weights: ClassWeights,
) -> Result<LandscapeGrid> {
    if resolution.is_multiple_of(2) || resolution < 3 {
        return Err(Error::Config(format!(
            "grid resolution must be odd and at least 3, got {resolution}"
        )));
    }
    if !(half_range > 0.0 && half_range.is_finite()) {
        return Err(Error::Config(format!("half_range must be positive, got {half_range}")));
    }
    let w = model.params();
    w.check_compatible(&dirs.d1)?;
    w.check_compatible(&dirs.d2)?;
    let alphas = grid_axis(half_range, resolution);
    let betas = alphas.clone();
    let origin_loss = dataset_loss(model, w, dataset, weights)?;

    let (d1, d2) = (dirs.d1.values(), dirs.d2.values());
    let losses = alphas
        .par_iter()
        .map(|&a| {
            betas
                .iter()
                .map(|&b| {
                    let p: Vec<f64> = w
                        .values()
                        .iter()
                        .zip(d1.iter().zip(d2))
                        .map(|(wi, (x, y))| wi + a * x + b * y)
                        .collect();
                    let l = dataset_loss(model, &w.with_values(p)?, dataset, weights)?;
                    Ok(l.is_finite().then_some(l))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LandscapeGrid {
        alphas,
        betas,
        losses,
        origin_loss,
        direction_seed: dirs.seed,
        normalization: dirs.normalization,
        dataset: dataset.name.clone(),
    })
}

impl LandscapeGrid {
    pub fn center(&self) -> Option<f64> {
        let i = self.alphas.len() / 2;
        let j = self.betas.len() / 2;
        self.losses[i][j]
    }

    /// Max minus min over finite grid losses.
    pub fn spread(&self) -> f64 {
        let finite = self.losses.iter().flatten().flatten();
        let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        hi - lo
    }

    pub fn overflow_count(&self) -> usize {
        self.losses.iter().flatten().filter(|v| v.is_none()).count()
    }

    /// Long-format `alpha,beta,loss` CSV; overflow points have an empty loss.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("alpha,beta,loss\n");
        for (i, a) in self.alphas.iter().enumerate() {
            for (j, b) in self.betas.iter().enumerate() {
                match self.losses[i][j] {
                    Some(l) => out.push_str(&format!("{a:?},{b:?},{l:?}\n")),
                    None => out.push_str(&format!("{a:?},{b:?},\n")),
                }
            }
        }
        out
    }
}
