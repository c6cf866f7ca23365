//! Labeled samples and deterministic batching.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Class index of genuine samples.
pub const BONA_FIDE: usize = 0;
/// Class index of spoofed samples.
pub const SPOOF: usize = 1;

/// A batch of `m` feature rows with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    features: Tensor,
    labels: Vec<usize>,
}

impl Batch {
    pub fn new(features: Tensor, labels: Vec<usize>) -> Result<Self> {
        if features.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "batch features must be a matrix, got shape {:?}",
                features.shape()
            )));
        }
        if labels.is_empty() {
            return Err(Error::Empty("batch has no samples".into()));
        }
        if features.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y > SPOOF) {
            return Err(Error::Config(format!("label {bad} is not 0 or 1")));
        }
        Ok(Self { features, labels })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }
}

/// Ordered sample collection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: String,
    dim: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, dim: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("feature dimension must be positive".into()));
        }
        if features.len() != dim * labels.len() {
            return Err(Error::Shape(format!(
                "{} features do not fill {} rows of width {}",
                features.len(),
                labels.len(),
                dim
            )));
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature value {i} is {}", features[i])));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y > SPOOF) {
            return Err(Error::Config(format!("label {bad} is not 0 or 1")));
        }
        Ok(Self {
            name: name.into(),
            dim,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn sample(&self, i: usize) -> (&[f64], usize) {
        (&self.features[i * self.dim..(i + 1) * self.dim], self.labels[i])
    }

    pub fn count_label(&self, label: usize) -> usize {
        self.labels.iter().filter(|&&y| y == label).count()
    }

    /// Gathers the given sample indices into one batch.
    pub fn gather(&self, idx: &[usize]) -> Result<Batch> {
        let mut feats = Vec::with_capacity(idx.len() * self.dim);
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            let (x, y) = self.sample(i);
            feats.extend_from_slice(x);
            labels.push(y);
        }
        Batch::new(Tensor::from_raw(vec![idx.len(), self.dim], feats), labels)
    }

    /// The whole dataset as one batch.
    pub fn as_batch(&self) -> Result<Batch> {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.gather(&idx)
    }

    /// Splits the dataset into batches of `batch_size`. With a seed the
    /// order is shuffled deterministically; without one, dataset order is
    /// kept. The last batch may be short.
    pub fn batches(&self, batch_size: usize, shuffle_seed: Option<u64>) -> Result<Vec<Batch>> {
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.is_empty() {
            return Err(Error::Empty(format!("dataset {} has no samples", self.name)));
        }
        let mut order: Vec<usize> = (0..self.len()).collect();
        if let Some(seed) = shuffle_seed {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        }
        order.chunks(batch_size).map(|c| self.gather(c)).collect()
    }

    /// Concatenation, keeping `self`'s name.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.dim != other.dim {
            return Err(Error::Shape(format!(
                "cannot concatenate dims {} and {}",
                self.dim, other.dim
            )));
        }
        let mut features = self.features.clone();
        features.extend_from_slice(&other.features);
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Dataset::new(self.name.clone(), self.dim, features, labels)
    }

    /// Writes `feature_0..feature_{d-1},label` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for j in 0..self.dim {
            out.push_str(&format!("feature_{j},"));
        }
        out.push_str("label\n");
        for i in 0..self.len() {
            let (x, y) = self.sample(i);
            for v in x {
                out.push_str(&format!("{v:?},"));
            }
            out.push_str(&format!("{y}\n"));
        }
        out
    }

    pub fn from_csv(name: impl Into<String>, text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty dataset CSV".into()))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.last() != Some(&"label") || cols.len() < 2 {
            return Err(Error::Parse("last column must be `label`".into()));
        }
        let dim = cols.len() - 1;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (ln, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 1 {
                return Err(Error::Parse(format!(
                    "row {} has {} fields, expected {}",
                    ln + 2,
                    fields.len(),
                    dim + 1
                )));
            }
            for f in &fields[..dim] {
                features.push(
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("row {}: {e}", ln + 2)))?,
                );
            }
            labels.push(
                fields[dim]
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Parse(format!("row {}: {e}", ln + 2)))?,
            );
        }
        Dataset::new(name, dim, features, labels)
    }
}
