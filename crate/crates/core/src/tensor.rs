//! Dense row-major tensors and the flat parameter vector shared by every
//! gradient, perturbation and update in the crate.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense tensor of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from caller-supplied data. Non-finite entries are
    /// rejected.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor entry {} is {}", i, data[i])));
        }
        Ok(Self { shape, data })
    }

    /// Builds a tensor without the finiteness check. Used for computed
    /// outputs, which are checked by their consumers.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() < 2 {
            1
        } else {
            self.shape[1..].iter().product()
        }
    }

    /// Row `i` of a matrix-shaped tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }
}

/// One named block of a [`ParamLayout`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Describes how named parameter blocks flatten into one vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    entries: Vec<LayoutEntry>,
    total: usize,
}

impl ParamLayout {
    /// Lays the blocks out back to back in the given order.
    pub fn new<I, S>(blocks: I) -> Self
    where
        I: IntoIterator<Item = (S, Vec<usize>)>,
        S: Into<String>,
    {
        let mut offset = 0;
        let entries = blocks
            .into_iter()
            .map(|(name, shape)| {
                let e = LayoutEntry {
                    name: name.into(),
                    shape,
                    offset,
                };
                offset += e.len();
                e
            })
            .collect();
        Self { entries, total: offset }
    }

    /// Single unnamed block of length `n`; handy for toy objectives.
    pub fn flat(n: usize) -> Self {
        Self::new([("w", vec![n])])
    }

    pub fn entries(&self) -> &[LayoutEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Checks that offsets are contiguous and cover the whole length.
    pub fn validate(&self) -> Result<()> {
        let mut expect = 0;
        for e in &self.entries {
            if e.offset != expect {
                return Err(Error::Layout(format!(
                    "block {} starts at {} but previous block ends at {}",
                    e.name, e.offset, expect
                )));
            }
            expect += e.len();
        }
        if expect != self.total {
            return Err(Error::Layout(format!(
                "blocks cover {} values, layout claims {}",
                expect, self.total
            )));
        }
        Ok(())
    }
}

/// Flat view of all trainable weights, tagged with their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Arc<ParamLayout>,
}

impl ParamVector {
    pub fn new(layout: Arc<ParamLayout>, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.len() {
            return Err(Error::Layout(format!(
                "layout has {} values, got {}",
                layout.len(),
                values.len()
            )));
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        Self {
            values: vec![0.0; layout.len()],
            layout,
        }
    }

    /// Convenience for one-block vectors.
    pub fn from_slice(values: &[f64]) -> Self {
        Self {
            layout: Arc::new(ParamLayout::flat(values.len())),
            values: values.to_vec(),
        }
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, entry: &LayoutEntry) -> &[f64] {
        &self.values[entry.range()]
    }

    pub fn block_mut(&mut self, entry: &LayoutEntry) -> &mut [f64] {
        &mut self.values[entry.range()]
    }

    /// Same-shaped vector with new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(Arc::clone(&self.layout), values)
    }

    pub fn check_compatible(&self, other: &ParamVector) -> Result<()> {
        if Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout {
            Ok(())
        } else {
            Err(Error::Layout(format!(
                "vectors of length {} and {} have different layouts",
                self.len(),
                other.len()
            )))
        }
    }

    /// `a * x + y`.
    pub fn axpy(a: f64, x: &ParamVector, y: &ParamVector) -> Result<ParamVector> {
        x.check_compatible(y)?;
        let values = x.values.iter().zip(&y.values).map(|(xi, yi)| a * xi + yi).collect();
        Ok(ParamVector {
            values,
            layout: Arc::clone(&y.layout),
        })
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    /// Euclidean norm.
    pub fn norm2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scale(&self, a: f64) -> ParamVector {
        ParamVector {
            values: self.values.iter().map(|v| a * v).collect(),
            layout: Arc::clone(&self.layout),
        }
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        self.values.iter().position(|v| !v.is_finite())
    }

    /// Name of the block containing flat index `i`, with the in-block offset.
    pub fn locate(&self, i: usize) -> Option<(&str, usize)> {
        self.layout
            .entries()
            .iter()
            .find(|e| e.range().contains(&i))
            .map(|e| (e.name.as_str(), i - e.offset))
    }
}
