//! Dense tensors and vectors, plus the handful of reductions the pipeline
//! needs: pooling, Euclidean distance, concatenation and z-score scaling.
//!
//! Tensors hold `f32` (the on-disk precision). Pooled vectors and every
//! reduction over them are carried in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to per-dimension standard deviations before division.
pub const DEFAULT_EPS: f64 = 1e-6;

/// Row-major `f32` tensor with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl EmbeddingTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::Shape("tensor must have at least one dimension".into()));
        }
        if shape.contains(&0) {
            return Err(Error::Shape(format!("zero-sized dimension in shape {shape:?}")));
        }
        let expected = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Shape(format!("shape {shape:?} overflows")))?;
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("tensor element {pos}")));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_parts(self) -> (Vec<usize>, Vec<f32>) {
        (self.shape, self.data)
    }
}

/// A pooled, one-dimensional feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    data: Vec<f64>,
}

impl EmbeddingVector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("embedding vector"));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("vector element {pos}")));
        }
        Ok(Self { data })
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

/// Per-dimension population mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl NormStats {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.is_empty() {
            return Err(Error::Empty("normalization statistics"));
        }
        if mean.len() != std.len() {
            return Err(Error::Shape(format!(
                "mean has {} dims, std has {}",
                mean.len(),
                std.len()
            )));
        }
        if std.iter().any(|s| !(s.is_finite() && *s >= 0.0)) || mean.iter().any(|m| !m.is_finite())
        {
            return Err(Error::NonFinite("normalization statistics".into()));
        }
        Ok(Self { mean, std })
    }

    /// Statistics that leave every vector unchanged.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }
}

/// Averages over every axis except the last. A rank-1 tensor comes back as is.
pub fn mean_pool_except_last(t: &EmbeddingTensor) -> Result<EmbeddingVector> {
    let width = *t
        .shape
        .last()
        .ok_or_else(|| Error::Shape("cannot pool a rank-0 tensor".into()))?;
    let rows = t.data.len() / width;
    let mut acc = vec![0.0f64; width];
    for row in t.data.chunks_exact(width) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += f64::from(v);
        }
    }
    let n = rows as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    EmbeddingVector::new(acc)
}

pub fn euclidean_distance(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    check_dims(a.dim(), b.dim())?;
    Ok(squared_distance(&a.data, &b.data).sqrt())
}

#[inline]
pub(crate) fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// `a` followed by `b`.
pub fn concat(a: &EmbeddingVector, b: &EmbeddingVector) -> EmbeddingVector {
    let mut data = Vec::with_capacity(a.dim() + b.dim());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    EmbeddingVector { data }
}

/// Fits population statistics (divide by N) over `vs`.
pub fn zscore_fit(vs: &[EmbeddingVector]) -> Result<NormStats> {
    zscore_fit_iter(vs.iter())
}

pub(crate) fn zscore_fit_iter<'a>(
    vs: impl IntoIterator<Item = &'a EmbeddingVector>,
) -> Result<NormStats> {
    let mut vs = vs.into_iter();
    let first = vs.next().ok_or(Error::Empty("zscore_fit population"))?;
    let dim = first.dim();
    // Welford's running update, one pass.
    let mut mean = first.data.clone();
    let mut m2 = vec![0.0f64; dim];
    let mut n = 1.0f64;
    for v in vs {
        check_dims(dim, v.dim())?;
        n += 1.0;
        for ((m, s), &x) in mean.iter_mut().zip(m2.iter_mut()).zip(&v.data) {
            let delta = x - *m;
            *m += delta / n;
            *s += delta * (x - *m);
        }
    }
    let std = m2.into_iter().map(|s| (s.max(0.0) / n).sqrt()).collect();
    Ok(NormStats { mean, std })
}

/// `(v - mean) / max(std, eps)` per dimension.
pub fn zscore_apply(v: &EmbeddingVector, stats: &NormStats, eps: f64) -> Result<EmbeddingVector> {
    check_dims(stats.dim(), v.dim())?;
    let data = v
        .data
        .iter()
        .zip(&stats.mean)
        .zip(&stats.std)
        .map(|((x, m), s)| (x - m) / s.max(eps))
        .collect();
    EmbeddingVector::new(data)
}

fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Shape(format!(
            "dimension mismatch: expected {expected}, got {got}"
        )));
    }
    Ok(())
}
