//! Dense parameter vector holding the model coordinates.
//!
//! All arithmetic is shape-checked: combining vectors of different
//! dimensions is a hard error (panic), never silent truncation.

use serde::{Deserialize, Serialize};

/// Flat dense vector of model coordinates. The dimension is fixed at
/// construction and must match across all clients in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn zeros(dim: usize) -> Self {
        ParameterVector(vec![0.0; dim])
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        ParameterVector(values)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }

    fn check_dim(&self, other: &Self, op: &str) {
        assert_eq!(
            self.dim(),
            other.dim(),
            "parameter vector dimension mismatch in {op}: {} vs {}",
            self.dim(),
            other.dim()
        );
    }

    /// self += factor * other
    pub fn add_scaled(&mut self, other: &Self, factor: f64) {
        self.check_dim(other, "add_scaled");
        for (a, b) in self.0.iter_mut().zip(other.0.iter()) {
            *a += factor * b;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for a in self.0.iter_mut() {
            *a *= factor;
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.scale(factor);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.check_dim(other, "sub");
        ParameterVector(
            self.0
                .iter()
                .zip(other.0.iter())
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.check_dim(other, "dot");
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    /// new_m = (1 - beta) * m + beta * h, in place on `self`.
    pub fn ema_update(&mut self, sample: &Self, beta: f64) {
        self.check_dim(sample, "ema_update");
        for (m, h) in self.0.iter_mut().zip(sample.0.iter()) {
            *m = (1.0 - beta) * *m + beta * h;
        }
    }

    /// new_q = (1 - beta) * q + beta * h^2 (entrywise square), in place.
    pub fn ema_update_squared(&mut self, sample: &Self, beta: f64) {
        self.check_dim(sample, "ema_update_squared");
        for (q, h) in self.0.iter_mut().zip(sample.0.iter()) {
            *q = (1.0 - beta) * *q + beta * h * h;
        }
    }

    /// self -= eta * m / (sqrt(q) + tau), entrywise.
    pub fn adam_step(&mut self, m: &Self, q: &Self, eta: f64, tau: f64) {
        self.check_dim(m, "adam_step");
        self.check_dim(q, "adam_step");
        for ((w, m_i), q_i) in self.0.iter_mut().zip(m.0.iter()).zip(q.0.iter()) {
            *w -= eta * m_i / (q_i.sqrt() + tau);
        }
    }

    /// Coordinate-wise arithmetic mean over a nonempty set of vectors,
    /// computed as first + mean(v - first) so that averaging identical
    /// vectors returns them bit-exactly.
    pub fn mean_of<'a, I>(vectors: I) -> Self
    where
        I: IntoIterator<Item = &'a ParameterVector>,
    {
        let mut iter = vectors.into_iter();
        let first = iter.next().expect("mean_of requires at least one vector");
        let mut deviation_sum = ParameterVector::zeros(first.dim());
        let mut count = 1usize;
        for v in iter {
            deviation_sum.add_scaled(&v.sub(first), 1.0);
            count += 1;
        }
        let mut mean = first.clone();
        mean.add_scaled(&deviation_sum, 1.0 / count as f64);
        mean
    }

    /// Largest absolute per-coordinate difference.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.check_dim(other, "max_abs_diff");
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<usize> for ParameterVector {
    type Output = f64;
    fn index(&self, idx: usize) -> &f64 {
        &self.0[idx]
    }
}

impl std::ops::IndexMut<usize> for ParameterVector {
    fn index_mut(&mut self, idx: usize) -> &mut f64 {
        &mut self.0[idx]
    }
}
