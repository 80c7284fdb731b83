//! Dense symmetric positive-definite kernels.
//!
//! Matrices are stored as packed lower triangles in row order, so entry
//! `(i, j)` with `j <= i` lives at `i * (i + 1) / 2 + j`. Everything is `f64`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

#[inline]
fn packed_index(i: usize, j: usize) -> usize {
    debug_assert!(j <= i);
    i * (i + 1) / 2 + j
}

/// Symmetric `dim x dim` matrix backed by its lower triangle.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    lower: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "SymMatrix dimension must be at least 1");
        SymMatrix {
            dim,
            lower: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &v) in diag.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Builds from a packed lower triangle of length `dim * (dim + 1) / 2`.
    pub fn from_packed(dim: usize, lower: Vec<f64>) -> Result<Self> {
        if dim == 0 || lower.len() != dim * (dim + 1) / 2 {
            return Err(Error::DimensionMismatch {
                expected: dim * (dim + 1) / 2,
                actual: lower.len(),
            });
        }
        Ok(SymMatrix { dim, lower })
    }

    /// Builds from a dense row-major square matrix, reading only the lower triangle.
    pub fn from_dense(dim: usize, dense: &[f64]) -> Result<Self> {
        if dim == 0 || dense.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                actual: dense.len(),
            });
        }
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..=i {
                m.set(i, j, dense[i * dim + j]);
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn packed(&self) -> &[f64] {
        &self.lower
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j <= i {
            self.lower[packed_index(i, j)]
        } else {
            self.lower[packed_index(j, i)]
        }
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let idx = if j <= i {
            packed_index(i, j)
        } else {
            packed_index(j, i)
        };
        self.lower[idx] = v;
    }

    /// Adds `weight * x xᵀ` (rank-one update of the lower triangle).
    pub fn add_outer(&mut self, x: &[f64], weight: f64) {
        debug_assert_eq!(x.len(), self.dim);
        let mut idx = 0;
        for i in 0..self.dim {
            let wxi = weight * x[i];
            for xj in &x[..=i] {
                self.lower[idx] += wxi * xj;
                idx += 1;
            }
        }
    }

    pub fn add_assign(&mut self, other: &SymMatrix) {
        assert_eq!(self.dim, other.dim);
        for (a, b) in self.lower.iter_mut().zip(&other.lower) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.lower.iter_mut().for_each(|v| *v *= c);
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, i)).collect()
    }

    pub fn mean_diagonal(&self) -> f64 {
        self.diagonal().iter().sum::<f64>() / self.dim as f64
    }

    /// Frobenius norm over the full (mirrored) matrix.
    pub fn frobenius_norm(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.dim {
            for j in 0..=i {
                let v = self.get(i, j);
                acc += if i == j { v * v } else { 2.0 * v * v };
            }
        }
        acc.sqrt()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = self.get(i, j);
            }
        }
        out
    }
}

/// How hard `cholesky` tries before giving up on a near-singular matrix.
///
/// Attempt 0 factors the matrix as-is. Attempt `j + 1` adds
/// `10^(first_exponent + j) * mean(diag)` to the diagonal, for
/// `j in 0..max_attempts`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JitterPolicy {
    pub max_attempts: u32,
    pub first_exponent: i32,
}

impl Default for JitterPolicy {
    fn default() -> Self {
        JitterPolicy {
            max_attempts: 7,
            first_exponent: -10,
        }
    }
}

impl JitterPolicy {
    pub fn none() -> Self {
        JitterPolicy {
            max_attempts: 0,
            first_exponent: -10,
        }
    }

    /// Diagonal scale the jitter ladder is anchored to. A matrix with zero
    /// (or negative) mean diagonal falls back to unit scale.
    fn base_scale(m: &SymMatrix) -> f64 {
        let s = m.mean_diagonal();
        if s.is_finite() && s > 0.0 {
            s
        } else {
            1.0
        }
    }

    /// Jitter values tried after the unregularized attempt, in order.
    pub fn schedule(&self, m: &SymMatrix) -> Vec<f64> {
        let base = Self::base_scale(m);
        (0..self.max_attempts as i32)
            .map(|j| 10f64.powi(self.first_exponent + j) * base)
            .collect()
    }
}

/// Lower-triangular factor `L` with `L Lᵀ = m + jitter_applied * I`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    dim: usize,
    lower: Vec<f64>,
    log_det: f64,
    jitter_applied: f64,
}

impl CholeskyFactor {
    /// Reassembles a factor from stored parts, re-checking its invariants.
    pub fn from_parts(dim: usize, lower: Vec<f64>, log_det: f64, jitter_applied: f64) -> Result<Self> {
        if dim == 0 || lower.len() != dim * (dim + 1) / 2 {
            return Err(Error::DimensionMismatch {
                expected: dim * (dim + 1) / 2,
                actual: lower.len(),
            });
        }
        let mut recomputed = 0.0;
        for i in 0..dim {
            let d = lower[packed_index(i, i)];
            if !(d > 0.0 && d.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "cholesky diagonal entry {i} is not strictly positive"
                )));
            }
            recomputed += d.ln();
        }
        recomputed *= 2.0;
        if (recomputed - log_det).abs() > 1e-10 * recomputed.abs().max(1.0) {
            return Err(Error::InvalidArgument(format!(
                "stored log-determinant {log_det} disagrees with factor ({recomputed})"
            )));
        }
        if !(jitter_applied >= 0.0) {
            return Err(Error::InvalidArgument("negative jitter".into()));
        }
        Ok(CholeskyFactor {
            dim,
            lower,
            log_det,
            jitter_applied,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn packed(&self) -> &[f64] {
        &self.lower
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j <= i {
            self.lower[packed_index(i, j)]
        } else {
            0.0
        }
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn jitter_applied(&self) -> f64 {
        self.jitter_applied
    }

    /// Solves `L y = b` in place.
    pub fn forward_solve(&self, b: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            let row = &self.lower[packed_index(i, 0)..=packed_index(i, i)];
            let mut acc = b[i];
            for (l, y) in row[..i].iter().zip(&b[..i]) {
                acc -= l * y;
            }
            b[i] = acc / row[i];
        }
    }

    /// Returns `L Lᵀ` as a symmetric matrix.
    pub fn reconstruct(&self) -> SymMatrix {
        let n = self.dim;
        let mut m = SymMatrix::zeros(n);
        for i in 0..n {
            for j in 0..=i {
                let mut acc = 0.0;
                for k in 0..=j {
                    acc += self.get(i, k) * self.get(j, k);
                }
                m.set(i, j, acc);
            }
        }
        m
    }
}

/// Plain Cholesky–Banachiewicz on `m + jitter * I`. Fails when a pivot drops
/// to or below `dim * eps * max(diag)`, which catches numerically singular
/// matrices that would otherwise factor with garbage pivots.
fn try_factor(m: &SymMatrix, jitter: f64) -> Option<Vec<f64>> {
    let n = m.dim();
    let max_diag = (0..n)
        .map(|i| m.get(i, i) + jitter)
        .fold(0.0_f64, f64::max);
    let pivot_floor = n as f64 * f64::EPSILON * max_diag;
    let mut l = vec![0.0; m.packed().len()];
    for i in 0..n {
        for j in 0..=i {
            let mut acc = m.get(i, j);
            if i == j {
                acc += jitter;
            }
            let (ri, rj) = (packed_index(i, 0), packed_index(j, 0));
            for k in 0..j {
                acc -= l[ri + k] * l[rj + k];
            }
            if i == j {
                if !(acc > pivot_floor) || !acc.is_finite() {
                    return None;
                }
                l[ri + i] = acc.sqrt();
            } else {
                l[ri + j] = acc / l[rj + j];
            }
        }
    }
    Some(l)
}

/// Factors `m`, escalating diagonal jitter per `policy` until it succeeds.
pub fn cholesky(m: &SymMatrix, policy: JitterPolicy) -> Result<CholeskyFactor> {
    let schedule = policy.schedule(m);
    let attempts = std::iter::once(0.0).chain(schedule.iter().copied());
    for jitter in attempts {
        if let Some(lower) = try_factor(m, jitter) {
            let n = m.dim();
            let log_det = 2.0 * (0..n).map(|i| lower[packed_index(i, i)].ln()).sum::<f64>();
            return Ok(CholeskyFactor {
                dim: n,
                lower,
                log_det,
                jitter_applied: jitter,
            });
        }
    }
    Err(Error::NotPositiveDefinite {
        max_jitter: schedule.last().copied().unwrap_or(0.0),
    })
}

/// `deltaᵀ Σ⁻¹ delta` through one triangular solve.
pub fn mahalanobis_sq(factor: &CholeskyFactor, delta: &[f64]) -> Result<f64> {
    if delta.len() != factor.dim() {
        return Err(Error::DimensionMismatch {
            expected: factor.dim(),
            actual: delta.len(),
        });
    }
    let mut y = delta.to_vec();
    factor.forward_solve(&mut y);
    Ok(y.iter().map(|v| v * v).sum())
}

/// Same as [`mahalanobis_sq`] for callers that already validated lengths and
/// own a scratch buffer. `scratch` is overwritten.
pub(crate) fn mahalanobis_sq_with(factor: &CholeskyFactor, x: &[f64], mean: &[f64], scratch: &mut [f64]) -> f64 {
    for ((s, a), b) in scratch.iter_mut().zip(x).zip(mean) {
        *s = a - b;
    }
    factor.forward_solve(scratch);
    scratch.iter().map(|v| v * v).sum()
}

/// Full Gaussian log-density given the squared Mahalanobis distance.
#[inline]
pub fn gaussian_log_density(dim: usize, log_det: f64, maha_sq: f64) -> f64 {
    -0.5 * (dim as f64 * (2.0 * PI).ln() + log_det + maha_sq)
}

/// `ln Σ exp(v)` with max-shift.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
