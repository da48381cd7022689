//! Sample-wise normalization, DP mean and centering.
//!
//! Matrices are `m × n` with one sample per column.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::mechanism::{check_epsilon, sample_laplace, SensitivitySpec};

/// Columns whose norm falls below this after centering are dropped.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// Tolerance on `‖x‖ = 1` when checking that input is normalized.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// Output of the preprocessing stage.
#[derive(Debug, Clone)]
pub struct PreprocessedDataset {
    /// Centered, re-normalized samples (`m × n'`, unit-norm columns).
    pub x_bar: DMatrix<f64>,
    /// DP estimate of the mean of the pre-normalized samples.
    pub mu_dp: DVector<f64>,
    pub epsilon_mu_spent: f64,
    pub mean_sensitivity: SensitivitySpec,
    /// Indices (into the input) of samples dropped after centering.
    pub dropped: Vec<usize>,
}

impl PreprocessedDataset {
    pub fn zero_norm_rows_dropped(&self) -> usize {
        self.dropped.len()
    }
}

/// Divides every column by its Euclidean norm.
pub fn sample_normalize(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let norm = col.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::ZeroNormSample { index: j });
        }
        col /= norm;
    }
    Ok(out)
}

fn check_unit_columns(x: &DMatrix<f64>) -> Result<()> {
    for (j, col) in x.column_iter().enumerate() {
        let norm = col.norm();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::NotNormalized { index: j, norm });
        }
    }
    Ok(())
}

/// Sample mean of unit-norm columns plus i.i.d. `Lap(2√m/(n·ε_μ))` noise.
///
/// An infinite `epsilon_mu` returns the exact mean.
pub fn dp_mean<R: Rng + ?Sized>(
    x_normalized: &DMatrix<f64>,
    epsilon_mu: f64,
    rng: &mut R,
) -> Result<(DVector<f64>, SensitivitySpec)> {
    check_epsilon("epsilon_mu", epsilon_mu)?;
    let (m, n) = x_normalized.shape();
    let spec = SensitivitySpec::mean(m, n)?;
    check_unit_columns(x_normalized)?;
    let scale = if epsilon_mu.is_infinite() {
        0.0
    } else {
        spec.scale(epsilon_mu)?
    };
    let mut mean = x_normalized.column_mean();
    for v in mean.iter_mut() {
        *v += sample_laplace(scale, rng);
    }
    Ok((mean, spec))
}

/// Subtracts `mu` from every column and re-normalizes.
///
/// Columns whose centered norm is below [`DEGENERATE_NORM`] are removed; their
/// input indices are returned alongside the kept columns.
pub fn center_and_renormalize(
    x_normalized: &DMatrix<f64>,
    mu: &DVector<f64>,
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    if mu.len() != x_normalized.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x_normalized.nrows(),
            actual: mu.len(),
        });
    }
    let mut kept = Vec::with_capacity(x_normalized.ncols());
    let mut dropped = Vec::new();
    for (j, col) in x_normalized.column_iter().enumerate() {
        let centered = col - mu;
        let norm = centered.norm();
        if norm < DEGENERATE_NORM {
            dropped.push(j);
        } else {
            kept.push(centered / norm);
        }
    }
    if kept.is_empty() {
        return Err(Error::AllSamplesDegenerate);
    }
    Ok((DMatrix::from_columns(&kept), dropped))
}

/// Pre-normalize, DP mean, center, re-normalize.
pub fn preprocess<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    epsilon_mu: f64,
    rng: &mut R,
) -> Result<PreprocessedDataset> {
    if x.ncols() == 0 || x.nrows() == 0 {
        return Err(Error::param(
            "x",
            "need at least one sample and one feature",
        ));
    }
    let normalized = sample_normalize(x)?;
    let (mu_dp, spec) = dp_mean(&normalized, epsilon_mu, rng)?;
    let (x_bar, dropped) = center_and_renormalize(&normalized, &mu_dp)?;
    if !dropped.is_empty() {
        warn!(
            "{} sample(s) collapsed to zero after centering and were dropped",
            dropped.len()
        );
    }
    Ok(PreprocessedDataset {
        x_bar,
        mu_dp,
        epsilon_mu_spent: epsilon_mu,
        mean_sensitivity: spec,
        dropped,
    })
}

/// Applies an already-released mean to new data: normalize, center, re-normalize.
///
/// Uses no privacy budget; it is how held-out data is mapped into the space of a
/// release.
pub fn apply_released_mean(x: &DMatrix<f64>, mu_dp: &DVector<f64>) -> Result<DMatrix<f64>> {
    let normalized = sample_normalize(x)?;
    let mut out = normalized;
    for mut col in out.column_iter_mut() {
        col -= mu_dp;
        let norm = col.norm();
        if norm >= DEGENERATE_NORM {
            col /= norm;
        }
    }
    Ok(out)
}
