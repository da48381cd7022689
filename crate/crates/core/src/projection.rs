//! Random orthonormal (RON) projections.

use log::warn;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distribution of the square matrix whose QR factor supplies the basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceLaw {
    /// Entries uniform on `[0, 1)`.
    #[default]
    Uniform,
    /// Standard normal entries with the signs of `R`'s diagonal folded into
    /// `Q`, which makes the basis Haar distributed.
    Gaussian,
}

const MAX_QR_ATTEMPTS: usize = 8;
const RANK_TOL: f64 = 1e-10;

/// An `m × p` matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct RonProjection {
    basis: DMatrix<f64>,
    pub law: SourceLaw,
    pub seed: Option<u64>,
}

impl RonProjection {
    /// Wraps an existing basis after checking `WᵀW = I`.
    pub fn from_basis(basis: DMatrix<f64>) -> Result<Self> {
        let (m, p) = basis.shape();
        if p == 0 || p >= m {
            return Err(Error::param(
                "p",
                format!("need 1 <= p < m, got p={p}, m={m}"),
            ));
        }
        let proj = Self {
            basis,
            law: SourceLaw::Uniform,
            seed: None,
        };
        let dev = proj.orthonormality_error();
        if dev > 1e-8 {
            return Err(Error::Numeric(format!(
                "basis columns are not orthonormal (max deviation {dev:e})"
            )));
        }
        Ok(proj)
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn m(&self) -> usize {
        self.basis.nrows()
    }

    pub fn p(&self) -> usize {
        self.basis.ncols()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// `max |WᵀW − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let gram = self.basis.transpose() * &self.basis;
        let p = gram.nrows();
        let mut worst = 0.0_f64;
        for i in 0..p {
            for j in 0..p {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - target).abs());
            }
        }
        worst
    }

    /// `X̃ = WᵀX̄`, sample by sample.
    pub fn project(&self, x_bar: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x_bar.nrows() != self.m() {
            return Err(Error::DimensionMismatch {
                expected: self.m(),
                actual: x_bar.nrows(),
            });
        }
        Ok(self.basis.tr_mul(x_bar))
    }

    /// Embeds projected samples back into `R^m`: `W·X̃`.
    pub fn reconstruct(&self, x_tilde: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x_tilde.nrows() != self.p() {
            return Err(Error::DimensionMismatch {
                expected: self.p(),
                actual: x_tilde.nrows(),
            });
        }
        Ok(&self.basis * x_tilde)
    }
}

/// Builds a RON projection from the QR factorization of an `m × m` random
/// matrix. Consumes no privacy budget: the basis is independent of the data.
pub fn generate_ron<R: Rng + ?Sized>(m: usize, p: usize, rng: &mut R) -> Result<RonProjection> {
    generate_ron_with_law(m, p, SourceLaw::Uniform, rng)
}

pub fn generate_ron_with_law<R: Rng + ?Sized>(
    m: usize,
    p: usize,
    law: SourceLaw,
    rng: &mut R,
) -> Result<RonProjection> {
    if p == 0 || p >= m {
        return Err(Error::param(
            "p",
            format!("need 1 <= p < m, got p={p}, m={m}"),
        ));
    }
    for attempt in 0..MAX_QR_ATTEMPTS {
        let a = match law {
            SourceLaw::Uniform => DMatrix::from_fn(m, m, |_, _| rng.random::<f64>()),
            SourceLaw::Gaussian => DMatrix::from_fn(m, m, |_, _| rng.sample(StandardNormal)),
        };
        let qr = a.qr();
        let r = qr.r();
        let scale = r.diagonal().amax().max(f64::MIN_POSITIVE);
        if r.diagonal().iter().any(|d| d.abs() <= RANK_TOL * scale) {
            warn!("random matrix was numerically rank deficient (attempt {attempt}), redrawing");
            continue;
        }
        let mut q = qr.q();
        if law == SourceLaw::Gaussian {
            for (j, mut col) in q.column_iter_mut().enumerate() {
                if r[(j, j)] < 0.0 {
                    col.neg_mut();
                }
            }
        }
        let basis = q.columns(0, p).into_owned();
        return Ok(RonProjection {
            basis,
            law,
            seed: None,
        });
    }
    Err(Error::Numeric(format!(
        "QR factorization failed {MAX_QR_ATTEMPTS} times on random {m}x{m} matrices"
    )))
}

/// Largest projected dimension for which low-dimensional projections of
/// well-spread data are expected to look Gaussian:
/// `floor(2·log₁₀ m / log₁₀ log₁₀ m)`, clamped to at least 1.
///
/// For `m ≤ 10` the inner logarithm is non-positive and the bound is
/// meaningless; the clamp then returns 1.
pub fn dfm_dimension_bound(m: usize) -> Result<usize> {
    if m < 3 {
        return Err(Error::param("m", format!("need m >= 3, got {m}")));
    }
    let lm = (m as f64).log10();
    let llm = lm.log10();
    if llm <= 0.0 {
        warn!("dimension guidance is undefined for m={m}; falling back to p=1");
        return Ok(1);
    }
    let bound = (2.0 * lm / llm).floor();
    Ok((bound as usize).max(1))
}

/// Default projected dimension: the Gaussianity bound, capped at `m − 1`.
pub fn default_dimension(m: usize) -> Result<usize> {
    if m < 2 {
        return Err(Error::param("m", "need at least two features to project"));
    }
    if m < 3 {
        return Ok(1);
    }
    Ok(dfm_dimension_bound(m)?.min(m - 1))
}
