//! Sensitivities, Laplace noise and privacy-budget accounting.
//!
//! Every sensitivity here is an L1 bound under the bounded neighboring notion:
//! two datasets of the same public size `n` that differ in the values of a
//! single record.
//!
//! Noise is drawn by inverse-CDF transform of a uniform variate from a caller
//! supplied random stream. That makes every release bit-reproducible under a
//! fixed seed, which is what the test-suite relies on. A seeded or otherwise
//! predictable stream voids the privacy guarantee, so production releases must
//! draw their seed from an unpredictable source. The floating-point Laplace
//! sampler is also subject to the usual least-significant-bit side channels;
//! this crate does not mitigate them.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Query families with a closed-form L1 sensitivity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Query {
    Mean,
    Covariance,
    AugmentedCovariance,
    MleCovariance,
}

impl fmt::Display for Query {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Query::Mean => "mean",
            Query::Covariance => "covariance",
            Query::AugmentedCovariance => "augmented_covariance",
            Query::MleCovariance => "mle_covariance",
        };
        f.write_str(s)
    }
}

fn check_counts(dim: usize, n: usize) -> Result<()> {
    if dim == 0 {
        return Err(Error::param("dimension", "must be at least 1"));
    }
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    Ok(())
}

/// Sensitivity of the sample mean of `n` unit-norm vectors in `R^m`: `2√m/n`.
pub fn mean_sensitivity(m: usize, n: usize) -> Result<f64> {
    check_counts(m, n)?;
    Ok(2.0 * (m as f64).sqrt() / n as f64)
}

/// Published closed form for the second-moment matrix `(1/n) X̃X̃ᵀ` of
/// projected unit-norm data in `R^p`: `2√p/n`.
///
/// This bounds the induced matrix 1-norm of the change. Per-entry Laplace noise
/// needs a bound on the sum of absolute entries, which a single record can push
/// past `2√p/n` once `p > 2` (for example `x̃ = 𝟙/√p` replaced by `e₁`). Noise
/// is calibrated with [`cov_sensitivity_entrywise`] unless
/// [`CovarianceBound::Published`] is requested.
pub fn cov_sensitivity(p: usize, n: usize) -> Result<f64> {
    check_counts(p, n)?;
    Ok(2.0 * (p as f64).sqrt() / n as f64)
}

/// Sum-of-absolute-entries sensitivity of `(1/n) X̃X̃ᵀ`: `√2·p/n`.
///
/// For `‖u‖, ‖v‖ ≤ 1`, `‖uuᵀ − vvᵀ‖_F² = ‖u‖⁴ + ‖v‖⁴ − 2(uᵀv)² ≤ 2`, and the
/// entry sum of a `p × p` matrix is at most `p` times its Frobenius norm.
pub fn cov_sensitivity_entrywise(p: usize, n: usize) -> Result<f64> {
    check_counts(p, n)?;
    Ok(std::f64::consts::SQRT_2 * p as f64 / n as f64)
}

fn check_label_bound(a: f64) -> Result<()> {
    if !(a.is_finite() && a > 0.0) {
        return Err(Error::param(
            "label_bound",
            format!("must be positive, got {a}"),
        ));
    }
    Ok(())
}

/// Published closed form for the label-augmented second-moment matrix with
/// labels in `[-a, a]`: `(2√p + 4a√p + a²)/n`. The feature block has the same
/// caveat as [`cov_sensitivity`].
pub fn aug_cov_sensitivity(p: usize, n: usize, a: f64) -> Result<f64> {
    check_counts(p, n)?;
    check_label_bound(a)?;
    let root_p = (p as f64).sqrt();
    Ok((2.0 * root_p + 4.0 * a * root_p + a * a) / n as f64)
}

/// Sum-of-absolute-entries sensitivity of the augmented matrix:
/// `(√2·p + 4a√p + a²)/n`.
pub fn aug_cov_sensitivity_entrywise(p: usize, n: usize, a: f64) -> Result<f64> {
    check_counts(p, n)?;
    check_label_bound(a)?;
    let root_p = (p as f64).sqrt();
    Ok((std::f64::consts::SQRT_2 * p as f64 + 4.0 * a * root_p + a * a) / n as f64)
}

/// Which closed form calibrates the covariance noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceBound {
    /// `√2·p/n` for the feature block; valid for per-entry noise.
    #[default]
    Entrywise,
    /// `2√p/n` for the feature block. Smaller for `p > 2` but not a bound on
    /// the entry sum, so the resulting release is not ε-DP in general. Kept for
    /// comparison with published results.
    Published,
}

impl fmt::Display for CovarianceBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CovarianceBound::Entrywise => "entrywise",
            CovarianceBound::Published => "published",
        })
    }
}

/// Sensitivity of the mean-subtracted (maximum-likelihood) covariance:
/// `(2√p + 2n√p)/n`.
///
/// Only exposed for comparison with [`cov_sensitivity`]; it is never used to
/// calibrate noise. The ratio to the biased estimator's sensitivity is `n + 1`.
pub fn mle_cov_sensitivity(p: usize, n: usize) -> Result<f64> {
    check_counts(p, n)?;
    let root_p = (p as f64).sqrt();
    let n_f = n as f64;
    Ok((2.0 * root_p + 2.0 * n_f * root_p) / n_f)
}

/// A sensitivity value tagged with the query and parameters that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivitySpec {
    pub query: Query,
    pub value: f64,
    /// `m` for the mean, `p` for the covariance queries.
    pub dim: usize,
    pub n: usize,
    pub label_bound: Option<f64>,
}

impl SensitivitySpec {
    pub fn mean(m: usize, n: usize) -> Result<Self> {
        Ok(Self {
            query: Query::Mean,
            value: mean_sensitivity(m, n)?,
            dim: m,
            n,
            label_bound: None,
        })
    }

    pub fn covariance(p: usize, n: usize, bound: CovarianceBound) -> Result<Self> {
        let value = match bound {
            CovarianceBound::Entrywise => cov_sensitivity_entrywise(p, n)?,
            CovarianceBound::Published => cov_sensitivity(p, n)?,
        };
        Ok(Self {
            query: Query::Covariance,
            value,
            dim: p,
            n,
            label_bound: None,
        })
    }

    pub fn augmented_covariance(
        p: usize,
        n: usize,
        a: f64,
        bound: CovarianceBound,
    ) -> Result<Self> {
        let value = match bound {
            CovarianceBound::Entrywise => aug_cov_sensitivity_entrywise(p, n, a)?,
            CovarianceBound::Published => aug_cov_sensitivity(p, n, a)?,
        };
        Ok(Self {
            query: Query::AugmentedCovariance,
            value,
            dim: p,
            n,
            label_bound: Some(a),
        })
    }

    pub fn mle_covariance(p: usize, n: usize) -> Result<Self> {
        Ok(Self {
            query: Query::MleCovariance,
            value: mle_cov_sensitivity(p, n)?,
            dim: p,
            n,
            label_bound: None,
        })
    }

    /// Laplace scale `b = S/ε` for this sensitivity.
    pub fn scale(&self, epsilon: f64) -> Result<f64> {
        laplace_scale(self.value, epsilon)
    }
}

pub fn check_epsilon(name: &'static str, epsilon: f64) -> Result<()> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::param(
            name,
            format!("must be positive, got {epsilon}"),
        ));
    }
    Ok(())
}

/// `b = sensitivity / epsilon`. An infinite epsilon yields a zero scale.
pub fn laplace_scale(sensitivity: f64, epsilon: f64) -> Result<f64> {
    check_epsilon("epsilon", epsilon)?;
    if !(sensitivity.is_finite() && sensitivity > 0.0) {
        return Err(Error::param(
            "sensitivity",
            format!("must be positive and finite, got {sensitivity}"),
        ));
    }
    Ok(sensitivity / epsilon)
}

/// Inverse Laplace CDF at `u ∈ (-0.5, 0.5)`: `-b·sign(u)·ln(1 - 2|u|)`.
pub fn laplace_inverse_cdf(u: f64, scale: f64) -> f64 {
    if u == 0.0 {
        return 0.0;
    }
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

pub fn laplace_cdf(x: f64, scale: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / scale).exp()
    } else {
        1.0 - 0.5 * (-x / scale).exp()
    }
}

/// One draw from `Lap(0, scale)`. A zero scale returns exactly zero without
/// consuming randomness.
pub fn sample_laplace<R: Rng + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    loop {
        // random::<f64>() is uniform on [0, 1); shift to [-0.5, 0.5) and reject the
        // endpoint, which maps to an infinite draw.
        let u = rng.random::<f64>() - 0.5;
        if u > -0.5 {
            return laplace_inverse_cdf(u, scale);
        }
    }
}

/// Adds i.i.d. `Lap(0, scale)` noise to every entry, in column-major order.
pub fn laplace_perturb<R: Rng + ?Sized>(
    value: &DMatrix<f64>,
    scale: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::param(
            "scale",
            format!("must be positive and finite, got {scale}"),
        ));
    }
    let mut out = value.clone();
    for v in out.iter_mut() {
        *v += sample_laplace(scale, rng);
    }
    Ok(out)
}

/// Privacy budget divided between the mean and covariance queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetSplit {
    pub total: f64,
    pub ratio: f64,
    pub mu: f64,
    pub sigma: f64,
}

pub const DEFAULT_MU_RATIO: f64 = 0.3;

/// Splits `epsilon_total` into `(ratio·ε, ε − ratio·ε)`.
///
/// The two parts always sum back to `epsilon_total` exactly in floating point.
pub fn split_budget(epsilon_total: f64, mu_ratio: f64) -> Result<BudgetSplit> {
    check_epsilon("epsilon", epsilon_total)?;
    if !epsilon_total.is_finite() {
        return Err(Error::param("epsilon", "must be finite"));
    }
    if !(mu_ratio > 0.0 && mu_ratio < 1.0) {
        return Err(Error::param(
            "mu_ratio",
            format!("must lie in (0, 1), got {mu_ratio}"),
        ));
    }
    // Rounding (including ties against an odd last bit of ε) can leave the
    // naive split one ulp off; search the neighbouring floats for an exact pair.
    let base = mu_ratio * epsilon_total;
    let mut mu_candidates = vec![base];
    let (mut up, mut down) = (base, base);
    for _ in 0..4 {
        up = up.next_up();
        down = down.next_down();
        mu_candidates.push(up);
        mu_candidates.push(down);
    }
    let exact = mu_candidates.into_iter().find_map(|mu| {
        let sigma = epsilon_total - mu;
        [sigma, sigma.next_up(), sigma.next_down()]
            .into_iter()
            .find(|&s| s > 0.0 && mu + s == epsilon_total)
            .map(|s| (mu, s))
    });
    let Some((mu, sigma)) = exact else {
        return Err(Error::Numeric(format!(
            "cannot split {epsilon_total} exactly at ratio {mu_ratio}"
        )));
    };
    Ok(BudgetSplit {
        total: epsilon_total,
        ratio: mu_ratio,
        mu,
        sigma,
    })
}

/// How a ledger entry composes with the others.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Composition {
    Serial,
    /// Spends on disjoint partitions of the data. Entries sharing a partition
    /// compose serially; partitions of the same group compose in parallel.
    Parallel {
        group: String,
        partition: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub query: Query,
    pub sensitivity: f64,
    pub epsilon: f64,
    pub scale: f64,
    pub composition: Composition,
}

/// Append-only record of privacy spends.
///
/// Single writer: concurrent producers must serialize their appends.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BudgetLedger {
    entries: Vec<LedgerEntry>,
}

impl BudgetLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn record(
        &mut self,
        query: Query,
        sensitivity: f64,
        epsilon: f64,
        composition: Composition,
    ) -> Result<()> {
        check_epsilon("epsilon", epsilon)?;
        let scale = if epsilon.is_infinite() {
            0.0
        } else {
            sensitivity / epsilon
        };
        self.entries.push(LedgerEntry {
            query,
            sensitivity,
            epsilon,
            scale,
            composition,
        });
        Ok(())
    }

    pub fn record_serial(&mut self, spec: &SensitivitySpec, epsilon: f64) -> Result<()> {
        self.record(spec.query, spec.value, epsilon, Composition::Serial)
    }

    pub fn record_parallel(
        &mut self,
        spec: &SensitivitySpec,
        epsilon: f64,
        group: &str,
        partition: &str,
    ) -> Result<()> {
        self.record(
            spec.query,
            spec.value,
            epsilon,
            Composition::Parallel {
                group: group.to_string(),
                partition: partition.to_string(),
            },
        )
    }

    /// Appends every entry of `other`.
    pub fn extend(&mut self, other: BudgetLedger) {
        self.entries.extend(other.entries);
    }

    /// Per-group cost: the largest serial total among the group's partitions.
    pub fn group_totals(&self) -> BTreeMap<String, f64> {
        let mut partitions: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
        for e in &self.entries {
            if let Composition::Parallel { group, partition } = &e.composition {
                *partitions
                    .entry(group.as_str())
                    .or_default()
                    .entry(partition.as_str())
                    .or_insert(0.0) += e.epsilon;
            }
        }
        partitions
            .into_iter()
            .map(|(g, parts)| {
                let worst = parts.values().copied().fold(0.0_f64, f64::max);
                (g.to_string(), worst)
            })
            .collect()
    }

    pub fn serial_total(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.composition == Composition::Serial)
            .map(|e| e.epsilon)
            .sum()
    }

    /// Total ε: serial entries add, each parallel group counts once.
    pub fn total(&self) -> f64 {
        let mut total = self.serial_total();
        for (_, g) in self.group_totals() {
            total += g;
        }
        total
    }
}

impl fmt::Display for BudgetLedger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<22} {:>14} {:>10} {:>14}  composition",
            "query", "sensitivity", "epsilon", "laplace scale"
        )?;
        for e in &self.entries {
            let comp = match &e.composition {
                Composition::Serial => "serial".to_string(),
                Composition::Parallel { group, partition } => {
                    format!("parallel[{group}/{partition}]")
                }
            };
            writeln!(
                f,
                "{:<22} {:>14.6e} {:>10.4} {:>14.6e}  {}",
                e.query.to_string(),
                e.sensitivity,
                e.epsilon,
                e.scale,
                comp
            )?;
        }
        write!(f, "total epsilon: {}", self.total())
    }
}
