//! Utility metrics for releases: clustering quality, regression error,
//! Gaussianity of projections, and a couple of small reference learners.
//!
//! Inputs are `d × n` matrices with one sample per column.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Samples needed before the Gaussianity diagnostic is meaningful.
pub const DFM_MIN_SAMPLES: usize = 30;

/// JSON shape shared by every metric the CLI prints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    pub params: serde_json::Value,
}

impl EvalReport {
    pub fn new(metric: &str, value: f64, params: serde_json::Value) -> Self {
        Self {
            metric: metric.to_string(),
            value,
            params,
        }
    }
}

fn sq_dist(a: nalgebra::DVectorView<f64>, b: nalgebra::DVectorView<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Mean silhouette coefficient under Euclidean distance.
///
/// Members of singleton clusters score 0. Needs at least two distinct
/// clusters and at most `n − 1`.
pub fn silhouette(x: &DMatrix<f64>, labels: &[usize]) -> Result<f64> {
    let n = x.ncols();
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: labels.len(),
        });
    }
    let k = labels.iter().copied().max().map_or(0, |v| v + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let clusters = sizes.iter().filter(|&&s| s > 0).count();
    if clusters < 2 || clusters >= n {
        return Err(Error::param(
            "labels",
            format!("silhouette needs 2..=n-1 clusters, got {clusters} for n={n}"),
        ));
    }

    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        let xi = x.column(i);
        for j in 0..n {
            if j != i {
                sums[labels[j]] += sq_dist(xi, x.column(j)).sqrt();
            }
        }
        let own = labels[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone)]
pub struct KMeans {
    pub centroids: DMatrix<f64>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroid after each iteration.
    pub objective: Vec<f64>,
}

/// Lloyd's algorithm seeded with `k` distinct samples.
pub fn kmeans<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    k: usize,
    max_iter: usize,
    rng: &mut R,
) -> Result<KMeans> {
    let n = x.ncols();
    if k == 0 || k > n {
        return Err(Error::param(
            "k",
            format!("need 1 <= k <= n = {n}, got {k}"),
        ));
    }
    let init = sample(rng, n, k);
    let mut centroids = DMatrix::from_columns(
        &init
            .iter()
            .map(|j| x.column(j).into_owned())
            .collect::<Vec<_>>(),
    );
    let mut assignments = vec![usize::MAX; n];
    let mut objective = Vec::new();
    for _ in 0..max_iter.max(1) {
        let mut changed = false;
        let mut obj = 0.0;
        for (j, col) in x.column_iter().enumerate() {
            let (best, d) = (0..k)
                .map(|c| (c, sq_dist(col, centroids.column(c))))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("k >= 1");
            if assignments[j] != best {
                assignments[j] = best;
                changed = true;
            }
            obj += d;
        }
        objective.push(obj);
        if !changed {
            break;
        }
        let mut sums = DMatrix::<f64>::zeros(x.nrows(), k);
        let mut counts = vec![0usize; k];
        for (j, col) in x.column_iter().enumerate() {
            let mut s = sums.column_mut(assignments[j]);
            s += col;
            counts[assignments[j]] += 1;
        }
        for (c, &count) in counts.iter().enumerate() {
            // Empty clusters keep their previous centroid.
            if count > 0 {
                centroids.set_column(c, &(sums.column(c) / count as f64));
            }
        }
    }
    Ok(KMeans {
        centroids,
        assignments,
        objective,
    })
}

/// Silhouette of k-means clusterings for each `k` in `ks`, plus the best `k`.
pub fn silhouette_sweep<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    ks: &[usize],
    max_iter: usize,
    rng: &mut R,
) -> Result<(Vec<(usize, f64)>, usize)> {
    if ks.is_empty() {
        return Err(Error::param("k", "empty sweep"));
    }
    let mut scores = Vec::with_capacity(ks.len());
    for &k in ks {
        let km = kmeans(x, k, max_iter, rng)?;
        // k-means can leave fewer than two non-empty clusters on tiny inputs.
        let s = silhouette(x, &km.assignments).unwrap_or(0.0);
        scores.push((k, s));
    }
    let best = scores
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|&(k, _)| k)
        .expect("non-empty");
    Ok((scores, best))
}

pub fn rmse(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::DimensionMismatch {
            expected: actual.len(),
            actual: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(Error::param("actual", "need at least one value"));
    }
    let sse: f64 = predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a) * (p - a))
        .sum();
    Ok((sse / actual.len() as f64).sqrt())
}

/// Asymptotic Kolmogorov p-value `P(√n·D > d·√n)` with the usual small-sample
/// correction `√n + 0.12 + 0.11/√n`.
pub fn kolmogorov_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample KS test of `samples` against an arbitrary CDF.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> Result<KsResult> {
    if samples.is_empty() {
        return Err(Error::param("samples", "need at least one sample"));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d = 0.0_f64;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_p_value(d, v.len()),
    })
}

/// KS test against `N(0, 1)`.
pub fn ks_standard_normal(samples: &[f64]) -> Result<KsResult> {
    let normal = Normal::new(0.0, 1.0).expect("valid parameters");
    ks_test(samples, |x| normal.cdf(x))
}

/// Per-coordinate Gaussianity of a projected sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfmDiagnostic {
    pub per_coordinate: Vec<f64>,
    pub max_ks: f64,
    pub mean_ks: f64,
    /// Standard deviation a coordinate of a random unit vector in `R^m` would
    /// have; only reported when `m` is known.
    pub expected_sigma: Option<f64>,
    /// True if some coordinate was constant (its KS distance is recorded as 0.5).
    pub degenerate: bool,
}

/// Standardizes each row of `x_tilde` and measures its KS distance to `N(0, 1)`.
pub fn dfm_diagnostic(x_tilde: &DMatrix<f64>, m: Option<usize>) -> Result<DfmDiagnostic> {
    let n = x_tilde.ncols();
    if n < DFM_MIN_SAMPLES {
        return Err(Error::param(
            "samples",
            format!("need at least {DFM_MIN_SAMPLES} samples, got {n}"),
        ));
    }
    if x_tilde.nrows() == 0 {
        return Err(Error::param("x_tilde", "no coordinates"));
    }
    let mut per_coordinate = Vec::with_capacity(x_tilde.nrows());
    let mut degenerate = false;
    for row in x_tilde.row_iter() {
        let mean = row.mean();
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        // Rounding in the mean can leave a constant row with a tiny variance.
        if var.is_nan() || var.sqrt() <= 1e-12 * mean.abs().max(f64::MIN_POSITIVE) {
            degenerate = true;
            per_coordinate.push(0.5);
            continue;
        }
        let sd = var.sqrt();
        let z: Vec<f64> = row.iter().map(|v| (v - mean) / sd).collect();
        per_coordinate.push(ks_standard_normal(&z)?.statistic);
    }
    let max_ks = per_coordinate.iter().copied().fold(0.0, f64::max);
    let mean_ks = per_coordinate.iter().sum::<f64>() / per_coordinate.len() as f64;
    Ok(DfmDiagnostic {
        per_coordinate,
        max_ks,
        mean_ks,
        expected_sigma: m.map(|m| 1.0 / (m as f64).sqrt()),
        degenerate,
    })
}

/// Ordinary least squares with an intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub intercept: f64,
    pub weights: DVector<f64>,
}

impl LinearModel {
    pub fn fit(x: &DMatrix<f64>, y: &[f64]) -> Result<Self> {
        let (d, n) = x.shape();
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: y.len(),
            });
        }
        if n == 0 {
            return Err(Error::param("x", "need at least one sample"));
        }
        let design = DMatrix::from_fn(n, d + 1, |i, j| if j == 0 { 1.0 } else { x[(j - 1, i)] });
        let target = DVector::from_column_slice(y);
        let beta = design
            .svd(true, true)
            .solve(&target, 1e-12)
            .map_err(|e| Error::Numeric(format!("least squares failed: {e}")))?;
        Ok(Self {
            intercept: beta[0],
            weights: beta.rows(1, d).into_owned(),
        })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.nrows() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                actual: x.nrows(),
            });
        }
        Ok(x.tr_mul(&self.weights)
            .iter()
            .map(|v| v + self.intercept)
            .collect())
    }
}

/// Assigns each sample to the class with the closest mean.
#[derive(Debug, Clone)]
pub struct NearestMean {
    pub classes: Vec<String>,
    pub means: DMatrix<f64>,
}

impl NearestMean {
    pub fn fit(x: &DMatrix<f64>, labels: &[String]) -> Result<Self> {
        if labels.len() != x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                actual: labels.len(),
            });
        }
        let mut classes: Vec<String> = Vec::new();
        let mut sums: Vec<DVector<f64>> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for (col, label) in x.column_iter().zip(labels) {
            let idx = match classes.iter().position(|c| c == label) {
                Some(i) => i,
                None => {
                    classes.push(label.clone());
                    sums.push(DVector::zeros(x.nrows()));
                    counts.push(0);
                    classes.len() - 1
                }
            };
            sums[idx] += col;
            counts[idx] += 1;
        }
        if classes.is_empty() {
            return Err(Error::param("labels", "need at least one sample"));
        }
        let cols: Vec<DVector<f64>> = sums
            .into_iter()
            .zip(&counts)
            .map(|(s, &c)| s / c as f64)
            .collect();
        Ok(Self {
            classes,
            means: DMatrix::from_columns(&cols),
        })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<String>> {
        if x.nrows() != self.means.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.means.nrows(),
                actual: x.nrows(),
            });
        }
        Ok(x.column_iter()
            .map(|col| {
                let best = (0..self.classes.len())
                    .min_by(|&a, &b| {
                        sq_dist(col, self.means.column(a))
                            .total_cmp(&sq_dist(col, self.means.column(b)))
                    })
                    .expect("at least one class");
                self.classes[best].clone()
            })
            .collect())
    }
}

pub fn accuracy(predicted: &[String], actual: &[String]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::DimensionMismatch {
            expected: actual.len(),
            actual: predicted.len(),
        });
    }
    if actual.is_empty() {
        return Err(Error::param("actual", "need at least one label"));
    }
    let hits = predicted.iter().zip(actual).filter(|(p, a)| p == a).count();
    Ok(hits as f64 / actual.len() as f64)
}
