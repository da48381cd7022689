//! Gaussian generative models fitted to projected data, and the three release
//! pipelines built from them.
//!
//! Every pipeline follows the same shape: preprocess with a DP mean, project
//! onto a random orthonormal basis, estimate an uncentered second-moment matrix,
//! perturb it with Laplace noise, repair it onto the PSD cone and sample.
//! Everything after the two noisy queries is post-processing.

use std::fmt;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Labels};
use crate::error::{Error, Result};
use crate::mechanism::{
    check_epsilon, sample_laplace, BudgetLedger, CovarianceBound, SensitivitySpec,
};
use crate::preprocess::{self, PreprocessedDataset};
use crate::projection::{self, RonProjection, SourceLaw};

/// Parallel-composition group used for per-class spends.
pub const CLASS_GROUP: &str = "classes";

/// Relative tolerance for treating a slightly negative eigenvalue as zero.
const PSD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Unsupervised,
    Supervised,
    Gmm,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Unsupervised => "unsupervised",
            Mode::Supervised => "supervised",
            Mode::Gmm => "gmm",
        })
    }
}

/// Uncentered second moment with an explicit divisor: `(1/n) Σ xᵢxᵢᵀ`.
///
/// Accumulates the upper triangle and mirrors it, so the result is exactly
/// symmetric and entry `(i, j)` depends only on rows `i` and `j`.
fn second_moment(x: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let p = x.nrows();
    let mut acc = DMatrix::<f64>::zeros(p, p);
    for col in x.column_iter() {
        for j in 0..p {
            let xj = col[j];
            if xj == 0.0 {
                continue;
            }
            for i in 0..=j {
                acc[(i, j)] += col[i] * xj;
            }
        }
    }
    let inv = n as f64;
    for j in 0..p {
        for i in 0..=j {
            let v = acc[(i, j)] / inv;
            acc[(i, j)] = v;
            acc[(j, i)] = v;
        }
    }
    acc
}

/// `Σ = (1/n) X̃X̃ᵀ` over the columns of `x_tilde`. No mean is subtracted.
pub fn estimate_cov(x_tilde: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x_tilde.ncols() == 0 {
        return Err(Error::param("x_tilde", "need at least one sample"));
    }
    Ok(second_moment(x_tilde, x_tilde.ncols()))
}

fn stack_labels(x_tilde: &DMatrix<f64>, y: &[f64], bound: Option<f64>) -> Result<DMatrix<f64>> {
    if y.len() != x_tilde.ncols() {
        return Err(Error::DimensionMismatch {
            expected: x_tilde.ncols(),
            actual: y.len(),
        });
    }
    if let Some(a) = bound {
        if let Some((index, &value)) = y.iter().enumerate().find(|(_, v)| v.abs() > a) {
            return Err(Error::LabelOutOfBound {
                index,
                value,
                bound: a,
            });
        }
    }
    let p = x_tilde.nrows();
    let mut xa = x_tilde.clone().insert_row(p, 0.0);
    for (j, &v) in y.iter().enumerate() {
        xa[(p, j)] = v;
    }
    Ok(xa)
}

/// Label-augmented second moment:
/// `Σₐ = (1/n) [X̃X̃ᵀ, X̃y; yᵀX̃ᵀ, yᵀy]`.
///
/// With `bound = Some(a)`, labels outside `[-a, a]` are rejected; clip first.
pub fn estimate_aug_cov(
    x_tilde: &DMatrix<f64>,
    y: &[f64],
    bound: Option<f64>,
) -> Result<DMatrix<f64>> {
    if x_tilde.ncols() == 0 {
        return Err(Error::param("x_tilde", "need at least one sample"));
    }
    let xa = stack_labels(x_tilde, y, bound)?;
    Ok(second_moment(&xa, xa.ncols()))
}

/// Adds i.i.d. `Lap(sensitivity/ε_Σ)` noise to every entry of `cov`, then
/// returns `(M + Mᵀ)/2`. An infinite `epsilon_sigma` returns `cov` unchanged.
pub fn dp_perturb_cov<R: Rng + ?Sized>(
    cov: &DMatrix<f64>,
    sensitivity: f64,
    epsilon_sigma: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    check_epsilon("epsilon_sigma", epsilon_sigma)?;
    if !cov.is_square() {
        return Err(Error::DimensionMismatch {
            expected: cov.nrows(),
            actual: cov.ncols(),
        });
    }
    if epsilon_sigma.is_infinite() {
        return Ok(cov.clone());
    }
    let scale = crate::mechanism::laplace_scale(sensitivity, epsilon_sigma)?;
    let mut noisy = cov.clone();
    for v in noisy.iter_mut() {
        *v += sample_laplace(scale, rng);
    }
    let p = noisy.nrows();
    for j in 0..p {
        for i in 0..j {
            let v = 0.5 * (noisy[(i, j)] + noisy[(j, i)]);
            noisy[(i, j)] = v;
            noisy[(j, i)] = v;
        }
    }
    Ok(noisy)
}

/// Result of [`psd_repair`].
#[derive(Debug, Clone)]
pub struct PsdRepair {
    pub matrix: DMatrix<f64>,
    pub applied: bool,
    pub min_eigenvalue_before: f64,
}

fn mirror_upper(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for j in 0..p {
        for i in 0..j {
            m[(j, i)] = m[(i, j)];
        }
    }
}

/// Clips eigenvalues below `floor` up to `floor` and reassembles the matrix.
/// Inputs whose spectrum already clears the floor are returned unchanged.
pub fn psd_repair(cov: &DMatrix<f64>, floor: f64) -> Result<PsdRepair> {
    if !(floor.is_finite() && floor >= 0.0) {
        return Err(Error::param(
            "psd_floor",
            format!("must be >= 0, got {floor}"),
        ));
    }
    if !cov.is_square() {
        return Err(Error::DimensionMismatch {
            expected: cov.nrows(),
            actual: cov.ncols(),
        });
    }
    if cov.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("covariance has non-finite entries".into()));
    }
    let eig = cov.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min >= floor {
        return Ok(PsdRepair {
            matrix: cov.clone(),
            applied: false,
            min_eigenvalue_before: min,
        });
    }
    let clipped = eig.eigenvalues.map(|l| l.max(floor));
    let v = &eig.eigenvectors;
    let mut out = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    mirror_upper(&mut out);
    Ok(PsdRepair {
        matrix: out,
        applied: true,
        min_eigenvalue_before: min,
    })
}

/// `N(mean, covariance)` with a cached square-root factor.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub psd_floor_applied: bool,
    pub eigen_floor: f64,
    factor: DMatrix<f64>,
}

impl GaussianModel {
    /// Fails if `covariance` is not symmetric PSD (up to a relative 1e-10).
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let p = mean.len();
        if covariance.shape() != (p, p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                actual: covariance.nrows(),
            });
        }
        let eig = covariance.clone().symmetric_eigen();
        let max_abs = eig.eigenvalues.amax().max(1.0);
        let min = eig.eigenvalues.min();
        if min < -PSD_TOL * max_abs {
            return Err(Error::NotPsd {
                min_eigenvalue: min,
            });
        }
        let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
        Ok(Self {
            mean,
            covariance,
            psd_floor_applied: false,
            eigen_floor: 0.0,
            factor,
        })
    }

    /// Repairs `covariance` with [`psd_repair`] before building the model.
    pub fn repaired(mean: DVector<f64>, covariance: &DMatrix<f64>, floor: f64) -> Result<Self> {
        let fixed = psd_repair(covariance, floor)?;
        let mut model = Self::new(mean, fixed.matrix)?;
        model.psd_floor_applied = fixed.applied;
        model.eigen_floor = floor;
        Ok(model)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// `dim × n` matrix of i.i.d. draws `mean + L·z`.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DMatrix<f64> {
        let p = self.dim();
        let mut z = DMatrix::<f64>::zeros(p, n);
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let mut out = &self.factor * z;
        for mut col in out.column_iter_mut() {
            col += &self.mean;
        }
        out
    }
}

pub fn sample_gaussian<R: Rng + ?Sized>(
    model: &GaussianModel,
    n_synth: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    model.sample(n_synth, rng)
}

/// Knobs shared by all pipelines.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    /// Projected dimension; defaults to the Gaussianity bound capped at `m − 1`.
    pub p: Option<usize>,
    pub epsilon_mu: f64,
    pub epsilon_sigma: f64,
    /// Total synthetic samples. Defaults to `n`; in mixture mode it is split
    /// across classes in proportion to their sizes.
    pub n_synth: Option<usize>,
    /// Explicit per-class counts for mixture mode, in class order.
    pub per_class_n_synth: Option<Vec<usize>>,
    pub psd_floor: f64,
    pub law: SourceLaw,
    /// Mixture mode only: one basis for every class instead of one per class.
    pub shared_projection: bool,
    pub covariance_bound: CovarianceBound,
}

impl SynthConfig {
    pub fn new(epsilon_mu: f64, epsilon_sigma: f64) -> Self {
        Self {
            p: None,
            epsilon_mu,
            epsilon_sigma,
            n_synth: None,
            per_class_n_synth: None,
            psd_floor: 0.0,
            law: SourceLaw::Uniform,
            shared_projection: false,
            covariance_bound: CovarianceBound::Entrywise,
        }
    }

    pub fn with_dim(mut self, p: usize) -> Self {
        self.p = Some(p);
        self
    }

    pub fn with_samples(mut self, n_synth: usize) -> Self {
        self.n_synth = Some(n_synth);
        self
    }

    /// Resolves and validates the projected dimension for `m` features.
    pub fn resolve_dim(&self, m: usize) -> Result<usize> {
        let p = match self.p {
            Some(p) => p,
            None => projection::default_dimension(m)?,
        };
        if p == 0 || p >= m {
            return Err(Error::param(
                "dim",
                format!("need 1 <= p <= m - 1 = {}, got {p}", m.saturating_sub(1)),
            ));
        }
        Ok(p)
    }

    fn validate(&self) -> Result<()> {
        check_epsilon("epsilon_mu", self.epsilon_mu)?;
        check_epsilon("epsilon_sigma", self.epsilon_sigma)?;
        if !(self.psd_floor.is_finite() && self.psd_floor >= 0.0) {
            return Err(Error::param("psd_floor", "must be a finite value >= 0"));
        }
        if self.n_synth == Some(0) {
            return Err(Error::param("samples", "must be at least 1"));
        }
        Ok(())
    }
}

/// One Gaussian mode of a release together with what produced it.
#[derive(Debug, Clone)]
pub struct Component {
    /// Class name in mixture mode.
    pub class: Option<String>,
    /// Real samples behind this component (public under bounded DP).
    pub n: usize,
    pub projection: RonProjection,
    pub mu_dp: DVector<f64>,
    pub model: GaussianModel,
    pub dropped: usize,
    /// Columns of the synthetic feature matrix drawn from this component.
    pub columns: Range<usize>,
}

/// A synthetic dataset with its models and privacy accounting.
#[derive(Debug, Clone)]
pub struct Release {
    pub mode: Mode,
    pub synthetic: Dataset,
    pub components: Vec<Component>,
    pub ledger: BudgetLedger,
    pub m: usize,
    pub p: usize,
    pub n: usize,
    pub epsilon_mu: f64,
    pub epsilon_sigma: f64,
    pub covariance_bound: CovarianceBound,
}

impl Release {
    pub fn n_synth(&self) -> usize {
        self.synthetic.n()
    }

    pub fn psd_repair_applied(&self) -> bool {
        self.components.iter().any(|c| c.model.psd_floor_applied)
    }

    pub fn dropped(&self) -> usize {
        self.components.iter().map(|c| c.dropped).sum()
    }

    /// Synthetic samples embedded back into `R^m` through each component's
    /// basis (`W·x̃`). Labels are not part of the result.
    pub fn reconstruct(&self) -> Result<DMatrix<f64>> {
        let x = self.synthetic.features();
        let mut out = DMatrix::<f64>::zeros(self.m, x.ncols());
        for c in &self.components {
            let block = x.columns(c.columns.start, c.columns.len()).into_owned();
            let rec = c.projection.reconstruct(&block)?;
            out.columns_mut(c.columns.start, c.columns.len())
                .copy_from(&rec);
        }
        Ok(out)
    }

    /// Maps real samples (`m × k`) into the feature space of component `idx`
    /// using only released quantities.
    ///
    /// Single-model releases apply normalize, center on the released mean,
    /// re-normalize and project. Mixture components are centered on their own
    /// class mean during fitting but emitted around `Wᵀμ_c`, so samples are only
    /// normalized and projected.
    pub fn feature_map(&self, x: &DMatrix<f64>, idx: usize) -> Result<DMatrix<f64>> {
        let c = self
            .components
            .get(idx)
            .ok_or_else(|| Error::param("component", format!("no component {idx}")))?;
        let mapped = match self.mode {
            Mode::Gmm => preprocess::sample_normalize(x)?,
            _ => preprocess::apply_released_mean(x, &c.mu_dp)?,
        };
        c.projection.project(&mapped)
    }
}

fn check_features(data: &Dataset) -> Result<()> {
    if data.m() < 2 {
        return Err(Error::param("features", "need at least two features"));
    }
    Ok(())
}

/// Removes dropped indices from the label vector so it lines up with `x_bar`.
fn kept_labels(y: &[f64], dropped: &[usize]) -> Vec<f64> {
    if dropped.is_empty() {
        return y.to_vec();
    }
    let mut skip = dropped.iter().peekable();
    y.iter()
        .enumerate()
        .filter_map(|(i, &v)| {
            if skip.peek() == Some(&&i) {
                skip.next();
                None
            } else {
                Some(v)
            }
        })
        .collect()
}

fn feature_dataset(x: DMatrix<f64>) -> Result<Dataset> {
    Dataset::new(x)
}

struct Fitted {
    pre: PreprocessedDataset,
    projection: RonProjection,
    x_tilde: DMatrix<f64>,
}

fn preprocess_and_project<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    p: usize,
    cfg: &SynthConfig,
    basis: Option<&RonProjection>,
    rng: &mut R,
) -> Result<Fitted> {
    let pre = preprocess::preprocess(x, cfg.epsilon_mu, rng)?;
    let projection = match basis {
        Some(w) => w.clone(),
        None => projection::generate_ron_with_law(x.nrows(), p, cfg.law, rng)?,
    };
    let x_tilde = projection.project(&pre.x_bar)?;
    Ok(Fitted {
        pre,
        projection,
        x_tilde,
    })
}

/// Single Gaussian over the projected features, zero mean.
pub fn synth_unsupervised<R: Rng + ?Sized>(
    data: &Dataset,
    cfg: &SynthConfig,
    rng: &mut R,
) -> Result<Release> {
    cfg.validate()?;
    check_features(data)?;
    let (m, n) = (data.m(), data.n());
    let p = cfg.resolve_dim(m)?;
    let n_synth = cfg.n_synth.unwrap_or(n);

    let fit = preprocess_and_project(data.features(), p, cfg, None, rng)?;
    // Dropped samples contribute zero; the divisor stays the public n.
    let cov = second_moment(&fit.x_tilde, n);
    let spec = SensitivitySpec::covariance(p, n, cfg.covariance_bound)?;
    let noisy = dp_perturb_cov(&cov, spec.value, cfg.epsilon_sigma, rng)?;

    let mut ledger = BudgetLedger::new();
    ledger.record_serial(&fit.pre.mean_sensitivity, cfg.epsilon_mu)?;
    ledger.record_serial(&spec, cfg.epsilon_sigma)?;

    let model = GaussianModel::repaired(DVector::zeros(p), &noisy, cfg.psd_floor)?;
    let samples = model.sample(n_synth, rng);
    Ok(Release {
        mode: Mode::Unsupervised,
        synthetic: feature_dataset(samples)?,
        components: vec![Component {
            class: None,
            n,
            projection: fit.projection,
            mu_dp: fit.pre.mu_dp,
            model,
            dropped: fit.pre.dropped.len(),
            columns: 0..n_synth,
        }],
        ledger,
        m,
        p,
        n,
        epsilon_mu: cfg.epsilon_mu,
        epsilon_sigma: cfg.epsilon_sigma,
        covariance_bound: cfg.covariance_bound,
    })
}

/// Joint Gaussian over projected features and the (unprojected) real label.
pub fn synth_supervised<R: Rng + ?Sized>(
    data: &Dataset,
    cfg: &SynthConfig,
    rng: &mut R,
) -> Result<Release> {
    cfg.validate()?;
    check_features(data)?;
    let y = data
        .real_labels()
        .ok_or_else(|| Error::MissingLabels("supervised mode needs real-valued labels".into()))?;
    let a = data
        .label_bound()
        .ok_or_else(|| Error::MissingLabels("supervised mode needs a label bound".into()))?;
    let (m, n) = (data.m(), data.n());
    let p = cfg.resolve_dim(m)?;
    let n_synth = cfg.n_synth.unwrap_or(n);
    if let Some((index, &value)) = y.iter().enumerate().find(|(_, v)| v.abs() > a) {
        return Err(Error::LabelOutOfBound {
            index,
            value,
            bound: a,
        });
    }

    let fit = preprocess_and_project(data.features(), p, cfg, None, rng)?;
    let y_kept = kept_labels(y, &fit.pre.dropped);
    let xa = stack_labels(&fit.x_tilde, &y_kept, Some(a))?;
    let cov = second_moment(&xa, n);
    let spec = SensitivitySpec::augmented_covariance(p, n, a, cfg.covariance_bound)?;
    let noisy = dp_perturb_cov(&cov, spec.value, cfg.epsilon_sigma, rng)?;

    let mut ledger = BudgetLedger::new();
    ledger.record_serial(&fit.pre.mean_sensitivity, cfg.epsilon_mu)?;
    ledger.record_serial(&spec, cfg.epsilon_sigma)?;

    let model = GaussianModel::repaired(DVector::zeros(p + 1), &noisy, cfg.psd_floor)?;
    let joint = model.sample(n_synth, rng);
    let features = joint.rows(0, p).into_owned();
    let labels: Vec<f64> = joint.row(p).iter().copied().collect();
    let synthetic = feature_dataset(features)?.with_labels(Labels::Real(labels))?;
    Ok(Release {
        mode: Mode::Supervised,
        synthetic,
        components: vec![Component {
            class: None,
            n,
            projection: fit.projection,
            mu_dp: fit.pre.mu_dp,
            model,
            dropped: fit.pre.dropped.len(),
            columns: 0..n_synth,
        }],
        ledger,
        m,
        p,
        n,
        epsilon_mu: cfg.epsilon_mu,
        epsilon_sigma: cfg.epsilon_sigma,
        covariance_bound: cfg.covariance_bound,
    })
}

/// Classes in order of first appearance, with the sample indices of each.
pub fn partition_classes(labels: &[String]) -> Vec<(String, Vec<usize>)> {
    let mut classes: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, c) in labels.iter().enumerate() {
        match classes.iter_mut().find(|(name, _)| name == c) {
            Some((_, idx)) => idx.push(i),
            None => classes.push((c.clone(), vec![i])),
        }
    }
    classes
}

/// Splits `total` across classes proportionally to `sizes` (largest remainder).
pub fn allocate_proportional(total: usize, sizes: &[usize]) -> Vec<usize> {
    let n: usize = sizes.iter().sum();
    if n == 0 {
        return vec![0; sizes.len()];
    }
    let mut counts: Vec<usize> = sizes.iter().map(|&s| total * s / n).collect();
    let mut rema: Vec<(usize, usize)> = sizes
        .iter()
        .enumerate()
        .map(|(i, &s)| (i, (total * s) % n))
        .collect();
    rema.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let assigned: usize = counts.iter().sum();
    for &(i, _) in rema.iter().take(total - assigned) {
        counts[i] += 1;
    }
    counts
}

/// One Gaussian per class, each centered at the projected DP class mean.
///
/// Classes are disjoint partitions, so their spends compose in parallel and
/// the release costs `ε_μ + ε_Σ` regardless of the number of classes. Class
/// sizes are treated as public.
pub fn synth_gmm<R: Rng + ?Sized>(
    data: &Dataset,
    cfg: &SynthConfig,
    rng: &mut R,
) -> Result<Release> {
    cfg.validate()?;
    check_features(data)?;
    let labels = data
        .class_labels()
        .ok_or_else(|| Error::MissingLabels("mixture mode needs categorical labels".into()))?;
    let (m, n) = (data.m(), data.n());
    let p = cfg.resolve_dim(m)?;
    let classes = partition_classes(labels);
    let sizes: Vec<usize> = classes.iter().map(|(_, idx)| idx.len()).collect();
    let counts = match (&cfg.per_class_n_synth, cfg.n_synth) {
        (Some(c), _) => {
            if c.len() != classes.len() {
                return Err(Error::DimensionMismatch {
                    expected: classes.len(),
                    actual: c.len(),
                });
            }
            c.clone()
        }
        (None, Some(total)) => allocate_proportional(total, &sizes),
        (None, None) => sizes.clone(),
    };

    let shared = if cfg.shared_projection {
        Some(projection::generate_ron_with_law(m, p, cfg.law, rng)?)
    } else {
        None
    };
    // Independent per-class streams, split up front.
    let seeds: Vec<u64> = classes.iter().map(|_| rng.random::<u64>()).collect();

    let x = data.features();
    let mut ledger = BudgetLedger::new();
    let mut components = Vec::with_capacity(classes.len());
    let mut blocks = Vec::with_capacity(classes.len());
    let mut out_labels = Vec::new();
    let mut start = 0;
    for (((class, idx), &count), &seed) in classes.iter().zip(&counts).zip(&seeds) {
        let mut class_rng = ChaCha20Rng::seed_from_u64(seed);
        let n_c = idx.len();
        let x_c = x.select_columns(idx.iter());
        let fit = preprocess_and_project(&x_c, p, cfg, shared.as_ref(), &mut class_rng)?;
        let cov = second_moment(&fit.x_tilde, n_c);
        let spec = SensitivitySpec::covariance(p, n_c, cfg.covariance_bound)?;
        let noisy = dp_perturb_cov(&cov, spec.value, cfg.epsilon_sigma, &mut class_rng)?;
        ledger.record_parallel(
            &fit.pre.mean_sensitivity,
            cfg.epsilon_mu,
            CLASS_GROUP,
            class,
        )?;
        ledger.record_parallel(&spec, cfg.epsilon_sigma, CLASS_GROUP, class)?;

        let mean = fit.projection.basis().tr_mul(&fit.pre.mu_dp);
        let model = GaussianModel::repaired(mean, &noisy, cfg.psd_floor)?;
        blocks.push(model.sample(count, &mut class_rng));
        out_labels.extend(std::iter::repeat_n(class.clone(), count));
        components.push(Component {
            class: Some(class.clone()),
            n: n_c,
            projection: fit.projection,
            mu_dp: fit.pre.mu_dp,
            model,
            dropped: fit.pre.dropped.len(),
            columns: start..start + count,
        });
        start += count;
    }
    if start == 0 {
        return Err(Error::param("samples", "mixture release would be empty"));
    }
    let mut features = DMatrix::<f64>::zeros(p, start);
    for (c, block) in components.iter().zip(&blocks) {
        features
            .columns_mut(c.columns.start, c.columns.len())
            .copy_from(block);
    }
    let synthetic = feature_dataset(features)?.with_labels(Labels::Categorical(out_labels))?;
    Ok(Release {
        mode: Mode::Gmm,
        synthetic,
        components,
        ledger,
        m,
        p,
        n,
        epsilon_mu: cfg.epsilon_mu,
        epsilon_sigma: cfg.epsilon_sigma,
        covariance_bound: cfg.covariance_bound,
    })
}

pub fn synthesize<R: Rng + ?Sized>(
    mode: Mode,
    data: &Dataset,
    cfg: &SynthConfig,
    rng: &mut R,
) -> Result<Release> {
    match mode {
        Mode::Unsupervised => synth_unsupervised(data, cfg, rng),
        Mode::Supervised => synth_supervised(data, cfg, rng),
        Mode::Gmm => synth_gmm(data, cfg, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    #[test]
    fn cov_examples() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        assert_eq!(
            estimate_cov(&x).unwrap(),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])
        );
        let e = DMatrix::<f64>::identity(2, 2);
        assert_eq!(estimate_cov(&e).unwrap(), DMatrix::identity(2, 2) * 0.5);
        assert!(estimate_cov(&DMatrix::zeros(2, 0)).is_err());
    }

    #[test]
    fn cov_is_exactly_symmetric() {
        let mut r = rng(2);
        let x = DMatrix::from_fn(5, 37, |_, _| r.random::<f64>() - 0.5);
        let c = estimate_cov(&x).unwrap();
        assert_eq!(c, c.transpose());
    }

    #[test]
    fn aug_cov_examples() {
        let x = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let a = estimate_aug_cov(&x, &[1.0], Some(1.0)).unwrap();
        assert_eq!(
            a,
            DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0])
        );

        let mut r = rng(3);
        let x = DMatrix::from_fn(3, 20, |_, _| r.random::<f64>() - 0.5);
        let zero = estimate_aug_cov(&x, &[0.0; 20], Some(1.0)).unwrap();
        assert!(zero.row(3).iter().all(|&v| v == 0.0));
        assert!(zero.column(3).iter().all(|&v| v == 0.0));
        assert_eq!(zero.view((0, 0), (3, 3)), estimate_cov(&x).unwrap());

        assert!(matches!(
            estimate_aug_cov(&x, &[2.0; 20], Some(1.0)),
            Err(Error::LabelOutOfBound { .. })
        ));
        assert!(estimate_aug_cov(&x, &[0.0; 3], None).is_err());
    }

    #[test]
    fn perturb_is_symmetric_and_noiseless_at_infinity() {
        let mut r = rng(4);
        let x = DMatrix::from_fn(4, 30, |_, _| r.random::<f64>() - 0.5);
        let c = estimate_cov(&x).unwrap();
        let noisy = dp_perturb_cov(&c, 0.1, 0.7, &mut r).unwrap();
        assert_eq!(noisy, noisy.transpose());
        assert_ne!(noisy, c);
        assert_eq!(dp_perturb_cov(&c, 0.1, f64::INFINITY, &mut r).unwrap(), c);
        assert!(dp_perturb_cov(&c, 0.1, 0.0, &mut r).is_err());
        assert!(dp_perturb_cov(&c, 0.1, -1.0, &mut r).is_err());
        let spec = SensitivitySpec::covariance(9, 100, CovarianceBound::Published).unwrap();
        assert!((spec.scale(0.7).unwrap() - 0.085_714_285_714_285_7).abs() < 1e-15);
    }

    #[test]
    fn psd_repair_clips_negative_eigenvalues() {
        // Eigenvalues -0.1 and 0.5 in a rotated basis.
        let (c, s) = (0.6_f64, 0.8_f64);
        let v = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
        let m =
            &v * DMatrix::from_diagonal(&DVector::from_column_slice(&[-0.1, 0.5])) * v.transpose();
        let fixed = psd_repair(&m, 0.0).unwrap();
        assert!(fixed.applied);
        assert!((fixed.min_eigenvalue_before + 0.1).abs() < 1e-12);
        let mut ev: Vec<f64> = fixed
            .matrix
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .collect();
        ev.sort_by(f64::total_cmp);
        assert!(ev[0].abs() < 1e-12);
        assert!((ev[1] - 0.5).abs() < 1e-12);
        assert_eq!(fixed.matrix, fixed.matrix.transpose());

        let floor = psd_repair(&m, 0.2).unwrap();
        assert!(floor.matrix.symmetric_eigen().eigenvalues.min() >= 0.2 - 1e-12);

        let good = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let same = psd_repair(&good, 0.0).unwrap();
        assert!(!same.applied);
        assert_eq!(same.matrix, good);
        assert!(psd_repair(&good, -1.0).is_err());
    }

    #[test]
    fn gaussian_model_rejects_indefinite() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        assert!(matches!(
            GaussianModel::new(DVector::zeros(2), m),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn degenerate_gaussian_returns_mean() {
        let mean = DVector::from_column_slice(&[1.5, -2.0]);
        let model = GaussianModel::new(mean.clone(), DMatrix::zeros(2, 2)).unwrap();
        let s = model.sample(50, &mut rng(5));
        for col in s.column_iter() {
            assert_eq!(col, mean);
        }
    }

    #[test]
    fn seeded_sampling_is_stable() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let model = GaussianModel::new(DVector::zeros(2), cov).unwrap();
        assert_eq!(
            model.sample(100, &mut rng(6)),
            model.sample(100, &mut rng(6))
        );
    }

    #[test]
    fn identity_sample_covariance() {
        // Standard error of an entry of the sample covariance of N(0, I₂) with
        // 10⁵ draws is about 1/√10⁵ ≈ 0.0032 (off-diagonal) and 0.0045
        // (diagonal), so 0.03 is a comfortable bound.
        let model = GaussianModel::new(DVector::zeros(2), DMatrix::identity(2, 2)).unwrap();
        let s = model.sample(100_000, &mut rng(7));
        let c = estimate_cov(&s).unwrap();
        assert!((c - DMatrix::<f64>::identity(2, 2)).amax() <= 0.03);
    }

    #[test]
    fn proportional_allocation() {
        assert_eq!(allocate_proportional(10, &[5, 5]), vec![5, 5]);
        assert_eq!(allocate_proportional(10, &[1, 2]), vec![3, 7]);
        assert_eq!(
            allocate_proportional(7, &[1, 1, 1]).iter().sum::<usize>(),
            7
        );
    }

    #[test]
    fn class_partition_preserves_first_appearance() {
        let labels: Vec<String> = ["b", "a", "b", "c", "a"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let parts = partition_classes(&labels);
        let names: Vec<&str> = parts.iter().map(|(c, _)| c.as_str()).collect();
        assert_eq!(names, ["b", "a", "c"]);
        assert_eq!(parts[0].1, vec![0, 2]);
    }

    #[test]
    fn kept_labels_skips_dropped() {
        assert_eq!(kept_labels(&[1.0, 2.0, 3.0, 4.0], &[1, 3]), vec![1.0, 3.0]);
        assert_eq!(kept_labels(&[1.0], &[]), vec![1.0]);
    }
}
