//! C ABI over the `ron_gauss` library.
//!
//! Datasets and releases are opaque handles created and freed by this library.
//! Every fallible call returns an [`RgStatus`]; on failure a description is
//! available from [`rg_last_error_message`] on the same thread. Panics are
//! caught at the boundary and reported as [`RgStatus::Panic`].
//!
//! Matrices cross the boundary row-major with one sample per row.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use ron_gauss::dataset::{self, Dataset, LabelKind, Labels};
use ron_gauss::mechanism::{self, split_budget, BudgetSplit, CovarianceBound};
use ron_gauss::projection;
use ron_gauss::synthesis::{self, Mode, Release, SynthConfig};
use ron_gauss::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RgStatus {
    Ok = 0,
    /// Invalid argument or parameter.
    Usage = 1,
    /// Input data could not be used.
    Data = 2,
    /// A numerical routine failed.
    Numeric = 3,
    /// File system error.
    Io = 4,
    /// A required pointer argument was null.
    NullPointer = 5,
    /// A panic was caught at the boundary.
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RgMode {
    Unsupervised = 0,
    Supervised = 1,
    Gmm = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RgCovarianceBound {
    /// Sensitivity valid for per-entry Laplace noise. Default.
    Entrywise = 0,
    /// The smaller closed form `2√p/n`; only ε-DP for `p <= 2`.
    Published = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RgLabelKind {
    /// Loader default: labels parse as real numbers.
    Auto = 0,
    Real = 1,
    Categorical = 2,
}

/// Parameters of one synthesis run. Obtain defaults from [`rg_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RgConfig {
    pub mode: RgMode,
    /// Total privacy budget.
    pub epsilon: f64,
    /// Share of `epsilon` spent on the mean.
    pub mu_ratio: f64,
    /// Projected dimension; 0 picks the default for the feature count.
    pub dim: usize,
    /// Synthetic sample count; 0 emits as many samples as the input has.
    pub n_synth: usize,
    /// Label bound `a` for supervised mode. Labels are clipped to `[-a, a]`.
    pub label_bound: f64,
    pub psd_floor: f64,
    pub covariance_bound: RgCovarianceBound,
    /// Mixture mode: one projection shared by every class.
    pub shared_projection: bool,
    /// When false the generator is seeded from the operating system.
    pub has_seed: bool,
    pub seed: u64,
}

/// Opaque dataset handle.
pub struct RgDataset {
    inner: Dataset,
}

/// Opaque release handle.
pub struct RgRelease {
    release: Release,
    split: BudgetSplit,
    label_bound: Option<f64>,
    seed: Option<u64>,
    clip_count: usize,
    class_names: Vec<CString>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type Outcome = std::result::Result<(), Failure>;

fn usage(name: &'static str, reason: impl Into<String>) -> Failure {
    Failure::Lib(Error::InvalidParameter {
        name,
        reason: reason.into(),
    })
}

fn status_of(e: &Error) -> RgStatus {
    match e {
        Error::Io { .. } => RgStatus::Io,
        _ => match e.exit_code() {
            1 => RgStatus::Usage,
            3 => RgStatus::Numeric,
            _ => RgStatus::Data,
        },
    }
}

fn guard(f: impl FnOnce() -> Outcome) -> RgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RgStatus::Ok,
        Ok(Err(Failure::Null(name))) => {
            set_last_error(format!("null pointer passed for `{name}`"));
            RgStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_last_error(format!("panic: {msg}"));
            RgStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(name))
}

unsafe fn deref_mut<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(name))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, name: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(
    p: *mut T,
    len: usize,
    name: &'static str,
) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn string(p: *const c_char, name: &'static str) -> Result<String, Failure> {
    if p.is_null() {
        return Err(Failure::Null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_string)
        .map_err(|_| usage(name, "not valid UTF-8"))
}

/// Copies `x` (columns are samples) into a row-major buffer of exactly its size.
fn copy_out(x: &DMatrix<f64>, out: &mut [f64]) -> Outcome {
    let need = x.nrows() * x.ncols();
    if out.len() != need {
        return Err(usage(
            "len",
            format!("buffer holds {} values, need {need}", out.len()),
        ));
    }
    let width = x.nrows();
    for (j, col) in x.column_iter().enumerate() {
        out[j * width..(j + 1) * width].copy_from_slice(col.as_slice());
    }
    Ok(())
}

/// Message describing the most recent failure on this thread, or null if no
/// call has failed yet. Valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn rg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn rg_config_default() -> RgConfig {
    RgConfig {
        mode: RgMode::Unsupervised,
        epsilon: 1.0,
        mu_ratio: 0.3,
        dim: 0,
        n_synth: 0,
        label_bound: 1.0,
        psd_floor: 0.0,
        covariance_bound: RgCovarianceBound::Entrywise,
        shared_projection: false,
        has_seed: false,
        seed: 0,
    }
}

/// Builds a dataset from `n_rows × n_cols` row-major values.
///
/// # Safety
/// `data` must point to `n_rows * n_cols` readable doubles and `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn rg_dataset_from_rows(
    data: *const f64,
    n_rows: usize,
    n_cols: usize,
    out: *mut *mut RgDataset,
) -> RgStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let len = n_rows
            .checked_mul(n_cols)
            .ok_or_else(|| usage("n_rows", "size overflows"))?;
        let values = slice(data, len, "data")?;
        let x = DMatrix::from_row_slice(n_rows, n_cols, values).transpose();
        let inner = Dataset::new(x)?;
        *out = Box::into_raw(Box::new(RgDataset { inner }));
        Ok(())
    })
}

/// Loads a CSV file with a header row. `label_column` may be null.
///
/// # Safety
/// `path` and a non-null `label_column` must be NUL-terminated strings; `out`
/// must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_dataset_load_csv(
    path: *const c_char,
    label_column: *const c_char,
    label_kind: RgLabelKind,
    out: *mut *mut RgDataset,
) -> RgStatus {
    guard(|| {
        let out = deref_mut(out, "out")?;
        let path = PathBuf::from(string(path, "path")?);
        let column = if label_column.is_null() {
            None
        } else {
            Some(string(label_column, "label_column")?)
        };
        let kind = match label_kind {
            RgLabelKind::Auto => None,
            RgLabelKind::Real => Some(LabelKind::Real),
            RgLabelKind::Categorical => Some(LabelKind::Categorical),
        };
        let inner = dataset::load_csv(&path, column.as_deref(), kind)?;
        *out = Box::into_raw(Box::new(RgDataset { inner }));
        Ok(())
    })
}

/// Attaches real-valued labels, one per sample.
///
/// # Safety
/// `ds` must be a live dataset handle and `labels` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rg_dataset_set_real_labels(
    ds: *mut RgDataset,
    labels: *const f64,
    len: usize,
) -> RgStatus {
    guard(|| {
        let ds = deref_mut(ds, "ds")?;
        let y = slice(labels, len, "labels")?.to_vec();
        ds.inner = ds.inner.clone().with_labels(Labels::Real(y))?;
        Ok(())
    })
}

/// Attaches class labels, one NUL-terminated string per sample.
///
/// # Safety
/// `ds` must be a live dataset handle and `labels` must point to `len` valid
/// string pointers.
#[no_mangle]
pub unsafe extern "C" fn rg_dataset_set_class_labels(
    ds: *mut RgDataset,
    labels: *const *const c_char,
    len: usize,
) -> RgStatus {
    guard(|| {
        let ds = deref_mut(ds, "ds")?;
        let classes = slice(labels, len, "labels")?
            .iter()
            .map(|&p| string(p, "labels"))
            .collect::<Result<Vec<_>, _>>()?;
        ds.inner = ds.inner.clone().with_labels(Labels::Categorical(classes))?;
        Ok(())
    })
}

/// Sample count and feature count.
///
/// # Safety
/// `ds` must be a live dataset handle; `n` and `m` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_dataset_shape(
    ds: *const RgDataset,
    n: *mut usize,
    m: *mut usize,
) -> RgStatus {
    guard(|| {
        let ds = deref(ds, "ds")?;
        *deref_mut(n, "n")? = ds.inner.n();
        *deref_mut(m, "m")? = ds.inner.m();
        Ok(())
    })
}

/// Frees a dataset. Null is ignored.
///
/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rg_dataset_free(ds: *mut RgDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

fn synthesize(ds: &Dataset, cfg: &RgConfig) -> Result<RgRelease, Failure> {
    let split = split_budget(cfg.epsilon, cfg.mu_ratio)?;
    let mode = match cfg.mode {
        RgMode::Unsupervised => Mode::Unsupervised,
        RgMode::Supervised => Mode::Supervised,
        RgMode::Gmm => Mode::Gmm,
    };
    let mut data = ds.clone();
    let mut clip_count = 0;
    let mut label_bound = None;
    if mode == Mode::Supervised {
        if !(cfg.label_bound.is_finite() && cfg.label_bound > 0.0) {
            return Err(usage("label_bound", "must be a positive finite number"));
        }
        let (clipped, clips) = data.with_label_bound(cfg.label_bound)?;
        data = clipped;
        clip_count = clips;
        label_bound = Some(cfg.label_bound);
    }
    let mut sc = SynthConfig::new(split.mu, split.sigma);
    sc.p = (cfg.dim > 0).then_some(cfg.dim);
    sc.n_synth = (cfg.n_synth > 0).then_some(cfg.n_synth);
    sc.psd_floor = cfg.psd_floor;
    sc.shared_projection = cfg.shared_projection;
    sc.covariance_bound = match cfg.covariance_bound {
        RgCovarianceBound::Entrywise => CovarianceBound::Entrywise,
        RgCovarianceBound::Published => CovarianceBound::Published,
    };
    let seed = cfg.has_seed.then_some(cfg.seed);
    let mut rng = ChaCha20Rng::seed_from_u64(seed.unwrap_or_else(|| rand::rng().random()));
    let release = synthesis::synthesize(mode, &data, &sc, &mut rng)?;
    let class_names = release
        .synthetic
        .class_labels()
        .unwrap_or_default()
        .iter()
        .map(|c| CString::new(c.replace('\0', " ")).expect("nul bytes removed"))
        .collect();
    Ok(RgRelease {
        release,
        split,
        label_bound,
        seed,
        clip_count,
        class_names,
    })
}

/// Runs the synthesis pipeline on `ds`.
///
/// # Safety
/// `ds` must be a live dataset handle, `cfg` must be readable and `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn rg_synthesize(
    ds: *const RgDataset,
    cfg: *const RgConfig,
    out: *mut *mut RgRelease,
) -> RgStatus {
    guard(|| {
        let ds = deref(ds, "ds")?;
        let cfg = deref(cfg, "cfg")?;
        let out = deref_mut(out, "out")?;
        let release = synthesize(&ds.inner, cfg)?;
        *out = Box::into_raw(Box::new(release));
        Ok(())
    })
}

/// Synthetic sample count, projected dimension and original feature count.
///
/// # Safety
/// `rel` must be a live release handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_release_shape(
    rel: *const RgRelease,
    n_synth: *mut usize,
    p: *mut usize,
    m: *mut usize,
) -> RgStatus {
    guard(|| {
        let rel = &deref(rel, "rel")?.release;
        *deref_mut(n_synth, "n_synth")? = rel.n_synth();
        *deref_mut(p, "p")? = rel.p;
        *deref_mut(m, "m")? = rel.m;
        Ok(())
    })
}

/// Total ε charged by the release.
///
/// # Safety
/// `rel` must be a live release handle; `epsilon` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_release_epsilon(rel: *const RgRelease, epsilon: *mut f64) -> RgStatus {
    guard(|| {
        *deref_mut(epsilon, "epsilon")? = deref(rel, "rel")?.release.ledger.total();
        Ok(())
    })
}

/// Copies the projected synthetic features, `n_synth × p` row-major.
///
/// # Safety
/// `rel` must be a live release handle and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rg_release_copy_features(
    rel: *const RgRelease,
    buf: *mut f64,
    len: usize,
) -> RgStatus {
    guard(|| {
        let rel = deref(rel, "rel")?;
        copy_out(
            rel.release.synthetic.features(),
            slice_mut(buf, len, "buf")?,
        )
    })
}

/// Copies synthetic samples mapped back to the feature space, `n_synth × m`
/// row-major.
///
/// # Safety
/// `rel` must be a live release handle and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rg_release_copy_reconstructed(
    rel: *const RgRelease,
    buf: *mut f64,
    len: usize,
) -> RgStatus {
    guard(|| {
        let rel = deref(rel, "rel")?;
        copy_out(&rel.release.reconstruct()?, slice_mut(buf, len, "buf")?)
    })
}

/// Copies the synthetic real labels of a supervised release (`n_synth` values).
///
/// # Safety
/// `rel` must be a live release handle and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn rg_release_copy_labels(
    rel: *const RgRelease,
    buf: *mut f64,
    len: usize,
) -> RgStatus {
    guard(|| {
        let rel = deref(rel, "rel")?;
        let y = rel
            .release
            .synthetic
            .real_labels()
            .ok_or_else(|| usage("rel", "release has no real labels"))?;
        let out = slice_mut(buf, len, "buf")?;
        if out.len() != y.len() {
            return Err(usage(
                "len",
                format!("buffer holds {} values, need {}", out.len(), y.len()),
            ));
        }
        out.copy_from_slice(y);
        Ok(())
    })
}

/// Class of synthetic sample `index` in a mixture release. The string is owned
/// by the release.
///
/// # Safety
/// `rel` must be a live release handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_release_class_label(
    rel: *const RgRelease,
    index: usize,
    out: *mut *const c_char,
) -> RgStatus {
    guard(|| {
        let rel = deref(rel, "rel")?;
        let out = deref_mut(out, "out")?;
        if rel.class_names.is_empty() {
            return Err(usage("rel", "release has no class labels"));
        }
        let name = rel.class_names.get(index).ok_or_else(|| {
            usage(
                "index",
                format!("{index} out of range for {} samples", rel.class_names.len()),
            )
        })?;
        *out = name.as_ptr();
        Ok(())
    })
}

/// Writes `data.csv` and `metadata.json` into `out_dir`, creating it if needed.
///
/// # Safety
/// `rel` must be a live release handle and `out_dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rg_release_write(
    rel: *const RgRelease,
    out_dir: *const c_char,
    save_projection: bool,
) -> RgStatus {
    guard(|| {
        let rel = deref(rel, "rel")?;
        let dir = PathBuf::from(string(out_dir, "out_dir")?);
        let metadata = dataset::release_metadata(
            &rel.release,
            &rel.split,
            rel.label_bound,
            rel.seed,
            rel.clip_count,
            save_projection,
        );
        dataset::write_release(&rel.release.synthetic, &metadata, &dir)?;
        Ok(())
    })
}

/// Frees a release. Null is ignored.
///
/// # Safety
/// `rel` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rg_release_free(rel: *mut RgRelease) {
    if !rel.is_null() {
        drop(Box::from_raw(rel));
    }
}

fn bound(b: RgCovarianceBound) -> CovarianceBound {
    match b {
        RgCovarianceBound::Entrywise => CovarianceBound::Entrywise,
        RgCovarianceBound::Published => CovarianceBound::Published,
    }
}

/// L1 sensitivity of the mean of `n` unit vectors in `m` dimensions.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_sensitivity_mean(m: usize, n: usize, out: *mut f64) -> RgStatus {
    guard(|| {
        *deref_mut(out, "out")? = mechanism::mean_sensitivity(m, n)?;
        Ok(())
    })
}

/// L1 sensitivity of the `p × p` second-moment matrix.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_sensitivity_covariance(
    p: usize,
    n: usize,
    which: RgCovarianceBound,
    out: *mut f64,
) -> RgStatus {
    guard(|| {
        *deref_mut(out, "out")? = mechanism::SensitivitySpec::covariance(p, n, bound(which))?.value;
        Ok(())
    })
}

/// L1 sensitivity of the label-augmented second-moment matrix.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_sensitivity_augmented_covariance(
    p: usize,
    n: usize,
    label_bound: f64,
    which: RgCovarianceBound,
    out: *mut f64,
) -> RgStatus {
    guard(|| {
        *deref_mut(out, "out")? =
            mechanism::SensitivitySpec::augmented_covariance(p, n, label_bound, bound(which))?
                .value;
        Ok(())
    })
}

/// Largest projected dimension at which projections of `m`-dimensional data
/// are expected to look Gaussian.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_dfm_dimension_bound(m: usize, out: *mut usize) -> RgStatus {
    guard(|| {
        *deref_mut(out, "out")? = projection::dfm_dimension_bound(m)?;
        Ok(())
    })
}

/// Projected dimension used when none is configured.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rg_default_dimension(m: usize, out: *mut usize) -> RgStatus {
    guard(|| {
        *deref_mut(out, "out")? = projection::default_dimension(m)?;
        Ok(())
    })
}
