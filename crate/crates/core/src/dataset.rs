//! Datasets and the file formats they travel in.
//!
//! Files are rows-as-samples. In memory the feature matrix is `m × n` with one
//! sample per column; this module owns the transpose.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::{BudgetLedger, BudgetSplit, CovarianceBound};
use crate::synthesis::{Mode, Release};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Real,
    Categorical,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Labels {
    Real(Vec<f64>),
    Categorical(Vec<String>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Real(v) => v.len(),
            Labels::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> LabelKind {
        match self {
            Labels::Real(_) => LabelKind::Real,
            Labels::Categorical(_) => LabelKind::Categorical,
        }
    }
}

/// Numeric features plus optional labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: DMatrix<f64>,
    feature_names: Vec<String>,
    labels: Option<Labels>,
    label_name: Option<String>,
    label_bound: Option<f64>,
}

impl Dataset {
    /// `features` is `m × n`, one sample per column.
    pub fn new(features: DMatrix<f64>) -> Result<Self> {
        let names = (1..=features.nrows()).map(|i| format!("x{i}")).collect();
        Self::with_names(features, names)
    }

    pub fn with_names(features: DMatrix<f64>, feature_names: Vec<String>) -> Result<Self> {
        let (m, n) = features.shape();
        if m == 0 || n == 0 {
            return Err(Error::param(
                "features",
                format!("need at least one feature and one sample, got {m}x{n}"),
            ));
        }
        if feature_names.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: feature_names.len(),
            });
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(
                "features",
                format!(
                    "non-finite value at feature {}, sample {}",
                    pos % m,
                    pos / m
                ),
            ));
        }
        Ok(Self {
            features,
            feature_names,
            labels: None,
            label_name: None,
            label_bound: None,
        })
    }

    /// Builds a dataset from row-major samples.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != m) {
            return Err(Error::DimensionMismatch {
                expected: m,
                actual: bad.len(),
            });
        }
        Self::new(DMatrix::from_fn(m, n, |i, j| rows[j][i]))
    }

    pub fn with_labels(mut self, labels: Labels) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                actual: labels.len(),
            });
        }
        if let Labels::Real(v) = &labels {
            if let Some(i) = v.iter().position(|y| !y.is_finite()) {
                return Err(Error::param(
                    "labels",
                    format!("non-finite label at index {i}"),
                ));
            }
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_label_name(mut self, name: impl Into<String>) -> Self {
        self.label_name = Some(name.into());
        self
    }

    /// Declares the label bound `a` and clips real labels into `[-a, a]`.
    /// Returns the dataset and the number of clipped labels.
    pub fn with_label_bound(mut self, a: f64) -> Result<(Self, usize)> {
        let mut clipped = 0;
        if let Some(Labels::Real(v)) = &self.labels {
            let (c, count) = clip_labels(v, a)?;
            clipped = count;
            self.labels = Some(Labels::Real(c));
        } else if !(a.is_finite() && a > 0.0) {
            return Err(Error::param(
                "label_bound",
                format!("must be positive, got {a}"),
            ));
        }
        self.label_bound = Some(a);
        Ok((self, clipped))
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn labels(&self) -> Option<&Labels> {
        self.labels.as_ref()
    }

    pub fn label_name(&self) -> Option<&str> {
        self.label_name.as_deref()
    }

    pub fn label_bound(&self) -> Option<f64> {
        self.label_bound
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.features.ncols()
    }

    /// Number of features.
    pub fn m(&self) -> usize {
        self.features.nrows()
    }

    pub fn real_labels(&self) -> Option<&[f64]> {
        match &self.labels {
            Some(Labels::Real(v)) => Some(v),
            _ => None,
        }
    }

    pub fn class_labels(&self) -> Option<&[String]> {
        match &self.labels {
            Some(Labels::Categorical(v)) => Some(v),
            _ => None,
        }
    }
}

/// Clamps every label into `[-a, a]` and counts how many moved.
pub fn clip_labels(labels: &[f64], a: f64) -> Result<(Vec<f64>, usize)> {
    if !(a.is_finite() && a > 0.0) {
        return Err(Error::param(
            "label_bound",
            format!("must be positive, got {a}"),
        ));
    }
    let mut count = 0;
    let out = labels
        .iter()
        .map(|&y| {
            let c = y.clamp(-a, a);
            if c != y {
                count += 1;
            }
            c
        })
        .collect();
    Ok((out, count))
}

/// Reads a headered, comma-separated file of decimal numbers.
///
/// With `label_column` set, that column is split off as labels of the given
/// kind (real by default).
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: Option<&str>,
    label_kind: Option<LabelKind>,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let headers: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label_idx =
        match label_column {
            Some(name) => Some(headers.iter().position(|h| h == name).ok_or_else(|| {
                Error::MissingColumn {
                    path: path.to_path_buf(),
                    column: name.to_string(),
                }
            })?),
            None => None,
        };
    let kind = label_kind.unwrap_or(LabelKind::Real);
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&i| Some(i) != label_idx)
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "no feature columns".into(),
        });
    }

    let mut values = Vec::new();
    let mut real_labels = Vec::new();
    let mut class_labels = Vec::new();
    let mut rows = 0usize;
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        for &c in &feature_cols {
            let cell = record.get(c).unwrap_or("").trim();
            values.push(parse_finite(cell).ok_or_else(|| Error::BadCell {
                path: path.to_path_buf(),
                row,
                column: headers[c].clone(),
                value: cell.to_string(),
            })?);
        }
        if let Some(li) = label_idx {
            let cell = record.get(li).unwrap_or("").trim();
            match kind {
                LabelKind::Real => {
                    real_labels.push(parse_finite(cell).ok_or_else(|| Error::BadCell {
                        path: path.to_path_buf(),
                        row,
                        column: headers[li].clone(),
                        value: cell.to_string(),
                    })?)
                }
                LabelKind::Categorical => class_labels.push(cell.to_string()),
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: "no data rows".into(),
        });
    }
    let m = feature_cols.len();
    // `values` is row-major n × m, which is column-major m × n.
    let features = DMatrix::from_vec(m, rows, values);
    let names = feature_cols.iter().map(|&c| headers[c].clone()).collect();
    let mut ds = Dataset::with_names(features, names)?;
    if let Some(li) = label_idx {
        let labels = match kind {
            LabelKind::Real => Labels::Real(real_labels),
            LabelKind::Categorical => Labels::Categorical(class_labels),
        };
        ds = ds.with_labels(labels)?.with_label_name(headers[li].clone());
    }
    Ok(ds)
}

fn parse_finite(cell: &str) -> Option<f64> {
    cell.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Formats with 17 significant digits, enough to round-trip any `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a dataset rows-as-samples. Real labels go to a `label` column and
/// class labels to a `class` column, after the features.
pub fn write_dataset_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ds.feature_names().to_vec();
    match ds.labels() {
        Some(Labels::Real(_)) => header.push("label".into()),
        Some(Labels::Categorical(_)) => header.push("class".into()),
        None => {}
    }
    w.write_record(&header)?;
    let x = ds.features();
    let mut row = Vec::with_capacity(header.len());
    for j in 0..ds.n() {
        row.clear();
        row.extend(x.column(j).iter().map(|&v| format_value(v)));
        match ds.labels() {
            Some(Labels::Real(y)) => row.push(format_value(y[j])),
            Some(Labels::Categorical(c)) => row.push(c[j].clone()),
            None => {}
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes a plain matrix with a generated header, one matrix row per line.
pub fn write_matrix_csv(matrix: &DMatrix<f64>, prefix: &str, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    let header: Vec<String> = (1..=matrix.ncols())
        .map(|j| format!("{prefix}{j}"))
        .collect();
    w.write_record(&header)?;
    for i in 0..matrix.nrows() {
        w.write_record(matrix.row(i).iter().map(|&v| format_value(v)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Per-class summary stored in the metadata of a mixture release.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: String,
    pub n: usize,
    pub n_synth: usize,
}

/// A projection basis as stored in metadata: `m` rows of `p` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionDump {
    pub class: Option<String>,
    pub basis: Vec<Vec<f64>>,
}

/// JSON sidecar written next to every release.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseMetadata {
    pub mode: Mode,
    pub m: usize,
    pub p: usize,
    pub n: usize,
    pub n_synth: usize,
    pub epsilon_total: f64,
    pub epsilon_mu: f64,
    pub epsilon_sigma: f64,
    pub split_ratio: f64,
    pub covariance_bound: CovarianceBound,
    pub label_bound: Option<f64>,
    pub seed: Option<u64>,
    pub psd_repair_applied: bool,
    pub clip_count: usize,
    pub timestamp: String,
    pub dropped_samples: usize,
    pub ledger: BudgetLedger,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<ClassSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub projections: Vec<ProjectionDump>,
}

/// Metadata sidecar for `release`. `label_bound` is recorded for supervised
/// releases only; bases are included when `save_projection` is set.
pub fn release_metadata(
    release: &Release,
    split: &BudgetSplit,
    label_bound: Option<f64>,
    seed: Option<u64>,
    clip_count: usize,
    save_projection: bool,
) -> ReleaseMetadata {
    let classes = if release.mode == Mode::Gmm {
        release
            .components
            .iter()
            .map(|c| ClassSummary {
                class: c.class.clone().unwrap_or_default(),
                n: c.n,
                n_synth: c.columns.len(),
            })
            .collect()
    } else {
        Vec::new()
    };
    let projections = if save_projection {
        release
            .components
            .iter()
            .map(|c| ProjectionDump {
                class: c.class.clone(),
                basis: c
                    .projection
                    .basis()
                    .row_iter()
                    .map(|r| r.iter().copied().collect())
                    .collect(),
            })
            .collect()
    } else {
        Vec::new()
    };
    ReleaseMetadata {
        mode: release.mode,
        m: release.m,
        p: release.p,
        n: release.n,
        n_synth: release.n_synth(),
        epsilon_total: release.ledger.total(),
        epsilon_mu: split.mu,
        epsilon_sigma: split.sigma,
        split_ratio: split.ratio,
        covariance_bound: release.covariance_bound,
        label_bound: if release.mode == Mode::Supervised {
            label_bound
        } else {
            None
        },
        seed,
        psd_repair_applied: release.psd_repair_applied(),
        clip_count,
        timestamp: Utc::now().to_rfc3339_opts(SecondsFormat::Secs, true),
        dropped_samples: release.dropped(),
        ledger: release.ledger.clone(),
        classes,
        projections,
    }
}

/// Files produced by [`write_release`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReleasePaths {
    pub data: PathBuf,
    pub metadata: PathBuf,
}

/// Writes `data.csv` and `metadata.json` into `out_dir`, creating it if needed.
pub fn write_release(
    synthetic: &Dataset,
    metadata: &ReleaseMetadata,
    out_dir: impl AsRef<Path>,
) -> Result<ReleasePaths> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let data = out_dir.join("data.csv");
    let meta = out_dir.join("metadata.json");
    write_dataset_csv(synthetic, &data)?;
    let json = serde_json::to_string_pretty(metadata)?;
    fs::write(&meta, json + "\n").map_err(|e| Error::io(&meta, e))?;
    Ok(ReleasePaths {
        data,
        metadata: meta,
    })
}

pub fn read_metadata(path: impl AsRef<Path>) -> Result<ReleaseMetadata> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
