//! Command-line front end: `synth`, `eval` and `budget`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde_json::json;

use crate::dataset::{self, Dataset, LabelKind};
use crate::error::{Error, Result};
use crate::evaluation::{self, EvalReport, LinearModel, NearestMean};
use crate::mechanism::{
    split_budget, BudgetLedger, CovarianceBound, SensitivitySpec, DEFAULT_MU_RATIO,
};
use crate::projection::{self, SourceLaw};
use crate::synthesis::{self, Mode, Release, SynthConfig, CLASS_GROUP};

#[derive(Debug, Parser)]
#[command(
    name = "ron-gauss",
    version,
    about = "Differentially private synthetic data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a private generative model to a CSV file and sample a release.
    Synth(SynthArgs),
    /// Compute a utility metric and print it as JSON.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Print the sensitivities, noise scales and total spend of a planned run.
    Budget(BudgetArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Unsupervised,
    Supervised,
    Gmm,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Unsupervised => Mode::Unsupervised,
            ModeArg::Supervised => Mode::Supervised,
            ModeArg::Gmm => Mode::Gmm,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LabelKindArg {
    Real,
    Categorical,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BoundArg {
    Entrywise,
    Published,
}

impl From<BoundArg> for CovarianceBound {
    fn from(b: BoundArg) -> Self {
        match b {
            BoundArg::Entrywise => CovarianceBound::Entrywise,
            BoundArg::Published => CovarianceBound::Published,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum LawArg {
    Uniform,
    Gaussian,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Input CSV, one sample per row.
    input: PathBuf,
    #[arg(long, value_enum, default_value = "unsupervised")]
    mode: ModeArg,
    /// Total privacy budget.
    #[arg(long)]
    epsilon: f64,
    /// Share of the budget spent on the mean.
    #[arg(long, default_value_t = DEFAULT_MU_RATIO)]
    mu_ratio: f64,
    /// Projected dimension (default: Gaussianity bound, capped at m - 1).
    #[arg(long)]
    dim: Option<usize>,
    /// Comma-separated dimensions to compare. Prints a utility-vs-dimension
    /// report instead of writing a release. Research use only: the sweep is
    /// tuned on the real data and its spend is not modeled.
    #[arg(long, value_delimiter = ',')]
    dim_sweep: Option<Vec<usize>>,
    /// Name of the label column.
    #[arg(long)]
    label_col: Option<String>,
    #[arg(long, value_enum)]
    label_kind: Option<LabelKindArg>,
    /// Labels are clipped to [-a, a].
    #[arg(long)]
    label_bound: Option<f64>,
    /// Number of synthetic samples (default: n).
    #[arg(long)]
    samples: Option<usize>,
    /// Fixes all randomness. Anyone holding the seed can strip the noise, so
    /// never publish it alongside a release meant to be private.
    #[arg(long)]
    seed: Option<u64>,
    /// Store the projection basis in the metadata.
    #[arg(long)]
    save_projection: bool,
    /// Mixture mode: use one basis for every class.
    #[arg(long)]
    shared_projection: bool,
    /// Also write the samples mapped back to the original feature space.
    #[arg(long)]
    reconstruct: bool,
    /// Eigenvalue floor used when repairing the noisy covariance.
    #[arg(long, default_value_t = 0.0)]
    psd_floor: f64,
    /// Distribution of the random matrix behind the projection.
    #[arg(long, value_enum, default_value = "uniform")]
    law: LawArg,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Covariance sensitivity used to calibrate noise. `published` adds less
    /// noise but is not a valid bound for p > 2.
    #[arg(long, value_enum, default_value = "entrywise")]
    covariance_bound: BoundArg,
}

#[derive(Debug, Subcommand)]
enum EvalCommand {
    /// Silhouette of k-means clusters, for one k or a sweep.
    Silhouette {
        data: PathBuf,
        /// Single cluster count; omit to sweep.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 2)]
        k_min: usize,
        #[arg(long, default_value_t = 10)]
        k_max: usize,
        /// Column to exclude from the features.
        #[arg(long)]
        label_col: Option<String>,
        #[arg(long, default_value_t = 300)]
        max_iter: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Root-mean-square error between two columns.
    Rmse {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Column to compare (default: `label`, or the only column).
        #[arg(long)]
        column: Option<String>,
    },
    /// Per-coordinate KS distance of standardized columns to N(0, 1).
    Dfm {
        data: PathBuf,
        /// Original dimension, for the expected coordinate spread.
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        label_col: Option<String>,
    },
}

#[derive(Debug, Args)]
struct BudgetArgs {
    #[arg(long, value_enum, default_value = "unsupervised")]
    mode: ModeArg,
    #[arg(long)]
    epsilon: f64,
    #[arg(long, default_value_t = DEFAULT_MU_RATIO)]
    mu_ratio: f64,
    /// Number of features.
    #[arg(long)]
    m: usize,
    /// Number of samples.
    #[arg(long)]
    n: usize,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    label_bound: Option<f64>,
    /// Mixture mode: number of equally sized classes.
    #[arg(long)]
    classes: Option<usize>,
    /// Mixture mode: explicit comma-separated class sizes.
    #[arg(long, value_delimiter = ',')]
    class_sizes: Option<Vec<usize>>,
    /// Covariance sensitivity used to calibrate noise. `published` adds less
    /// noise but is not a valid bound for p > 2.
    #[arg(long, value_enum, default_value = "entrywise")]
    covariance_bound: BoundArg,
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Eval(e) => cmd_eval(&e),
        Command::Budget(b) => cmd_budget(&b),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn usage(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

fn resolve_label_kind(args: &SynthArgs, mode: Mode) -> Result<Option<LabelKind>> {
    let kind = args.label_kind.map(|k| match k {
        LabelKindArg::Real => LabelKind::Real,
        LabelKindArg::Categorical => LabelKind::Categorical,
    });
    match mode {
        // Labels are only carried through here, so any text is accepted.
        Mode::Unsupervised => Ok(kind.or(args.label_col.as_ref().map(|_| LabelKind::Categorical))),
        Mode::Supervised => {
            if args.label_col.is_none() {
                return Err(usage("label-col", "supervised mode needs --label-col"));
            }
            if args.label_bound.is_none() {
                return Err(usage("label-bound", "supervised mode needs --label-bound"));
            }
            if kind == Some(LabelKind::Categorical) {
                return Err(usage("label-kind", "supervised mode needs real labels"));
            }
            Ok(Some(LabelKind::Real))
        }
        Mode::Gmm => {
            if args.label_col.is_none() {
                return Err(usage("label-col", "gmm mode needs --label-col"));
            }
            if kind == Some(LabelKind::Real) {
                return Err(usage("label-kind", "gmm mode needs categorical labels"));
            }
            Ok(Some(LabelKind::Categorical))
        }
    }
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mode = Mode::from(args.mode);
    let split = split_budget(args.epsilon, args.mu_ratio)?;
    let kind = resolve_label_kind(args, mode)?;
    if let Some(a) = args.label_bound {
        if !(a.is_finite() && a > 0.0) {
            return Err(usage("label-bound", "must be a positive finite number"));
        }
    }
    if args.samples == Some(0) {
        return Err(usage("samples", "must be at least 1"));
    }
    if args.dim_sweep.is_none() && args.out.is_none() {
        return Err(usage(
            "out",
            "--out is required unless --dim-sweep is given",
        ));
    }

    let mut data = dataset::load_csv(&args.input, args.label_col.as_deref(), kind)?;
    let m = data.m();
    let dims: Vec<usize> = match &args.dim_sweep {
        Some(d) => d.clone(),
        None => vec![match args.dim {
            Some(p) => p,
            None => projection::default_dimension(m)?,
        }],
    };
    for &p in &dims {
        if p == 0 || p + 1 > m {
            return Err(usage(
                "dim",
                format!("need 1 <= dim <= m - 1 = {}, got {p}", m.saturating_sub(1)),
            ));
        }
    }

    let mut clip_count = 0;
    if mode == Mode::Supervised {
        let a = args.label_bound.expect("checked above");
        let (clipped, clips) = data.with_label_bound(a)?;
        data = clipped;
        clip_count = clips;
        if clips > 0 {
            warn!("{clips} label(s) clipped to [-{a}, {a}]");
        }
    }

    if args.seed.is_some() {
        warn!("seeded run: anyone who learns the seed can remove the noise from this release");
    }
    let seed = args.seed.unwrap_or_else(|| rand::rng().random());
    let law = match args.law {
        LawArg::Uniform => SourceLaw::Uniform,
        LawArg::Gaussian => SourceLaw::Gaussian,
    };
    let mut cfg = SynthConfig::new(split.mu, split.sigma);
    cfg.n_synth = args.samples;
    cfg.psd_floor = args.psd_floor;
    cfg.law = law;
    cfg.shared_projection = args.shared_projection;
    cfg.covariance_bound = args.covariance_bound.into();
    if cfg.covariance_bound == CovarianceBound::Published {
        warn!("published covariance bound requested: the release is not ε-DP for dim > 2");
    }

    if args.dim_sweep.is_some() {
        return dim_sweep(mode, &data, &cfg, &dims, seed);
    }

    cfg.p = Some(dims[0]);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let release = synthesis::synthesize(mode, &data, &cfg, &mut rng)?;

    let reconstructed = if args.reconstruct {
        let x = release.reconstruct()?;
        let mut ds = Dataset::with_names(x, data.feature_names().to_vec())?;
        if let Some(l) = release.synthetic.labels() {
            ds = ds.with_labels(l.clone())?;
        }
        Some(ds)
    } else {
        None
    };

    let metadata = dataset::release_metadata(
        &release,
        &split,
        args.label_bound,
        args.seed,
        clip_count,
        args.save_projection,
    );
    let out = args.out.as_ref().expect("checked above");
    let paths = dataset::write_release(&release.synthetic, &metadata, out)?;
    if let Some(ds) = reconstructed {
        dataset::write_dataset_csv(&ds, out.join("reconstructed.csv"))?;
    }
    info!("wrote {}", paths.data.display());
    println!("{}", release.ledger);
    Ok(())
}

/// Utility of one release, measured on the real data it was fitted to.
fn sweep_utility(release: &Release, data: &Dataset) -> Result<(&'static str, f64)> {
    match release.mode {
        Mode::Unsupervised => {
            let mapped = release.feature_map(data.features(), 0)?;
            let d = evaluation::dfm_diagnostic(&mapped, Some(data.m()))?;
            Ok(("mean_ks", d.mean_ks))
        }
        Mode::Supervised => {
            let y = data.real_labels().expect("supervised data has labels");
            let synth_y = release.synthetic.real_labels().expect("supervised release");
            let model = LinearModel::fit(release.synthetic.features(), synth_y)?;
            let mapped = release.feature_map(data.features(), 0)?;
            Ok(("rmse", evaluation::rmse(&model.predict(&mapped)?, y)?))
        }
        Mode::Gmm => {
            let labels = data.class_labels().expect("mixture data has labels");
            let synth = release.synthetic.class_labels().expect("mixture release");
            let model = NearestMean::fit(&release.reconstruct()?, synth)?;
            let mapped = crate::preprocess::sample_normalize(data.features())?;
            Ok((
                "accuracy",
                evaluation::accuracy(&model.predict(&mapped)?, labels)?,
            ))
        }
    }
}

fn dim_sweep(
    mode: Mode,
    data: &Dataset,
    cfg: &SynthConfig,
    dims: &[usize],
    seed: u64,
) -> Result<()> {
    eprintln!(
        "note: the dimension sweep evaluates on the real data; its privacy cost is not modeled"
    );
    let mut rows = Vec::with_capacity(dims.len());
    for &p in dims {
        let mut cfg = cfg.clone();
        cfg.p = Some(p);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let release = synthesis::synthesize(mode, data, &cfg, &mut rng)?;
        let (metric, value) = sweep_utility(&release, data)?;
        rows.push(json!({ "p": p, "metric": metric, "value": value }));
    }
    let report = EvalReport::new(
        "dim_sweep",
        f64::NAN,
        json!({ "mode": mode, "results": rows }),
    );
    println!("{}", report_json(&report)?);
    Ok(())
}

fn report_json(report: &EvalReport) -> Result<String> {
    // NaN has no JSON form; serde_json writes it as null.
    Ok(serde_json::to_string_pretty(report)?)
}

fn load_features(path: &Path, label_col: Option<&str>) -> Result<DMatrix<f64>> {
    let kind = label_col.map(|_| LabelKind::Categorical);
    Ok(dataset::load_csv(path, label_col, kind)?.features().clone())
}

fn load_column(path: &Path, column: Option<&str>) -> Result<Vec<f64>> {
    let name = column.unwrap_or("label");
    let headers = {
        let mut r = csv::Reader::from_path(path)?;
        r.headers()?
            .iter()
            .map(|h| h.trim().to_string())
            .collect::<Vec<_>>()
    };
    let chosen = if headers.iter().any(|h| h == name) {
        Some(name)
    } else if column.is_none() && headers.len() == 1 {
        None
    } else {
        return Err(Error::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        });
    };
    let ds = dataset::load_csv(path, chosen, Some(LabelKind::Real));
    match (chosen, ds) {
        (Some(_), Ok(ds)) => Ok(ds.real_labels().unwrap_or_default().to_vec()),
        (None, Ok(ds)) => Ok(ds.features().row(0).iter().copied().collect()),
        // A file holding only the label column has no features left.
        (Some(_), Err(Error::Format { .. })) if headers.len() == 1 => {
            let ds = dataset::load_csv(path, None, None)?;
            Ok(ds.features().row(0).iter().copied().collect())
        }
        (_, Err(e)) => Err(e),
    }
}

fn cmd_eval(cmd: &EvalCommand) -> Result<()> {
    let report = match cmd {
        EvalCommand::Silhouette {
            data,
            k,
            k_min,
            k_max,
            label_col,
            max_iter,
            seed,
        } => {
            let x = load_features(data, label_col.as_deref())?;
            let mut rng = ChaCha20Rng::seed_from_u64(seed.unwrap_or_else(|| rand::rng().random()));
            match k {
                Some(k) => {
                    let km = evaluation::kmeans(&x, *k, *max_iter, &mut rng)?;
                    let s = evaluation::silhouette(&x, &km.assignments)?;
                    EvalReport::new("silhouette", s, json!({ "k": k }))
                }
                None => {
                    if k_min < &2 || k_max < k_min {
                        return Err(usage("k-min", "need 2 <= k-min <= k-max"));
                    }
                    let ks: Vec<usize> = (*k_min..=*k_max).collect();
                    let (scores, best) =
                        evaluation::silhouette_sweep(&x, &ks, *max_iter, &mut rng)?;
                    let best_score = scores.iter().find(|(k, _)| *k == best).map(|s| s.1);
                    let per_k: Vec<_> = scores
                        .iter()
                        .map(|(k, s)| json!({ "k": k, "value": s }))
                        .collect();
                    EvalReport::new(
                        "silhouette",
                        best_score.unwrap_or(f64::NAN),
                        json!({ "k": best, "sweep": per_k }),
                    )
                }
            }
        }
        EvalCommand::Rmse {
            pred,
            truth,
            column,
        } => {
            let p = load_column(pred, column.as_deref())?;
            let t = load_column(truth, column.as_deref())?;
            EvalReport::new(
                "rmse",
                evaluation::rmse(&p, &t)?,
                json!({ "n": t.len(), "column": column.as_deref().unwrap_or("label") }),
            )
        }
        EvalCommand::Dfm { data, m, label_col } => {
            let x = load_features(data, label_col.as_deref())?;
            let d = evaluation::dfm_diagnostic(&x, *m)?;
            EvalReport::new(
                "dfm",
                d.mean_ks,
                json!({
                    "max_ks": d.max_ks,
                    "per_coordinate": d.per_coordinate,
                    "expected_sigma": d.expected_sigma,
                    "degenerate": d.degenerate,
                }),
            )
        }
    };
    println!("{}", report_json(&report)?);
    Ok(())
}

fn class_sizes(args: &BudgetArgs) -> Result<Vec<usize>> {
    if let Some(sizes) = &args.class_sizes {
        if sizes.iter().sum::<usize>() != args.n {
            return Err(usage(
                "class-sizes",
                format!("sizes must sum to n = {}", args.n),
            ));
        }
        return Ok(sizes.clone());
    }
    let l = args
        .classes
        .ok_or_else(|| usage("classes", "gmm plan needs --classes or --class-sizes"))?;
    if l == 0 || l > args.n {
        return Err(usage(
            "classes",
            format!("need 1 <= classes <= n = {}", args.n),
        ));
    }
    Ok(synthesis::allocate_proportional(args.n, &vec![1; l]))
}

/// Public parameters of a planned run.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetPlan {
    pub mode: Mode,
    pub epsilon_mu: f64,
    pub epsilon_sigma: f64,
    pub m: usize,
    pub p: usize,
    pub n: usize,
    pub label_bound: Option<f64>,
    /// Mixture mode only.
    pub class_sizes: Vec<usize>,
    pub covariance_bound: CovarianceBound,
}

impl BudgetPlan {
    /// The ledger a run with these parameters would record.
    pub fn ledger(&self) -> Result<BudgetLedger> {
        let (m, p, n) = (self.m, self.p, self.n);
        let mut ledger = BudgetLedger::new();
        match self.mode {
            Mode::Unsupervised => {
                ledger.record_serial(&SensitivitySpec::mean(m, n)?, self.epsilon_mu)?;
                ledger.record_serial(
                    &SensitivitySpec::covariance(p, n, self.covariance_bound)?,
                    self.epsilon_sigma,
                )?;
            }
            Mode::Supervised => {
                let a = self
                    .label_bound
                    .ok_or_else(|| usage("label-bound", "supervised plan needs --label-bound"))?;
                ledger.record_serial(&SensitivitySpec::mean(m, n)?, self.epsilon_mu)?;
                ledger.record_serial(
                    &SensitivitySpec::augmented_covariance(p, n, a, self.covariance_bound)?,
                    self.epsilon_sigma,
                )?;
            }
            Mode::Gmm => {
                for (i, &n_c) in self.class_sizes.iter().enumerate() {
                    let class = format!("class{}", i + 1);
                    ledger.record_parallel(
                        &SensitivitySpec::mean(m, n_c)?,
                        self.epsilon_mu,
                        CLASS_GROUP,
                        &class,
                    )?;
                    ledger.record_parallel(
                        &SensitivitySpec::covariance(p, n_c, self.covariance_bound)?,
                        self.epsilon_sigma,
                        CLASS_GROUP,
                        &class,
                    )?;
                }
            }
        }
        Ok(ledger)
    }
}

fn cmd_budget(args: &BudgetArgs) -> Result<()> {
    let mode = Mode::from(args.mode);
    let split = split_budget(args.epsilon, args.mu_ratio)?;
    let p = match args.dim {
        Some(p) => p,
        None => projection::default_dimension(args.m)?,
    };
    if p == 0 || p >= args.m {
        return Err(usage(
            "dim",
            format!("need 1 <= dim <= m - 1 = {}", args.m.saturating_sub(1)),
        ));
    }
    let sizes = if mode == Mode::Gmm {
        class_sizes(args)?
    } else {
        Vec::new()
    };
    let ledger = BudgetPlan {
        mode,
        epsilon_mu: split.mu,
        epsilon_sigma: split.sigma,
        m: args.m,
        p,
        n: args.n,
        label_bound: args.label_bound,
        class_sizes: sizes,
        covariance_bound: args.covariance_bound.into(),
    }
    .ledger()?;
    println!(
        "mode {mode}, m={}, n={}, p={p}, covariance bound {}",
        args.m,
        args.n,
        CovarianceBound::from(args.covariance_bound)
    );
    println!("{ledger}");
    Ok(())
}
