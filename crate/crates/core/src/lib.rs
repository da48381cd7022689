//! Differentially private synthetic data from random orthonormal projections
//! and Gaussian generative models.
//!
//! Samples are normalized, centered on a noisy mean and projected onto a random
//! orthonormal basis. A Gaussian (or one Gaussian per class) is then fitted to
//! the projected data with a Laplace-perturbed second-moment matrix and
//! sampled to produce the release.
//!
//! ```
//! use nalgebra::DMatrix;
//! use rand::SeedableRng;
//! use rand_chacha::ChaCha20Rng;
//! use ron_gauss::{split_budget, synthesize, Dataset, Mode, SynthConfig};
//!
//! let x = DMatrix::from_fn(6, 200, |i, j| ((i * 7 + j * 13) % 11) as f64 - 5.0);
//! let data = Dataset::new(x)?;
//! let split = split_budget(1.0, 0.3)?;
//! let cfg = SynthConfig::new(split.mu, split.sigma).with_dim(3);
//! let mut rng = ChaCha20Rng::from_rng(&mut rand::rng());
//! let release = synthesize(Mode::Unsupervised, &data, &cfg, &mut rng)?;
//! assert_eq!(release.synthetic.features().nrows(), 3);
//! assert_eq!(release.ledger.total(), 1.0);
//! # Ok::<(), ron_gauss::Error>(())
//! ```

pub mod cli;
pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod mechanism;
pub mod preprocess;
pub mod projection;
pub mod synthesis;

pub use dataset::{Dataset, LabelKind, Labels};
pub use error::{Error, Result};
pub use mechanism::{split_budget, BudgetLedger, BudgetSplit, SensitivitySpec};
pub use projection::{generate_ron, RonProjection, SourceLaw};
pub use synthesis::{synthesize, Mode, Release, SynthConfig};
