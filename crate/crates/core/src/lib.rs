//! Class-conditional density modelling of deep features.
//!
//! Features of one network layer are read from `FDMP` dumps, reduced by
//! average pooling and PCA, and modelled per class with a tied-covariance
//! Gaussian, a separate-covariance Gaussian, or a BIC-selected Gaussian
//! mixture. The per-class log-likelihoods of a test sample drive both
//! likelihood-based classification and an uncertainty score for detecting
//! out-of-distribution and adversarial inputs, evaluated with AUROC/AUPR.
//!
//! ```no_run
//! use featlik::{density, features, preprocess, scoring};
//!
//! let train = features::read_feature_dump("train.fdmp")?;
//! let pre = preprocess::fit_preprocessor(&train, 4, 0.995)?;
//! let z = preprocess::transform(&pre, &train)?;
//! let model = density::fit(&z, &density::FitConfig::new(density::DensityKind::Separate))?;
//! let test = features::read_feature_dump("test.fdmp")?;
//! let table = scoring::score_set(&model, &pre, &test)?;
//! println!("accuracy {}", scoring::classify_accuracy(&table)?);
//! # Ok::<(), featlik::Error>(())
//! ```

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod archive;
pub mod density;
pub mod error;
pub mod features;
pub mod metrics;
pub mod numerics;
pub mod preprocess;
pub mod scoring;
pub mod syngen;

pub use error::{Error, Result};
