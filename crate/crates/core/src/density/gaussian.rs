use rayon::prelude::*;

use super::{sample_mean, scatter, split_classes, ClassDensities, DensityModel, GaussianParams, TiedParams};
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::numerics::{self, JitterPolicy};

fn class_pd_error(class: usize) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NotPositiveDefinite { max_jitter } => Error::ClassNotPositiveDefinite { class, max_jitter },
        other => other,
    }
}

/// Maximum-likelihood Gaussian per class (`1/M_k` covariance normalization).
pub fn fit_gaussian_separate(fs: &FeatureSet) -> Result<DensityModel> {
    fit_separate_with(fs, JitterPolicy::default())
}

pub(crate) fn fit_separate_with(fs: &FeatureSet, policy: JitterPolicy) -> Result<DensityModel> {
    let split = split_classes(fs)?;
    let d = fs.n_dims;
    for (class, rows) in split.rows.iter().enumerate() {
        if rows.len() < 2 {
            return Err(Error::ClassTooSmall {
                class,
                got: rows.len(),
                needed: 2,
            });
        }
    }
    let params = split
        .rows
        .par_iter()
        .enumerate()
        .map(|(class, rows)| {
            let mean = sample_mean(rows, d);
            let mut cov = scatter(rows, &mean);
            cov.scale(1.0 / rows.len() as f64);
            GaussianParams::new(mean, cov, policy).map_err(class_pd_error(class))
        })
        .collect::<Result<Vec<_>>>()?;
    DensityModel::new(d, split.priors, ClassDensities::Separate(params))
}

/// Per-class means with one covariance pooled from within-class residuals
/// of every labeled sample.
pub fn fit_gaussian_tied(fs: &FeatureSet) -> Result<DensityModel> {
    fit_tied_with(fs, JitterPolicy::default())
}

pub(crate) fn fit_tied_with(fs: &FeatureSet, policy: JitterPolicy) -> Result<DensityModel> {
    let split = split_classes(fs)?;
    let d = fs.n_dims;
    if split.n_labeled < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: split.n_labeled,
        });
    }
    if let Some(class) = split.rows.iter().position(Vec::is_empty) {
        return Err(Error::ClassTooSmall {
            class,
            got: 0,
            needed: 1,
        });
    }
    let per_class: Vec<_> = split
        .rows
        .par_iter()
        .map(|rows| {
            let mean = sample_mean(rows, d);
            let s = scatter(rows, &mean);
            (mean, s)
        })
        .collect();

    let mut means = Vec::with_capacity(per_class.len());
    let mut pooled = numerics::SymMatrix::zeros(d);
    for (mean, s) in per_class {
        pooled.add_assign(&s);
        means.push(mean);
    }
    pooled.scale(1.0 / split.n_labeled as f64);
    let chol = numerics::cholesky(&pooled, policy)?;
    DensityModel::new(
        d,
        split.priors,
        ClassDensities::Tied(TiedParams {
            means,
            cov: pooled,
            chol,
        }),
    )
}
