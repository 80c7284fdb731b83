//! Class-conditional densities over (preprocessed) feature vectors.
//!
//! Three families are supported: Gaussians sharing one covariance across
//! classes, Gaussians with a covariance per class, and a Gaussian mixture per
//! class whose component count is picked by BIC. All log-likelihoods keep
//! every normalizing constant; the bare Mahalanobis distance is only exposed
//! through [`mahalanobis_score`] for tied models.

mod gaussian;
mod gmm;

pub use gaussian::{fit_gaussian_separate, fit_gaussian_tied};
pub use gmm::{
    bic, fit_gmm, free_parameters, run_em, select_components, ComponentCandidate, ComponentSearch,
    EmOutcome,
};

use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::numerics::{self, gaussian_log_density, log_sum_exp, CholeskyFactor, JitterPolicy, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DensityKind {
    Tied,
    Separate,
    Gmm,
}

impl DensityKind {
    pub fn name(self) -> &'static str {
        match self {
            DensityKind::Tied => "tied",
            DensityKind::Separate => "sep",
            DensityKind::Gmm => "gmm",
        }
    }
}

/// One multivariate normal: mean, covariance and its factor.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    mean: Vec<f64>,
    cov: SymMatrix,
    chol: CholeskyFactor,
}

impl GaussianParams {
    /// Factors `cov` under `policy`.
    pub fn new(mean: Vec<f64>, cov: SymMatrix, policy: JitterPolicy) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::DimensionMismatch {
                expected: cov.dim(),
                actual: mean.len(),
            });
        }
        let chol = numerics::cholesky(&cov, policy)?;
        Ok(GaussianParams { mean, cov, chol })
    }

    pub(crate) fn from_parts(mean: Vec<f64>, cov: SymMatrix, chol: CholeskyFactor) -> Result<Self> {
        if mean.len() != cov.dim() || chol.dim() != cov.dim() {
            return Err(Error::CorruptArchive("gaussian block dimensions disagree".into()));
        }
        Ok(GaussianParams { mean, cov, chol })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &SymMatrix {
        &self.cov
    }

    pub fn chol(&self) -> &CholeskyFactor {
        &self.chol
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    #[inline]
    pub(crate) fn log_density_with(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let q = numerics::mahalanobis_sq_with(&self.chol, x, &self.mean, scratch);
        gaussian_log_density(self.dim(), self.chol.log_det(), q)
    }
}

/// Mixture of `n_components` Gaussians with positive weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    weights: Vec<f64>,
    components: Vec<GaussianParams>,
}

impl GmmParams {
    pub fn new(weights: Vec<f64>, components: Vec<GaussianParams>) -> Result<Self> {
        let g = GmmParams { weights, components };
        g.validate()?;
        Ok(g)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.weights.is_empty() || self.weights.len() != self.components.len() {
            return Err(Error::InvalidArgument("mixture needs one weight per component".into()));
        }
        if self.weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::InvalidArgument("mixture weights must be strictly positive".into()));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!("mixture weights sum to {sum}")));
        }
        let d = self.components[0].dim();
        if self.components.iter().any(|c| c.dim() != d) {
            return Err(Error::InvalidArgument("mixture components differ in dimension".into()));
        }
        Ok(())
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianParams] {
        &self.components
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    fn log_density_with(&self, x: &[f64], scratch: &mut [f64], terms: &mut Vec<f64>) -> f64 {
        terms.clear();
        terms.extend(
            self.weights
                .iter()
                .zip(&self.components)
                .map(|(w, c)| w.ln() + c.log_density_with(x, scratch)),
        );
        log_sum_exp(terms)
    }

    /// Log-density of `x` under the mixture.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let mut scratch = vec![0.0; x.len()];
        Ok(self.log_density_with(x, &mut scratch, &mut Vec::new()))
    }
}

/// Per-class means around a single shared covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct TiedParams {
    means: Vec<Vec<f64>>,
    cov: SymMatrix,
    chol: CholeskyFactor,
}

impl TiedParams {
    pub(crate) fn from_parts(means: Vec<Vec<f64>>, cov: SymMatrix, chol: CholeskyFactor) -> Result<Self> {
        let d = cov.dim();
        if means.is_empty() || means.iter().any(|m| m.len() != d) || chol.dim() != d {
            return Err(Error::CorruptArchive("tied block dimensions disagree".into()));
        }
        Ok(TiedParams { means, cov, chol })
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn cov(&self) -> &SymMatrix {
        &self.cov
    }

    pub fn chol(&self) -> &CholeskyFactor {
        &self.chol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ClassDensities {
    Tied(TiedParams),
    Separate(Vec<GaussianParams>),
    Gmm(Vec<GmmParams>),
}

/// A fitted set of class-conditional densities. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityModel {
    dim: usize,
    class_priors: Vec<f64>,
    params: ClassDensities,
}

impl DensityModel {
    /// Assembles a model from explicit parameters after checking that priors
    /// and parameter blocks are consistent.
    pub fn new(dim: usize, class_priors: Vec<f64>, params: ClassDensities) -> Result<Self> {
        let m = DensityModel {
            dim,
            class_priors,
            params,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let n = self.class_priors.len();
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if n == 0 {
            return bad("model has no classes".into());
        }
        let sum: f64 = self.class_priors.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || self.class_priors.iter().any(|&p| !(p >= 0.0)) {
            return bad(format!("class priors sum to {sum}"));
        }
        let (blocks, dims): (usize, Vec<usize>) = match &self.params {
            ClassDensities::Tied(t) => (t.means.len(), t.means.iter().map(Vec::len).chain([t.cov.dim()]).collect()),
            ClassDensities::Separate(g) => (g.len(), g.iter().map(GaussianParams::dim).collect()),
            ClassDensities::Gmm(g) => {
                for mix in g {
                    mix.validate()?;
                }
                (g.len(), g.iter().map(GmmParams::dim).collect())
            }
        };
        if blocks != n {
            return bad(format!("{blocks} parameter blocks for {n} classes"));
        }
        if dims.iter().any(|&d| d != self.dim) {
            return bad("parameter blocks disagree on dimension".into());
        }
        Ok(())
    }

    pub fn kind(&self) -> DensityKind {
        match self.params {
            ClassDensities::Tied(_) => DensityKind::Tied,
            ClassDensities::Separate(_) => DensityKind::Separate,
            ClassDensities::Gmm(_) => DensityKind::Gmm,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.class_priors.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_priors(&self) -> &[f64] {
        &self.class_priors
    }

    pub fn params(&self) -> &ClassDensities {
        &self.params
    }

    /// `(class, component, jitter)` for every factor that needed regularizing.
    /// Component is `None` for single-Gaussian kinds; class is `None` for the
    /// shared tied covariance.
    pub fn jitter_events(&self) -> Vec<(Option<usize>, Option<usize>, f64)> {
        let mut out = Vec::new();
        match &self.params {
            ClassDensities::Tied(t) => {
                if t.chol.jitter_applied() > 0.0 {
                    out.push((None, None, t.chol.jitter_applied()));
                }
            }
            ClassDensities::Separate(g) => {
                for (k, p) in g.iter().enumerate() {
                    if p.chol.jitter_applied() > 0.0 {
                        out.push((Some(k), None, p.chol.jitter_applied()));
                    }
                }
            }
            ClassDensities::Gmm(g) => {
                for (k, mix) in g.iter().enumerate() {
                    for (j, c) in mix.components.iter().enumerate() {
                        if c.chol.jitter_applied() > 0.0 {
                            out.push((Some(k), Some(j), c.chol.jitter_applied()));
                        }
                    }
                }
            }
        }
        out
    }

    fn check(&self, x: &[f64], class: usize) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        if class >= self.n_classes() {
            return Err(Error::BadClassIndex {
                class,
                n_classes: self.n_classes(),
            });
        }
        Ok(())
    }

    fn log_likelihood_with(&self, x: &[f64], class: usize, scratch: &mut [f64], terms: &mut Vec<f64>) -> f64 {
        match &self.params {
            ClassDensities::Tied(t) => {
                let q = numerics::mahalanobis_sq_with(&t.chol, x, &t.means[class], scratch);
                gaussian_log_density(self.dim, t.chol.log_det(), q)
            }
            ClassDensities::Separate(g) => g[class].log_density_with(x, scratch),
            ClassDensities::Gmm(g) => g[class].log_density_with(x, scratch, terms),
        }
    }

    /// `ln p(x | class)` for every class, in class order.
    pub fn log_likelihoods(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x, 0)?;
        let mut scratch = vec![0.0; self.dim];
        let mut terms = Vec::new();
        Ok((0..self.n_classes())
            .map(|k| self.log_likelihood_with(x, k, &mut scratch, &mut terms))
            .collect())
    }
}

/// `ln p(x | class)` with all Gaussian normalizing constants.
pub fn log_likelihood(model: &DensityModel, x: &[f64], class: usize) -> Result<f64> {
    model.check(x, class)?;
    let mut scratch = vec![0.0; model.dim];
    Ok(model.log_likelihood_with(x, class, &mut scratch, &mut Vec::new()))
}

/// Squared Mahalanobis distance to `class` under the shared covariance.
pub fn mahalanobis_score(model: &DensityModel, x: &[f64], class: usize) -> Result<f64> {
    let ClassDensities::Tied(t) = &model.params else {
        return Err(Error::WrongKind(model.kind().name()));
    };
    model.check(x, class)?;
    let mut scratch = vec![0.0; model.dim];
    Ok(numerics::mahalanobis_sq_with(&t.chol, x, &t.means[class], &mut scratch))
}

/// Knobs for [`fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub kind: DensityKind,
    pub gmm_max_components: usize,
    pub em_max_iters: usize,
    pub em_rel_tol: f64,
    pub em_restarts: usize,
    pub seed: u64,
    pub jitter: JitterPolicy,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            kind: DensityKind::Tied,
            gmm_max_components: 10,
            em_max_iters: 200,
            em_rel_tol: 1e-6,
            em_restarts: 3,
            seed: 0,
            jitter: JitterPolicy::default(),
        }
    }
}

impl FitConfig {
    pub fn new(kind: DensityKind) -> Self {
        FitConfig {
            kind,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gmm_max_components == 0 || self.em_max_iters == 0 || self.em_restarts == 0 {
            return Err(Error::InvalidArgument(
                "gmm_max_components, em_max_iters and em_restarts must be positive".into(),
            ));
        }
        if !(self.em_rel_tol > 0.0) {
            return Err(Error::InvalidArgument("em_rel_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Fits the family selected by `cfg.kind` on the labeled rows of `fs`.
pub fn fit(fs: &FeatureSet, cfg: &FitConfig) -> Result<DensityModel> {
    cfg.validate()?;
    match cfg.kind {
        DensityKind::Tied => gaussian::fit_tied_with(fs, cfg.jitter),
        DensityKind::Separate => gaussian::fit_separate_with(fs, cfg.jitter),
        DensityKind::Gmm => fit_gmm(fs, cfg),
    }
}

/// Labeled rows grouped by class plus the empirical class priors.
pub(crate) struct ClassSplit<'a> {
    pub rows: Vec<Vec<&'a [f64]>>,
    pub priors: Vec<f64>,
    pub n_labeled: usize,
}

pub(crate) fn split_classes(fs: &FeatureSet) -> Result<ClassSplit<'_>> {
    fs.validate()?;
    let n_classes = fs.n_classes();
    if n_classes == 0 {
        return Err(Error::NoLabeledSamples);
    }
    let mut rows = vec![Vec::new(); n_classes];
    for (row, &l) in fs.rows().zip(&fs.labels) {
        if l >= 0 {
            rows[l as usize].push(row);
        }
    }
    let n_labeled: usize = rows.iter().map(Vec::len).sum();
    let priors = rows.iter().map(|r| r.len() as f64 / n_labeled as f64).collect();
    Ok(ClassSplit {
        rows,
        priors,
        n_labeled,
    })
}

pub(crate) fn sample_mean(rows: &[&[f64]], dim: usize) -> Vec<f64> {
    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    let inv = 1.0 / rows.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    mean
}

/// Unnormalized scatter `Σ (x − μ)(x − μ)ᵀ`.
pub(crate) fn scatter(rows: &[&[f64]], mean: &[f64]) -> SymMatrix {
    let d = mean.len();
    let mut s = SymMatrix::zeros(d);
    let mut delta = vec![0.0; d];
    for r in rows {
        for ((o, x), m) in delta.iter_mut().zip(r.iter()).zip(mean) {
            *o = x - m;
        }
        s.add_outer(&delta, 1.0);
    }
    s
}
