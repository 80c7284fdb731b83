//! Full-covariance Gaussian mixtures fitted by EM, one mixture per class,
//! with the component count chosen by BIC.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{sample_mean, scatter, split_classes, ClassDensities, DensityModel, FitConfig, GaussianParams, GmmParams};
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::numerics::{log_sum_exp, SymMatrix};

/// A component whose responsibilities sum below this has collapsed.
const MIN_COMPONENT_MASS: f64 = 2.0;

/// Weights, means and full covariances: `(K − 1) + K·d + K·d(d+1)/2`.
pub fn free_parameters(k: usize, d: usize) -> usize {
    (k - 1) + k * d + k * d * (d + 1) / 2
}

/// `p·ln(M) − 2·ln L̂`.
pub fn bic(log_likelihood: f64, k: usize, d: usize, n_samples: usize) -> f64 {
    free_parameters(k, d) as f64 * (n_samples as f64).ln() - 2.0 * log_likelihood
}

/// Result of one EM run.
#[derive(Debug, Clone)]
pub struct EmOutcome {
    pub params: GmmParams,
    /// Total training log-likelihood under `params`.
    pub log_likelihood: f64,
    /// Mean per-sample log-likelihood before the first M-step and after each
    /// subsequent one.
    pub trace: Vec<f64>,
    pub converged: bool,
}

/// Distance-weighted seeding: first mean uniform, each next one drawn with
/// probability proportional to squared distance from the nearest chosen mean.
fn seed_means(rows: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let first = rng.random_range(0..rows.len());
    let mut means = vec![rows[first].to_vec()];
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    let mut nearest: Vec<f64> = rows.iter().map(|r| sq(r, &means[0])).collect();
    while means.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = rows.len() - 1;
            for (i, w) in nearest.iter().enumerate() {
                if target < *w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..rows.len())
        };
        let c = rows[pick].to_vec();
        for (n, r) in nearest.iter_mut().zip(rows) {
            *n = n.min(sq(r, &c));
        }
        means.push(c);
    }
    means
}

/// Fills `resp` (row-major `M x K`) with responsibilities; returns the total
/// log-likelihood.
fn e_step(rows: &[&[f64]], params: &GmmParams, resp: &mut [f64]) -> f64 {
    let k = params.n_components();
    let d = params.dim();
    let log_w: Vec<f64> = params.weights.iter().map(|w| w.ln()).collect();
    resp.par_chunks_mut(k)
        .zip(rows.par_iter())
        .map_init(
            || vec![0.0; d],
            |scratch, (r, x)| {
                for (j, c) in params.components.iter().enumerate() {
                    r[j] = log_w[j] + c.log_density_with(x, scratch);
                }
                let ll = log_sum_exp(r);
                for v in r.iter_mut() {
                    *v = (*v - ll).exp();
                }
                ll
            },
        )
        .collect::<Vec<f64>>()
        .iter()
        .sum()
}

/// Re-estimates parameters from responsibilities; `None` when a component
/// has collapsed or its covariance cannot be factored.
fn m_step(rows: &[&[f64]], resp: &[f64], k: usize, cfg: &FitConfig) -> Option<GmmParams> {
    let d = rows[0].len();
    let mass: Vec<f64> = (0..k).map(|j| resp.iter().skip(j).step_by(k).sum()).collect();
    if mass.iter().any(|&nj| !(nj >= MIN_COMPONENT_MASS)) {
        return None;
    }
    let total: f64 = mass.iter().sum();
    let weights: Vec<f64> = mass.iter().map(|nj| nj / total).collect();

    let components = (0..k)
        .into_par_iter()
        .map(|j| {
            let mut mean = vec![0.0; d];
            for (x, r) in rows.iter().zip(resp.chunks_exact(k)) {
                let w = r[j];
                for (m, v) in mean.iter_mut().zip(x.iter()) {
                    *m += w * v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= mass[j]);
            let mut cov = SymMatrix::zeros(d);
            let mut delta = vec![0.0; d];
            for (x, r) in rows.iter().zip(resp.chunks_exact(k)) {
                for ((o, v), m) in delta.iter_mut().zip(x.iter()).zip(&mean) {
                    *o = v - m;
                }
                cov.add_outer(&delta, r[j]);
            }
            cov.scale(1.0 / mass[j]);
            GaussianParams::new(mean, cov, cfg.jitter).ok()
        })
        .collect::<Option<Vec<_>>>()?;

    let params = GmmParams { weights, components };
    debug_assert!((params.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    Some(params)
}

/// One EM run with `k` components from a seeded initialization. Returns
/// `Ok(None)` when the run collapses.
pub fn run_em(rows: &[&[f64]], k: usize, cfg: &FitConfig, rng: &mut ChaCha8Rng) -> Result<Option<EmOutcome>> {
    if k == 0 || rows.len() < 2 * k {
        return Err(Error::InsufficientSamples {
            needed: 2 * k.max(1),
            got: rows.len(),
        });
    }
    let d = rows[0].len();
    let m = rows.len() as f64;

    let class_mean = sample_mean(rows, d);
    let mut class_cov = scatter(rows, &class_mean);
    class_cov.scale(1.0 / m);
    let components = match seed_means(rows, k, rng)
        .into_iter()
        .map(|mu| GaussianParams::new(mu, class_cov.clone(), cfg.jitter))
        .collect::<Result<Vec<_>>>()
    {
        Ok(c) => c,
        Err(_) => return Ok(None),
    };
    let mut params = GmmParams {
        weights: vec![1.0 / k as f64; k],
        components,
    };

    let mut resp = vec![0.0; rows.len() * k];
    let mut ll = e_step(rows, &params, &mut resp);
    let mut trace = vec![ll / m];
    let mut converged = false;
    for _ in 0..cfg.em_max_iters {
        let Some(next) = m_step(rows, &resp, k, cfg) else {
            return Ok(None);
        };
        params = next;
        let prev = ll;
        ll = e_step(rows, &params, &mut resp);
        trace.push(ll / m);
        if !ll.is_finite() {
            return Ok(None);
        }
        if (ll - prev).abs() < cfg.em_rel_tol * prev.abs() {
            converged = true;
            break;
        }
    }
    Ok(Some(EmOutcome {
        params,
        log_likelihood: ll,
        trace,
        converged,
    }))
}

/// BIC bookkeeping for one component count.
#[derive(Debug, Clone)]
pub struct ComponentCandidate {
    pub k: usize,
    /// `None` when every restart collapsed.
    pub best: Option<EmOutcome>,
    /// Index of the restart that produced `best`.
    pub best_restart: Option<usize>,
    pub bic: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ComponentSearch {
    pub candidates: Vec<ComponentCandidate>,
    pub selected_k: usize,
}

impl ComponentSearch {
    pub fn selected(&self) -> &EmOutcome {
        self.candidates[self.selected_k - 1]
            .best
            .as_ref()
            .expect("selected candidate has a fit")
    }
}

fn restart_rng(seed: u64, class: usize, k: usize, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((class as u64) << 40) | ((k as u64) << 20) | restart as u64);
    rng
}

/// Runs EM for `K = 1..=cfg.gmm_max_components` with `cfg.em_restarts` seeded
/// restarts each and keeps the candidate with the smallest BIC (smaller `K`
/// on ties). `class` only feeds the RNG stream and error messages.
pub fn select_components(rows: &[&[f64]], cfg: &FitConfig, class: usize) -> Result<ComponentSearch> {
    cfg.validate()?;
    let needed = 2 * cfg.gmm_max_components;
    if rows.len() < needed {
        return Err(Error::ClassTooSmall {
            class,
            got: rows.len(),
            needed,
        });
    }
    let d = rows[0].len();
    let jobs: Vec<(usize, usize)> = (1..=cfg.gmm_max_components)
        .flat_map(|k| (0..cfg.em_restarts).map(move |r| (k, r)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(k, r)| run_em(rows, k, cfg, &mut restart_rng(cfg.seed, class, k, r)))
        .collect::<Result<Vec<_>>>()?;

    let mut candidates = Vec::with_capacity(cfg.gmm_max_components);
    let mut runs = runs.into_iter();
    for k in 1..=cfg.gmm_max_components {
        let mut best: Option<(usize, EmOutcome)> = None;
        for r in 0..cfg.em_restarts {
            if let Some(out) = runs.next().flatten() {
                // strict > keeps the lowest restart index on ties
                if best.as_ref().is_none_or(|(_, b)| out.log_likelihood > b.log_likelihood) {
                    best = Some((r, out));
                }
            }
        }
        let bic_value = best.as_ref().map(|(_, b)| bic(b.log_likelihood, k, d, rows.len()));
        candidates.push(ComponentCandidate {
            k,
            best_restart: best.as_ref().map(|(r, _)| *r),
            best: best.map(|(_, b)| b),
            bic: bic_value,
        });
    }

    let selected_k = candidates
        .iter()
        .filter_map(|c| c.bic.map(|b| (c.k, b)))
        .fold(None, |acc: Option<(usize, f64)>, (k, b)| match acc {
            Some((_, best)) if best <= b => acc,
            _ => Some((k, b)),
        })
        .map(|(k, _)| k)
        .ok_or(Error::EmDegenerate { class })?;
    Ok(ComponentSearch {
        candidates,
        selected_k,
    })
}

/// Fits one BIC-selected mixture per class.
pub fn fit_gmm(fs: &FeatureSet, cfg: &FitConfig) -> Result<DensityModel> {
    cfg.validate()?;
    let split = split_classes(fs)?;
    let needed = 2 * cfg.gmm_max_components;
    for (class, rows) in split.rows.iter().enumerate() {
        if rows.len() < needed {
            return Err(Error::ClassTooSmall {
                class,
                got: rows.len(),
                needed,
            });
        }
    }
    let mixtures = split
        .rows
        .par_iter()
        .enumerate()
        .map(|(class, rows)| {
            let search = select_components(rows, cfg, class)?;
            let idx = search.selected_k - 1;
            Ok(search
                .candidates
                .into_iter()
                .nth(idx)
                .and_then(|c| c.best)
                .expect("selected candidate has a fit")
                .params)
        })
        .collect::<Result<Vec<_>>>()?;
    DensityModel::new(fs.n_dims, split.priors, ClassDensities::Gmm(mixtures))
}
