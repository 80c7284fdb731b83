//! Seeded synthetic feature sets: planted Gaussian classes, planted mixtures,
//! noisy ellipse boundaries and displaced out-of-distribution clusters.
//!
//! All randomness comes from [`RNG_NAME`] seeded through [`rng_for`], so a
//! spec and seed always produce the same bits.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::features::{FeatureSet, UNLABELED};
use crate::numerics::{cholesky, JitterPolicy, SymMatrix};

/// Generator family recorded in provenance strings.
pub const RNG_NAME: &str = "ChaCha8Rng";

pub fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq)]
pub enum GeneratorKind {
    /// Isotropic Gaussian per class. Class `k` has standard deviation
    /// `noise * class_scales[k]` (all 1 when empty); see [`class_means`].
    GaussianClasses { class_scales: Vec<f64> },
    /// `components` equal-weight isotropic clusters per class, neighbouring
    /// centers `separation * noise` apart.
    PlantedGmm { components: usize },
    /// `(a cos θ, b sin θ)` with θ uniform plus isotropic noise; extra
    /// dimensions carry noise only.
    EllipseBoundary { a: f64, b: f64 },
    /// One unlabeled cluster with standard deviation `noise`, centered
    /// `separation * noise` from the origin along the all-ones direction.
    OodShift,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub dims: usize,
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
}

impl GeneratorSpec {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::BadSpec(m.into()));
        if self.dims == 0 {
            return bad("dims must be at least 1");
        }
        if self.samples_per_class == 0 || self.n_classes == 0 {
            return bad("samples_per_class and n_classes must be at least 1");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) || !self.separation.is_finite() {
            return bad("noise must be finite and non-negative, separation finite");
        }
        match &self.kind {
            GeneratorKind::GaussianClasses { class_scales } => {
                if !class_scales.is_empty() && class_scales.len() != self.n_classes {
                    return bad("class_scales needs one entry per class");
                }
                if class_scales.iter().any(|&s| !(s > 0.0)) {
                    return bad("class scales must be positive");
                }
            }
            GeneratorKind::PlantedGmm { components } => {
                if *components == 0 {
                    return bad("components must be at least 1");
                }
            }
            GeneratorKind::EllipseBoundary { a, b } => {
                if self.dims < 2 {
                    return bad("ellipse needs at least 2 dims");
                }
                if !(*a > 0.0 && *b > 0.0) {
                    return bad("ellipse axes must be positive");
                }
            }
            GeneratorKind::OodShift => {}
        }
        Ok(())
    }
}

/// Ground-truth class means of a `GaussianClasses` spec: class `k` sits at
/// `separation * noise` along axis `k mod dims`, sign alternating every
/// `dims` classes.
pub fn class_means(spec: &GeneratorSpec) -> Vec<Vec<f64>> {
    let step = spec.separation * spec.noise;
    (0..spec.n_classes)
        .map(|k| {
            let mut m = vec![0.0; spec.dims];
            let sign = if (k / spec.dims).is_multiple_of(2) { 1.0 } else { -1.0 };
            m[k % spec.dims] = sign * step * (1 + k / (2 * spec.dims)) as f64;
            m
        })
        .collect()
}

/// Ground-truth component centers of a `PlantedGmm` spec, per class.
pub fn mixture_centers(spec: &GeneratorSpec) -> Vec<Vec<Vec<f64>>> {
    let GeneratorKind::PlantedGmm { components } = spec.kind else {
        return Vec::new();
    };
    let gap = spec.separation * spec.noise;
    let radius = if components > 1 {
        gap / (2.0 * (PI / components as f64).sin())
    } else {
        0.0
    };
    let class_offset = if spec.dims == 1 {
        gap * (components as f64 + 1.0)
    } else {
        2.0 * radius + gap
    };
    (0..spec.n_classes)
        .map(|k| {
            (0..components)
                .map(|j| {
                    let mut c = vec![0.0; spec.dims];
                    if spec.dims == 1 {
                        c[0] = j as f64 * gap;
                    } else {
                        let t = 2.0 * PI * j as f64 / components as f64;
                        c[0] = radius * t.cos();
                        c[1] = radius * t.sin();
                    }
                    c[0] += k as f64 * class_offset;
                    c
                })
                .collect()
        })
        .collect()
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn generate(spec: &GeneratorSpec) -> Result<FeatureSet> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed);
    let d = spec.dims;
    let m = spec.samples_per_class;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    let name = match spec.kind {
        GeneratorKind::GaussianClasses { .. } => "gaussian_classes",
        GeneratorKind::PlantedGmm { .. } => "planted_gmm",
        GeneratorKind::EllipseBoundary { .. } => "ellipse_boundary",
        GeneratorKind::OodShift => "ood_shift",
    };

    match &spec.kind {
        GeneratorKind::GaussianClasses { class_scales } => {
            for (k, mean) in class_means(spec).iter().enumerate() {
                let sd = spec.noise * class_scales.get(k).copied().unwrap_or(1.0);
                for _ in 0..m {
                    data.extend(mean.iter().map(|mu| mu + sd * standard_normal(&mut rng)));
                    labels.push(k as i32);
                }
            }
        }
        GeneratorKind::PlantedGmm { components } => {
            for (k, centers) in mixture_centers(spec).iter().enumerate() {
                for i in 0..m {
                    let c = &centers[i % components];
                    data.extend(c.iter().map(|mu| mu + spec.noise * standard_normal(&mut rng)));
                    labels.push(k as i32);
                }
            }
        }
        GeneratorKind::EllipseBoundary { a, b } => {
            for k in 0..spec.n_classes {
                let shift = 3.0 * a * k as f64;
                for _ in 0..m {
                    let t = rng.random_range(0.0..2.0 * PI);
                    let mut row = vec![shift + a * t.cos(), b * t.sin()];
                    row.resize(d, 0.0);
                    for v in row.iter_mut() {
                        *v += spec.noise * standard_normal(&mut rng);
                    }
                    data.extend(row);
                    labels.push(k as i32);
                }
            }
        }
        GeneratorKind::OodShift => {
            let offset = spec.separation * spec.noise / (d as f64).sqrt();
            let total = m * spec.n_classes;
            data.extend((0..total * d).map(|_| offset + spec.noise * standard_normal(&mut rng)));
            labels.resize(total, UNLABELED);
        }
    }
    FeatureSet::new(name, d, labels, data, None)
}

/// Draws `samples_per_class` rows from `N(means[k], covs[k])` for every class.
pub fn planted_classes(
    means: &[Vec<f64>],
    covs: &[SymMatrix],
    samples_per_class: usize,
    seed: u64,
) -> Result<FeatureSet> {
    if means.is_empty() || means.len() != covs.len() {
        return Err(Error::BadSpec("need one covariance per mean".into()));
    }
    let d = means[0].len();
    if d == 0 || means.iter().any(|m| m.len() != d) || covs.iter().any(|c| c.dim() != d) {
        return Err(Error::BadSpec("means and covariances disagree on dimension".into()));
    }
    let mut rng = rng_for(seed);
    let mut data = Vec::with_capacity(means.len() * samples_per_class * d);
    let mut labels = Vec::with_capacity(means.len() * samples_per_class);
    let mut z = vec![0.0; d];
    for (k, (mean, cov)) in means.iter().zip(covs).enumerate() {
        let l = cholesky(cov, JitterPolicy::none())
            .map_err(|_| Error::BadSpec(format!("covariance {k} is not positive definite")))?;
        for _ in 0..samples_per_class {
            z.iter_mut().for_each(|v| *v = standard_normal(&mut rng));
            for (i, mu) in mean.iter().enumerate() {
                let lz: f64 = (0..=i).map(|j| l.get(i, j) * z[j]).sum();
                data.push(mu + lz);
            }
            labels.push(k as i32);
        }
    }
    FeatureSet::new("planted", d, labels, data, None)
}

/// Deterministically shuffles indices `0..n` and splits off the first
/// `train_fraction` as training rows.
pub fn train_test_split(fs: &FeatureSet, train_fraction: f64, seed: u64) -> (FeatureSet, FeatureSet) {
    let n = fs.n_samples();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = rng_for(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let cut = ((n as f64) * train_fraction).round() as usize;
    (fs.select(&idx[..cut]), fs.select(&idx[cut..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: GeneratorKind) -> GeneratorSpec {
        GeneratorSpec {
            kind,
            dims: 2,
            n_classes: 2,
            samples_per_class: 100,
            separation: 5.0,
            noise: 1.0,
            seed: 7,
        }
    }

    #[test]
    fn noiseless_circle() {
        let s = GeneratorSpec {
            noise: 0.0,
            n_classes: 1,
            ..spec(GeneratorKind::EllipseBoundary { a: 1.0, b: 1.0 })
        };
        let fs = generate(&s).unwrap();
        for r in fs.rows() {
            assert!((r[0].hypot(r[1]) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_bits() {
        for kind in [
            GeneratorKind::GaussianClasses { class_scales: vec![] },
            GeneratorKind::PlantedGmm { components: 3 },
            GeneratorKind::EllipseBoundary { a: 3.0, b: 1.0 },
            GeneratorKind::OodShift,
        ] {
            let s = spec(kind);
            let a = generate(&s).unwrap();
            let b = generate(&s).unwrap();
            assert_eq!(a.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            assert_eq!(a.labels, b.labels);
            let c = generate(&GeneratorSpec { seed: 8, ..s }).unwrap();
            assert_ne!(a.data, c.data);
        }
    }

    #[test]
    fn ood_is_unlabeled_and_displaced() {
        let s = GeneratorSpec {
            separation: 20.0,
            samples_per_class: 2000,
            n_classes: 1,
            ..spec(GeneratorKind::OodShift)
        };
        let fs = generate(&s).unwrap();
        assert!(fs.labels.iter().all(|&l| l == UNLABELED));
        let mean: Vec<f64> = (0..2).map(|j| fs.rows().map(|r| r[j]).sum::<f64>() / 2000.0).collect();
        let dist = mean[0].hypot(mean[1]);
        assert!((dist - 20.0).abs() < 0.2, "{dist}");
    }

    #[test]
    fn moments_converge() {
        let s = GeneratorSpec {
            kind: GeneratorKind::GaussianClasses { class_scales: vec![1.0, 2.0, 0.5] },
            dims: 3,
            n_classes: 3,
            samples_per_class: 100_000,
            separation: 4.0,
            noise: 1.5,
            seed: 3,
        };
        let fs = generate(&s).unwrap();
        for (k, truth) in class_means(&s).iter().enumerate() {
            let rows = fs.class_rows(k);
            for j in 0..3 {
                let m = rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64;
                assert!((m - truth[j]).abs() < 0.01 * s.noise * 2.0, "class {k} dim {j}: {m} vs {}", truth[j]);
            }
        }
    }

    #[test]
    fn planted_gmm_centers_are_separated() {
        let s = GeneratorSpec {
            kind: GeneratorKind::PlantedGmm { components: 3 },
            n_classes: 1,
            separation: 10.0,
            ..spec(GeneratorKind::OodShift)
        };
        let c = &mixture_centers(&s)[0];
        for a in 0..3 {
            for b in a + 1..3 {
                let dist: f64 = c[a].iter().zip(&c[b]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                assert!((dist - 10.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bad_specs() {
        assert!(matches!(generate(&GeneratorSpec { dims: 0, ..spec(GeneratorKind::OodShift) }), Err(Error::BadSpec(_))));
        assert!(matches!(
            generate(&GeneratorSpec { dims: 1, ..spec(GeneratorKind::EllipseBoundary { a: 1.0, b: 1.0 }) }),
            Err(Error::BadSpec(_))
        ));
        assert!(matches!(
            generate(&spec(GeneratorKind::GaussianClasses { class_scales: vec![1.0] })),
            Err(Error::BadSpec(_))
        ));
        assert!(matches!(generate(&spec(GeneratorKind::PlantedGmm { components: 0 })), Err(Error::BadSpec(_))));
    }

    #[test]
    fn split_partitions_rows() {
        let fs = generate(&spec(GeneratorKind::GaussianClasses { class_scales: vec![] })).unwrap();
        let (a, b) = train_test_split(&fs, 0.75, 1);
        assert_eq!(a.n_samples(), 150);
        assert_eq!(b.n_samples(), 50);
        let mut all: Vec<u64> = a.data.iter().chain(&b.data).map(|v| v.to_bits()).collect();
        let mut orig: Vec<u64> = fs.data.iter().map(|v| v.to_bits()).collect();
        all.sort_unstable();
        orig.sort_unstable();
        assert_eq!(all, orig);
    }
}
