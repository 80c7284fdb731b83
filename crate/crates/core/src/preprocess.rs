//! Average pooling followed by variance-retaining PCA.
//!
//! A [`Preprocessor`] is fitted once per layer on in-distribution training
//! features; every other set only goes through [`transform`].

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::features::{FeatureSet, SpatialShape};

pub const DEFAULT_POOL_FACTOR: usize = 4;
pub const DEFAULT_RETAIN: f64 = 0.995;

/// Averages non-overlapping windows.
///
/// With a spatial shape, `factor` must be `s²` and each channel's `H x W` map
/// is reduced by `s x s` windows. Without one, consecutive runs of `factor`
/// values are averaged.
pub fn average_pool(fs: &FeatureSet, factor: usize) -> Result<FeatureSet> {
    if factor == 0 {
        return Err(Error::InvalidArgument("pool factor must be positive".into()));
    }
    if factor == 1 {
        return Ok(fs.clone());
    }
    match fs.spatial_shape {
        Some(shape) => pool_spatial(fs, shape, factor),
        None => pool_flat(fs, factor),
    }
}

fn pool_flat(fs: &FeatureSet, factor: usize) -> Result<FeatureSet> {
    if !fs.n_dims.is_multiple_of(factor) {
        return Err(Error::ShapeNotDivisible(format!(
            "{} features cannot be pooled by {factor}",
            fs.n_dims
        )));
    }
    let inv = 1.0 / factor as f64;
    let data = fs
        .data
        .chunks_exact(factor)
        .map(|w| w.iter().sum::<f64>() * inv)
        .collect();
    FeatureSet::new(fs.layer_name.clone(), fs.n_dims / factor, fs.labels.clone(), data, None)
}

fn pool_spatial(fs: &FeatureSet, shape: SpatialShape, factor: usize) -> Result<FeatureSet> {
    let side = (factor as f64).sqrt().round() as usize;
    if side * side != factor {
        return Err(Error::ShapeNotDivisible(format!(
            "spatial pooling needs a square factor, got {factor}"
        )));
    }
    if !shape.height.is_multiple_of(side) || !shape.width.is_multiple_of(side) {
        return Err(Error::ShapeNotDivisible(format!(
            "{}x{} map cannot be pooled by {side}x{side} windows",
            shape.height, shape.width
        )));
    }
    let (oh, ow) = (shape.height / side, shape.width / side);
    let out_shape = SpatialShape::new(shape.channels, oh, ow);
    let inv = 1.0 / factor as f64;
    let mut data = Vec::with_capacity(fs.n_samples() * out_shape.len());
    for row in fs.rows() {
        for c in 0..shape.channels {
            let plane = &row[c * shape.height * shape.width..(c + 1) * shape.height * shape.width];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for dy in 0..side {
                        let y = oy * side + dy;
                        let start = y * shape.width + ox * side;
                        acc += plane[start..start + side].iter().sum::<f64>();
                    }
                    data.push(acc * inv);
                }
            }
        }
    }
    FeatureSet::new(
        fs.layer_name.clone(),
        out_shape.len(),
        fs.labels.clone(),
        data,
        Some(out_shape),
    )
}

/// Fitted pooling + projection.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessor {
    pub(crate) pool_factor: usize,
    pub(crate) input_dims: usize,
    pub(crate) input_shape: Option<SpatialShape>,
    pub(crate) retained_variance_target: f64,
    pub(crate) pca_mean: Vec<f64>,
    /// `n' x d`, row-major, orthonormal columns.
    pub(crate) pca_basis: Vec<f64>,
    /// Variance along each retained direction, descending.
    pub(crate) component_variances: Vec<f64>,
    pub(crate) total_variance: f64,
}

impl Preprocessor {
    pub fn pool_factor(&self) -> usize {
        self.pool_factor
    }

    /// Dimensionality of the raw (pre-pooling) features this was fitted on.
    pub fn input_dims(&self) -> usize {
        self.input_dims
    }

    pub fn input_shape(&self) -> Option<SpatialShape> {
        self.input_shape
    }

    /// Dimensionality after pooling, before projection.
    pub fn pooled_dims(&self) -> usize {
        self.pca_mean.len()
    }

    pub fn output_dims(&self) -> usize {
        self.component_variances.len()
    }

    pub fn retained_variance_target(&self) -> f64 {
        self.retained_variance_target
    }

    pub fn pca_mean(&self) -> &[f64] {
        &self.pca_mean
    }

    pub fn pca_basis(&self) -> &[f64] {
        &self.pca_basis
    }

    pub fn component_variances(&self) -> &[f64] {
        &self.component_variances
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    /// Fraction of the pooled training variance kept by the projection.
    pub fn explained_variance_ratio(&self) -> f64 {
        if self.total_variance > 0.0 {
            self.component_variances.iter().sum::<f64>() / self.total_variance
        } else {
            1.0
        }
    }

    /// Maps projected coordinates back into the pooled feature space.
    pub fn inverse_project(&self, coords: &[f64]) -> Result<Vec<f64>> {
        let d = self.output_dims();
        if coords.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: coords.len(),
            });
        }
        Ok(self
            .pca_mean
            .iter()
            .enumerate()
            .map(|(i, m)| m + (0..d).map(|j| self.pca_basis[i * d + j] * coords[j]).sum::<f64>())
            .collect())
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let n = self.pca_mean.len();
        let d = self.component_variances.len();
        if n == 0 || d == 0 || d > n || self.pca_basis.len() != n * d || self.pool_factor == 0 {
            return Err(Error::CorruptArchive("preprocessor dimensions are inconsistent".into()));
        }
        if let Some(s) = self.input_shape {
            if s.len() != self.input_dims {
                return Err(Error::CorruptArchive("preprocessor input shape mismatch".into()));
            }
        }
        if !(self.retained_variance_target > 0.0 && self.retained_variance_target <= 1.0) {
            return Err(Error::CorruptArchive("retain target outside (0, 1]".into()));
        }
        Ok(())
    }
}

/// PCA on already-pooled features; the returned preprocessor has pooling disabled.
pub fn fit_pca(fs: &FeatureSet, retain: f64) -> Result<Preprocessor> {
    if !(retain > 0.0 && retain <= 1.0) {
        return Err(Error::InvalidArgument(format!("retain must be in (0, 1], got {retain}")));
    }
    let m = fs.n_samples();
    if m < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: m });
    }
    let n = fs.n_dims;

    let mut mean = vec![0.0; n];
    for row in fs.rows() {
        for (acc, v) in mean.iter_mut().zip(row) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= m as f64);

    let centered = DMatrix::from_fn(m, n, |i, j| fs.data[i * n + j] - mean[j]);
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors were requested");

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let variances: Vec<f64> = order
        .iter()
        .map(|&k| svd.singular_values[k].powi(2) / m as f64)
        .collect();
    let total: f64 = variances.iter().sum();

    let d = if total > 0.0 {
        let mut cum = 0.0;
        let mut chosen = None;
        for (k, v) in variances.iter().enumerate() {
            cum += v;
            if cum / total >= retain {
                chosen = Some(k + 1);
                break;
            }
        }
        // retain = 1 can miss by one ulp; keep every non-null direction
        chosen.unwrap_or_else(|| variances.iter().filter(|&&v| v > 0.0).count().max(1))
    } else {
        1
    };

    let mut basis = vec![0.0; n * d];
    for (j, &k) in order.iter().take(d).enumerate() {
        let dir = v_t.row(k);
        // deterministic sign: largest-magnitude entry positive
        let pivot = dir.iter().copied().fold(0.0_f64, |best, v| if v.abs() > best.abs() { v } else { best });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            basis[i * d + j] = sign * dir[i];
        }
    }

    Ok(Preprocessor {
        pool_factor: 1,
        input_dims: n,
        input_shape: fs.spatial_shape,
        retained_variance_target: retain,
        pca_mean: mean,
        pca_basis: basis,
        component_variances: variances[..d].to_vec(),
        total_variance: total,
    })
}

/// Pools `fs` by `pool_factor`, then fits PCA on the result.
pub fn fit_preprocessor(fs: &FeatureSet, pool_factor: usize, retain: f64) -> Result<Preprocessor> {
    let pooled = average_pool(fs, pool_factor)?;
    let mut p = fit_pca(&pooled, retain)?;
    p.pool_factor = pool_factor;
    p.input_dims = fs.n_dims;
    p.input_shape = fs.spatial_shape;
    Ok(p)
}

/// Pools with the fitted factor and projects onto the retained basis.
pub fn transform(p: &Preprocessor, fs: &FeatureSet) -> Result<FeatureSet> {
    if fs.n_dims != p.input_dims {
        return Err(Error::DimensionMismatch {
            expected: p.input_dims,
            actual: fs.n_dims,
        });
    }
    let mut input = fs.clone();
    // dumps of the same layer may or may not carry the shape; trust the fit
    if p.pool_factor > 1 && input.spatial_shape.is_none() {
        input.spatial_shape = p.input_shape;
    }
    let pooled = average_pool(&input, p.pool_factor)?;
    let n = p.pooled_dims();
    if pooled.n_dims != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: pooled.n_dims,
        });
    }
    let d = p.output_dims();
    let mut data = vec![0.0; pooled.n_samples() * d];
    let mut centered = vec![0.0; n];
    for (row, out) in pooled.rows().zip(data.chunks_exact_mut(d)) {
        for ((c, x), m) in centered.iter_mut().zip(row).zip(&p.pca_mean) {
            *c = x - m;
        }
        for (i, &c) in centered.iter().enumerate() {
            let b = &p.pca_basis[i * d..(i + 1) * d];
            for (o, bij) in out.iter_mut().zip(b) {
                *o += c * bij;
            }
        }
    }
    FeatureSet::new(fs.layer_name.clone(), d, fs.labels.clone(), data, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_rows(m: usize, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..m)
            .map(|_| (0..n).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect()
    }

    #[test]
    fn flat_pool_means() {
        let fs = FeatureSet::from_rows("x", &[vec![1.0, 2.0, 3.0, 4.0]], vec![0]).unwrap();
        let p = average_pool(&fs, 2).unwrap();
        assert_eq!(p.data, vec![1.5, 3.5]);
        assert_eq!(p.labels, vec![0]);
        assert_eq!(average_pool(&fs, 1).unwrap(), fs);
        assert!(matches!(average_pool(&fs, 3), Err(Error::ShapeNotDivisible(_))));
    }

    #[test]
    fn spatial_pool_constant_map() {
        let fs = FeatureSet::new("conv", 16, vec![2], vec![1.0; 16], Some(SpatialShape::new(1, 4, 4))).unwrap();
        let p = average_pool(&fs, 4).unwrap();
        assert_eq!(p.spatial_shape, Some(SpatialShape::new(1, 2, 2)));
        assert_eq!(p.data, vec![1.0; 4]);
    }

    #[test]
    fn spatial_pool_windows() {
        // 2 channels of 2x4: windows are 2x2 blocks per channel
        let data: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let fs = FeatureSet::new("conv", 16, vec![0], data, Some(SpatialShape::new(2, 2, 4))).unwrap();
        let p = average_pool(&fs, 4).unwrap();
        assert_eq!(p.data, vec![2.5, 4.5, 10.5, 12.5]);
        assert!(matches!(average_pool(&fs, 2), Err(Error::ShapeNotDivisible(_))));
        assert!(matches!(average_pool(&fs, 16), Err(Error::ShapeNotDivisible(_))));
    }

    #[test]
    fn line_data_is_rank_one() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| {
            let t = i as f64 * 0.37 - 9.0;
            vec![2.0 * t, -t]
        }).collect();
        let fs = FeatureSet::from_rows("line", &rows, vec![0; 50]).unwrap();
        let p = fit_pca(&fs, 0.995).unwrap();
        assert_eq!(p.output_dims(), 1);
        let z = transform(&p, &fs).unwrap();
        for (i, row) in rows.iter().enumerate() {
            let back = p.inverse_project(z.row(i)).unwrap();
            for (a, b) in back.iter().zip(row) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn isotropic_keeps_everything() {
        let fs = FeatureSet::from_rows("iso", &normal_rows(10_000, 3, 3), vec![0; 10_000]).unwrap();
        assert_eq!(fit_pca(&fs, 0.995).unwrap().output_dims(), 3);
    }

    #[test]
    fn mean_maps_to_origin() {
        let fs = FeatureSet::from_rows("g", &normal_rows(200, 4, 9), vec![0; 200]).unwrap();
        let p = fit_pca(&fs, 0.9).unwrap();
        let probe = FeatureSet::from_rows("g", &[p.pca_mean().to_vec()], vec![-1]).unwrap();
        let z = transform(&p, &probe).unwrap();
        assert!(z.data.iter().all(|v| v.abs() < 1e-12));
        assert_eq!(transform(&p, &fs).unwrap().n_samples(), 200);
    }

    #[test]
    fn pooled_preprocessor_checks_raw_dims() {
        let fs = FeatureSet::from_rows("g", &normal_rows(100, 8, 1), vec![0; 100]).unwrap();
        let p = fit_preprocessor(&fs, 4, 0.995).unwrap();
        assert_eq!(p.pooled_dims(), 2);
        assert_eq!(transform(&p, &fs).unwrap().n_dims, p.output_dims());
        let other = FeatureSet::from_rows("g", &normal_rows(3, 6, 2), vec![0; 3]).unwrap();
        assert!(matches!(transform(&p, &other), Err(Error::DimensionMismatch { expected: 8, actual: 6 })));
    }

    #[test]
    fn needs_two_samples() {
        let fs = FeatureSet::from_rows("g", &[vec![1.0, 2.0]], vec![0]).unwrap();
        assert!(matches!(fit_pca(&fs, 0.9), Err(Error::InsufficientSamples { needed: 2, got: 1 })));
        let fs = FeatureSet::from_rows("g", &normal_rows(5, 2, 1), vec![0; 5]).unwrap();
        assert!(fit_pca(&fs, 0.0).is_err());
        assert!(fit_pca(&fs, 1.5).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn pca_contract(seed in any::<u64>(), m in 3usize..60, n in 1usize..7, retain in 0.5f64..=1.0) {
            let mut rows = normal_rows(m, n, seed);
            // uneven scales so truncation actually happens
            for r in rows.iter_mut() {
                for (j, v) in r.iter_mut().enumerate() {
                    *v *= 1.0 + 3.0 * j as f64;
                }
            }
            let fs = FeatureSet::from_rows("p", &rows, vec![0; m]).unwrap();
            let p = fit_pca(&fs, retain).unwrap();
            let d = p.output_dims();
            prop_assert!(d >= 1 && d <= n);

            for a in 0..d {
                for b in 0..d {
                    let dot: f64 = (0..n).map(|i| p.pca_basis[i * d + a] * p.pca_basis[i * d + b]).sum();
                    let want = if a == b { 1.0 } else { 0.0 };
                    prop_assert!((dot - want).abs() < 1e-8);
                }
            }

            let z = transform(&p, &fs).unwrap();
            let mut out_var = 0.0;
            for j in 0..d {
                let mean: f64 = z.rows().map(|r| r[j]).sum::<f64>() / m as f64;
                prop_assert!(mean.abs() < 1e-9);
                out_var += z.rows().map(|r| r[j] * r[j]).sum::<f64>() / m as f64;
            }
            let mean_in: Vec<f64> = (0..n).map(|j| fs.rows().map(|r| r[j]).sum::<f64>() / m as f64).collect();
            let in_var: f64 = fs.rows().map(|r| r.iter().zip(&mean_in).map(|(x, mu)| (x - mu).powi(2)).sum::<f64>()).sum::<f64>() / m as f64;
            prop_assert!(out_var / in_var >= retain - 1e-9);

            // minimality
            if d > 1 {
                let prev: f64 = p.component_variances[..d - 1].iter().sum();
                prop_assert!(prev / p.total_variance < retain);
            }
        }

        #[test]
        fn pooling_commutes_with_scaling(seed in any::<u64>(), c in -5.0f64..5.0, groups in 1usize..5) {
            let fs = FeatureSet::from_rows("p", &normal_rows(4, groups * 4, seed), vec![0; 4]).unwrap();
            let mut scaled = fs.clone();
            scaled.data.iter_mut().for_each(|v| *v *= c);
            let a = average_pool(&scaled, 4).unwrap();
            let b = average_pool(&fs, 4).unwrap();
            for (x, y) in a.data.iter().zip(&b.data) {
                prop_assert!((x - c * y).abs() < 1e-12 * (1.0 + x.abs()));
            }
            let constant = FeatureSet::new("k", 16, vec![0], vec![c; 16], Some(SpatialShape::new(1, 4, 4))).unwrap();
            let once = average_pool(&constant, 4).unwrap();
            let twice = average_pool(&once, 4).unwrap();
            prop_assert!(twice.data.iter().all(|&v| v == c));
        }
    }
}
