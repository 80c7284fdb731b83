//! Per-sample log-likelihood tables, uncertainty scores and likelihood-based
//! class predictions.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::density::DensityModel;
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::preprocess::{self, Preprocessor};

/// Log-likelihood of every sample under every class.
///
/// `uncertainty[i]` is the row maximum (higher means more in-distribution)
/// and `predicted[i]` its argmax, ties going to the smallest class index.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub n_classes: usize,
    /// Row-major `n_samples x n_classes`.
    pub loglik: Vec<f64>,
    pub uncertainty: Vec<f64>,
    pub predicted: Vec<usize>,
    pub true_labels: Vec<i32>,
}

impl ScoreTable {
    /// Derives `uncertainty` and `predicted` from a raw log-likelihood matrix.
    pub fn from_loglik(n_classes: usize, loglik: Vec<f64>, true_labels: Vec<i32>) -> Result<Self> {
        if n_classes == 0 || loglik.len() != n_classes * true_labels.len() {
            return Err(Error::DimensionMismatch {
                expected: n_classes * true_labels.len(),
                actual: loglik.len(),
            });
        }
        let (uncertainty, predicted) = loglik
            .chunks_exact(n_classes)
            .map(|row| {
                let (best, val) = row
                    .iter()
                    .enumerate()
                    .fold((0, row[0]), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
                (val, best)
            })
            .unzip();
        Ok(ScoreTable {
            n_classes,
            loglik,
            uncertainty,
            predicted,
            true_labels,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.true_labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.loglik[i * self.n_classes..(i + 1) * self.n_classes]
    }
}

/// Scores features that already live in the model's space.
pub fn score_transformed(model: &DensityModel, fs: &FeatureSet) -> Result<ScoreTable> {
    if fs.n_dims != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: fs.n_dims,
        });
    }
    let rows: Vec<Vec<f64>> = fs
        .data
        .par_chunks(fs.n_dims)
        .map(|x| model.log_likelihoods(x))
        .collect::<Result<_>>()?;
    ScoreTable::from_loglik(model.n_classes(), rows.concat(), fs.labels.clone())
}

/// Runs `fs` through `pre` and scores every sample against every class.
pub fn score_set(model: &DensityModel, pre: &Preprocessor, fs: &FeatureSet) -> Result<ScoreTable> {
    let z = preprocess::transform(pre, fs)?;
    score_transformed(model, &z)
}

/// Fraction of samples whose likelihood argmax matches the true label.
pub fn classify_accuracy(st: &ScoreTable) -> Result<f64> {
    if st.true_labels.iter().any(|&l| l < 0) {
        return Err(Error::UnlabeledSamples);
    }
    if st.n_samples() == 0 {
        return Err(Error::EmptySet);
    }
    let hits = st
        .predicted
        .iter()
        .zip(&st.true_labels)
        .filter(|(&p, &t)| p == t as usize)
        .count();
    Ok(hits as f64 / st.n_samples() as f64)
}

pub const SCORE_HEADER_PREFIX: &str = "index,true_label,predicted,uncertainty";

/// Renders a table as comma-separated text with 17 significant digits.
pub fn format_scores(st: &ScoreTable) -> String {
    let mut out = String::from(SCORE_HEADER_PREFIX);
    for k in 0..st.n_classes {
        let _ = write!(out, ",loglik_{k}");
    }
    out.push('\n');
    for i in 0..st.n_samples() {
        let _ = write!(
            out,
            "{i},{},{},{:.16e}",
            st.true_labels[i], st.predicted[i], st.uncertainty[i]
        );
        for v in st.row(i) {
            let _ = write!(out, ",{v:.16e}");
        }
        out.push('\n');
    }
    out
}

pub fn export_scores(st: &ScoreTable, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, format_scores(st))?;
    Ok(())
}

/// Parses text written by [`format_scores`].
pub fn parse_scores(text: &str) -> Result<ScoreTable> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::MalformedScores("empty file".into()))?;
    if !header.starts_with(SCORE_HEADER_PREFIX) {
        return Err(Error::MalformedScores("missing header".into()));
    }
    let n_classes = header.split(',').count() - 4;
    if n_classes == 0 {
        return Err(Error::MalformedScores("no log-likelihood columns".into()));
    }
    let mut labels = Vec::new();
    let mut loglik = Vec::new();
    for (lineno, line) in lines.enumerate().filter(|(_, l)| !l.is_empty()) {
        let bad = |what: &str| Error::MalformedScores(format!("line {}: {what}", lineno + 2));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 4 + n_classes {
            return Err(bad("wrong column count"));
        }
        labels.push(cols[1].parse::<i32>().map_err(|_| bad("bad label"))?);
        for c in &cols[4..] {
            loglik.push(c.parse::<f64>().map_err(|_| bad("bad number"))?);
        }
    }
    ScoreTable::from_loglik(n_classes, loglik, labels)
}

pub fn import_scores(path: impl AsRef<Path>) -> Result<ScoreTable> {
    parse_scores(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{fit_gaussian_separate, log_likelihood};
    use crate::preprocess::fit_pca;
    use crate::syngen::{generate, GeneratorKind, GeneratorSpec};

    #[test]
    fn argmax_ties_go_low() {
        let st = ScoreTable::from_loglik(3, vec![1.0, 2.0, 2.0, 5.0, 5.0, 5.0], vec![1, 0]).unwrap();
        assert_eq!(st.predicted, vec![1, 0]);
        assert_eq!(st.uncertainty, vec![2.0, 5.0]);
    }

    #[test]
    fn accuracy_and_complement() {
        let st = ScoreTable::from_loglik(2, vec![0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0], vec![1, 0, 1, 0]).unwrap();
        assert_eq!(classify_accuracy(&st).unwrap(), 0.75);
        let flipped = ScoreTable {
            true_labels: st.true_labels.iter().map(|l| 1 - l).collect(),
            ..st.clone()
        };
        assert_eq!(classify_accuracy(&flipped).unwrap(), 0.25);
        let perfect = ScoreTable {
            true_labels: st.predicted.iter().map(|&p| p as i32).collect(),
            ..st.clone()
        };
        assert_eq!(classify_accuracy(&perfect).unwrap(), 1.0);
        let unlabeled = ScoreTable {
            true_labels: vec![0, -1, 0, 0],
            ..st
        };
        assert!(matches!(classify_accuracy(&unlabeled), Err(Error::UnlabeledSamples)));
    }

    #[test]
    fn export_round_trip() {
        let st = ScoreTable::from_loglik(2, vec![-1.0 / 3.0, std::f64::consts::PI], vec![-1]).unwrap();
        let text = format_scores(&st);
        assert_eq!(text.lines().count(), 2);
        let back = parse_scores(&text).unwrap();
        assert_eq!(back, st);

        let empty = ScoreTable::from_loglik(2, vec![], vec![]).unwrap();
        let text = format_scores(&empty);
        assert_eq!(text, "index,true_label,predicted,uncertainty,loglik_0,loglik_1\n");
        assert_eq!(parse_scores(&text).unwrap().n_samples(), 0);
    }

    #[test]
    fn malformed_score_files() {
        assert!(parse_scores("").is_err());
        assert!(parse_scores("a,b\n").is_err());
        assert!(parse_scores("index,true_label,predicted,uncertainty,loglik_0\n0,1,0\n").is_err());
        assert!(parse_scores("index,true_label,predicted,uncertainty,loglik_0\n0,x,0,1,1\n").is_err());
    }

    #[test]
    fn adding_constant_to_column_shifts_predictions_consistently() {
        let spec = GeneratorSpec {
            kind: GeneratorKind::GaussianClasses { class_scales: vec![] },
            dims: 2,
            n_classes: 3,
            samples_per_class: 50,
            separation: 1.0,
            noise: 1.0,
            seed: 2,
        };
        let fs = generate(&spec).unwrap();
        let model = fit_gaussian_separate(&fs).unwrap();
        let st = score_transformed(&model, &fs).unwrap();
        for c in [-3.0, 0.5, 10.0] {
            let mut ll = st.loglik.clone();
            ll.iter_mut().skip(1).step_by(3).for_each(|v| *v += c);
            let shifted = ScoreTable::from_loglik(3, ll, st.true_labels.clone()).unwrap();
            for (before, after) in st.predicted.iter().zip(&shifted.predicted) {
                if c > 0.0 {
                    // class 1 can only gain
                    assert!(after == before || *after == 1);
                    if *before == 1 {
                        assert_eq!(*after, 1);
                    }
                } else {
                    assert!(after == before || *before == 1);
                    if *before != 1 {
                        assert_eq!(after, before);
                    }
                }
            }
        }
    }

    #[test]
    fn single_class_model() {
        let fs = FeatureSet::from_rows("x", &[vec![0.0], vec![1.0], vec![3.0]], vec![0, 0, 0]).unwrap();
        let model = fit_gaussian_separate(&fs).unwrap();
        let st = score_transformed(&model, &fs).unwrap();
        assert!(st.predicted.iter().all(|&p| p == 0));
        assert_eq!(st.uncertainty, st.loglik);
    }

    #[test]
    fn score_set_applies_projection() {
        let spec = GeneratorSpec {
            kind: GeneratorKind::GaussianClasses { class_scales: vec![] },
            dims: 3,
            n_classes: 2,
            samples_per_class: 200,
            separation: 12.0,
            noise: 1.0,
            seed: 5,
        };
        let fs = generate(&spec).unwrap();
        let pre = fit_pca(&fs, 0.999).unwrap();
        let z = preprocess::transform(&pre, &fs).unwrap();
        let model = fit_gaussian_separate(&z).unwrap();
        let st = score_set(&model, &pre, &fs).unwrap();
        assert_eq!(st.n_samples(), 400);
        for i in [0, 199, 250] {
            let direct = log_likelihood(&model, z.row(i), 1).unwrap();
            assert_eq!(st.row(i)[1], direct);
        }
        assert!(classify_accuracy(&st).unwrap() > 0.99);
        let wrong = FeatureSet::from_rows("x", &[vec![0.0; 4]], vec![0]).unwrap();
        assert!(matches!(score_set(&model, &pre, &wrong), Err(Error::DimensionMismatch { .. })));
    }
}
