//! ROC / precision-recall evaluation of a score that should be higher for
//! in-distribution samples.
//!
//! AUROC is the Mann-Whitney statistic with ties counted as one half. AUPR is
//! step-wise average precision, `Σ (R_i − R_{i−1}) · P_i` over descending
//! distinct thresholds, without interpolation between operating points.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Which side of the in/out split counts as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PositiveClass {
    #[default]
    InDistribution,
    OutOfDistribution,
}

impl PositiveClass {
    pub fn name(self) -> &'static str {
        match self {
            PositiveClass::InDistribution => "in_distribution_positive",
            PositiveClass::OutOfDistribution => "ood_positive",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub auroc: f64,
    pub aupr: f64,
    /// `(fpr, tpr)`, from `(0, 0)` to `(1, 1)`.
    pub roc_points: Vec<(f64, f64)>,
    /// `(recall, precision)`, one per distinct threshold.
    pub pr_points: Vec<(f64, f64)>,
    pub n_pos: usize,
    pub n_neg: usize,
    pub positive: PositiveClass,
}

impl DetectionReport {
    /// Percentages with one decimal, e.g. `AUROC 97.5 / AUPR 90.9`.
    pub fn headline(&self) -> String {
        format!("AUROC {:.1} / AUPR {:.1}", 100.0 * self.auroc, 100.0 * self.aupr)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{}", self.headline());
        let _ = writeln!(s, "positive  {}", self.positive.name());
        let _ = writeln!(s, "n_pos     {}", self.n_pos);
        let _ = writeln!(s, "n_neg     {}", self.n_neg);
        s
    }

    /// Tab-separated `key value` lines at full precision.
    pub fn to_delimited(&self) -> String {
        format!(
            "auroc\t{:.17e}\naupr\t{:.17e}\nn_pos\t{}\nn_neg\t{}\npositive\t{}\n",
            self.auroc,
            self.aupr,
            self.n_pos,
            self.n_neg,
            self.positive.name()
        )
    }
}

fn check_scores(in_scores: &[f64], out_scores: &[f64]) -> Result<()> {
    if in_scores.is_empty() || out_scores.is_empty() {
        return Err(Error::EmptyScoreList);
    }
    if in_scores.iter().chain(out_scores).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("scores contain NaN".into()));
    }
    Ok(())
}

/// Cumulative `(threshold, tp, fp)` at each distinct score, descending,
/// predicting positive for `score >= threshold`.
fn cumulative_counts(pos: &[f64], neg: &[f64]) -> Vec<(f64, usize, usize)> {
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut out: Vec<(f64, usize, usize)> = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (i, &(s, is_pos)) in all.iter().enumerate() {
        if is_pos {
            tp += 1;
        } else {
            fp += 1;
        }
        // -0.0 and 0.0 are one threshold
        let last_of_group = all.get(i + 1).is_none_or(|next| next.0 != s);
        if last_of_group {
            out.push((s, tp, fp));
        }
    }
    out
}

/// Mann-Whitney AUROC from mid-ranks.
fn rank_auroc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // rank sums in units of one half stay exact integers
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1, mean rank (i + j + 2) / 2
        let doubled_mid = (i + j + 2) as u128;
        let n_pos_in_group = all[i..=j].iter().filter(|e| e.1).count() as u128;
        doubled_rank_sum += doubled_mid * n_pos_in_group;
        i = j + 1;
    }
    let p = pos.len() as u128;
    let n = neg.len() as u128;
    let doubled_u = doubled_rank_sum - p * (p + 1);
    doubled_u as f64 / (2 * p * n) as f64
}

pub fn evaluate_detection(in_scores: &[f64], out_scores: &[f64], positive: PositiveClass) -> Result<DetectionReport> {
    check_scores(in_scores, out_scores)?;
    let (pos, neg): (Vec<f64>, Vec<f64>) = match positive {
        PositiveClass::InDistribution => (in_scores.to_vec(), out_scores.to_vec()),
        PositiveClass::OutOfDistribution => (
            out_scores.iter().map(|v| -v).collect(),
            in_scores.iter().map(|v| -v).collect(),
        ),
    };
    let (p, n) = (pos.len(), neg.len());
    let counts = cumulative_counts(&pos, &neg);

    let mut roc_points = Vec::with_capacity(counts.len() + 1);
    roc_points.push((0.0, 0.0));
    let mut pr_points = Vec::with_capacity(counts.len());
    let mut weighted_precision = 0.0;
    let mut prev_tp = 0;
    for &(_, tp, fp) in &counts {
        roc_points.push((fp as f64 / n as f64, tp as f64 / p as f64));
        let precision = tp as f64 / (tp + fp) as f64;
        pr_points.push((tp as f64 / p as f64, precision));
        weighted_precision += (tp - prev_tp) as f64 * precision;
        prev_tp = tp;
    }

    Ok(DetectionReport {
        auroc: rank_auroc(&pos, &neg),
        aupr: weighted_precision / p as f64,
        roc_points,
        pr_points,
        n_pos: p,
        n_neg: n,
        positive,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdRow {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub precision: f64,
    pub recall: f64,
}

/// One row per distinct score, descending, treating `score >= threshold`
/// as in-distribution.
pub fn sweep_thresholds(in_scores: &[f64], out_scores: &[f64]) -> Result<Vec<ThresholdRow>> {
    check_scores(in_scores, out_scores)?;
    let (p, n) = (in_scores.len() as f64, out_scores.len() as f64);
    Ok(cumulative_counts(in_scores, out_scores)
        .into_iter()
        .map(|(threshold, tp, fp)| ThresholdRow {
            threshold,
            tpr: tp as f64 / p,
            fpr: fp as f64 / n,
            precision: tp as f64 / (tp + fp) as f64,
            recall: tp as f64 / p,
        })
        .collect())
}

pub fn format_sweep(rows: &[ThresholdRow]) -> String {
    let mut s = String::from("threshold,tpr,fpr,precision,recall\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.threshold, r.tpr, r.fpr, r.precision, r.recall
        );
    }
    s
}
