//! Location-factor statistics that separate environmental change (every
//! location moves) from local damage (a few locations move).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

fn row_dist(b: &Matrix, p: usize, q: usize) -> f64 {
    b.row(p).iter().zip(b.row(q)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_k(b: &Matrix, k: usize) -> Result<()> {
    if b.rows() < 2 {
        return Err(Error::TooFewLocations(b.rows()));
    }
    if k == 0 || k >= b.rows() {
        return Err(Error::InvalidArgument(format!("k = {} must lie in 1..{}", k, b.rows())));
    }
    Ok(())
}

/// The `k` rows nearest to row `j` (excluding `j`), closest first; ties go to
/// the lower index.
fn nearest(b: &Matrix, j: usize, k: usize) -> Vec<(usize, f64)> {
    let mut d: Vec<(usize, f64)> = (0..b.rows()).filter(|&q| q != j).map(|q| (q, row_dist(b, j, q))).collect();
    d.sort_by(|x, y| x.1.total_cmp(&y.1).then(x.0.cmp(&y.0)));
    d.truncate(k);
    d
}

/// Unit directions from the `k` nearest rows towards row `j`. Coincident
/// rows give a zero vector; the flag reports whether any occurred.
pub fn knn_unit_vectors(b: &Matrix, j: usize, k: usize) -> Result<(Vec<Vec<f64>>, bool)> {
    check_k(b, k)?;
    if j >= b.rows() {
        return Err(Error::InvalidArgument(format!("row {} out of range", j)));
    }
    let mut degenerate = false;
    let out = nearest(b, j, k)
        .into_iter()
        .map(|(q, d)| {
            if d < 1e-12 {
                degenerate = true;
                vec![0.0; b.cols()]
            } else {
                b.row(j).iter().zip(b.row(q)).map(|(x, y)| (x - y) / d).collect()
            }
        })
        .collect();
    Ok((out, degenerate))
}

/// Mean distance from each row to its `k` nearest other rows.
pub fn knn_score(b: &Matrix, k: usize) -> Result<Vec<f64>> {
    check_k(b, k)?;
    Ok((0..b.rows()).map(|j| nearest(b, j, k).iter().map(|(_, d)| d).sum::<f64>() / k as f64).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocationSnapshot {
    pub b_matrix: Matrix,
    pub knn_scores: Vec<f64>,
    pub k: usize,
}

impl LocationSnapshot {
    pub fn capture(b: &Matrix, k: usize) -> Result<Self> {
        Ok(LocationSnapshot { b_matrix: b.clone(), knn_scores: knn_score(b, k)?, k })
    }
}

fn check_pair(prev: &LocationSnapshot, curr: &LocationSnapshot) -> Result<()> {
    if prev.b_matrix.shape() != curr.b_matrix.shape() || prev.k != curr.k || prev.knn_scores.len() != curr.knn_scores.len() {
        return Err(Error::ShapeMismatch(format!(
            "snapshots {:?}/k={} and {:?}/k={}",
            prev.b_matrix.shape(),
            prev.k,
            curr.b_matrix.shape(),
            curr.k
        )));
    }
    Ok(())
}

/// Fraction of locations whose knn score moved by more than `gamma_change`.
pub fn environmental_probability(prev: &LocationSnapshot, curr: &LocationSnapshot, gamma_change: f64) -> Result<f64> {
    check_pair(prev, curr)?;
    let moved = prev.knn_scores.iter().zip(&curr.knn_scores).filter(|(p, c)| (*c - *p).abs() > gamma_change).count();
    Ok(moved as f64 / prev.knn_scores.len() as f64)
}

/// Mean absolute knn-score change across locations.
pub fn mean_abs_change(prev: &LocationSnapshot, curr: &LocationSnapshot) -> Result<f64> {
    check_pair(prev, curr)?;
    let n = prev.knn_scores.len() as f64;
    Ok(prev.knn_scores.iter().zip(&curr.knn_scores).map(|(p, c)| (c - p).abs()).sum::<f64>() / n)
}

/// `|g|` when the change is judged environmental, `g` otherwise.
pub fn advised_decision(g_raw: f64, p_env: f64, confidence: f64) -> f64 {
    if g_raw < 0.0 && p_env >= confidence {
        g_raw.abs()
    } else {
        g_raw
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    Accept,
    UpdateModel,
    ReportAnomaly,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Accept => "ACCEPT",
            Action::UpdateModel => "UPDATE_MODEL",
            Action::ReportAnomaly => "REPORT_ANOMALY",
        }
    }
}

impl std::str::FromStr for Action {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ACCEPT" => Ok(Action::Accept),
            "UPDATE_MODEL" => Ok(Action::UpdateModel),
            "REPORT_ANOMALY" => Ok(Action::ReportAnomaly),
            other => Err(Error::Parse(format!("unknown action {:?}", other))),
        }
    }
}

/// Fixed-threshold rule: small negative scores update the model, scores
/// below `threshold` are anomalies.
pub fn baseline_threshold_policy(g_raw: f64, threshold: f64) -> Action {
    if g_raw >= 0.0 {
        Action::Accept
    } else if g_raw >= threshold {
        Action::UpdateModel
    } else {
        Action::ReportAnomaly
    }
}
