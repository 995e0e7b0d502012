use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{MqgmError, Result};
use crate::model::EdgeSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Tuning parameter or threshold that produced this point.
    pub param: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

fn check_truth(truth: &EdgeSet) -> Result<(usize, usize)> {
    let d = truth.d();
    let total = d * (d - 1) / 2;
    let pos = truth.len();
    if pos == 0 || pos == total {
        return Err(MqgmError::InvalidArgument(
            "ROC needs at least one edge and one non-edge in the truth".into(),
        ));
    }
    Ok((pos, total - pos))
}

/// False/true positive rates of `predicted` over unordered pairs `j < k`.
pub fn rates(predicted: &EdgeSet, truth: &EdgeSet) -> Result<(f64, f64)> {
    if predicted.d() != truth.d() {
        return Err(MqgmError::DimensionMismatch(format!(
            "predicted graph has d = {}, truth has d = {}",
            predicted.d(),
            truth.d()
        )));
    }
    let (pos, neg) = check_truth(truth)?;
    let d = truth.d();
    let (mut tp, mut fp) = (0usize, 0usize);
    for j in 0..d {
        for k in (j + 1)..d {
            if predicted.contains(j, k) {
                if truth.contains(j, k) {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
    }
    Ok((fp as f64 / neg as f64, tp as f64 / pos as f64))
}

/// Trapezoid area over FPR-sorted points, augmented with `(0, 0)` and `(1, 1)`.
pub fn auc_of(points: &[RocPoint]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.fpr, p.tpr)).collect();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * 0.5 * (w[0].1 + w[1].1))
        .sum()
}

/// ROC from a sequence of `(parameter, estimated graph)` pairs, e.g. one refit per `lambda1`.
pub fn roc_from_edge_sets(path: &[(f64, EdgeSet)], truth: &EdgeSet) -> Result<RocCurve> {
    let points = path
        .iter()
        .map(|(param, est)| {
            let (fpr, tpr) = rates(est, truth)?;
            Ok(RocPoint { param: *param, fpr, tpr })
        })
        .collect::<Result<Vec<_>>>()?;
    let auc = auc_of(&points);
    Ok(RocCurve { points, auc })
}

/// ROC of thresholded edge strengths (edge iff strength > threshold). An empty
/// `thresholds` list sweeps every distinct strength, which gives the exact
/// rank-based curve with ties averaged.
pub fn roc_auc(strengths: &Array2<f64>, truth: &EdgeSet, thresholds: &[f64]) -> Result<RocCurve> {
    check_truth(truth)?;
    let d = truth.d();
    if strengths.dim() != (d, d) {
        return Err(MqgmError::DimensionMismatch("strength matrix does not match truth".into()));
    }
    let sweep: Vec<f64> = if thresholds.is_empty() {
        let mut vals: Vec<f64> = (0..d)
            .flat_map(|j| ((j + 1)..d).map(move |k| (j, k)))
            .map(|(j, k)| strengths[[j, k]])
            .collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        std::iter::once(f64::NEG_INFINITY).chain(vals).collect()
    } else {
        thresholds.to_vec()
    };
    let path: Vec<(f64, EdgeSet)> = sweep
        .iter()
        .map(|&t| (t, EdgeSet::from_strengths(strengths.clone(), t)))
        .collect();
    roc_from_edge_sets(&path, truth)
}
