//! Closed-form proximal and projection operators used by the ADMM solver.

use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{MqgmError, Result};

/// Ordered quantile levels `alpha_1 < ... < alpha_r`, all in `(0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct QuantileGrid {
    levels: Vec<f64>,
}

impl QuantileGrid {
    pub fn new(levels: Vec<f64>) -> Result<Self> {
        if levels.is_empty() {
            return Err(MqgmError::InvalidArgument("quantile grid is empty".into()));
        }
        for &a in &levels {
            if !(a > 0.0 && a < 1.0) {
                return Err(MqgmError::InvalidArgument(format!(
                    "quantile level {a} outside (0, 1)"
                )));
            }
        }
        if levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MqgmError::InvalidArgument(
                "quantile levels must be strictly increasing".into(),
            ));
        }
        Ok(Self { levels })
    }

    /// `r` equispaced interior levels `l / (r + 1)`.
    pub fn uniform(r: usize) -> Result<Self> {
        if r == 0 {
            return Err(MqgmError::InvalidArgument("r must be at least 1".into()));
        }
        Self::new((1..=r).map(|l| l as f64 / (r + 1) as f64).collect())
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

impl TryFrom<Vec<f64>> for QuantileGrid {
    type Error = MqgmError;
    fn try_from(levels: Vec<f64>) -> Result<Self> {
        Self::new(levels)
    }
}

impl From<QuantileGrid> for Vec<f64> {
    fn from(grid: QuantileGrid) -> Self {
        grid.levels
    }
}

/// Quantile (pinball) loss `max(alpha z, (alpha - 1) z)`.
#[inline]
pub fn pinball(z: f64, alpha: f64) -> f64 {
    (alpha * z).max((alpha - 1.0) * z)
}

/// Scalar prox of `t * pinball(., alpha)` evaluated at `a`.
#[inline]
pub fn prox_pinball(a: f64, t: f64, alpha: f64) -> f64 {
    if a > t * alpha {
        a - t * alpha
    } else if a < t * (alpha - 1.0) {
        a + t * (1.0 - alpha)
    } else {
        0.0
    }
}

/// Elementwise prox of the multiple-quantile loss: column `j` of `a` uses level `alpha_j`.
///
/// This is the three-case soft threshold, which is the exact minimizer of
/// `pinball(x, alpha_j) + (x - a_ij)^2 / (2t)` for every entry.
pub fn prox_multiquantile(a: ArrayView2<f64>, t: f64, grid: &QuantileGrid) -> Array2<f64> {
    let mut out = a.to_owned();
    prox_multiquantile_inplace(&mut out, t, grid);
    out
}

pub(crate) fn prox_multiquantile_inplace(a: &mut Array2<f64>, t: f64, grid: &QuantileGrid) {
    debug_assert_eq!(a.ncols(), grid.len());
    for (mut col, &alpha) in a.axis_iter_mut(Axis(1)).zip(grid.levels()) {
        col.mapv_inplace(|v| prox_pinball(v, t, alpha));
    }
}

/// Euclidean projection of `row` onto the nondecreasing cone, in place (pool adjacent violators).
pub fn project_isotonic(mut row: ArrayViewMut1<f64>) {
    let n = row.len();
    if n < 2 {
        return;
    }
    // Blocks as (mean, weight); a violating block is merged with its predecessor.
    let mut means: Vec<f64> = Vec::with_capacity(n);
    let mut weights: Vec<usize> = Vec::with_capacity(n);
    for &v in row.iter() {
        let mut mean = v;
        let mut weight = 1usize;
        while let Some(&prev) = means.last() {
            if prev <= mean {
                break;
            }
            let w_prev = weights.pop().unwrap();
            means.pop();
            mean = (prev * w_prev as f64 + mean * weight as f64) / (w_prev + weight) as f64;
            weight += w_prev;
        }
        means.push(mean);
        weights.push(weight);
    }
    let mut pos = 0;
    for (mean, weight) in means.into_iter().zip(weights) {
        for _ in 0..weight {
            row[pos] = mean;
            pos += 1;
        }
    }
}

/// Row-wise projection onto the isotonic cone.
pub fn project_isotonic_rows(v: ArrayView2<f64>) -> Array2<f64> {
    let mut out = v.to_owned();
    project_isotonic_rows_inplace(&mut out);
    out
}

pub(crate) fn project_isotonic_rows_inplace(v: &mut Array2<f64>) {
    for row in v.axis_iter_mut(Axis(0)) {
        project_isotonic(row);
    }
}

/// Prox of `kappa1 ||x||_2 + (kappa2 / 2) ||x||_2^2` at `v`.
pub fn group_shrink(v: &[f64], kappa1: f64, kappa2: f64) -> Vec<f64> {
    let mut out = v.to_vec();
    group_shrink_inplace(&mut out, kappa1, kappa2);
    out
}

pub(crate) fn group_shrink_inplace(v: &mut [f64], kappa1: f64, kappa2: f64) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= kappa1 || norm == 0.0 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    let scale = (1.0 - kappa1 / norm) / (1.0 + kappa2);
    v.iter_mut().for_each(|x| *x *= scale);
}

/// Sum of pinball losses of `residual` with column `l` at level `alpha_l`.
pub fn multiquantile_loss(residual: ArrayView2<f64>, grid: &QuantileGrid) -> f64 {
    let mut total = 0.0;
    for (col, &alpha) in residual.axis_iter(Axis(1)).zip(grid.levels()) {
        total += col.iter().map(|&z| pinball(z, alpha)).sum::<f64>();
    }
    total
}

/// Largest amount by which any row of `q` decreases between adjacent columns.
pub fn max_crossing(q: ArrayView2<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for row in q.axis_iter(Axis(0)) {
        for l in 1..row.len() {
            worst = worst.max(row[l - 1] - row[l]);
        }
    }
    worst
}

/// Smallest (in Euclidean norm) per-level shift `c` that makes every row of `fitted + c`
/// nondecreasing. Zero when the rows are already ordered.
///
/// With `delta_l` the largest drop from level `l - 1` to `l` and `D` its cumulative sum, the
/// feasible shifts are `D + e` with `e` nondecreasing, so the answer is `D + iso(-D)`.
pub fn ordering_shift(fitted: ArrayView2<f64>) -> Array1<f64> {
    let r = fitted.ncols();
    let mut cum = Array1::<f64>::zeros(r);
    for l in 1..r {
        let drop = fitted
            .axis_iter(Axis(0))
            .map(|row| row[l - 1] - row[l])
            .fold(f64::NEG_INFINITY, f64::max);
        cum[l] = cum[l - 1] + drop;
    }
    let mut e = -&cum;
    project_isotonic(e.view_mut());
    cum + e
}
