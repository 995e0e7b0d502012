//! RBF basis expansion of raw observations.
//!
//! Every variable `j` gets `m` Gaussian bumps. The expanded matrix `Phi` is
//! `n x (d m)` with block `j` occupying columns `[j m, (j + 1) m)`, and every
//! column is rescaled so that its Euclidean norm does not exceed `sqrt(n)`.

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{MqgmError, Result};
use crate::stats::quantile_sorted;

/// Observations `Y` (rows are samples) plus optional exogenous features `X`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Array2<f64>,
    x: Option<Array2<f64>>,
    names: Vec<String>,
    exogenous_names: Vec<String>,
}

impl Dataset {
    pub fn new(y: Array2<f64>, names: Vec<String>) -> Result<Self> {
        Self::with_exogenous(y, None, names, Vec::new())
    }

    pub fn with_exogenous(
        y: Array2<f64>,
        x: Option<Array2<f64>>,
        names: Vec<String>,
        exogenous_names: Vec<String>,
    ) -> Result<Self> {
        let (n, d) = y.dim();
        if n < 2 {
            return Err(MqgmError::InvalidArgument(format!("need n >= 2 samples, got {n}")));
        }
        if d < 2 {
            return Err(MqgmError::InvalidArgument(format!("need d >= 2 variables, got {d}")));
        }
        if names.len() != d {
            return Err(MqgmError::DimensionMismatch(format!(
                "{} names for {d} variables",
                names.len()
            )));
        }
        if let Some(pos) = y.iter().position(|v| !v.is_finite()) {
            return Err(MqgmError::NonFinite(format!(
                "observation row {}, column '{}'",
                pos / d,
                names[pos % d]
            )));
        }
        if let Some(x) = &x {
            if x.nrows() != n {
                return Err(MqgmError::DimensionMismatch(format!(
                    "exogenous matrix has {} rows, observations have {n}",
                    x.nrows()
                )));
            }
            if exogenous_names.len() != x.ncols() {
                return Err(MqgmError::DimensionMismatch(format!(
                    "{} exogenous names for {} columns",
                    exogenous_names.len(),
                    x.ncols()
                )));
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(MqgmError::NonFinite("exogenous feature".into()));
            }
        } else if !exogenous_names.is_empty() {
            return Err(MqgmError::DimensionMismatch(
                "exogenous names given without exogenous data".into(),
            ));
        }
        Ok(Self { y, x, names, exogenous_names })
    }

    /// Dataset with default names `y1..yd`.
    pub fn from_matrix(y: Array2<f64>) -> Result<Self> {
        let names = (1..=y.ncols()).map(|j| format!("y{j}")).collect();
        Self::new(y, names)
    }

    pub fn y(&self) -> ArrayView2<'_, f64> {
        self.y.view()
    }

    pub fn x(&self) -> Option<ArrayView2<'_, f64>> {
        self.x.as_ref().map(|x| x.view())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn exogenous_names(&self) -> &[String] {
        &self.exogenous_names
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn d(&self) -> usize {
        self.y.ncols()
    }

    pub fn p(&self) -> usize {
        self.x.as_ref().map_or(0, |x| x.ncols())
    }

    pub fn column(&self, j: usize) -> ArrayView1<'_, f64> {
        self.y.column(j)
    }

    /// Coordinate-wise sample medians.
    pub fn medians(&self) -> Vec<f64> {
        self.y
            .axis_iter(Axis(1))
            .map(|col| {
                let mut v = col.to_vec();
                v.sort_by(f64::total_cmp);
                quantile_sorted(&v, 0.5)
            })
            .collect()
    }

    /// Rows reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let y = self.y.select(Axis(0), perm);
        let x = self.x.as_ref().map(|x| x.select(Axis(0), perm));
        Self::with_exogenous(y, x, self.names.clone(), self.exogenous_names.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    /// Gaussian radial basis functions.
    Rbf,
    /// Identity map `phi(y) = y` (one column per variable).
    Linear,
}

/// Per-variable basis definition plus the column scale factors learned on the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub kind: BasisKind,
    pub m: usize,
    /// `d x m` centers (unused for the linear basis).
    pub centers: Vec<Vec<f64>>,
    /// `d x m` bandwidths (unused for the linear basis).
    pub bandwidths: Vec<Vec<f64>>,
    /// `d m` multipliers applied after evaluation.
    pub scale_factors: Vec<f64>,
}

impl BasisSpec {
    pub fn d(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.d() * self.m
    }

    pub fn block(&self, j: usize) -> Range<usize> {
        j * self.m..(j + 1) * self.m
    }

    /// Writes the scaled features of variable `j` at value `v` into `out` (length `m`).
    #[inline]
    pub fn eval_block(&self, j: usize, v: f64, out: &mut [f64]) {
        let scales = &self.scale_factors[self.block(j)];
        match self.kind {
            BasisKind::Rbf => {
                let centers = &self.centers[j];
                let bws = &self.bandwidths[j];
                for t in 0..self.m {
                    let z = (v - centers[t]) / bws[t];
                    out[t] = (-0.5 * z * z).exp() * scales[t];
                }
            }
            BasisKind::Linear => {
                out[0] = v * scales[0];
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(MqgmError::InvalidArgument("m must be at least 1".into()));
        }
        if self.bandwidths.len() != self.d() || self.scale_factors.len() != self.dim() {
            return Err(MqgmError::DimensionMismatch("inconsistent basis spec".into()));
        }
        if self.kind == BasisKind::Linear && self.m != 1 {
            return Err(MqgmError::InvalidArgument("linear basis requires m = 1".into()));
        }
        for j in 0..self.d() {
            if self.centers[j].len() != self.m || self.bandwidths[j].len() != self.m {
                return Err(MqgmError::DimensionMismatch(format!(
                    "basis block {j} does not have m = {} entries",
                    self.m
                )));
            }
            if self.kind == BasisKind::Rbf {
                if self.bandwidths[j].iter().any(|&b| !(b > 0.0)) {
                    return Err(MqgmError::InvalidArgument(format!(
                        "non-positive bandwidth for variable {j}"
                    )));
                }
                if self.centers[j].windows(2).any(|w| w[0] >= w[1]) {
                    return Err(MqgmError::InvalidArgument(format!(
                        "centers for variable {j} are not strictly increasing"
                    )));
                }
            }
        }
        if self.scale_factors.iter().any(|&s| !(s > 0.0)) {
            return Err(MqgmError::InvalidArgument("non-positive scale factor".into()));
        }
        Ok(())
    }

    /// Sets each scale factor so the training column norm becomes `min(raw norm, sqrt(n))`.
    fn calibrate_scales(&mut self, y: ArrayView2<f64>) -> Result<()> {
        let n = y.nrows();
        let cap = (n as f64).sqrt();
        self.scale_factors = vec![1.0; self.dim()];
        let raw = raw_expand(self, y)?;
        for (c, col) in raw.axis_iter(Axis(1)).enumerate() {
            let norm = col.dot(&col).sqrt();
            self.scale_factors[c] = if norm > cap { cap / norm } else { 1.0 };
        }
        Ok(())
    }
}

/// Places `m` RBF centers per variable at the interior empirical quantiles
/// `(i - 0.5) / m` and sets each bandwidth to the gap to the nearest neighboring center.
pub fn fit_basis(data: &Dataset, m: usize) -> Result<BasisSpec> {
    if m < 1 {
        return Err(MqgmError::InvalidArgument("m must be at least 1".into()));
    }
    let d = data.d();
    let mut centers = Vec::with_capacity(d);
    let mut bandwidths = Vec::with_capacity(d);
    for j in 0..d {
        let mut col = data.column(j).to_vec();
        col.sort_by(f64::total_cmp);
        let (lo, hi) = (col[0], col[col.len() - 1]);
        if lo == hi {
            return Err(MqgmError::ConstantVariable(data.names()[j].clone()));
        }
        let range = hi - lo;
        let mut c: Vec<f64> = (1..=m)
            .map(|i| quantile_sorted(&col, (i as f64 - 0.5) / m as f64))
            .collect();
        // ties in the data can produce repeated quantiles
        for i in 1..m {
            if c[i] <= c[i - 1] {
                c[i] = c[i - 1] + 1e-6 * range;
            }
        }
        let bw: Vec<f64> = if m == 1 {
            vec![0.5 * range]
        } else {
            (0..m)
                .map(|i| {
                    let left = if i > 0 { c[i] - c[i - 1] } else { f64::INFINITY };
                    let right = if i + 1 < m { c[i + 1] - c[i] } else { f64::INFINITY };
                    left.min(right).max(1e-8)
                })
                .collect()
        };
        centers.push(c);
        bandwidths.push(bw);
    }
    let mut spec = BasisSpec {
        kind: BasisKind::Rbf,
        m,
        centers,
        bandwidths,
        scale_factors: vec![1.0; d * m],
    };
    spec.calibrate_scales(data.y())?;
    Ok(spec)
}

/// Identity basis `phi(y_j) = y_j`, scaled to the column-norm contract.
pub fn fit_linear_basis(data: &Dataset) -> Result<BasisSpec> {
    let d = data.d();
    let mut spec = BasisSpec {
        kind: BasisKind::Linear,
        m: 1,
        centers: vec![vec![0.0]; d],
        bandwidths: vec![vec![1.0]; d],
        scale_factors: vec![1.0; d],
    };
    spec.calibrate_scales(data.y())?;
    Ok(spec)
}

/// Expanded design matrix with its block-column map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Array2<f64>,
    m: usize,
    d: usize,
}

impl FeatureMatrix {
    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn block(&self, j: usize) -> Range<usize> {
        j * self.m..(j + 1) * self.m
    }

    /// Columns of every block except `k`, in order.
    pub fn without_block(&self, k: usize) -> Array2<f64> {
        let keep: Vec<usize> = (0..self.d * self.m)
            .filter(|c| !self.block(k).contains(c))
            .collect();
        self.values.select(Axis(1), &keep)
    }

    /// Wraps an arbitrary design (used by tests and the baselines); `m` must divide the width.
    pub fn from_values(values: Array2<f64>, m: usize) -> Result<Self> {
        if m == 0 || values.ncols() % m != 0 {
            return Err(MqgmError::DimensionMismatch(format!(
                "{} columns is not a multiple of m = {m}",
                values.ncols()
            )));
        }
        let d = values.ncols() / m;
        Ok(Self { values, m, d })
    }
}

fn raw_expand(spec: &BasisSpec, y: ArrayView2<f64>) -> Result<Array2<f64>> {
    let (n, d) = y.dim();
    let mut out = Array2::<f64>::zeros((n, spec.dim()));
    let mut buf = vec![0.0; spec.m];
    for i in 0..n {
        for j in 0..d {
            spec.eval_block(j, y[[i, j]], &mut buf);
            for (t, &v) in buf.iter().enumerate() {
                out[[i, j * spec.m + t]] = v;
            }
        }
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(MqgmError::NonFinite(
            "basis expansion produced a non-finite value (bandwidth underflow?)".into(),
        ));
    }
    Ok(out)
}

/// Evaluates the basis on every row of `data` using the spec's recorded scale factors.
pub fn expand(data: &Dataset, spec: &BasisSpec) -> Result<FeatureMatrix> {
    spec.validate()?;
    if data.d() != spec.d() {
        return Err(MqgmError::DimensionMismatch(format!(
            "basis built for d = {}, dataset has d = {}",
            spec.d(),
            data.d()
        )));
    }
    let values = raw_expand(spec, data.y())?;
    Ok(FeatureMatrix { values, m: spec.m, d: spec.d() })
}

/// Feature vector `phi(y)` of a single point; block `j` depends only on `y[j]`.
pub fn expand_point(y: &[f64], spec: &BasisSpec) -> Result<Array1<f64>> {
    if y.len() != spec.d() {
        return Err(MqgmError::DimensionMismatch(format!(
            "point has {} coordinates, basis expects {}",
            y.len(),
            spec.d()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(MqgmError::NonFinite("query point".into()));
    }
    let mut out = Array1::<f64>::zeros(spec.dim());
    let m = spec.m;
    for (j, &v) in y.iter().enumerate() {
        let block = out.as_slice_mut().unwrap();
        spec.eval_block(j, v, &mut block[j * m..(j + 1) * m]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn two_var(col0: Vec<f64>, col1: Vec<f64>) -> Dataset {
        let n = col0.len();
        let mut y = Array2::zeros((n, 2));
        for i in 0..n {
            y[[i, 0]] = col0[i];
            y[[i, 1]] = col1[i];
        }
        Dataset::from_matrix(y).unwrap()
    }

    #[test]
    fn centers_at_interior_quantiles() {
        let a: Vec<f64> = (0..10).map(|v| v as f64).collect();
        let b: Vec<f64> = (0..10).map(|v| (v * v) as f64).collect();
        let spec = fit_basis(&two_var(a, b), 2).unwrap();
        assert_abs_diff_eq!(spec.centers[0][0], 2.25, epsilon = 1e-12);
        assert_abs_diff_eq!(spec.centers[0][1], 6.75, epsilon = 1e-12);
        assert_abs_diff_eq!(spec.bandwidths[0][0], 4.5, epsilon = 1e-12);
    }

    #[test]
    fn single_center_uses_half_range() {
        let a = vec![1.0, 2.0, 3.0, 4.0, 9.0];
        let spec = fit_basis(&two_var(a.clone(), a), 1).unwrap();
        assert_abs_diff_eq!(spec.centers[0][0], 3.0);
        assert_abs_diff_eq!(spec.bandwidths[0][0], 4.0);
    }

    #[test]
    fn constant_column_is_rejected() {
        let err = fit_basis(&two_var(vec![1.0, 2.0, 3.0], vec![5.0; 3]), 3).unwrap_err();
        assert!(matches!(err, MqgmError::ConstantVariable(ref name) if name == "y2"));
        assert!(err.to_string().contains("constant variable"));
        assert!(matches!(
            fit_basis(&two_var(vec![1.0, 2.0], vec![1.0, 2.0]), 0),
            Err(MqgmError::InvalidArgument(_))
        ));
    }

    #[test]
    fn repeated_quantiles_are_separated() {
        let a = vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let spec = fit_basis(&two_var(a.clone(), a), 4).unwrap();
        assert!(spec.centers[0].windows(2).all(|w| w[0] < w[1]));
        assert!(spec.bandwidths[0].iter().all(|&b| b >= 1e-8));
    }

    #[test]
    fn feature_at_center_is_one() {
        let a: Vec<f64> = (0..10).map(|v| v as f64).collect();
        let data = two_var(a.clone(), a);
        let spec = fit_basis(&data, 2).unwrap();
        let phi = expand_point(&[2.25, 6.75], &spec).unwrap();
        assert_abs_diff_eq!(phi[0], 1.0);
        assert_abs_diff_eq!(phi[3], 1.0);
    }

    #[test]
    fn hand_computed_block() {
        let spec = BasisSpec {
            kind: BasisKind::Rbf,
            m: 2,
            centers: vec![vec![0.0, 1.0], vec![0.0, 2.0]],
            bandwidths: vec![vec![1.0, 0.5], vec![2.0, 2.0]],
            scale_factors: vec![1.0; 4],
        };
        let data = Dataset::from_matrix(array![[0.0, 0.0], [1.0, 2.0], [2.0, -2.0]]).unwrap();
        let phi = expand(&data, &spec).unwrap();
        // exp(-(y - c)^2 / (2 s^2)) by hand
        let expected = array![
            [1.0, (-2.0f64).exp(), 1.0, (-0.5f64).exp()],
            [(-0.5f64).exp(), 1.0, (-0.5f64).exp(), 1.0],
            [(-2.0f64).exp(), (-2.0f64).exp(), (-0.5f64).exp(), (-2.0f64).exp()],
        ];
        for (a, b) in phi.values().iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn column_norm_capped_at_sqrt_n() {
        // every sample sits on the single center: raw column is all ones
        let n = 7;
        let y = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { 3.0 } else { i as f64 });
        let data = Dataset::from_matrix(y).unwrap();
        let spec = BasisSpec {
            kind: BasisKind::Rbf,
            m: 1,
            centers: vec![vec![3.0], vec![0.0]],
            bandwidths: vec![vec![1.0], vec![1.0]],
            scale_factors: vec![1.0; 2],
        };
        let phi = expand(&data, &spec).unwrap();
        let col = phi.values().column(0).to_owned();
        assert_abs_diff_eq!(col.dot(&col).sqrt(), (n as f64).sqrt(), epsilon = 1e-12);

        // linear basis on a constant-magnitude column gets scaled down to exactly sqrt(n)
        let y = Array2::from_shape_fn((n, 2), |(i, j)| if j == 0 { 5.0 + (i % 2) as f64 } else { i as f64 });
        let data = Dataset::from_matrix(y).unwrap();
        let spec = fit_linear_basis(&data).unwrap();
        let phi = expand(&data, &spec).unwrap();
        for c in 0..2 {
            let col = phi.values().column(c).to_owned();
            assert_abs_diff_eq!(col.dot(&col).sqrt(), (n as f64).sqrt(), epsilon = 1e-12);
        }
    }

    #[test]
    fn underflowing_bandwidth_gives_zero_not_nan() {
        let spec = BasisSpec {
            kind: BasisKind::Rbf,
            m: 1,
            centers: vec![vec![0.0], vec![0.0]],
            bandwidths: vec![vec![1e-300], vec![1.0]],
            scale_factors: vec![1.0; 2],
        };
        assert!(expand_point(&[1.0, 0.0], &spec).unwrap().iter().all(|v| v.is_finite()));
        assert!(expand_point(&[f64::NAN, 0.0], &spec).is_err());
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::from_matrix(array![[1.0, 2.0]]).is_err());
        assert!(Dataset::from_matrix(array![[1.0], [2.0]]).is_err());
        assert!(Dataset::from_matrix(array![[1.0, f64::NAN], [2.0, 1.0]]).is_err());
        let x = array![[1.0], [2.0], [3.0]];
        assert!(Dataset::with_exogenous(
            array![[1.0, 2.0], [2.0, 1.0]],
            Some(x),
            vec!["a".into(), "b".into()],
            vec!["x".into()]
        )
        .is_err());
    }

    fn arb_data() -> impl Strategy<Value = Array2<f64>> {
        (3usize..20, 2usize..5).prop_flat_map(|(n, d)| {
            proptest::collection::vec(-5.0f64..5.0, n * d)
                .prop_map(move |v| Array2::from_shape_vec((n, d), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn expansion_contracts(y in arb_data(), m in 1usize..6, pert in -3.0f64..3.0) {
            let data = Dataset::from_matrix(y.clone()).unwrap();
            let spec = fit_basis(&data, m).unwrap();
            let phi = expand(&data, &spec).unwrap();
            let cap = (data.n() as f64).sqrt();
            for col in phi.values().axis_iter(Axis(1)) {
                prop_assert!(col.dot(&col).sqrt() <= cap * (1.0 + 1e-9));
            }
            let vals = phi.values();
            for i in 0..data.n() {
                let row = expand_point(y.row(i).as_slice().unwrap(), &spec).unwrap();
                prop_assert_eq!(row.view(), vals.row(i));
            }
            // locality: perturbing one coordinate changes only its own block
            let base: Vec<f64> = y.row(0).to_vec();
            let mut moved = base.clone();
            moved[0] += pert;
            let a = expand_point(&base, &spec).unwrap();
            let b = expand_point(&moved, &spec).unwrap();
            for c in spec.m..spec.dim() {
                prop_assert_eq!(a[c].to_bits(), b[c].to_bits());
            }
            // determinism
            prop_assert_eq!(&fit_basis(&data, m).unwrap(), &spec);
        }
    }
}
