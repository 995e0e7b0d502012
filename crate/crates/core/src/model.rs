//! The fitted model as a queryable object.

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MqgmError, Result};
use crate::features::{expand_point, BasisSpec, Dataset};
use crate::proxops::QuantileGrid;
use crate::solver::NeighborhoodFit;

pub const MODEL_FORMAT: &str = "mqgm-model/1";

/// Group norms at or below this are treated as zero when reading edges.
pub const DEFAULT_EDGE_THRESHOLD: f64 = 1e-6;

/// Symmetric adjacency with zero diagonal, plus the strengths it was read from.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSet {
    adjacency: Array2<bool>,
    strengths: Array2<f64>,
}

impl EdgeSet {
    pub fn empty(d: usize) -> Self {
        Self {
            adjacency: Array2::from_elem((d, d), false),
            strengths: Array2::zeros((d, d)),
        }
    }

    /// Edge set from unordered pairs of 0-based indices; strengths are 1 on edges.
    pub fn from_pairs(d: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut set = Self::empty(d);
        for &(a, b) in pairs {
            if a >= d || b >= d || a == b {
                return Err(MqgmError::InvalidArgument(format!("invalid edge ({a}, {b}) for d = {d}")));
            }
            for (i, j) in [(a, b), (b, a)] {
                set.adjacency[[i, j]] = true;
                set.strengths[[i, j]] = 1.0;
            }
        }
        Ok(set)
    }

    /// Thresholds a symmetric strength matrix: edge iff strength > threshold.
    pub fn from_strengths(strengths: Array2<f64>, threshold: f64) -> Self {
        let d = strengths.nrows();
        let adjacency = Array2::from_shape_fn((d, d), |(i, j)| i != j && strengths[[i, j]] > threshold);
        Self { adjacency, strengths }
    }

    pub fn d(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &Array2<bool> {
        &self.adjacency
    }

    pub fn strengths(&self) -> &Array2<f64> {
        &self.strengths
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.adjacency[[a, b]]
    }

    /// Edges as `(j, k)` with `j < k`, in lexicographic order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let d = self.d();
        let mut out = Vec::new();
        for j in 0..d {
            for k in (j + 1)..d {
                if self.adjacency[[j, k]] {
                    out.push((j, k));
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.pairs().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Same edges (strengths ignored).
    pub fn same_edges(&self, other: &EdgeSet) -> bool {
        self.adjacency == other.adjacency
    }

    pub fn to_json(&self, names: &[String]) -> serde_json::Value {
        serde_json::json!({
            "d": self.d(),
            "variables": names,
            "edges": self.pairs().iter().map(|&(a, b)| [a, b]).collect::<Vec<_>>(),
        })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Doc {
            d: usize,
            edges: Vec<(usize, usize)>,
        }
        let doc: Doc = serde_json::from_value(value.clone())?;
        Self::from_pairs(doc.d, &doc.edges)
    }

    /// Writes the strength matrix and the 0/1 adjacency as two CSV files.
    pub fn write_csv(&self, names: &[String], strengths: &Path, adjacency: &Path) -> Result<()> {
        crate::io::write_matrix_file(strengths, names, self.strengths.view())?;
        let adj = self.adjacency.mapv(|b| if b { 1.0 } else { 0.0 });
        crate::io::write_matrix_file(adjacency, names, adj.view())
    }
}

/// Fitted conditional-quantile models for every variable.
#[derive(Debug, Clone, PartialEq)]
pub struct MqgmModel {
    basis: BasisSpec,
    grid: QuantileGrid,
    fits: Vec<NeighborhoodFit>,
    names: Vec<String>,
    exogenous_names: Vec<String>,
    init: Vec<f64>,
    /// Per target: variables whose coefficient block is nonzero at some level.
    active: Vec<Vec<usize>>,
}

impl MqgmModel {
    pub fn new(basis: BasisSpec, grid: QuantileGrid, fits: Vec<NeighborhoodFit>, data: &Dataset) -> Result<Self> {
        Self::from_parts(
            basis,
            grid,
            fits,
            data.names().to_vec(),
            data.exogenous_names().to_vec(),
            data.medians(),
        )
    }

    pub fn from_parts(
        basis: BasisSpec,
        grid: QuantileGrid,
        fits: Vec<NeighborhoodFit>,
        names: Vec<String>,
        exogenous_names: Vec<String>,
        init: Vec<f64>,
    ) -> Result<Self> {
        let d = basis.d();
        let r = grid.len();
        let p = exogenous_names.len();
        if d < 2 {
            return Err(MqgmError::InvalidArgument("a model needs d >= 2".into()));
        }
        if fits.len() != d || names.len() != d || init.len() != d {
            return Err(MqgmError::DimensionMismatch(format!(
                "{} fits / {} names / {} init values for d = {d}",
                fits.len(),
                names.len(),
                init.len()
            )));
        }
        for (k, fit) in fits.iter().enumerate() {
            if fit.k != k
                || fit.theta.dim() != (basis.dim(), r)
                || fit.intercepts.len() != r
                || fit.theta_x.dim() != (p, r)
            {
                return Err(MqgmError::DimensionMismatch(format!(
                    "fit {k} does not match basis dimension {} x {r} levels, p = {p}",
                    basis.dim()
                )));
            }
            if fit.theta.slice(ndarray::s![basis.block(k), ..]).iter().any(|&v| v != 0.0) {
                return Err(MqgmError::InvalidArgument(format!(
                    "fit {k} has a nonzero self block"
                )));
            }
        }
        let active = fits
            .iter()
            .map(|fit| {
                (0..d)
                    .filter(|&j| {
                        fit.theta
                            .slice(ndarray::s![basis.block(j), ..])
                            .iter()
                            .any(|&v| v != 0.0)
                    })
                    .collect()
            })
            .collect();
        Ok(Self { basis, grid, fits, names, exogenous_names, init, active })
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    pub fn grid(&self) -> &QuantileGrid {
        &self.grid
    }

    pub fn fits(&self) -> &[NeighborhoodFit] {
        &self.fits
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn exogenous_names(&self) -> &[String] {
        &self.exogenous_names
    }

    /// Default chain initialization (training medians).
    pub fn init(&self) -> &[f64] {
        &self.init
    }

    pub fn d(&self) -> usize {
        self.basis.d()
    }

    pub fn p(&self) -> usize {
        self.exogenous_names.len()
    }

    pub fn all_converged(&self) -> bool {
        self.fits.iter().all(|f| f.converged)
    }

    fn check_x(&self, x: Option<&[f64]>) -> Result<()> {
        match (x, self.p()) {
            (None, 0) => Ok(()),
            (Some(x), p) if x.len() == p && p > 0 => {
                if x.iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(MqgmError::NonFinite("exogenous input".into()))
                }
            }
            (x, p) => Err(MqgmError::DimensionMismatch(format!(
                "model has {p} exogenous features, got {}",
                x.map_or(0, |x| x.len())
            ))),
        }
    }

    /// Row `k` holds `x^T Theta^x_k`.
    pub fn precompute_offsets(&self, x: &[f64]) -> Result<Array2<f64>> {
        self.check_x(Some(x))?;
        let r = self.grid.len();
        let mut out = Array2::zeros((self.d(), r));
        for (k, fit) in self.fits.iter().enumerate() {
            for l in 0..r {
                out[[k, l]] = exogenous_offset(x, fit, l);
            }
        }
        Ok(out)
    }

    /// Unsorted fitted quantiles of `y_k` from a full feature vector `phi(y)`; only
    /// active blocks are touched.
    pub(crate) fn raw_quantiles_into(&self, k: usize, phi: &[f64], offset: Option<&[f64]>, out: &mut [f64]) {
        let fit = &self.fits[k];
        out.copy_from_slice(&fit.intercepts);
        if let Some(off) = offset {
            for (o, v) in out.iter_mut().zip(off) {
                *o += v;
            }
        }
        for &j in &self.active[k] {
            for c in self.basis.block(j) {
                let f = phi[c];
                if f == 0.0 {
                    continue;
                }
                let row = fit.theta.row(c);
                for (o, &t) in out.iter_mut().zip(row.iter()) {
                    *o += f * t;
                }
            }
        }
    }

    /// Fitted conditional quantiles of `y_k` given the other coordinates of `y`
    /// (and `x`), sorted into nondecreasing order. `y[k]` is ignored.
    pub fn conditional_quantiles(&self, k: usize, y: &[f64], x: Option<&[f64]>) -> Result<Vec<f64>> {
        if k >= self.d() {
            return Err(MqgmError::DimensionMismatch(format!("variable {k} out of range")));
        }
        self.check_x(x)?;
        let phi = expand_point(y, &self.basis)?;
        let offset: Option<Vec<f64>> =
            x.map(|x| (0..self.grid.len()).map(|l| exogenous_offset(x, &self.fits[k], l)).collect());
        let mut q = vec![0.0; self.grid.len()];
        self.raw_quantiles_into(k, phi.as_slice().unwrap(), offset.as_deref(), &mut q);
        q.sort_by(f64::total_cmp);
        Ok(q)
    }

    /// One draw of `y_k` from the fitted conditional: uniform level, then inverse-CDF interpolation.
    pub fn sample_conditional<R: Rng + ?Sized>(
        &self,
        k: usize,
        y: &[f64],
        x: Option<&[f64]>,
        rng: &mut R,
    ) -> Result<f64> {
        let q = self.conditional_quantiles(k, y, x)?;
        let alpha: f64 = rng.random();
        Ok(inverse_cdf_sample_value(&q, &self.grid, alpha))
    }

    /// Symmetric edge set: strength is the largest group norm over levels in either direction.
    pub fn extract_edges(&self, threshold: f64) -> EdgeSet {
        let d = self.d();
        let mut directed = Array2::<f64>::zeros((d, d));
        for (k, fit) in self.fits.iter().enumerate() {
            for j in 0..d {
                if j == k {
                    continue;
                }
                let block = fit.theta.slice(ndarray::s![self.basis.block(j), ..]);
                let best = block
                    .columns()
                    .into_iter()
                    .map(|c| c.dot(&c).sqrt())
                    .fold(0.0, f64::max);
                directed[[k, j]] = best;
            }
        }
        let strengths = Array2::from_shape_fn((d, d), |(a, b)| directed[[a, b]].max(directed[[b, a]]));
        EdgeSet::from_strengths(strengths, threshold)
    }

    pub fn to_json(&self) -> serde_json::Value {
        let m = self.basis.m;
        let neighborhoods: Vec<NeighborhoodDoc> = self
            .fits
            .iter()
            .enumerate()
            .map(|(k, fit)| NeighborhoodDoc {
                target: k,
                intercepts: fit.intercepts.clone(),
                blocks: self.active[k]
                    .iter()
                    .map(|&j| BlockDoc {
                        variable: j,
                        coefficients: (0..self.grid.len())
                            .map(|l| (0..m).map(|t| fit.theta[[j * m + t, l]]).collect())
                            .collect(),
                    })
                    .collect(),
                theta_x: fit.theta_x.rows().into_iter().map(|r| r.to_vec()).collect(),
                diagnostics: DiagnosticsDoc::from(fit),
            })
            .collect();
        let doc = ModelDoc {
            format: MODEL_FORMAT.to_string(),
            variables: self.names.clone(),
            exogenous: self.exogenous_names.clone(),
            basis: self.basis.clone(),
            levels: self.grid.levels().to_vec(),
            init: self.init.clone(),
            neighborhoods,
        };
        serde_json::to_value(doc).expect("model document serializes")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let doc: ModelDoc = serde_json::from_value(value.clone())?;
        if doc.format != MODEL_FORMAT {
            return Err(MqgmError::InvalidArgument(format!(
                "unsupported model format '{}', expected '{MODEL_FORMAT}'",
                doc.format
            )));
        }
        let grid = QuantileGrid::new(doc.levels)?;
        let (m, r, d, p) = (doc.basis.m, grid.len(), doc.basis.d(), doc.exogenous.len());
        let mut fits = Vec::with_capacity(d);
        for (k, nb) in doc.neighborhoods.into_iter().enumerate() {
            if nb.target != k {
                return Err(MqgmError::InvalidArgument("neighborhoods out of order".into()));
            }
            let mut theta = Array2::zeros((d * m, r));
            for block in nb.blocks {
                if block.variable >= d || block.coefficients.len() != r {
                    return Err(MqgmError::DimensionMismatch(format!("bad block in neighborhood {k}")));
                }
                for (l, coefs) in block.coefficients.iter().enumerate() {
                    if coefs.len() != m {
                        return Err(MqgmError::DimensionMismatch(format!("bad block in neighborhood {k}")));
                    }
                    for (t, &v) in coefs.iter().enumerate() {
                        theta[[block.variable * m + t, l]] = v;
                    }
                }
            }
            if nb.theta_x.len() != p || nb.theta_x.iter().any(|row| row.len() != r) {
                return Err(MqgmError::DimensionMismatch(format!("bad theta_x in neighborhood {k}")));
            }
            let theta_x = Array2::from_shape_fn((p, r), |(a, l)| nb.theta_x[a][l]);
            let diag = nb.diagnostics;
            fits.push(NeighborhoodFit {
                k,
                theta,
                intercepts: nb.intercepts,
                theta_x,
                iterations: diag.iterations,
                primal_residual: diag.primal_residual.unwrap_or(f64::INFINITY),
                dual_residual: diag.dual_residual.unwrap_or(f64::INFINITY),
                objective: diag.objective,
                converged: diag.converged,
                max_crossing: diag.max_crossing,
                intercept_shift: diag.intercept_shift,
            });
        }
        Self::from_parts(doc.basis, grid, fits, doc.variables, doc.exogenous, doc.init)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut file, &self.to_json())?;
        file.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&serde_json::from_str(&text)?)
    }

    /// Per-target solver diagnostics.
    pub fn diagnostics_json(&self) -> serde_json::Value {
        let per_k: Vec<_> = self
            .fits
            .iter()
            .map(|f| {
                let mut v = serde_json::to_value(DiagnosticsDoc::from(f)).unwrap();
                v["target"] = serde_json::json!(f.k);
                v["variable"] = serde_json::json!(self.names[f.k]);
                v
            })
            .collect();
        let unconverged: Vec<&str> = self
            .fits
            .iter()
            .filter(|f| !f.converged)
            .map(|f| self.names[f.k].as_str())
            .collect();
        serde_json::json!({
            "neighborhoods": per_k,
            "all_converged": unconverged.is_empty(),
            "warning": if unconverged.is_empty() {
                serde_json::Value::Null
            } else {
                serde_json::json!(format!("not converged for: {}", unconverged.join(", ")))
            },
        })
    }

    /// Tidy long-format fitted quantiles at every training row: `(row, variable, level, value)`.
    pub fn fitted_quantiles_table(&self, data: &Dataset) -> Result<Vec<(usize, usize, f64, f64)>> {
        let mut out = Vec::new();
        for i in 0..data.n() {
            let y = data.y().row(i).to_vec();
            let x = data.x().map(|x| x.row(i).to_vec());
            for k in 0..self.d() {
                let q = self.conditional_quantiles(k, &y, x.as_deref())?;
                for (l, &v) in q.iter().enumerate() {
                    out.push((i, k, self.grid.levels()[l], v));
                }
            }
        }
        Ok(out)
    }
}

/// `x^T theta^x_l` for one fit, summed in feature order.
pub(crate) fn exogenous_offset(x: &[f64], fit: &NeighborhoodFit, l: usize) -> f64 {
    x.iter().zip(fit.theta_x.column(l)).map(|(a, b)| a * b).sum()
}

/// Piecewise-linear inverse CDF through `(alpha_l, q_l)`, clamped to `[q_1, q_r]` outside the grid.
pub fn inverse_cdf_sample_value(quantiles: &[f64], grid: &QuantileGrid, alpha: f64) -> f64 {
    let levels = grid.levels();
    let r = levels.len();
    debug_assert_eq!(quantiles.len(), r);
    if alpha <= levels[0] {
        return quantiles[0];
    }
    if alpha >= levels[r - 1] {
        return quantiles[r - 1];
    }
    // first level strictly above alpha
    let hi = levels.partition_point(|&a| a <= alpha);
    let lo = hi - 1;
    let t = (alpha - levels[lo]) / (levels[hi] - levels[lo]);
    quantiles[lo] + (quantiles[hi] - quantiles[lo]) * t
}

/// Strength matrix from any square matrix of directed scores (symmetrized by max).
pub fn symmetrize_max(directed: ArrayView2<f64>) -> Array2<f64> {
    let d = directed.nrows();
    Array2::from_shape_fn((d, d), |(a, b)| if a == b { 0.0 } else { directed[[a, b]].max(directed[[b, a]]) })
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    format: String,
    variables: Vec<String>,
    exogenous: Vec<String>,
    basis: BasisSpec,
    levels: Vec<f64>,
    init: Vec<f64>,
    neighborhoods: Vec<NeighborhoodDoc>,
}

#[derive(Serialize, Deserialize)]
struct NeighborhoodDoc {
    target: usize,
    intercepts: Vec<f64>,
    /// Nonzero groups only; `coefficients[l]` is the `m`-vector for level `l`.
    blocks: Vec<BlockDoc>,
    theta_x: Vec<Vec<f64>>,
    diagnostics: DiagnosticsDoc,
}

#[derive(Serialize, Deserialize)]
struct BlockDoc {
    variable: usize,
    coefficients: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct DiagnosticsDoc {
    iterations: usize,
    primal_residual: Option<f64>,
    dual_residual: Option<f64>,
    objective: f64,
    converged: bool,
    max_crossing: f64,
    #[serde(default)]
    intercept_shift: f64,
}

impl From<&NeighborhoodFit> for DiagnosticsDoc {
    fn from(f: &NeighborhoodFit) -> Self {
        let finite = |v: f64| v.is_finite().then_some(v);
        Self {
            iterations: f.iterations,
            primal_residual: finite(f.primal_residual),
            dual_residual: finite(f.dual_residual),
            objective: f.objective,
            converged: f.converged,
            max_crossing: f.max_crossing,
            intercept_shift: f.intercept_shift,
        }
    }
}
