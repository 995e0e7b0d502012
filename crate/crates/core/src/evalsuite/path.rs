//! Tuning-parameter paths and ROC curves for MQGM and the two baselines.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{MqgmError, Result};
use crate::features::{fit_basis, Dataset};
use crate::model::{EdgeSet, MqgmModel, DEFAULT_EDGE_THRESHOLD};
use crate::proxops::QuantileGrid;
use crate::solver::{fit_mqgm_path, lambda_max, SolverConfig};

use super::baselines::{fit_laplace_path, fit_mb_path, laplace_lambda_max, mb_lambda_max};
use super::roc::{roc_auc, roc_from_edge_sets, RocCurve};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mqgm,
    Mb,
    Laplace,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Mqgm => "mqgm",
            Method::Mb => "mb",
            Method::Laplace => "laplace",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AucMode {
    /// One fitted model per path value.
    Refit,
    /// A single fit at the smallest path value, thresholded at every distinct strength.
    Threshold,
}

/// Settings shared by every method on a path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSettings {
    /// Basis size for MQGM.
    pub m: usize,
    pub grid: QuantileGrid,
    pub solver: SolverConfig,
    pub points: usize,
    /// Smallest path value as a fraction of `lambda_max`.
    pub min_ratio: f64,
    /// Relative precision of the `lambda_max` bisection.
    pub lambda_max_tol: f64,
    pub edge_threshold: f64,
}

impl PathSettings {
    pub fn new(m: usize, grid: QuantileGrid) -> Self {
        Self {
            m,
            grid,
            solver: SolverConfig::default(),
            points: 20,
            min_ratio: 1e-3,
            lambda_max_tol: 1e-3,
            edge_threshold: DEFAULT_EDGE_THRESHOLD,
        }
    }
}

/// `points` values log-spaced from `lambda_max` down to `lambda_max * min_ratio`.
pub fn log_path(lambda_max: f64, points: usize, min_ratio: f64) -> Vec<f64> {
    if points == 1 {
        return vec![lambda_max];
    }
    let lo = (lambda_max * min_ratio).ln();
    let hi = lambda_max.ln();
    (0..points)
        .map(|i| {
            if i == 0 {
                lambda_max
            } else {
                (hi + (lo - hi) * i as f64 / (points - 1) as f64).exp()
            }
        })
        .collect()
}

/// Fitted path of one method.
pub enum FittedPath {
    Mqgm(Vec<MqgmModel>),
    Mb(Vec<super::baselines::MbFit>),
    Laplace(Vec<MqgmModel>),
}

pub struct PathResult {
    pub method: Method,
    pub lambdas: Vec<f64>,
    pub fits: FittedPath,
}

impl PathResult {
    /// Symmetric edge strengths at each path value.
    pub fn strengths(&self) -> Vec<Array2<f64>> {
        match &self.fits {
            FittedPath::Mqgm(ms) | FittedPath::Laplace(ms) => {
                ms.iter().map(|m| m.extract_edges(0.0).strengths().clone()).collect()
            }
            FittedPath::Mb(fs) => fs.iter().map(|f| f.strengths()).collect(),
        }
    }

    /// Edge sets at each path value. MB coefficients are exact zeros, so MB uses threshold 0.
    pub fn edge_sets(&self, threshold: f64) -> Vec<(f64, EdgeSet)> {
        let t = if self.method == Method::Mb { 0.0 } else { threshold };
        self.lambdas
            .iter()
            .zip(self.strengths())
            .map(|(&l, s)| (l, EdgeSet::from_strengths(s, t)))
            .collect()
    }

    /// Whether every fit on the path converged (always true for MB).
    pub fn all_converged(&self) -> bool {
        match &self.fits {
            FittedPath::Mqgm(ms) | FittedPath::Laplace(ms) => ms.iter().all(MqgmModel::all_converged),
            FittedPath::Mb(_) => true,
        }
    }
}

/// `lambda_max` of a method on `data`.
pub fn method_lambda_max(method: Method, data: &Dataset, settings: &PathSettings) -> Result<f64> {
    match method {
        Method::Mqgm => {
            let basis = fit_basis(data, settings.m)?;
            lambda_max(data, &basis, &settings.grid, &settings.solver, settings.lambda_max_tol)
        }
        Method::Mb => mb_lambda_max(data),
        Method::Laplace => laplace_lambda_max(data, &settings.solver, settings.lambda_max_tol),
    }
}

/// Fits `method` at the given path values (decreasing order recommended).
pub fn fit_path_at(method: Method, data: &Dataset, settings: &PathSettings, lambdas: &[f64]) -> Result<PathResult> {
    let fits = match method {
        Method::Mqgm => {
            let basis = fit_basis(data, settings.m)?;
            FittedPath::Mqgm(fit_mqgm_path(data, &basis, &settings.grid, &settings.solver, lambdas)?)
        }
        Method::Mb => FittedPath::Mb(fit_mb_path(data, lambdas)?),
        Method::Laplace => FittedPath::Laplace(fit_laplace_path(data, &settings.solver, lambdas)?),
    };
    Ok(PathResult { method, lambdas: lambdas.to_vec(), fits })
}

/// Fits `method` over its default log path.
pub fn fit_path(method: Method, data: &Dataset, settings: &PathSettings) -> Result<PathResult> {
    if settings.points == 0 {
        return Err(MqgmError::InvalidArgument("path needs at least one point".into()));
    }
    let lmax = method_lambda_max(method, data, settings)?;
    let lambdas = log_path(lmax, settings.points, settings.min_ratio);
    fit_path_at(method, data, settings, &lambdas)
}

/// ROC curve of `method` against `truth`.
pub fn method_roc(
    method: Method,
    data: &Dataset,
    truth: &EdgeSet,
    settings: &PathSettings,
    mode: AucMode,
) -> Result<RocCurve> {
    match mode {
        AucMode::Refit => {
            let path = fit_path(method, data, settings)?;
            roc_from_edge_sets(&path.edge_sets(settings.edge_threshold), truth)
        }
        AucMode::Threshold => {
            let lmax = method_lambda_max(method, data, settings)?;
            let smallest = lmax * settings.min_ratio;
            let path = fit_path_at(method, data, settings, &[smallest])?;
            roc_auc(&path.strengths()[0], truth, &[])
        }
    }
}

/// Whether some point on the path reproduces `truth` exactly.
pub fn recovers(path: &PathResult, truth: &EdgeSet, threshold: f64) -> Option<f64> {
    path.edge_sets(threshold).into_iter().find(|(_, e)| e.same_edges(truth)).map(|(l, _)| l)
}
