//! Neighborhood-selection baselines: Gaussian lasso regressions (MB) and
//! linear median regression with a group penalty (Laplace).

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{MqgmError, Result};
use crate::features::{fit_linear_basis, BasisSpec, Dataset};
use crate::model::{symmetrize_max, MqgmModel};
use crate::proxops::QuantileGrid;
use crate::solver::{fit_mqgm_path, lambda_max, SolverConfig};
use crate::stats::{mean, variance};

use super::calibration::ConditionalSampler;

/// Lasso `||y - X b||^2 + lambda ||b||_1` by cyclic coordinate descent.
///
/// Stops when the duality gap falls below `gap_tol * ||y||^2 / 2`.
pub fn lasso_cd(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    lambda: f64,
    warm: Option<&Array1<f64>>,
    gap_tol: f64,
    max_sweeps: usize,
) -> Array1<f64> {
    let p = x.ncols();
    // work with (1/2)||r||^2 + mu ||b||_1, mu = lambda / 2
    let mu = 0.5 * lambda;
    let mut b = warm.cloned().unwrap_or_else(|| Array1::zeros(p));
    let mut resid = &y - &x.dot(&b);
    let col_sq: Vec<f64> = x.axis_iter(Axis(1)).map(|c| c.dot(&c)).collect();
    let y_sq = y.dot(&y);
    for _ in 0..max_sweeps {
        for j in 0..p {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = x.column(j);
            let old = b[j];
            let rho = col.dot(&resid) + col_sq[j] * old;
            let new = soft(rho, mu) / col_sq[j];
            if new != old {
                resid.scaled_add(old - new, &col);
                b[j] = new;
            }
        }
        // duality gap
        let primal = 0.5 * resid.dot(&resid) + mu * b.iter().map(|v| v.abs()).sum::<f64>();
        let corr = x.t().dot(&resid);
        let max_corr = corr.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let scale = if max_corr > mu { mu / max_corr } else { 1.0 };
        let nu = &resid * scale;
        let diff = &y - &nu;
        let dual = 0.5 * y_sq - 0.5 * diff.dot(&diff);
        if primal - dual <= gap_tol * 0.5 * y_sq.max(1e-300) {
            break;
        }
    }
    b
}

#[inline]
fn soft(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Per-variable lasso fits on standardized data.
#[derive(Debug, Clone)]
pub struct MbFit {
    pub lambda: f64,
    /// `coef[[k, j]]`: standardized coefficient of `y_j` in the regression of `y_k`.
    pub coef: Array2<f64>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Residual variance of each regression on the original scale.
    pub residual_var: Vec<f64>,
}

impl MbFit {
    /// `max(|coef_kj|, |coef_jk|)`.
    pub fn strengths(&self) -> Array2<f64> {
        symmetrize_max(self.coef.mapv(f64::abs).view())
    }

    /// Conditional mean of `y_k` on the original scale.
    pub fn predict(&self, k: usize, y: &[f64]) -> f64 {
        let mut z = 0.0;
        for (j, &v) in y.iter().enumerate() {
            if j != k {
                z += self.coef[[k, j]] * (v - self.means[j]) / self.sds[j];
            }
        }
        self.means[k] + self.sds[k] * z
    }
}

fn standardize(data: &Dataset) -> Result<(Array2<f64>, Vec<f64>, Vec<f64>)> {
    let y = data.y();
    let d = data.d();
    let mut z = y.to_owned();
    let mut means = Vec::with_capacity(d);
    let mut sds = Vec::with_capacity(d);
    for j in 0..d {
        let col = y.column(j).to_vec();
        let mu = mean(&col);
        let sd = variance(&col).sqrt();
        if !(sd > 0.0) {
            return Err(MqgmError::ConstantVariable(data.names()[j].clone()));
        }
        z.column_mut(j).mapv_inplace(|v| (v - mu) / sd);
        means.push(mu);
        sds.push(sd);
    }
    Ok((z, means, sds))
}

const MB_GAP_TOL: f64 = 1e-6;
const MB_MAX_SWEEPS: usize = 10_000;

/// Smallest lambda for which every MB regression is empty.
pub fn mb_lambda_max(data: &Dataset) -> Result<f64> {
    let (z, _, _) = standardize(data)?;
    let g = z.t().dot(&z);
    let d = data.d();
    let mut best: f64 = 0.0;
    for k in 0..d {
        for j in 0..d {
            if j != k {
                best = best.max(2.0 * g[[k, j]].abs());
            }
        }
    }
    // at exactly this value the leading coefficient sits on the soft threshold
    Ok(best * (1.0 + 1e-9))
}

/// MB fits along `lambdas`, warm-starting each regression from the previous value.
pub fn fit_mb_path(data: &Dataset, lambdas: &[f64]) -> Result<Vec<MbFit>> {
    let (z, means, sds) = standardize(data)?;
    let d = data.d();
    let mut out: Vec<MbFit> = lambdas
        .iter()
        .map(|&lambda| MbFit {
            lambda,
            coef: Array2::zeros((d, d)),
            means: means.clone(),
            sds: sds.clone(),
            residual_var: vec![0.0; d],
        })
        .collect();
    for k in 0..d {
        let others: Vec<usize> = (0..d).filter(|&j| j != k).collect();
        let x = z.select(Axis(1), &others);
        let yk = z.column(k);
        let mut warm: Option<Array1<f64>> = None;
        for fit in out.iter_mut() {
            let b = lasso_cd(x.view(), yk, fit.lambda, warm.as_ref(), MB_GAP_TOL, MB_MAX_SWEEPS);
            for (idx, &j) in others.iter().enumerate() {
                fit.coef[[k, j]] = b[idx];
            }
            let resid: Vec<f64> = (&yk - &x.dot(&b)).iter().map(|v| v * sds[k]).collect();
            fit.residual_var[k] = variance(&resid);
            warm = Some(b);
        }
    }
    Ok(out)
}

/// MB at a single `lambda`.
pub fn fit_mb(data: &Dataset, lambda: f64) -> Result<MbFit> {
    Ok(fit_mb_path(data, &[lambda])?.pop().unwrap())
}

/// Gaussian conditionals from an MB fit.
pub struct MbSampler<'a> {
    pub fit: &'a MbFit,
}

impl ConditionalSampler for MbSampler<'_> {
    fn sample(&self, k: usize, y: &[f64], _x: Option<&[f64]>, rng: &mut dyn RngCore) -> Result<f64> {
        let eps: f64 = StandardNormal.sample(rng);
        Ok(self.fit.predict(k, y) + self.fit.residual_var[k].sqrt() * eps)
    }
}

/// Laplace baseline: the quantile solver with `r = 1`, `alpha = 0.5` and the identity basis.
pub fn laplace_setup(data: &Dataset) -> Result<(BasisSpec, QuantileGrid)> {
    Ok((fit_linear_basis(data)?, QuantileGrid::new(vec![0.5])?))
}

pub fn fit_laplace_path(data: &Dataset, cfg: &SolverConfig, lambdas: &[f64]) -> Result<Vec<MqgmModel>> {
    let (basis, grid) = laplace_setup(data)?;
    fit_mqgm_path(data, &basis, &grid, cfg, lambdas)
}

pub fn fit_laplace(data: &Dataset, cfg: &SolverConfig, lambda: f64) -> Result<MqgmModel> {
    Ok(fit_laplace_path(data, cfg, &[lambda])?.pop().unwrap())
}

pub fn laplace_lambda_max(data: &Dataset, cfg: &SolverConfig, rel_tol: f64) -> Result<f64> {
    let (basis, grid) = laplace_setup(data)?;
    lambda_max(data, &basis, &grid, cfg, rel_tol)
}

/// Edge strengths of a Laplace fit (absolute linear coefficients, max over directions).
pub fn laplace_strengths(model: &MqgmModel) -> Array2<f64> {
    model.extract_edges(0.0).strengths().clone()
}

/// Median regression plus Laplace noise whose scale is the mean absolute training residual.
pub struct LaplaceSampler<'a> {
    model: &'a MqgmModel,
    scales: Vec<f64>,
}

impl<'a> LaplaceSampler<'a> {
    pub fn new(model: &'a MqgmModel, data: &Dataset) -> Result<Self> {
        let d = data.d();
        let mut scales = vec![0.0; d];
        for (k, scale) in scales.iter_mut().enumerate() {
            let mut total = 0.0;
            for i in 0..data.n() {
                let row = data.y().row(i).to_vec();
                let x = data.x().map(|x| x.row(i).to_vec());
                let med = model.conditional_quantiles(k, &row, x.as_deref())?[0];
                total += (row[k] - med).abs();
            }
            *scale = total / data.n() as f64;
        }
        Ok(Self { model, scales })
    }
}

impl ConditionalSampler for LaplaceSampler<'_> {
    fn sample(&self, k: usize, y: &[f64], x: Option<&[f64]>, rng: &mut dyn RngCore) -> Result<f64> {
        let med = self.model.conditional_quantiles(k, y, x)?[0];
        // inverse CDF of Laplace(0, b)
        let u: f64 = rand::Rng::random::<f64>(rng) - 0.5;
        let b = self.scales[k];
        Ok(med - b * u.signum() * (1.0 - 2.0 * u.abs()).max(1e-300).ln())
    }
}
