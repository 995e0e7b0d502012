//! ADMM for the per-variable multiple-quantile neighborhood problems.
//!
//! For target `k` the solver minimizes
//!
//! ```text
//! sum_l [ psi_l(Y_k - b_l 1 - Phi theta_l - X theta^x_l)
//!         + sum_{j != k} (lambda1 ||theta_lj||_2 + lambda2 ||theta_lj||_2^2) ]
//!   + (lambda2 / 2) ||Theta^x||_F^2
//! ```
//!
//! subject to (optionally) nondecreasing fitted quantiles across levels at every
//! training row. The splitting is `V = fitted`, `W = Theta`, `Z = Y 1^T - fitted`,
//! with scaled duals `U_V`, `U_W`, `U_Z`. The joint `(Theta, Theta^x, B)` update is
//! a linear solve whose system matrix depends only on the design and `rho`, so its
//! inverse is computed once and reused.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MqgmError, Result};
use crate::features::{expand, BasisSpec, Dataset, FeatureMatrix};
use crate::linalg::Cholesky;
use crate::model::MqgmModel;
use crate::proxops::{
    group_shrink_inplace, max_crossing, multiquantile_loss, ordering_shift, prox_multiquantile_inplace,
    project_isotonic_rows_inplace, QuantileGrid,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub rho: f64,
    pub max_iters: usize,
    pub tol_abs: f64,
    pub tol_rel: f64,
    pub noncrossing: bool,
    /// Doubles/halves `rho` when the primal and dual residuals differ by more than 10x.
    pub residual_balancing: bool,
    /// Over-relaxation factor in `(0, 2)`; 1 is plain ADMM.
    #[serde(default = "default_relaxation")]
    pub relaxation: f64,
}

fn default_relaxation() -> f64 {
    1.0
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.0,
            rho: 1.0,
            max_iters: 2000,
            tol_abs: 1e-4,
            tol_rel: 1e-3,
            noncrossing: true,
            residual_balancing: false,
            relaxation: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn with_lambda1(mut self, lambda1: f64) -> Self {
        self.lambda1 = lambda1;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(MqgmError::InvalidArgument(what.to_string()));
        if !(self.lambda1 >= 0.0) || !self.lambda1.is_finite() {
            return bad("lambda1 must be a finite nonnegative number");
        }
        if !(self.lambda2 >= 0.0) || !self.lambda2.is_finite() {
            return bad("lambda2 must be a finite nonnegative number");
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return bad("rho must be positive");
        }
        if self.max_iters < 1 {
            return bad("max_iters must be at least 1");
        }
        if !(self.tol_abs > 0.0) || !(self.tol_rel > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.relaxation > 0.0 && self.relaxation < 2.0) {
            return bad("relaxation must lie in (0, 2)");
        }
        Ok(())
    }
}

/// Fitted coefficients for one target variable.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborhoodFit {
    pub k: usize,
    /// `dm x r`; block `k` is exactly zero.
    pub theta: Array2<f64>,
    pub intercepts: Vec<f64>,
    /// `p x r` (zero rows when there are no exogenous features).
    pub theta_x: Array2<f64>,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
    pub converged: bool,
    /// Largest decrease between adjacent levels of the fitted training quantiles.
    pub max_crossing: f64,
    /// Largest intercept change applied on exit to order the training quantiles.
    pub intercept_shift: f64,
}

/// Primal and scaled dual iterates, reusable as a warm start.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub theta: Array2<f64>,
    pub theta_x: Array2<f64>,
    pub intercepts: Array1<f64>,
    pub v: Array2<f64>,
    pub w: Array2<f64>,
    pub z: Array2<f64>,
    pub u_v: Array2<f64>,
    pub u_w: Array2<f64>,
    pub u_z: Array2<f64>,
    pub rho: f64,
}

/// Reusable solver for one target variable: owns the reduced design
/// `M = [Phi_{-k} | X | 1]` and caches the inverse of the linear-update system.
pub struct NeighborhoodSolver {
    k: usize,
    d: usize,
    group: usize,
    n_theta: usize,
    n_x: usize,
    design: Array2<f64>,
    gram: Array2<f64>,
    y: Array1<f64>,
    grid: QuantileGrid,
    cached: Option<(SystemKey, Array2<f64>)>,
}

struct ZeroCertificate {
    intercepts: Vec<f64>,
    subgradient: Array2<f64>,
    /// No level has more than one observation at its intercept.
    unique: bool,
    increasing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct SystemKey {
    coupling: f64,
    ridge_x: f64,
}

impl NeighborhoodSolver {
    pub fn new(
        k: usize,
        phi: &FeatureMatrix,
        yk: ArrayView1<f64>,
        x: Option<ArrayView2<f64>>,
        grid: &QuantileGrid,
    ) -> Result<Self> {
        let n = phi.n();
        if k >= phi.d() {
            return Err(MqgmError::InvalidArgument(format!(
                "target {k} out of range for d = {}",
                phi.d()
            )));
        }
        if yk.len() != n {
            return Err(MqgmError::DimensionMismatch(format!(
                "target has {} rows, design has {n}",
                yk.len()
            )));
        }
        if let Some(x) = &x {
            if x.nrows() != n {
                return Err(MqgmError::DimensionMismatch(format!(
                    "exogenous matrix has {} rows, design has {n}",
                    x.nrows()
                )));
            }
        }
        let reduced = phi.without_block(k);
        let n_theta = reduced.ncols();
        let n_x = x.as_ref().map_or(0, |x| x.ncols());
        let mut design = Array2::<f64>::zeros((n, n_theta + n_x + 1));
        design.slice_mut(s![.., ..n_theta]).assign(&reduced);
        if let Some(x) = &x {
            design.slice_mut(s![.., n_theta..n_theta + n_x]).assign(x);
        }
        design.column_mut(n_theta + n_x).fill(1.0);
        let gram = design.t().dot(&design);
        Ok(Self {
            k,
            d: phi.d(),
            group: phi.m(),
            n_theta,
            n_x,
            design,
            gram,
            y: yk.to_owned(),
            grid: grid.clone(),
            cached: None,
        })
    }

    fn n(&self) -> usize {
        self.design.nrows()
    }

    fn r(&self) -> usize {
        self.grid.len()
    }

    fn width(&self) -> usize {
        self.design.ncols()
    }

    fn uses_v(&self, cfg: &SolverConfig) -> bool {
        cfg.noncrossing && self.r() > 1
    }

    fn system_inverse(&mut self, key: SystemKey) -> Result<&Array2<f64>> {
        let stale = self.cached.as_ref().map_or(true, |(k, _)| *k != key);
        if stale {
            let mut sys = &self.gram * key.coupling;
            for c in 0..self.n_theta {
                sys[[c, c]] += 1.0;
            }
            for c in self.n_theta..self.n_theta + self.n_x {
                sys[[c, c]] += key.ridge_x;
            }
            let inv = Cholesky::factor(sys.view())?.inverse();
            self.cached = Some((key, inv));
        }
        Ok(&self.cached.as_ref().unwrap().1)
    }

    /// Exact solution at `Theta = 0, Theta^x = 0` with matching duals: pinball-optimal
    /// intercepts, `U_Z = g / rho` and `U_W = Phi^T g / rho` for the loss subgradient `g`.
    pub fn initial_state(&self, rho: f64) -> AdmmState {
        let (n, r) = (self.n(), self.r());
        let cert = self.zero_certificate();
        let b = Array1::from(cert.intercepts.clone());
        let fitted = Array2::from_shape_fn((n, r), |(_, l)| b[l]);
        let z = Array2::from_shape_fn((n, r), |(i, l)| self.y[i] - b[l]);
        let u_z = &cert.subgradient / rho;
        let u_w = self.design.slice(s![.., ..self.n_theta]).t().dot(&u_z);
        AdmmState {
            theta: Array2::zeros((self.n_theta, r)),
            theta_x: Array2::zeros((self.n_x, r)),
            intercepts: b,
            v: fitted,
            w: Array2::zeros((self.n_theta, r)),
            z,
            u_v: Array2::zeros((n, r)),
            u_w,
            u_z,
            rho,
        }
    }

    fn zero_certificate(&self) -> ZeroCertificate {
        let mut sorted = self.y.to_vec();
        sorted.sort_by(f64::total_cmp);
        let (n, r) = (self.n(), self.r());
        let mut intercepts = Vec::with_capacity(r);
        let mut subgradient = Array2::zeros((n, r));
        let mut unique = true;
        for (l, &alpha) in self.grid.levels().iter().enumerate() {
            let na = n as f64 * alpha;
            let b = if (na - na.round()).abs() < 1e-9 && na.round() >= 1.0 && (na.round() as usize) < n {
                // any point between the two middle order statistics is optimal
                let c = na.round() as usize;
                0.5 * (sorted[c - 1] + sorted[c])
            } else {
                sorted[(na.floor() as usize).min(n - 1)]
            };
            let below = sorted.partition_point(|&v| v < b);
            let ties = sorted.partition_point(|&v| v <= b) - below;
            let above = n - below - ties;
            unique &= ties <= 1;
            let tie_value = if ties > 0 {
                -((below as f64) * (alpha - 1.0) + (above as f64) * alpha) / ties as f64
            } else {
                0.0
            };
            for (i, &y) in self.y.iter().enumerate() {
                subgradient[[i, l]] = if y < b {
                    alpha - 1.0
                } else if y > b {
                    alpha
                } else {
                    tie_value
                };
            }
            intercepts.push(b);
        }
        let increasing = intercepts.windows(2).all(|w| w[0] < w[1]);
        ZeroCertificate { intercepts, subgradient, unique, increasing }
    }

    /// Runs ADMM from `warm` (or the default initialization) until the residual
    /// criterion holds or `max_iters` is reached.
    pub fn solve(
        &mut self,
        cfg: &SolverConfig,
        warm: Option<AdmmState>,
    ) -> Result<(NeighborhoodFit, AdmmState)> {
        self.solve_traced(cfg, warm, None)
    }

    /// As [`solve`](Self::solve), additionally recording the objective after every iteration.
    pub fn solve_traced(
        &mut self,
        cfg: &SolverConfig,
        warm: Option<AdmmState>,
        mut trace: Option<&mut Vec<f64>>,
    ) -> Result<(NeighborhoodFit, AdmmState)> {
        cfg.validate()?;
        let (n, r, width) = (self.n(), self.r(), self.width());
        let nt = self.n_theta;
        let use_v = self.uses_v(cfg);
        let coupling = if use_v { 2.0 } else { 1.0 };
        let mut st = match warm {
            Some(st) => {
                self.check_state(&st)?;
                st
            }
            None => self.initial_state(cfg.rho),
        };
        if !use_v {
            st.u_v.fill(0.0);
        }

        let y_block = Array2::from_shape_fn((n, r), |(i, _)| self.y[i]);
        let c_norm = (r as f64).sqrt() * self.y.dot(&self.y).sqrt();
        let n_constraints = ((if use_v { 2 * n } else { n } + nt) * r) as f64;
        let n_vars = (width * r) as f64;

        let mut g = Array2::<f64>::zeros((n, r));
        let mut rhs = Array2::<f64>::zeros((width, r));
        let mut beta = Array2::<f64>::zeros((width, r));
        let mut fitted = Array2::<f64>::zeros((n, r));
        let mut dz_minus_dv = Array2::<f64>::zeros((n, r));
        let mut dw = Array2::<f64>::zeros((nt, r));
        let mut scratch = Array2::<f64>::zeros((width, r));

        let mut iterations = 0;
        let mut primal = f64::INFINITY;
        let mut dual = f64::INFINITY;
        let mut converged = false;

        for iter in 1..=cfg.max_iters {
            iterations = iter;
            let key = SystemKey { coupling, ridge_x: cfg.lambda2 / st.rho };

            // (Theta, Theta^x, B) update
            Zip::from(&mut g)
                .and(&y_block)
                .and(&st.z)
                .and(&st.u_z)
                .for_each(|g, &y, &z, &uz| *g = y - z + uz);
            if use_v {
                Zip::from(&mut g)
                    .and(&st.v)
                    .and(&st.u_v)
                    .for_each(|g, &v, &uv| *g += v - uv);
            }
            general_mat_mul(1.0, &self.design.t(), &g, 0.0, &mut rhs);
            {
                let mut top = rhs.slice_mut(s![..nt, ..]);
                top += &st.w;
                top -= &st.u_w;
            }
            let inv = self.system_inverse(key)?;
            general_mat_mul(1.0, inv, &rhs, 0.0, &mut beta);
            general_mat_mul(1.0, &self.design, &beta, 0.0, &mut fitted);
            st.theta.assign(&beta.slice(s![..nt, ..]));
            st.theta_x.assign(&beta.slice(s![nt..nt + self.n_x, ..]));
            st.intercepts.assign(&beta.row(width - 1));

            // V update: row-wise isotonic projection
            // relaxed copies of F and Theta: a * new + (1 - a) * (previous split variable)
            let a = cfg.relaxation;
            let mut r_v2 = 0.0;
            if use_v {
                dz_minus_dv.assign(&st.v);
                Zip::from(&mut st.v)
                    .and(&fitted)
                    .and(&st.u_v)
                    .for_each(|v, &f, &uv| *v = a * f + (1.0 - a) * *v + uv);
                project_isotonic_rows_inplace(&mut st.v);
                // dz_minus_dv holds the previous V here
                Zip::from(&mut st.u_v)
                    .and(&fitted)
                    .and(&st.v)
                    .and(&dz_minus_dv)
                    .for_each(|u, &f, &v, &v_old| {
                        let res = f - v;
                        r_v2 += res * res;
                        *u += a * f + (1.0 - a) * v_old - v;
                    });
                Zip::from(&mut dz_minus_dv).and(&st.v).for_each(|d, &v| *d -= v);
            } else {
                dz_minus_dv.fill(0.0);
            }

            // W update: group shrinkage per (variable block, level)
            dw.assign(&st.w);
            let kappa1 = cfg.lambda1 / st.rho;
            let kappa2 = 2.0 * cfg.lambda2 / st.rho;
            let mut group_buf = vec![0.0; self.group];
            for l in 0..r {
                for blk in 0..nt / self.group.max(1) {
                    let rows = blk * self.group..(blk + 1) * self.group;
                    for (t, row) in rows.clone().enumerate() {
                        group_buf[t] = a * st.theta[[row, l]] + (1.0 - a) * st.w[[row, l]] + st.u_w[[row, l]];
                    }
                    group_shrink_inplace(&mut group_buf, kappa1, kappa2);
                    for (t, row) in rows.enumerate() {
                        st.w[[row, l]] = group_buf[t];
                    }
                }
            }
            let mut r_w2 = 0.0;
            Zip::from(&mut st.u_w)
                .and(&st.theta)
                .and(&st.w)
                .and(&dw)
                .for_each(|u, &t, &w, &w_old| {
                    let res = t - w;
                    r_w2 += res * res;
                    *u += a * t + (1.0 - a) * w_old - w;
                });
            Zip::from(&mut dw).and(&st.w).for_each(|d, &w| *d = w - *d);

            // Z update: multiple-quantile prox
            // relaxed fit for the Z constraint: a * F + (1 - a) * (Y - Z_old)
            Zip::from(&mut dz_minus_dv).and(&st.z).for_each(|d, &z| *d -= z);
            Zip::from(&mut g)
                .and(&y_block)
                .and(&fitted)
                .and(&st.z)
                .for_each(|h, &y, &f, &z| *h = a * f + (1.0 - a) * (y - z));
            Zip::from(&mut st.z)
                .and(&y_block)
                .and(&g)
                .and(&st.u_z)
                .for_each(|z, &y, &h, &uz| *z = y - h + uz);
            prox_multiquantile_inplace(&mut st.z, 1.0 / st.rho, &self.grid);
            Zip::from(&mut dz_minus_dv).and(&st.z).for_each(|d, &z| *d += z);
            let mut r_z2 = 0.0;
            Zip::from(&mut st.u_z)
                .and(&y_block)
                .and(&fitted)
                .and(&st.z)
                .and(&g)
                .for_each(|u, &y, &f, &z, &h| {
                    let res = y - f - z;
                    r_z2 += res * res;
                    *u += y - h - z;
                });

            if let Some(trace) = trace.as_deref_mut() {
                trace.push(self.objective_reduced(&st.w, &st.theta_x, st.intercepts.view(), cfg));
            }

            primal = (r_v2 + r_w2 + r_z2).sqrt();
            let fit_norm2 = fitted.iter().map(|v| v * v).sum::<f64>();
            let ax_norm = (if use_v { 2.0 } else { 1.0 } * fit_norm2
                + st.theta.iter().map(|v| v * v).sum::<f64>())
            .sqrt();
            let bz_norm = (if use_v { st.v.iter().map(|v| v * v).sum::<f64>() } else { 0.0 }
                + st.w.iter().map(|v| v * v).sum::<f64>()
                + st.z.iter().map(|v| v * v).sum::<f64>())
            .sqrt();
            let eps_pri =
                n_constraints.sqrt() * cfg.tol_abs + cfg.tol_rel * ax_norm.max(bz_norm).max(c_norm);

            let balance_now = cfg.residual_balancing && iter % 10 == 0;
            if primal <= eps_pri || balance_now {
                // s = rho (M^T (dZ - dV) - [dW; 0; 0])
                general_mat_mul(1.0, &self.design.t(), &dz_minus_dv, 0.0, &mut scratch);
                {
                    let mut top = scratch.slice_mut(s![..nt, ..]);
                    top -= &dw;
                }
                dual = st.rho * scratch.iter().map(|v| v * v).sum::<f64>().sqrt();

                if primal <= eps_pri {
                    // A^T u = M^T (U_V + U_Z) + [U_W; 0; 0]
                    Zip::from(&mut g).and(&st.u_v).and(&st.u_z).for_each(|g, &a, &b| *g = a + b);
                    general_mat_mul(1.0, &self.design.t(), &g, 0.0, &mut scratch);
                    {
                        let mut top = scratch.slice_mut(s![..nt, ..]);
                        top += &st.u_w;
                    }
                    let aty = st.rho * scratch.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let eps_dual = n_vars.sqrt() * cfg.tol_abs + cfg.tol_rel * aty;
                    if dual <= eps_dual {
                        converged = true;
                        break;
                    }
                }
                if balance_now {
                    let factor = if primal > 10.0 * dual {
                        2.0
                    } else if dual > 10.0 * primal {
                        0.5
                    } else {
                        1.0
                    };
                    if factor != 1.0 {
                        st.rho *= factor;
                        st.u_v /= factor;
                        st.u_w /= factor;
                        st.u_z /= factor;
                    }
                }
            }
        }

        let fit = self.finish(&st, cfg, iterations, primal, dual, converged);
        Ok((fit, st))
    }

    fn check_state(&self, st: &AdmmState) -> Result<()> {
        let (n, r) = (self.n(), self.r());
        let ok = st.theta.dim() == (self.n_theta, r)
            && st.w.dim() == (self.n_theta, r)
            && st.u_w.dim() == (self.n_theta, r)
            && st.theta_x.dim() == (self.n_x, r)
            && st.intercepts.len() == r
            && st.v.dim() == (n, r)
            && st.z.dim() == (n, r)
            && st.u_v.dim() == (n, r)
            && st.u_z.dim() == (n, r)
            && st.rho > 0.0;
        if ok {
            Ok(())
        } else {
            Err(MqgmError::DimensionMismatch("warm-start state has the wrong shape".into()))
        }
    }

    fn fitted_from(&self, theta: &Array2<f64>, theta_x: &Array2<f64>, b: ArrayView1<f64>) -> Array2<f64> {
        let nt = self.n_theta;
        let mut fitted = self.design.slice(s![.., ..nt]).dot(theta);
        if self.n_x > 0 {
            fitted += &self.design.slice(s![.., nt..nt + self.n_x]).dot(theta_x);
        }
        fitted += &b;
        fitted
    }

    fn objective_reduced(
        &self,
        theta: &Array2<f64>,
        theta_x: &Array2<f64>,
        b: ArrayView1<f64>,
        cfg: &SolverConfig,
    ) -> f64 {
        let fitted = self.fitted_from(theta, theta_x, b);
        let residual = Array2::from_shape_fn(fitted.dim(), |(i, l)| self.y[i] - fitted[[i, l]]);
        let mut total = multiquantile_loss(residual.view(), &self.grid);
        total += group_penalty(theta.view(), self.group, cfg);
        total += 0.5 * cfg.lambda2 * theta_x.iter().map(|v| v * v).sum::<f64>();
        total
    }

    fn finish(
        &self,
        st: &AdmmState,
        cfg: &SolverConfig,
        iterations: usize,
        primal: f64,
        dual: f64,
        converged: bool,
    ) -> NeighborhoodFit {
        let r = self.r();
        let mut intercepts = st.intercepts.clone();
        let mut fitted = self.fitted_from(&st.w, &st.theta_x, intercepts.view());
        let shift = if self.uses_v(cfg) { ordering_shift(fitted.view()) } else { Array1::zeros(r) };
        intercepts += &shift;
        fitted += &shift;
        let objective = self.objective_reduced(&st.w, &st.theta_x, intercepts.view(), cfg);
        // re-insert the zero block for the target variable
        let m = self.group;
        let mut theta = Array2::<f64>::zeros((self.d * m, r));
        let k0 = self.k * m;
        theta.slice_mut(s![..k0, ..]).assign(&st.w.slice(s![..k0, ..]));
        theta
            .slice_mut(s![k0 + m.., ..])
            .assign(&st.w.slice(s![k0.., ..]));
        NeighborhoodFit {
            k: self.k,
            theta,
            intercepts: intercepts.to_vec(),
            theta_x: st.theta_x.clone(),
            iterations,
            primal_residual: primal,
            dual_residual: dual,
            objective,
            converged,
            max_crossing: if r > 1 { max_crossing(fitted.view()) } else { 0.0 },
            intercept_shift: shift.iter().fold(0.0, |a: f64, v| a.max(v.abs())),
        }
    }
}

fn group_penalty(theta: ArrayView2<f64>, group: usize, cfg: &SolverConfig) -> f64 {
    if group == 0 || theta.nrows() == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for col in theta.axis_iter(Axis(1)) {
        for chunk in col.exact_chunks(group) {
            let sq = chunk.dot(&chunk);
            total += cfg.lambda1 * sq.sqrt() + cfg.lambda2 * sq;
        }
    }
    total
}

/// Fits the neighborhood model of variable `k` from a cold start.
pub fn fit_neighborhood(
    k: usize,
    phi: &FeatureMatrix,
    yk: ArrayView1<f64>,
    x: Option<ArrayView2<f64>>,
    grid: &QuantileGrid,
    cfg: &SolverConfig,
) -> Result<NeighborhoodFit> {
    let mut solver = NeighborhoodSolver::new(k, phi, yk, x, grid)?;
    Ok(solver.solve(cfg, None)?.0)
}

/// Penalized multiple-quantile objective of `fit` on the full design (block `k` contributes zero).
pub fn objective(
    fit: &NeighborhoodFit,
    phi: &FeatureMatrix,
    yk: ArrayView1<f64>,
    x: Option<ArrayView2<f64>>,
    grid: &QuantileGrid,
    cfg: &SolverConfig,
) -> f64 {
    let mut fitted = phi.values().dot(&fit.theta);
    if let Some(x) = x {
        if fit.theta_x.nrows() > 0 {
            fitted += &x.dot(&fit.theta_x);
        }
    }
    fitted += &Array1::from(fit.intercepts.clone());
    let residual = Array2::from_shape_fn(fitted.dim(), |(i, l)| yk[i] - fitted[[i, l]]);
    multiquantile_loss(residual.view(), grid)
        + group_penalty(fit.theta.view(), phi.m(), cfg)
        + 0.5 * cfg.lambda2 * fit.theta_x.iter().map(|v| v * v).sum::<f64>()
}

fn check_fit_inputs(data: &Dataset, spec: &BasisSpec) -> Result<FeatureMatrix> {
    if spec.d() != data.d() {
        return Err(MqgmError::DimensionMismatch(format!(
            "basis built for d = {}, dataset has d = {}",
            spec.d(),
            data.d()
        )));
    }
    expand(data, spec)
}

/// Fits all `d` neighborhood problems. Runs on the current rayon pool; results do
/// not depend on scheduling.
pub fn fit_mqgm(
    data: &Dataset,
    spec: &BasisSpec,
    grid: &QuantileGrid,
    cfg: &SolverConfig,
) -> Result<MqgmModel> {
    let mut models = fit_mqgm_path(data, spec, grid, cfg, &[cfg.lambda1])?;
    Ok(models.pop().unwrap())
}

/// Fits one model per `lambda1` value, warm-starting each subproblem from the
/// previous value's solution. Pass the path in decreasing order for best effect.
pub fn fit_mqgm_path(
    data: &Dataset,
    spec: &BasisSpec,
    grid: &QuantileGrid,
    cfg: &SolverConfig,
    lambdas: &[f64],
) -> Result<Vec<MqgmModel>> {
    cfg.validate()?;
    let phi = check_fit_inputs(data, spec)?;
    let per_k: Vec<Vec<NeighborhoodFit>> = (0..data.d())
        .into_par_iter()
        .map(|k| {
            solve_path_for(k, &phi, data, grid, cfg, lambdas)
                .map_err(|e| MqgmError::Subproblem { k, source: Box::new(e) })
        })
        .collect::<Result<_>>()?;
    let mut by_lambda: Vec<Vec<NeighborhoodFit>> = vec![Vec::with_capacity(data.d()); lambdas.len()];
    for fits in per_k {
        for (i, fit) in fits.into_iter().enumerate() {
            by_lambda[i].push(fit);
        }
    }
    by_lambda
        .into_iter()
        .map(|fits| MqgmModel::new(spec.clone(), grid.clone(), fits, data))
        .collect()
}

fn solve_path_for(
    k: usize,
    phi: &FeatureMatrix,
    data: &Dataset,
    grid: &QuantileGrid,
    cfg: &SolverConfig,
    lambdas: &[f64],
) -> Result<Vec<NeighborhoodFit>> {
    let mut solver = NeighborhoodSolver::new(k, phi, data.column(k), data.x(), grid)?;
    let mut warm = None;
    let mut out = Vec::with_capacity(lambdas.len());
    for &lambda1 in lambdas {
        let cfg_l = cfg.clone().with_lambda1(lambda1);
        let (fit, state) = solver.solve(&cfg_l, warm.take())?;
        warm = Some(state);
        out.push(fit);
    }
    Ok(out)
}

/// Smallest `lambda1` at which every group of subproblem `k` is zero. Exact from the
/// optimality conditions when possible, otherwise bracketed and bisected to `rel_tol`.
pub fn lambda_max_neighborhood(
    solver: &mut NeighborhoodSolver,
    cfg: &SolverConfig,
    rel_tol: f64,
) -> Result<f64> {
    if solver.n_theta == 0 {
        return Ok(0.0);
    }
    // Without exogenous columns the zero solution is known in closed form, and
    // lambda_max is the largest group norm of Phi^T g when g is unique.
    let cert = solver.zero_certificate();
    let gradient = solver.design.slice(s![.., ..solver.n_theta]).t().dot(&cert.subgradient);
    let mut exact: f64 = 0.0;
    for col in gradient.axis_iter(Axis(1)) {
        for chunk in col.exact_chunks(solver.group) {
            exact = exact.max(chunk.dot(&chunk).sqrt());
        }
    }
    if solver.n_x == 0 && cert.unique && (cert.increasing || !solver.uses_v(cfg)) {
        // the largest group sits exactly on the shrinkage threshold; keep it off by rounding
        return Ok(exact * (1.0 + 1e-9));
    }
    let is_empty = |fit: &NeighborhoodFit| fit.theta.iter().all(|&v| v == 0.0);
    // Probes start cold: a warm start from an empty solution can stop with all
    // groups still at zero before the true solution leaves the origin.
    let mut probe = |lambda: f64| -> Result<bool> {
        let (fit, _) = solver.solve(&cfg.clone().with_lambda1(lambda), None)?;
        Ok(is_empty(&fit))
    };
    let mut hi = exact.max(1e-8);
    let mut tries = 0;
    while !probe(hi)? {
        hi *= 2.0;
        tries += 1;
        if tries > 60 {
            return Err(MqgmError::InvalidArgument("could not bracket lambda_max".into()));
        }
    }
    let mut lo = hi / 16.0;
    while probe(lo)? {
        hi = lo;
        lo /= 16.0;
        if lo < 1e-12 {
            return Ok(hi);
        }
    }
    while (hi - lo) > rel_tol * hi {
        let mid = (lo * hi).sqrt();
        if probe(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Smallest `lambda1` that zeroes every group of every subproblem.
pub fn lambda_max(
    data: &Dataset,
    spec: &BasisSpec,
    grid: &QuantileGrid,
    cfg: &SolverConfig,
    rel_tol: f64,
) -> Result<f64> {
    let phi = check_fit_inputs(data, spec)?;
    let per_k: Vec<f64> = (0..data.d())
        .into_par_iter()
        .map(|k| {
            let mut solver = NeighborhoodSolver::new(k, &phi, data.column(k), data.x(), grid)?;
            lambda_max_neighborhood(&mut solver, cfg, rel_tol)
                .map_err(|e| MqgmError::Subproblem { k, source: Box::new(e) })
        })
        .collect::<Result<_>>()?;
    Ok(per_k.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::quantiles;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_sample(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn intercept_only_recovers_sample_quantiles() {
        let y = normal_sample(50, 11);
        let phi = FeatureMatrix::from_values(Array2::zeros((50, 1)), 1).unwrap();
        let grid = QuantileGrid::new(vec![0.25, 0.5, 0.75]).unwrap();
        let cfg = SolverConfig::default();
        let fit =
            fit_neighborhood(0, &phi, Array1::from(y.clone()).view(), None, &grid, &cfg).unwrap();
        assert_eq!(fit.theta.len(), 3);
        assert!(fit.theta.iter().all(|&v| v == 0.0));
        let q = quantiles(&y, grid.levels());
        for (b, q) in fit.intercepts.iter().zip(&q) {
            assert!((b - q).abs() < 0.15, "intercept {b} vs sample quantile {q}");
        }
    }

    #[test]
    fn huge_lambda_zeroes_all_groups() {
        let n = 60;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y = Array2::from_shape_fn((n, 3), |_| StandardNormal.sample(&mut rng));
        let data = Dataset::from_matrix(y).unwrap();
        let spec = crate::features::fit_basis(&data, 3).unwrap();
        let grid = QuantileGrid::uniform(3).unwrap();
        let cfg = SolverConfig::default().with_lambda1(1e6);
        let model = fit_mqgm(&data, &spec, &grid, &cfg).unwrap();
        for fit in model.fits() {
            assert!(fit.theta.iter().all(|&v| v == 0.0));
            let q = quantiles(&data.column(fit.k).to_vec(), grid.levels());
            for (b, q) in fit.intercepts.iter().zip(&q) {
                assert!((b - q).abs() < 0.1);
            }
        }
    }

    #[test]
    fn objective_at_zero_is_pinball_sum() {
        let phi = FeatureMatrix::from_values(array![[0.5, 1.0], [0.2, -1.0], [0.0, 3.0]], 1).unwrap();
        let yk = array![1.0, -2.0, 0.5];
        let grid = QuantileGrid::new(vec![0.3, 0.8]).unwrap();
        let fit = NeighborhoodFit {
            k: 0,
            theta: Array2::zeros((2, 2)),
            intercepts: vec![0.0, 0.0],
            theta_x: Array2::zeros((0, 2)),
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            objective: 0.0,
            converged: true,
            max_crossing: 0.0,
            intercept_shift: 0.0,
        };
        let cfg = SolverConfig { lambda1: 3.0, lambda2: 2.0, ..Default::default() };
        let expected: f64 = [0.3, 0.8]
            .iter()
            .map(|&a| yk.iter().map(|&y| crate::proxops::pinball(y, a)).sum::<f64>())
            .sum();
        assert_abs_diff_eq!(objective(&fit, &phi, yk.view(), None, &grid, &cfg), expected);
    }

    #[test]
    fn objective_hand_instance() {
        // n = 2, d = 2, m = 1, r = 1, k = 0; only theta for variable 1 is free
        let phi = FeatureMatrix::from_values(array![[9.0, 1.0], [9.0, 2.0]], 1).unwrap();
        let yk = array![3.0, 1.0];
        let grid = QuantileGrid::new(vec![0.25]).unwrap();
        let fit = NeighborhoodFit {
            k: 0,
            theta: array![[0.0], [2.0]],
            intercepts: vec![0.5],
            theta_x: Array2::zeros((0, 1)),
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            objective: 0.0,
            converged: true,
            max_crossing: 0.0,
            intercept_shift: 0.0,
        };
        let cfg = SolverConfig { lambda1: 1.5, lambda2: 0.1, ..Default::default() };
        // residuals: 3 - 0.5 - 2 = 0.5 -> 0.125 ; 1 - 0.5 - 4 = -3.5 -> 2.625
        // penalty: 1.5 * 2 + 0.1 * 4 = 3.4
        assert_abs_diff_eq!(
            objective(&fit, &phi, yk.view(), None, &grid, &cfg),
            0.125 + 2.625 + 3.4,
            epsilon = 1e-12
        );
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig { rho: 0.0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { max_iters: 0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { tol_abs: 0.0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { lambda1: -1.0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig::default().validate().is_ok());
    }

    #[test]
    fn non_convergence_is_flagged_not_fatal() {
        let y = normal_sample(40, 5);
        let other = normal_sample(40, 6);
        let data = Dataset::from_matrix(Array2::from_shape_fn((40, 2), |(i, j)| {
            if j == 0 { y[i] } else { other[i] }
        }))
        .unwrap();
        let spec = crate::features::fit_basis(&data, 4).unwrap();
        let phi = expand(&data, &spec).unwrap();
        let grid = QuantileGrid::uniform(5).unwrap();
        let cfg = SolverConfig { lambda1: 0.5, max_iters: 2, ..Default::default() };
        let fit = fit_neighborhood(0, &phi, data.column(0), None, &grid, &cfg).unwrap();
        assert!(!fit.converged);
        assert_eq!(fit.iterations, 2);
    }
}
