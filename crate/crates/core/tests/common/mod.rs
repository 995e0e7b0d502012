//! Brute-force oracles and checks shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use mqgm::features::{expand, fit_basis, Dataset};
use mqgm::gibbs::{gibbs_sample, GibbsConfig};
use mqgm::proxops::{group_shrink, pinball, prox_multiquantile, project_isotonic_rows, QuantileGrid};
use mqgm::solver::{AdmmState, NeighborhoodFit, NeighborhoodSolver, SolverConfig};
use mqgm::{BasisSpec, MqgmModel};
use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

pub const GRID_POINTS: usize = 10_000;

/// Worst objective gap (ours minus brute force) over a batch of instances.
#[derive(Debug, Clone, Copy)]
pub struct OracleSummary {
    pub instances: usize,
    pub worst_gap: f64,
}

fn scalar_prox_objective(x: f64, a: f64, t: f64, alpha: f64) -> f64 {
    pinball(x, alpha) + (x - a) * (x - a) / (2.0 * t)
}

fn random_grid(rng: &mut ChaCha8Rng, r: usize) -> QuantileGrid {
    loop {
        let mut levels: Vec<f64> = (0..r).map(|_| rng.random_range(0.01..0.99)).collect();
        levels.sort_by(f64::total_cmp);
        if let Ok(g) = QuantileGrid::new(levels) {
            return g;
        }
    }
}

/// Every entry of `prox_multiquantile` against a 10^4-point grid of its scalar objective.
pub fn prox_multiquantile_oracle(instances: usize, seed: u64) -> OracleSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..instances {
        let r = rng.random_range(1..=4);
        let rows = rng.random_range(1..=3);
        let grid = random_grid(&mut rng, r);
        let t = 10f64.powf(rng.random_range(-2.0..1.0));
        let a = Array2::from_shape_fn((rows, r), |_| 3.0 * rng.sample::<f64, _>(StandardNormal));
        let ours = prox_multiquantile(a.view(), t, &grid);
        for ((i, l), &av) in a.indexed_iter() {
            let alpha = grid.levels()[l];
            let lo = av.min(0.0) - 1.0;
            let hi = av.max(0.0) + 1.0;
            let best = (0..GRID_POINTS)
                .map(|g| lo + (hi - lo) * g as f64 / (GRID_POINTS - 1) as f64)
                .map(|x| scalar_prox_objective(x, av, t, alpha))
                .fold(f64::INFINITY, f64::min);
            let gap = scalar_prox_objective(ours[[i, l]], av, t, alpha) - best;
            worst = worst.max(gap);
        }
    }
    OracleSummary { instances, worst_gap: worst }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn shrink_objective(x: &[f64], v: &[f64], k1: f64, k2: f64) -> f64 {
    let n = norm(x);
    let dist2: f64 = x.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    k1 * n + 0.5 * k2 * n * n + 0.5 * dist2
}

/// `group_shrink` against a 10^4-point search along the ray through `v` (where the
/// minimizer lies by rotational symmetry) and against random perturbations.
pub fn group_shrink_oracle(instances: usize, seed: u64) -> OracleSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..instances {
        let dim = rng.random_range(1..=6);
        let v: Vec<f64> = (0..dim).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect();
        let k1 = rng.random_range(0.0..4.0);
        let k2 = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..2.0) };
        let ours = group_shrink(&v, k1, k2);
        let f_ours = shrink_objective(&ours, &v, k1, k2);
        let nv = norm(&v);
        let mut best = f64::INFINITY;
        for g in 0..GRID_POINTS {
            let s = nv * g as f64 / (GRID_POINTS - 1) as f64;
            let x: Vec<f64> = v.iter().map(|c| if nv > 0.0 { c * s / nv } else { 0.0 }).collect();
            best = best.min(shrink_objective(&x, &v, k1, k2));
        }
        for _ in 0..20 {
            let scale = 10f64.powf(rng.random_range(-6.0..0.0));
            let x: Vec<f64> = ours
                .iter()
                .map(|c| c + scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            best = best.min(shrink_objective(&x, &v, k1, k2));
        }
        worst = worst.max(f_ours - best);
    }
    OracleSummary { instances, worst_gap: worst }
}

/// Exact isotonic projection by enumerating all `2^(r-1)` contiguous pooling patterns.
pub fn isotonic_brute_force(v: &[f64]) -> Vec<f64> {
    let r = v.len();
    if r <= 1 {
        return v.to_vec();
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << (r - 1)) {
        let mut out = Vec::with_capacity(r);
        let mut start = 0;
        for cut in 0..r {
            let closes = cut == r - 1 || mask & (1 << cut) != 0;
            if closes {
                let block = &v[start..=cut];
                let mean = block.iter().sum::<f64>() / block.len() as f64;
                out.extend(std::iter::repeat_n(mean, block.len()));
                start = cut + 1;
            }
        }
        if out.windows(2).any(|w| w[0] > w[1]) {
            continue;
        }
        let obj: f64 = out.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(o, _)| obj < *o) {
            best = Some((obj, out));
        }
    }
    best.unwrap().1
}

/// `project_isotonic_rows` against exhaustive pooling for rows of length at most 8.
pub fn isotonic_oracle(instances: usize, seed: u64) -> OracleSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..instances {
        let r = rng.random_range(1..=8);
        let rows = rng.random_range(1..=3);
        let v = Array2::from_shape_fn((rows, r), |_| {
            let x: f64 = StandardNormal.sample(&mut rng);
            // occasional ties
            if rng.random_bool(0.2) { x.round() } else { x }
        });
        let ours = project_isotonic_rows(v.view());
        for (row_v, row_o) in v.rows().into_iter().zip(ours.rows()) {
            let vv = row_v.to_vec();
            let brute = isotonic_brute_force(&vv);
            let obj = |x: &[f64]| x.iter().zip(&vv).map(|(a, b)| 0.5 * (a - b) * (a - b)).sum::<f64>();
            let o = row_o.to_vec();
            let infeasible = o.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max);
            worst = worst.max(obj(&o) - obj(&brute)).max(infeasible);
        }
    }
    OracleSummary { instances, worst_gap: worst }
}

/// A tiny neighborhood problem for subproblem `k = 0`.
pub struct TinyInstance {
    pub data: Dataset,
    pub basis: BasisSpec,
    /// Reduced design without block `k` (`n x (d-1)m`).
    pub phi: Array2<f64>,
    pub m: usize,
    pub grid: QuantileGrid,
    pub lambda1: f64,
    pub lambda2: f64,
    pub noncrossing: bool,
}

pub fn tiny_instance(seed: u64) -> TinyInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(6..=10);
    let (d, m) = if rng.random_bool(0.5) { (3, 2) } else { (5, 1) };
    let r = rng.random_range(1..=2);
    let y = Array2::from_shape_fn((n, d), |(_, j)| {
        let e: f64 = StandardNormal.sample(&mut rng);
        e + 0.3 * j as f64
    });
    // couple y_0 to y_1 so some groups survive
    let mut y = y;
    for i in 0..n {
        y[[i, 0]] += 0.8 * y[[i, 1]];
    }
    let data = Dataset::from_matrix(y).unwrap();
    let basis = fit_basis(&data, m).unwrap();
    let phi = expand(&data, &basis).unwrap().without_block(0);
    let grid = if r == 1 {
        QuantileGrid::new(vec![rng.random_range(0.2..0.8)]).unwrap()
    } else {
        QuantileGrid::new(vec![0.3, 0.7]).unwrap()
    };
    TinyInstance {
        data,
        basis,
        phi,
        m,
        grid,
        lambda1: 10f64.powf(rng.random_range(-1.5..0.5)),
        lambda2: if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..0.5) },
        noncrossing: true,
    }
}

impl TinyInstance {
    pub fn y0(&self) -> Vec<f64> {
        self.data.column(0).to_vec()
    }

    /// Penalized objective plus `mu` times the total crossing at the training rows.
    pub fn objective(&self, theta: &Array2<f64>, b: &[f64], mu: f64) -> f64 {
        let y = self.y0();
        let fitted = self.phi.dot(theta) + &Array1::from(b.to_vec());
        let mut total = 0.0;
        for (i, row) in fitted.rows().into_iter().enumerate() {
            for (l, &q) in row.iter().enumerate() {
                total += pinball(y[i] - q, self.grid.levels()[l]);
            }
            if self.noncrossing {
                for l in 1..row.len() {
                    total += mu * (row[l - 1] - row[l]).max(0.0);
                }
            }
        }
        for col in theta.columns() {
            for chunk in col.to_vec().chunks(self.m) {
                let sq: f64 = chunk.iter().map(|v| v * v).sum();
                total += self.lambda1 * sq.sqrt() + self.lambda2 * sq;
            }
        }
        total
    }

    pub fn config(&self) -> SolverConfig {
        SolverConfig {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            noncrossing: self.noncrossing,
            tol_abs: 1e-7,
            tol_rel: 1e-7,
            max_iters: 200_000,
            ..SolverConfig::default()
        }
    }

    pub fn solve(&self, cfg: &SolverConfig) -> (NeighborhoodFit, AdmmState) {
        let phi = expand(&self.data, &self.basis).unwrap();
        let y = self.data.column(0).to_owned();
        let mut solver = NeighborhoodSolver::new(0, &phi, y.view(), None, &self.grid).unwrap();
        solver.solve(cfg, None).unwrap()
    }

    /// Coefficients of a full fit with the target's own block removed.
    pub fn reduced_theta(&self, fit: &NeighborhoodFit) -> Array2<f64> {
        fit.theta.slice(s![self.m.., ..]).to_owned()
    }

    /// Largest decrease across adjacent levels of the fitted training quantiles.
    pub fn crossing(&self, fit: &NeighborhoodFit) -> f64 {
        let fitted = self.phi.dot(&self.reduced_theta(fit)) + &Array1::from(fit.intercepts.clone());
        mqgm::proxops::max_crossing(fitted.view())
    }
}

/// Exact penalty weight for the crossing constraints; exceeds any pinball multiplier.
pub const CROSSING_PENALTY: f64 = 5.0;

/// Best objective found by normalized subgradient descent: `epochs` rounds of
/// `steps / epochs` steps, each restarted from the best point with half the step.
pub fn subgradient_reference(inst: &TinyInstance, steps: usize) -> f64 {
    let epochs = 25;
    let per_epoch = steps / epochs;
    let y = inst.y0();
    let (n, p) = inst.phi.dim();
    let r = inst.grid.len();
    let levels = inst.grid.levels();
    let scale = 1.0 + y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut theta = Array2::<f64>::zeros((p, r));
    let mut b = vec![0.0; r];
    let mut best = inst.objective(&theta, &b, CROSSING_PENALTY);
    let mut best_theta = theta.clone();
    let mut best_b = b.clone();
    let mut eta = 0.1 * scale;
    let mut g_theta = Array2::<f64>::zeros((p, r));
    let mut g_b = vec![0.0; r];
    let mut q = vec![0.0; r];
    let mut dq = vec![0.0; r];
    for _ in 0..epochs {
        theta.assign(&best_theta);
        b.copy_from_slice(&best_b);
        for _ in 0..per_epoch {
            g_theta.fill(0.0);
            g_b.iter_mut().for_each(|v| *v = 0.0);
            let mut obj = 0.0;
            for i in 0..n {
                let row = inst.phi.row(i);
                for l in 0..r {
                    q[l] = b[l] + row.dot(&theta.column(l));
                    let res = y[i] - q[l];
                    obj += pinball(res, levels[l]);
                    dq[l] = if res > 0.0 {
                        -levels[l]
                    } else if res < 0.0 {
                        1.0 - levels[l]
                    } else {
                        0.0
                    };
                }
                if inst.noncrossing {
                    for l in 1..r {
                        let viol = q[l - 1] - q[l];
                        if viol > 0.0 {
                            obj += CROSSING_PENALTY * viol;
                            dq[l - 1] += CROSSING_PENALTY;
                            dq[l] -= CROSSING_PENALTY;
                        }
                    }
                }
                for l in 0..r {
                    g_b[l] += dq[l];
                    for (j, &phij) in row.iter().enumerate() {
                        g_theta[[j, l]] += dq[l] * phij;
                    }
                }
            }
            for l in 0..r {
                for g0 in (0..p).step_by(inst.m) {
                    let sq: f64 = (g0..g0 + inst.m).map(|j| theta[[j, l]].powi(2)).sum();
                    let nrm = sq.sqrt();
                    obj += inst.lambda1 * nrm + inst.lambda2 * sq;
                    for j in g0..g0 + inst.m {
                        if nrm > 0.0 {
                            g_theta[[j, l]] += inst.lambda1 * theta[[j, l]] / nrm;
                        }
                        g_theta[[j, l]] += 2.0 * inst.lambda2 * theta[[j, l]];
                    }
                }
            }
            if obj < best {
                best = obj;
                best_theta.assign(&theta);
                best_b.copy_from_slice(&b);
            }
            let gn = (g_theta.iter().map(|v| v * v).sum::<f64>() + g_b.iter().map(|v| v * v).sum::<f64>()).sqrt();
            if gn == 0.0 {
                return best;
            }
            theta.scaled_add(-eta / gn, &g_theta);
            for l in 0..r {
                b[l] -= eta / gn * g_b[l];
            }
        }
        eta *= 0.5;
    }
    best.min(inst.objective(&best_theta, &best_b, CROSSING_PENALTY))
}

#[derive(Debug, Clone)]
pub struct AdmmOracleOutcome {
    pub seed: u64,
    pub admm: f64,
    pub reference: f64,
    pub relative_gap: f64,
    pub converged: bool,
    pub crossing: f64,
    pub tol_abs: f64,
}

pub fn admm_vs_subgradient(seed: u64, steps: usize) -> AdmmOracleOutcome {
    let inst = tiny_instance(seed);
    let cfg = inst.config();
    let (fit, _) = inst.solve(&cfg);
    let admm = inst.objective(&inst.reduced_theta(&fit), &fit.intercepts, CROSSING_PENALTY);
    let reference = subgradient_reference(&inst, steps);
    AdmmOracleOutcome {
        seed,
        admm,
        reference,
        relative_gap: (admm - reference).abs() / reference.abs().max(1e-12),
        converged: fit.converged,
        crossing: inst.crossing(&fit),
        tol_abs: cfg.tol_abs,
    }
}

/// Largest training-row crossing over all subproblems of `model`.
pub fn model_training_crossing(model: &MqgmModel, data: &Dataset) -> f64 {
    let phi = expand(data, model.basis()).unwrap();
    let mut worst: f64 = 0.0;
    for fit in model.fits() {
        let mut fitted = phi.values().dot(&fit.theta) + &Array1::from(fit.intercepts.clone());
        if let Some(x) = data.x() {
            fitted += &x.dot(&fit.theta_x);
        }
        worst = worst.max(mqgm::proxops::max_crossing(fitted.view()));
    }
    worst
}

pub fn standard_normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Intercept-only model over `d` variables whose level-`alpha` intercept is the N(0, 1) quantile.
pub fn normal_intercept_model(d: usize, r: usize) -> MqgmModel {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y = Array2::from_shape_fn((50, d), |_| StandardNormal.sample(&mut rng));
    let data = Dataset::from_matrix(y).unwrap();
    let basis = fit_basis(&data, 3).unwrap();
    let grid = QuantileGrid::uniform(r).unwrap();
    let fits = (0..d)
        .map(|k| NeighborhoodFit {
            k,
            theta: Array2::zeros((basis.dim(), r)),
            intercepts: grid.levels().iter().map(|&a| standard_normal_quantile(a)).collect(),
            theta_x: Array2::zeros((0, r)),
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            objective: 0.0,
            converged: true,
            max_crossing: 0.0,
            intercept_shift: 0.0,
        })
        .collect();
    let names = (0..d).map(|j| format!("y{}", j + 1)).collect();
    MqgmModel::from_parts(basis, grid, fits, names, vec![], vec![0.0; d]).unwrap()
}

/// Empirical quantiles 0.25/0.5/0.75 of coordinate 0 of the chain (type 7).
pub fn gibbs_marginal_quartiles(model: &MqgmModel, samples: usize, seed: u64, verify_every: usize) -> mqgm::Result<[f64; 3]> {
    let cfg = GibbsConfig { n_samples: samples, burn_in: 100, thin: 1, seed, verify_every, cache_offsets: true };
    let chain = gibbs_sample(model, model.init(), None, &cfg)?;
    let col: Vec<f64> = chain.column(0).to_vec();
    let q = mqgm::stats::quantiles(&col, &[0.25, 0.5, 0.75]);
    Ok([q[0], q[1], q[2]])
}

/// Training-row crossing of every converged subproblem: `(checked, skipped, worst)`.
pub fn converged_fit_crossings(model: &MqgmModel, data: &Dataset) -> (usize, usize, f64) {
    let phi = expand(data, model.basis()).unwrap();
    let (mut checked, mut skipped, mut worst) = (0, 0, 0.0f64);
    for fit in model.fits() {
        if !fit.converged {
            skipped += 1;
            continue;
        }
        let mut fitted = phi.values().dot(&fit.theta) + &Array1::from(fit.intercepts.clone());
        if let Some(x) = data.x() {
            fitted += &x.dot(&fit.theta_x);
        }
        worst = worst.max(mqgm::proxops::max_crossing(fitted.view()));
        checked += 1;
    }
    (checked, skipped, worst)
}
