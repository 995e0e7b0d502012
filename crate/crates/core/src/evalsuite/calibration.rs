//! Conditional-CDF calibration: binned empirical CDFs of conditional draws
//! compared against the observed data (or any reference sampler).

use std::f64::consts::PI;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{MqgmError, Result};
use crate::features::Dataset;
use crate::model::MqgmModel;
use crate::synthdata::RingParams;

/// Anything that can draw `y_k` given the rest of an observed row.
pub trait ConditionalSampler {
    fn sample(&self, k: usize, y: &[f64], x: Option<&[f64]>, rng: &mut dyn RngCore) -> Result<f64>;
}

impl ConditionalSampler for MqgmModel {
    fn sample(&self, k: usize, y: &[f64], x: Option<&[f64]>, rng: &mut dyn RngCore) -> Result<f64> {
        self.sample_conditional(k, y, x, rng)
    }
}

/// Returns the observed value; its binned CDFs are the "true empirical" ones.
pub struct ObservedSampler;

impl ConditionalSampler for ObservedSampler {
    fn sample(&self, k: usize, y: &[f64], _x: Option<&[f64]>, _rng: &mut dyn RngCore) -> Result<f64> {
        Ok(y[k])
    }
}

/// Exact conditionals of the ring generators. Variables `0..ring_dims` come in
/// ring pairs `(2t, 2t+1)`; the rest are independent standard normals.
pub struct RingSampler {
    pub params: RingParams,
    pub ring_dims: usize,
    pub grid_points: usize,
}

impl RingSampler {
    pub fn new(params: RingParams, ring_dims: usize) -> Self {
        Self { params, ring_dims, grid_points: 4001 }
    }

    /// Unnormalized density of coordinate `a` given its partner `b`.
    fn density(&self, a: f64, b: f64, first: bool) -> f64 {
        let (px, py) = if first { (a, b) } else { (b, a) };
        let rho = (px * px + py * py).sqrt();
        if rho < 1e-12 {
            return 0.0;
        }
        let sd = self.params.radius_sd();
        let mu = self.params.radius_mean;
        let normal = |r: f64| (-0.5 * ((r - mu) / sd).powi(2)).exp();
        // a point is reached by (rho, theta) or by (-rho, theta + pi)
        let theta = py.atan2(px).rem_euclid(2.0 * PI);
        let opposite = (theta + PI).rem_euclid(2.0 * PI);
        let mut f = 0.0;
        if theta < self.params.angle_max {
            f += normal(rho);
        }
        if opposite < self.params.angle_max {
            f += normal(-rho);
        }
        f / rho
    }

    fn draw_ring(&self, k: usize, partner: f64, u: f64) -> Result<f64> {
        let reach = self.params.radius_mean.abs() + 8.0 * self.params.radius_sd();
        let g = self.grid_points.max(3);
        let step = 2.0 * reach / (g - 1) as f64;
        let first = k % 2 == 0;
        let xs: Vec<f64> = (0..g).map(|i| -reach + step * i as f64).collect();
        let fs: Vec<f64> = xs.iter().map(|&a| self.density(a, partner, first)).collect();
        let mut cdf = vec![0.0; g];
        for i in 1..g {
            cdf[i] = cdf[i - 1] + 0.5 * (fs[i] + fs[i - 1]) * step;
        }
        let total = cdf[g - 1];
        if !(total > 0.0) {
            return Err(MqgmError::InvalidArgument(format!(
                "conditioning value {partner} has zero density under the ring"
            )));
        }
        let target = u * total;
        let hi = cdf.partition_point(|&c| c < target).clamp(1, g - 1);
        let lo = hi - 1;
        let span = cdf[hi] - cdf[lo];
        let t = if span > 0.0 { (target - cdf[lo]) / span } else { 0.5 };
        Ok(xs[lo] + t * step)
    }
}

impl ConditionalSampler for RingSampler {
    fn sample(&self, k: usize, y: &[f64], _x: Option<&[f64]>, rng: &mut dyn RngCore) -> Result<f64> {
        if k < self.ring_dims {
            let u: f64 = rng.random();
            self.draw_ring(k, y[k ^ 1], u)
        } else {
            Ok(StandardNormal.sample(rng))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub bins: usize,
    /// Evaluation points per CDF.
    pub points: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self { bins: 5, points: 200 }
    }
}

/// Binned empirical conditional CDFs, one per `(target, given, bin)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfTable {
    pub conditionals: Vec<(usize, usize)>,
    pub bins: usize,
    /// `cdfs[c][b]` evaluated on `grids[c]`.
    pub cdfs: Vec<Vec<Vec<f64>>>,
    pub grids: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinCalibration {
    pub target: usize,
    pub given: usize,
    pub bin: usize,
    pub tv: f64,
    pub ks: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    /// Average of `(1/2) sum_i |dF(z_i)|`, summed over evaluation points.
    pub tv: f64,
    /// `tv` divided by the number of evaluation points.
    pub tv_normalized: f64,
    pub ks: f64,
    pub bins: usize,
    pub points: usize,
    pub per_conditional: Vec<BinCalibration>,
}

/// All ordered pairs `(k, j)` with `k != j`.
pub fn all_conditionals(d: usize) -> Vec<(usize, usize)> {
    (0..d).flat_map(|k| (0..d).filter(move |&j| j != k).map(move |j| (k, j))).collect()
}

/// Row indices of `bins` equal-count bins of `values`, ties broken by row index.
pub fn equal_count_bins(values: &[f64], bins: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let n = values.len();
    (0..bins).map(|b| order[b * n / bins..(b + 1) * n / bins].to_vec()).collect()
}

/// Empirical CDF of `samples` at each point of `grid`.
pub fn empirical_cdf(samples: &[f64], grid: &[f64]) -> Vec<f64> {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len().max(1) as f64;
    grid.iter().map(|&z| s.partition_point(|&v| v <= z) as f64 / n).collect()
}

/// `((1/2) sum |a - b|, max |a - b|)`.
pub fn cdf_distances(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut tv = 0.0;
    let mut ks: f64 = 0.0;
    for (x, y) in a.iter().zip(b) {
        let diff = (x - y).abs();
        tv += diff;
        ks = ks.max(diff);
    }
    (0.5 * tv, ks)
}

fn check(data: &Dataset, conditionals: &[(usize, usize)], opts: &CalibrationOptions) -> Result<()> {
    if opts.bins == 0 || opts.points < 2 {
        return Err(MqgmError::InvalidArgument("need bins >= 1 and points >= 2".into()));
    }
    if data.n() < opts.bins {
        return Err(MqgmError::InvalidArgument(format!(
            "{} rows cannot fill {} bins",
            data.n(),
            opts.bins
        )));
    }
    for &(k, j) in conditionals {
        if k >= data.d() || j >= data.d() || k == j {
            return Err(MqgmError::InvalidArgument(format!("invalid conditional ({k}, {j})")));
        }
    }
    Ok(())
}

/// Draws one `y_k` per row for every target in `conditionals`, bins the rows by
/// the conditioning variable, and evaluates CDFs on equispaced points over the
/// observed range of `y_k`. Targets are drawn in ascending order from one stream.
pub fn conditional_cdfs(
    sampler: &dyn ConditionalSampler,
    data: &Dataset,
    conditionals: &[(usize, usize)],
    opts: &CalibrationOptions,
    seed: u64,
) -> Result<CdfTable> {
    check(data, conditionals, opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut targets: Vec<usize> = conditionals.iter().map(|c| c.0).collect();
    targets.sort_unstable();
    targets.dedup();
    let mut draws: Vec<Vec<f64>> = vec![Vec::new(); data.d()];
    for &k in &targets {
        for i in 0..data.n() {
            let row = data.y().row(i).to_vec();
            let x = data.x().map(|x| x.row(i).to_vec());
            let v = sampler.sample(k, &row, x.as_deref(), &mut rng)?;
            draws[k].push(v);
        }
    }
    let mut cdfs = Vec::with_capacity(conditionals.len());
    let mut grids = Vec::with_capacity(conditionals.len());
    for &(k, j) in conditionals {
        let observed = data.column(k);
        let lo = observed.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = observed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let step = (hi - lo) / (opts.points - 1) as f64;
        let grid: Vec<f64> = (0..opts.points).map(|i| lo + step * i as f64).collect();
        let by_bin = equal_count_bins(&data.column(j).to_vec(), opts.bins)
            .into_iter()
            .map(|rows| {
                let s: Vec<f64> = rows.iter().map(|&i| draws[k][i]).collect();
                empirical_cdf(&s, &grid)
            })
            .collect();
        cdfs.push(by_bin);
        grids.push(grid);
    }
    Ok(CdfTable { conditionals: conditionals.to_vec(), bins: opts.bins, cdfs, grids })
}

/// Compares two CDF tables built over the same data and conditionals.
pub fn compare_cdfs(fitted: &CdfTable, reference: &CdfTable) -> Result<CalibrationReport> {
    if fitted.conditionals != reference.conditionals || fitted.bins != reference.bins {
        return Err(MqgmError::DimensionMismatch("CDF tables cover different conditionals".into()));
    }
    let points = fitted.grids.first().map_or(0, Vec::len);
    let mut per = Vec::new();
    for (c, &(k, j)) in fitted.conditionals.iter().enumerate() {
        for b in 0..fitted.bins {
            let (tv, ks) = cdf_distances(&fitted.cdfs[c][b], &reference.cdfs[c][b]);
            per.push(BinCalibration { target: k, given: j, bin: b, tv, ks });
        }
    }
    let count = per.len().max(1) as f64;
    let tv = per.iter().map(|p| p.tv).sum::<f64>() / count;
    let ks = per.iter().map(|p| p.ks).sum::<f64>() / count;
    Ok(CalibrationReport {
        tv,
        tv_normalized: tv / points.max(1) as f64,
        ks,
        bins: fitted.bins,
        points,
        per_conditional: per,
    })
}

/// Calibration of `sampler` against the observed data's binned empirical CDFs.
pub fn cdf_calibration(
    sampler: &dyn ConditionalSampler,
    data: &Dataset,
    conditionals: &[(usize, usize)],
    opts: &CalibrationOptions,
    seed: u64,
) -> Result<CalibrationReport> {
    let fitted = conditional_cdfs(sampler, data, conditionals, opts, seed)?;
    let truth = conditional_cdfs(&ObservedSampler, data, conditionals, opts, seed)?;
    compare_cdfs(&fitted, &truth)
}
