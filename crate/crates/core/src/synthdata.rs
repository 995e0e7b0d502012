//! Synthetic generators with known conditional-dependence graphs.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{MqgmError, Result};
use crate::features::Dataset;
use crate::linalg::Cholesky;
use crate::model::EdgeSet;

/// Name, parameters and seed of the generator that produced an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorDescriptor {
    pub name: String,
    pub params: serde_json::Value,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticInstance {
    pub data: Dataset,
    pub truth: EdgeSet,
    pub descriptor: GeneratorDescriptor,
    /// Precision matrix for the Gaussian and t generators.
    pub precision: Option<Array2<f64>>,
}

/// Shape of the ring: angle `U(0, angle_max)`, radius `radius_mean + N(0, radius_noise)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RingParams {
    pub angle_max: f64,
    pub radius_mean: f64,
    pub radius_noise: f64,
    /// When true `radius_noise` is a variance, otherwise a standard deviation.
    pub noise_is_variance: bool,
}

impl Default for RingParams {
    fn default() -> Self {
        Self {
            angle_max: 2.0 * PI,
            radius_mean: 1.0,
            radius_noise: 0.1,
            noise_is_variance: true,
        }
    }
}

impl RingParams {
    pub fn radius_sd(&self) -> f64 {
        if self.noise_is_variance {
            self.radius_noise.sqrt()
        } else {
            self.radius_noise
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let angle = rng.random::<f64>() * self.angle_max;
        let eps: f64 = StandardNormal.sample(rng);
        let radius = self.radius_mean + self.radius_sd() * eps;
        (radius * angle.cos(), radius * angle.sin())
    }
}

fn names(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("y{j}")).collect()
}

/// Ring in `(y1, y2)` plus two independent standard normals; the only edge is `{y1, y2}`.
pub fn gen_ring(n: usize, seed: u64, params: RingParams) -> Result<SyntheticInstance> {
    if n < 2 {
        return Err(MqgmError::InvalidArgument("n must be at least 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = Array2::zeros((n, 4));
    for i in 0..n {
        let (a, b) = params.draw(&mut rng);
        y[[i, 0]] = a;
        y[[i, 1]] = b;
        y[[i, 2]] = StandardNormal.sample(&mut rng);
        y[[i, 3]] = StandardNormal.sample(&mut rng);
    }
    Ok(SyntheticInstance {
        data: Dataset::new(y, names(4))?,
        truth: EdgeSet::from_pairs(4, &[(0, 1)])?,
        descriptor: GeneratorDescriptor {
            name: "ring".into(),
            params: serde_json::json!({ "n": n, "ring": params }),
            seed,
        },
        precision: None,
    })
}

/// Adjacent pairs `(y_{2t-1}, y_{2t})` drawn independently from the ring.
pub fn gen_autoregressive_ring(n: usize, d: usize, seed: u64, params: RingParams) -> Result<SyntheticInstance> {
    if d < 2 || d % 2 != 0 {
        return Err(MqgmError::InvalidArgument(format!("d must be even and >= 2, got {d}")));
    }
    if n < 2 {
        return Err(MqgmError::InvalidArgument("n must be at least 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = Array2::zeros((n, d));
    for i in 0..n {
        for t in 0..d / 2 {
            let (a, b) = params.draw(&mut rng);
            y[[i, 2 * t]] = a;
            y[[i, 2 * t + 1]] = b;
        }
    }
    let pairs: Vec<(usize, usize)> = (0..d / 2).map(|t| (2 * t, 2 * t + 1)).collect();
    Ok(SyntheticInstance {
        data: Dataset::new(y, names(d))?,
        truth: EdgeSet::from_pairs(d, &pairs)?,
        descriptor: GeneratorDescriptor {
            name: "autoregressive".into(),
            params: serde_json::json!({ "n": n, "d": d, "ring": params }),
            seed,
        },
        precision: None,
    })
}

/// Random sparse, strictly diagonally dominant precision matrix.
///
/// Each off-diagonal pair is nonzero with probability `edge_prob`, with magnitude
/// uniform on `[0.4, 0.8]` and a random sign; the diagonal is the row's absolute
/// off-diagonal sum plus 0.5.
pub fn sparse_precision<R: Rng + ?Sized>(d: usize, edge_prob: f64, rng: &mut R) -> Array2<f64> {
    let mut omega = Array2::<f64>::zeros((d, d));
    for j in 0..d {
        for k in (j + 1)..d {
            if rng.random::<f64>() < edge_prob {
                let mag = 0.4 + 0.4 * rng.random::<f64>();
                let v = if rng.random::<bool>() { mag } else { -mag };
                omega[[j, k]] = v;
                omega[[k, j]] = v;
            }
        }
    }
    for j in 0..d {
        let off: f64 = omega.row(j).iter().map(|v| v.abs()).sum();
        omega[[j, j]] = off + 0.5;
    }
    omega
}

const MAX_REGENERATIONS: usize = 100;

fn precision_instance(
    n: usize,
    d: usize,
    edge_prob: f64,
    seed: u64,
    dof: Option<f64>,
) -> Result<SyntheticInstance> {
    if d < 2 {
        return Err(MqgmError::InvalidArgument(format!("d must be at least 2, got {d}")));
    }
    if n < 2 {
        return Err(MqgmError::InvalidArgument("n must be at least 2".into()));
    }
    if !(0.0..1.0).contains(&edge_prob) {
        return Err(MqgmError::InvalidArgument(format!("edge_prob must lie in [0, 1), got {edge_prob}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut omega = sparse_precision(d, edge_prob, &mut rng);
    let mut attempts = 1;
    while edge_prob > 0.0 && omega_edges(&omega).is_empty() {
        if attempts >= MAX_REGENERATIONS {
            return Err(MqgmError::Generator(format!(
                "no off-diagonal entries after {MAX_REGENERATIONS} draws (d = {d}, edge_prob = {edge_prob})"
            )));
        }
        omega = sparse_precision(d, edge_prob, &mut rng);
        attempts += 1;
    }
    let chol = Cholesky::factor(omega.view())?;
    let l = chol.lower();
    let chi = dof.map(ChiSquared::new).transpose().map_err(|e| MqgmError::Generator(e.to_string()))?;

    let mut y = Array2::zeros((n, d));
    let mut z = Array1::<f64>::zeros(d);
    for i in 0..n {
        for v in z.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        // x = L^{-T} z has covariance Omega^{-1}
        for a in (0..d).rev() {
            let mut s = z[a];
            for b in (a + 1)..d {
                s -= l[[b, a]] * z[b];
            }
            z[a] = s / l[[a, a]];
        }
        let scale = match (&chi, dof) {
            (Some(chi), Some(nu)) => (nu / chi.sample(&mut rng)).sqrt(),
            _ => 1.0,
        };
        for j in 0..d {
            y[[i, j]] = z[j] * scale;
        }
    }
    let truth = EdgeSet::from_pairs(d, &omega_edges(&omega))?;
    let name = if dof.is_some() { "student_t" } else { "gaussian" };
    let mut params = serde_json::json!({ "n": n, "d": d, "edge_prob": edge_prob });
    if let Some(nu) = dof {
        params["dof"] = serde_json::json!(nu);
    }
    Ok(SyntheticInstance {
        data: Dataset::new(y, names(d))?,
        truth,
        descriptor: GeneratorDescriptor { name: name.into(), params, seed },
        precision: Some(omega),
    })
}

fn omega_edges(omega: &Array2<f64>) -> Vec<(usize, usize)> {
    let d = omega.nrows();
    let mut out = Vec::new();
    for j in 0..d {
        for k in (j + 1)..d {
            if omega[[j, k]] != 0.0 {
                out.push((j, k));
            }
        }
    }
    out
}

/// Multivariate normal with a sparse precision matrix; edges are its off-diagonal support.
pub fn gen_sparse_gaussian(n: usize, d: usize, edge_prob: f64, seed: u64) -> Result<SyntheticInstance> {
    precision_instance(n, d, edge_prob, seed, None)
}

/// Multivariate t with `dof` degrees of freedom and scale matrix `Omega^{-1}`.
pub fn gen_sparse_t(n: usize, d: usize, edge_prob: f64, dof: f64, seed: u64) -> Result<SyntheticInstance> {
    if !(dof > 0.0) {
        return Err(MqgmError::InvalidArgument("dof must be positive".into()));
    }
    precision_instance(n, d, edge_prob, seed, Some(dof))
}
