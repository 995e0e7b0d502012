use serde::{Deserialize, Serialize};

use crate::error::{MqgmError, Result};
use crate::synthdata::SyntheticInstance;

use super::path::{fit_path, recovers, Method, PathSettings};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryTrial {
    pub seed: u64,
    pub recovered: bool,
    /// Largest path value whose edge set equals the truth.
    pub lambda: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub method: Method,
    pub rate: f64,
    pub trials: Vec<RecoveryTrial>,
}

/// Fraction of `seeds` for which some point on the method's path gives exactly the true edge set.
pub fn recovery_rate<G>(seeds: &[u64], generator: G, method: Method, settings: &PathSettings) -> Result<RecoveryReport>
where
    G: Fn(u64) -> Result<SyntheticInstance>,
{
    if seeds.is_empty() {
        return Err(MqgmError::InvalidArgument("recovery needs at least one trial".into()));
    }
    let mut trials = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let inst = generator(seed)?;
        let path = fit_path(method, &inst.data, settings)?;
        let lambda = recovers(&path, &inst.truth, settings.edge_threshold);
        trials.push(RecoveryTrial { seed, recovered: lambda.is_some(), lambda, converged: path.all_converged() });
    }
    let rate = trials.iter().filter(|t| t.recovered).count() as f64 / trials.len() as f64;
    Ok(RecoveryReport { method, rate, trials })
}
