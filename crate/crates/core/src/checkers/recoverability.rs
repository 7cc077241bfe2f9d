use rayon::prelude::*;

use super::{PrefixGenerator, ViolationReport};
use crate::certificates::RecoverabilityCertificate;
use crate::error::SimError;
use crate::sim::{continue_simulation, mix_seed, Environment};

/// A sample passes once some `window`-step average after the prefix reaches
/// `upper_optimal_value - eps`. The report's claimed rate is the 5% failure
/// allowance.
#[derive(Clone, Debug, PartialEq)]
pub struct RecoverabilityParams {
    pub k: u64,
    pub horizon: u64,
    pub eps: f64,
    pub window: u64,
    pub n_samples: usize,
    pub seed: u64,
    pub prefix: PrefixGenerator,
}

pub const RECOVERY_FAILURE_ALLOWANCE: f64 = 0.05;

fn best_window_average(
    env: &dyn Environment,
    cert: &RecoverabilityCertificate,
    params: &RecoverabilityParams,
    index: usize,
) -> Result<f64, SimError> {
    let seed = mix_seed(params.seed, index as u64);
    let prefix = params.prefix.sample(env, params.k, seed)?;
    let mut recovery = cert.recovery_policy(&prefix.history);
    let traj = continue_simulation(prefix, env, recovery.as_mut(), params.horizon as usize)?;
    let start = params.k as usize;
    let end = traj.history.len();
    let w = (params.window as usize).clamp(1, end - start);
    let best = (start + w..=end)
        .map(|e| traj.history.reward_sum(e - w, e))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(best / w as f64)
}

pub fn check_recoverability(
    env: &dyn Environment,
    cert: &RecoverabilityCertificate,
    params: &RecoverabilityParams,
) -> Result<ViolationReport, SimError> {
    assert!(params.n_samples > 0, "at least one sample is required");
    assert!(
        params.horizon > 0,
        "recoverability needs a positive horizon"
    );
    let best = (0..params.n_samples)
        .into_par_iter()
        .map(|i| best_window_average(env, cert, params, i))
        .collect::<Result<Vec<_>, _>>()?;
    let target = cert.upper_optimal_value - params.eps;
    let violations = best.iter().filter(|&&b| b < target).count();
    Ok(ViolationReport::from_counts(
        "recoverability",
        env.label(),
        params.k,
        params.horizon,
        params.eps,
        RECOVERY_FAILURE_ALLOWANCE,
        violations,
        params.n_samples,
        params.seed,
    ))
}
