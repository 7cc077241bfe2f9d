use std::sync::Arc;

use rayon::prelude::*;

use super::{PrefixGenerator, ViolationReport};
use crate::certificates::StabilityCertificate;
use crate::error::SimError;
use crate::sim::{continue_simulation, mix_seed, Environment};

/// Grid used by [`stability_battery`].
pub const BATTERY_K: [u64; 2] = [100, 1_000];
pub const BATTERY_N: [u64; 2] = [1_000, 10_000];
pub const BATTERY_EPS: [f64; 2] = [0.1, 0.05];

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityParams {
    pub k: u64,
    pub n: u64,
    pub eps: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub prefix: PrefixGenerator,
}

/// Rewards of one sample in the window `[k, k + n)`: `(reference, realized)`.
fn sample_window(
    env: &dyn Environment,
    cert: &StabilityCertificate,
    params: &StabilityParams,
    index: usize,
) -> Result<(f64, f64), SimError> {
    let seed = mix_seed(params.seed, index as u64);
    let prefix = params.prefix.sample(env, params.k, seed)?;
    let mut recovery = cert.recovery_policy(&prefix.history);
    let traj = continue_simulation(prefix, env, recovery.as_mut(), params.n as usize)?;
    let k = params.k as usize;
    let realized = traj.history.reward_sum(k, k + params.n as usize);
    Ok((
        cert.reference.window(params.k, params.k + params.n),
        realized,
    ))
}

/// Frequency of `reference - realized > d(k, eps) + n eps` after sampled
/// length-`k` prefixes, compared against `phi(n, eps)`.
pub fn check_value_stability(
    env: &dyn Environment,
    cert: &StabilityCertificate,
    params: &StabilityParams,
) -> Result<ViolationReport, SimError> {
    assert!(params.n_samples > 0, "at least one sample is required");
    let slack = cert.d(params.k, params.eps) + params.n as f64 * params.eps;
    let windows = (0..params.n_samples)
        .into_par_iter()
        .map(|i| sample_window(env, cert, params, i))
        .collect::<Result<Vec<_>, _>>()?;
    let violations = windows
        .iter()
        .filter(|(reference, realized)| reference - realized > slack)
        .count();
    Ok(ViolationReport::from_counts(
        "value_stability",
        env.label(),
        params.k,
        params.n,
        params.eps,
        cert.phi(params.n, params.eps),
        violations,
        params.n_samples,
        params.seed,
    ))
}

/// One entry of the certificate battery.
#[derive(Clone)]
pub struct BatteryMember {
    pub env: Arc<dyn Environment>,
    pub cert: StabilityCertificate,
    pub prefix: PrefixGenerator,
}

/// Runs [`check_value_stability`] for every member over the full
/// `BATTERY_K x BATTERY_N x BATTERY_EPS` grid, member-major.
pub fn stability_battery(
    members: &[BatteryMember],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<ViolationReport>, SimError> {
    let mut reports = Vec::new();
    for (m, member) in members.iter().enumerate() {
        for &k in &BATTERY_K {
            for &n in &BATTERY_N {
                for &eps in &BATTERY_EPS {
                    let params = StabilityParams {
                        k,
                        n,
                        eps,
                        n_samples,
                        seed: mix_seed(seed, m as u64),
                        prefix: member.prefix.clone(),
                    };
                    reports.push(check_value_stability(
                        member.env.as_ref(),
                        &member.cert,
                        &params,
                    )?);
                }
            }
        }
    }
    Ok(reports)
}

/// Largest exponential rate `c` such that `scale * exp(-c n eps^2)` stays at
/// or above twice the empirical violation frequency for every `n` in `ns`.
/// `None` when no violation was observed, i.e. the data does not bound `c`.
pub fn calibrate_phi_rate(
    env: &dyn Environment,
    cert: &StabilityCertificate,
    base: &StabilityParams,
    ns: &[u64],
    scale: f64,
) -> Result<Option<f64>, SimError> {
    let mut rate: Option<f64> = None;
    for &n in ns {
        let params = StabilityParams { n, ..base.clone() };
        let report = check_value_stability(env, cert, &params)?;
        let target = 2.0 * report.empirical_violation_rate;
        if target == 0.0 {
            continue;
        }
        let c = if target >= scale {
            0.0
        } else {
            (scale / target).ln() / (n as f64 * params.eps * params.eps)
        };
        rate = Some(rate.map_or(c, |r| r.min(c)));
    }
    Ok(rate)
}
