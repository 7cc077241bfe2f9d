//! Monte Carlo checks of certificates and the necessity demonstration.
//!
//! Every check draws its samples from sub-seeds `mix_seed(seed, i)`, runs
//! them in parallel and reduces the results in sample order, so a report is
//! a pure function of its inputs. A passing report is statistical evidence
//! for the certificate, never a proof.

mod mixing;
mod necessity_demo;
mod recoverability;
mod stability;

use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::policies::UniformRandomPolicy;
use crate::sim::{mix_seed, simulate, ActionId, Environment, History, Policy, Trajectory};

pub use mixing::{estimate_mixing_coefficients, CylinderEvents, MixingConfig, MixingEstimate};
pub use necessity_demo::{
    demo_necessity, CertificateFlag, NecessityReport, NecessityRun, BASE_MEMBER_BOUND,
    DEMO_POLICIES, QUALIFY_FRACTION,
};
pub use recoverability::{check_recoverability, RecoverabilityParams, RECOVERY_FAILURE_ALLOWANCE};
pub use stability::{
    calibrate_phi_rate, check_value_stability, stability_battery, BatteryMember, StabilityParams,
    BATTERY_EPS, BATTERY_K, BATTERY_N,
};

pub const EVIDENCE_NOTE: &str = "statistical evidence, not proof";

/// Normal quantile for two-sided 95% intervals.
const Z95: f64 = 1.959_963_984_540_054;

/// Agresti-Coull 95% half-width for `successes` out of `n` trials.
pub fn binomial_half_width(successes: usize, n: usize) -> f64 {
    let z2 = Z95 * Z95;
    let n_tilde = n as f64 + z2;
    let p = (successes as f64 + z2 / 2.0) / n_tilde;
    Z95 * (p * (1.0 - p) / n_tilde).sqrt()
}

/// Outcome of a sampled certificate check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub checker: String,
    pub env_label: String,
    pub k: u64,
    pub n: u64,
    pub eps: f64,
    pub empirical_violation_rate: f64,
    pub claimed_phi: f64,
    pub half_width: f64,
    pub n_samples: usize,
    pub violations: usize,
    pub seed: u64,
    pub pass: bool,
    pub note: String,
}

impl ViolationReport {
    #[allow(clippy::too_many_arguments)]
    fn from_counts(
        checker: &str,
        env_label: String,
        k: u64,
        n: u64,
        eps: f64,
        claimed_phi: f64,
        violations: usize,
        n_samples: usize,
        seed: u64,
    ) -> Self {
        let rate = violations as f64 / n_samples as f64;
        let half_width = binomial_half_width(violations, n_samples);
        Self {
            checker: checker.to_string(),
            env_label,
            k,
            n,
            eps,
            empirical_violation_rate: rate,
            claimed_phi,
            half_width,
            n_samples,
            violations,
            seed,
            pass: rate <= claimed_phi + half_width,
            note: EVIDENCE_NOTE.to_string(),
        }
    }
}

/// How conditioning prefixes are generated.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PrefixGenerator {
    UniformRandom,
    /// The same action at every step.
    Repeat {
        action: usize,
    },
    /// A fixed action list, then uniform-random actions.
    ForcedThenUniform {
        actions: Vec<usize>,
    },
}

impl PrefixGenerator {
    fn policy(&self, n_actions: usize, seed: u64) -> Box<dyn Policy> {
        let uniform = Box::new(UniformRandomPolicy::new(n_actions, seed));
        match self {
            PrefixGenerator::UniformRandom => uniform,
            PrefixGenerator::Repeat { action } => {
                Box::new(crate::policies::ConstantPolicy::new(ActionId(*action)))
            }
            PrefixGenerator::ForcedThenUniform { actions } => {
                Box::new(crate::policies::PrefixPolicy::new(
                    actions.iter().map(|&a| ActionId(a)).collect(),
                    uniform,
                ))
            }
        }
    }

    /// Length-`k` prefix trajectory for sample seed `seed`.
    pub fn sample(&self, env: &dyn Environment, k: u64, seed: u64) -> Result<Trajectory, SimError> {
        if k == 0 {
            return Ok(Trajectory {
                history: History::new(),
                seed,
                env_label: env.label(),
                policy_label: "empty".into(),
            });
        }
        let mut policy = self.policy(env.space().n_actions, mix_seed(seed, 1));
        simulate(env, policy.as_mut(), k as usize, seed)
    }
}
