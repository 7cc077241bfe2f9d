use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificates::validate_certificate_shape;
use crate::envzoo::necessity::{self, A, B};
use crate::envzoo::{DeclaredLoss, EnvSpec, NecessitySpec};
use crate::error::SimError;
use crate::error::ZooError;
use crate::mixture::WeightedClass;
use crate::policies::{ConstantPolicy, SchedulePolicy, SelfOptimizingPolicy, ValueMode};
use crate::sim::{simulate, ActionId, Policy};

/// Largest member index of the demonstration class.
pub const MAX_S: u64 = 8;
/// A run qualifies when its normalized average reaches this on every `s >= 1`.
pub const QUALIFY_FRACTION: f64 = 0.9;
/// Qualifying runs must stay at or below this average on the `s = 0` member.
pub const BASE_MEMBER_BOUND: f64 = 0.6;

pub const DEMO_POLICIES: [&str; 5] = ["self_opt", "always_a", "a_then_b", "a8_then_b", "doubling"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NecessityRun {
    pub policy: String,
    pub seed: u64,
    /// Average reward on member `s`, indexed by `s`.
    pub averages: Vec<f64>,
    /// `min over s >= 1` of `average / V*`.
    pub min_normalized: f64,
    pub base_average: f64,
    pub qualifies: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificateFlag {
    pub s: u64,
    pub violations: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NecessityReport {
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub optimal_values: Vec<f64>,
    pub runs: Vec<NecessityRun>,
    pub qualify_fraction: f64,
    pub base_member_bound: f64,
    pub qualifying_runs: usize,
    /// Every qualifying run stays within `base_member_bound` on `s = 0`.
    pub headline_holds: bool,
    pub certificate_flags: Vec<CertificateFlag>,
    pub note: String,
}

fn demo_class() -> Result<Arc<WeightedClass>, ZooError> {
    let members = (0..=MAX_S)
        .map(|s| {
            EnvSpec::Necessity(NecessitySpec {
                name: None,
                s,
                declared_loss: DeclaredLoss::Linear,
            })
            .build()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Arc::new(WeightedClass::new(members)?))
}

/// `a^(2^j) b^(2^(j+2))` for `j = 0, 1, ...`.
fn doubling_action(t: u64) -> ActionId {
    let mut start = 0u64;
    let mut j = 0u32;
    loop {
        let a_len = 1u64 << j;
        let block = a_len + (4u64 << j);
        if t < start + block {
            return ActionId(if t - start < a_len { A } else { B });
        }
        start += block;
        j += 1;
    }
}

fn demo_policy(name: &str, class: &Arc<WeightedClass>) -> Result<Box<dyn Policy>, SimError> {
    Ok(match name {
        "self_opt" => Box::new(
            SelfOptimizingPolicy::new(class.clone(), ValueMode::Plain)
                .map_err(|source| SimError::Policy { step: 0, source })?,
        ),
        "always_a" => Box::new(ConstantPolicy::new(ActionId(A))),
        "a_then_b" => Box::new(SchedulePolicy::new("a_then_b", |t| {
            ActionId(if t < 1 { A } else { B })
        })),
        "a8_then_b" => Box::new(SchedulePolicy::new("a8_then_b", |t| {
            ActionId(if t < MAX_S { A } else { B })
        })),
        "doubling" => Box::new(SchedulePolicy::new("doubling", doubling_action)),
        other => unreachable!("unknown demo policy {other}"),
    })
}

/// Runs every demo policy on every member of `{s = 0..=8}` and checks the
/// trade-off between the base member and the others.
pub fn demo_necessity(horizon: usize, seeds: &[u64]) -> Result<NecessityReport, SimError> {
    let class = demo_class().map_err(|e| SimError::InvalidSpace(e.to_string()))?;
    let optimal_values: Vec<f64> = class
        .members()
        .iter()
        .map(|m| m.stability.as_ref().map_or(f64::NAN, |c| c.optimal_value))
        .collect();
    let jobs: Vec<(&str, u64)> = DEMO_POLICIES
        .iter()
        .flat_map(|&p| seeds.iter().map(move |&seed| (p, seed)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(name, seed)| -> Result<NecessityRun, SimError> {
            let mut averages = Vec::with_capacity(class.len());
            for s in 0..class.len() {
                let mut policy = demo_policy(name, &class)?;
                let traj = simulate(class.env(s).as_ref(), policy.as_mut(), horizon, seed)?;
                averages.push(traj.history.mean_reward());
            }
            let min_normalized = (1..averages.len())
                .map(|s| averages[s] / optimal_values[s])
                .fold(f64::INFINITY, f64::min);
            Ok(NecessityRun {
                policy: name.to_string(),
                seed,
                base_average: averages[0],
                qualifies: min_normalized >= QUALIFY_FRACTION,
                averages,
                min_normalized,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let qualifying: Vec<&NecessityRun> = runs.iter().filter(|r| r.qualifies).collect();
    let certificate_flags = (1..=MAX_S)
        .map(|s| CertificateFlag {
            s,
            violations: validate_certificate_shape(&necessity::certificate(
                s,
                DeclaredLoss::Linear,
            )),
        })
        .collect();
    Ok(NecessityReport {
        horizon,
        seeds: seeds.to_vec(),
        optimal_values,
        qualifying_runs: qualifying.len(),
        headline_holds: qualifying
            .iter()
            .all(|r| r.base_average <= BASE_MEMBER_BOUND),
        runs,
        qualify_fraction: QUALIFY_FRACTION,
        base_member_bound: BASE_MEMBER_BOUND,
        certificate_flags,
        note: super::EVIDENCE_NOTE.to_string(),
    })
}
