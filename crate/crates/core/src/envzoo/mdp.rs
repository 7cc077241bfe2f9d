//! Finite ergodic MDPs with an average-reward solver.
//!
//! The percept at step `t` is the reward of `(s_t, y_t)` together with the
//! next state `s_{t+1}` as observation, so the current state is always the
//! last observation (or the initial state on the empty history).

use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::certificates::{
    EpsilonSchedule, RecoveryLoss, ReferenceRewards, StabilityCertificate, ViolationBound,
};
use crate::error::{PolicyError, ZooError};
use crate::sim::{
    ActionId, EnvCursor, Environment, History, Percept, Policy, SpaceSpec, StepRecord,
};

pub const SOLVER_TOL: f64 = 1e-10;
pub const SOLVER_CAP: usize = 1_000_000;
/// Longest explicit reference table; later rewards use the stationary value.
pub const REFERENCE_TABLE_CAP: usize = 1 << 16;
/// Aperiodicity transform weight: the solver works on `tau P + (1 - tau) I`.
const TAU: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiConstants {
    pub scale: f64,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub n_states: usize,
    pub n_actions: usize,
    /// `transition[s][a][s2]`
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward_values: Vec<f64>,
    /// `reward_dist[s][a][r]` over `reward_values`
    pub reward_dist: Vec<Vec<Vec<f64>>>,
    pub initial_state: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_max: Option<f64>,
    /// Overrides the default violation-bound constants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<PhiConstants>,
}

fn check_distribution(v: &[f64], len: usize, what: &str) -> Result<(), ZooError> {
    if v.len() != len {
        return Err(ZooError::Malformed(format!(
            "{what}: expected {len} entries, got {}",
            v.len()
        )));
    }
    if v.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
        return Err(ZooError::Malformed(format!(
            "{what}: negative or non-finite entry"
        )));
    }
    let total: f64 = v.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(ZooError::Malformed(format!("{what}: sums to {total}")));
    }
    Ok(())
}

/// Validated MDP with precomputed mean rewards.
#[derive(Clone, Debug)]
pub struct MdpModel {
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward_values: Vec<f64>,
    pub reward_dist: Vec<Vec<Vec<f64>>>,
    pub mean_reward: Vec<Vec<f64>>,
    pub initial_state: usize,
    pub r_max: f64,
}

impl MdpModel {
    pub fn from_spec(spec: &MdpSpec) -> Result<Self, ZooError> {
        let (ns, na) = (spec.n_states, spec.n_actions);
        if ns == 0 || na == 0 {
            return Err(ZooError::Malformed(
                "n_states and n_actions must be positive".into(),
            ));
        }
        if spec.initial_state >= ns {
            return Err(ZooError::Malformed(format!(
                "initial_state {} out of range",
                spec.initial_state
            )));
        }
        let r_max = spec.r_max.unwrap_or_else(|| {
            let hi = spec.reward_values.iter().copied().fold(0.0, f64::max);
            if hi > 0.0 {
                hi
            } else {
                1.0
            }
        });
        SpaceSpec::new(na, ns, spec.reward_values.clone(), r_max)?;
        if spec.transition.len() != ns || spec.reward_dist.len() != ns {
            return Err(ZooError::Malformed(
                "tensors must have n_states rows".into(),
            ));
        }
        let nr = spec.reward_values.len();
        let mut mean_reward = vec![vec![0.0; na]; ns];
        for s in 0..ns {
            if spec.transition[s].len() != na || spec.reward_dist[s].len() != na {
                return Err(ZooError::Malformed(format!(
                    "state {s}: expected {na} actions"
                )));
            }
            for a in 0..na {
                check_distribution(&spec.transition[s][a], ns, &format!("transition[{s}][{a}]"))?;
                check_distribution(
                    &spec.reward_dist[s][a],
                    nr,
                    &format!("reward_dist[{s}][{a}]"),
                )?;
                mean_reward[s][a] = spec.reward_dist[s][a]
                    .iter()
                    .zip(&spec.reward_values)
                    .map(|(p, r)| p * r)
                    .sum();
            }
        }
        let model = Self {
            n_states: ns,
            n_actions: na,
            transition: spec.transition.clone(),
            reward_values: spec.reward_values.clone(),
            reward_dist: spec.reward_dist.clone(),
            mean_reward,
            initial_state: spec.initial_state,
            r_max,
        };
        model.check_ergodic()?;
        Ok(model)
    }

    /// Irreducibility of the chain induced by the uniform-random policy.
    pub fn check_ergodic(&self) -> Result<(), ZooError> {
        for from in 0..self.n_states {
            let reach = self.reachable(from, |s, s2| {
                (0..self.n_actions).any(|a| self.transition[s][a][s2] > 0.0)
            });
            if let Some(to) = reach.iter().position(|r| !r) {
                return Err(ZooError::NotErgodic { from, to });
            }
        }
        Ok(())
    }

    fn reachable(&self, from: usize, edge: impl Fn(usize, usize) -> bool) -> Vec<bool> {
        let mut seen = vec![false; self.n_states];
        let mut queue = VecDeque::from([from]);
        seen[from] = true;
        while let Some(s) = queue.pop_front() {
            for s2 in 0..self.n_states {
                if !seen[s2] && edge(s, s2) {
                    seen[s2] = true;
                    queue.push_back(s2);
                }
            }
        }
        seen
    }

    pub(crate) fn q_value(&self, s: usize, a: usize, h: &[f64]) -> f64 {
        let row = &self.transition[s][a];
        let expect: f64 = row.iter().zip(h).map(|(p, v)| p * v).sum();
        self.mean_reward[s][a] + TAU * expect + (1.0 - TAU) * h[s]
    }

    /// Stationary chain `P_pi[s][s2]` for a deterministic stationary policy.
    pub fn chain(&self, policy: &[usize]) -> Vec<Vec<f64>> {
        (0..self.n_states)
            .map(|s| self.transition[s][policy[s]].clone())
            .collect()
    }

    pub fn solve(&self) -> Result<MdpSolution, ZooError> {
        let (gain, bias, iterations) = relative_value_iteration(self)?;
        let greedy: Vec<usize> = (0..self.n_states)
            .map(|s| {
                let qs: Vec<f64> = (0..self.n_actions)
                    .map(|a| self.q_value(s, a, &bias))
                    .collect();
                let best = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                qs.iter().position(|q| *q >= best - 1e-12).unwrap_or(0)
            })
            .collect();
        let recurrent = self.closed_classes_from(self.initial_state, &greedy);
        let controller = self.hitting_controller(&greedy, &recurrent);
        Ok(MdpSolution {
            gain,
            bias,
            greedy,
            controller,
            recurrent,
            iterations,
        })
    }

    /// States in closed communicating classes of `policy` reachable from `start`.
    fn closed_classes_from(&self, start: usize, policy: &[usize]) -> Vec<bool> {
        let edge = |s: usize, s2: usize| self.transition[s][policy[s]][s2] > 0.0;
        let from_start = self.reachable(start, edge);
        let reach: Vec<Vec<bool>> = (0..self.n_states)
            .map(|s| self.reachable(s, edge))
            .collect();
        (0..self.n_states)
            .map(|s| from_start[s] && (0..self.n_states).all(|t| !reach[s][t] || reach[t][s]))
            .collect()
    }

    /// `policy` on the target set, minimum expected hitting time elsewhere.
    fn hitting_controller(&self, policy: &[usize], target: &[bool]) -> Vec<usize> {
        let ns = self.n_states;
        let mut time = vec![0.0; ns];
        let mut choice = policy.to_vec();
        for _ in 0..100_000 {
            let mut delta: f64 = 0.0;
            for s in (0..ns).filter(|&s| !target[s]) {
                let (best_a, best_t) = (0..self.n_actions)
                    .map(|a| {
                        let t: f64 = self.transition[s][a]
                            .iter()
                            .zip(&time)
                            .map(|(p, t)| p * t)
                            .sum();
                        (a, 1.0 + t)
                    })
                    .fold((0, f64::INFINITY), |acc, x| {
                        if x.1 < acc.1 - 1e-12 {
                            x
                        } else {
                            acc
                        }
                    });
                delta = delta.max((best_t - time[s]).abs());
                time[s] = best_t;
                choice[s] = best_a;
            }
            if delta < 1e-12 {
                break;
            }
        }
        choice
    }

    /// Expected per-step rewards of `policy` from the state distribution `init`,
    /// stopping early once the distribution is stationary to 1e-15.
    pub fn expected_rewards(&self, policy: &[usize], init: Vec<f64>, max_len: usize) -> Vec<f64> {
        let chain = self.chain(policy);
        let mut mu = init;
        let mut out = Vec::new();
        while out.len() < max_len {
            out.push(
                (0..self.n_states)
                    .map(|s| mu[s] * self.mean_reward[s][policy[s]])
                    .sum(),
            );
            let next = step_distribution(&chain, &mu);
            let moved: f64 = next.iter().zip(&mu).map(|(a, b)| (a - b).abs()).sum();
            mu = next;
            if moved < 1e-15 {
                break;
            }
        }
        out
    }

    /// Default exponential rate for the violation bound of `policy`, derived
    /// from the first power `m` of the chain with Dobrushin coefficient at
    /// most one half: `(1 - c_m)^2 / (2 m r_max^2)`.
    pub fn default_phi_rate(&self, policy: &[usize]) -> f64 {
        let base = self.chain(policy);
        let lazy: Vec<Vec<f64>> = base
            .iter()
            .enumerate()
            .map(|(s, row)| {
                row.iter()
                    .enumerate()
                    .map(|(s2, p)| 0.5 * p + if s == s2 { 0.5 } else { 0.0 })
                    .collect()
            })
            .collect();
        for chain in [base, lazy] {
            let mut power = chain.clone();
            for m in 1..=256usize {
                let c = dobrushin(&power);
                if c <= 0.5 {
                    return (1.0 - c).powi(2) / (2.0 * m as f64 * self.r_max * self.r_max);
                }
                power = mat_mul(&power, &chain);
            }
        }
        1.0 / (2.0 * 256.0 * 4.0 * self.r_max * self.r_max)
    }

    /// Stability certificate for the MDP with `d = 0`.
    pub fn certificate(
        self: &Arc<Self>,
        solution: &MdpSolution,
        phi: Option<&PhiConstants>,
        obs_offset: usize,
    ) -> StabilityCertificate {
        let mut init = vec![0.0; self.n_states];
        init[self.initial_state] = 1.0;
        let rewards = self.expected_rewards(&solution.controller, init, REFERENCE_TABLE_CAP);
        let reference = Arc::new(ReferenceRewards::from_rewards(&rewards, solution.gain));
        let (scale, rate) = match phi {
            Some(c) => (c.scale, c.rate),
            None => (2.0, self.default_phi_rate(&solution.controller)),
        };
        let violation = ViolationBound::Exponential { scale, rate };
        let controller = MdpController::new(self, &solution.controller, obs_offset, None);
        let recovery_controller = controller.clone();
        StabilityCertificate {
            optimal_value: solution.gain,
            r_max: self.r_max,
            reference,
            loss: RecoveryLoss::Zero,
            violation,
            epsilon: EpsilonSchedule::matched(&violation, self.r_max),
            recovery: Arc::new(move |_| Box::new(recovery_controller.clone())),
            begin_optimal: Arc::new(move || Box::new(controller.clone())),
        }
    }
}

fn step_distribution(chain: &[Vec<f64>], mu: &[f64]) -> Vec<f64> {
    let n = mu.len();
    let mut next = vec![0.0; n];
    for s in 0..n {
        if mu[s] == 0.0 {
            continue;
        }
        for s2 in 0..n {
            next[s2] += mu[s] * chain[s][s2];
        }
    }
    next
}

fn mat_mul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum())
                .collect()
        })
        .collect()
}

/// Largest total-variation distance between two rows.
fn dobrushin(m: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.len() {
        for j in i + 1..m.len() {
            let tv: f64 = m[i]
                .iter()
                .zip(&m[j])
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>()
                / 2.0;
            worst = worst.max(tv);
        }
    }
    worst
}

/// Result of the average-reward solver.
#[derive(Clone, Debug, PartialEq)]
pub struct MdpSolution {
    pub gain: f64,
    pub bias: Vec<f64>,
    /// Greedy action per state with respect to the relative values.
    pub greedy: Vec<usize>,
    /// Greedy on the recurrent class, shortest expected path into it elsewhere.
    pub controller: Vec<usize>,
    pub recurrent: Vec<bool>,
    pub iterations: usize,
}

/// Relative value iteration on the aperiodicity-transformed MDP. Returns
/// `(gain, relative values, iterations)`.
pub fn relative_value_iteration(model: &MdpModel) -> Result<(f64, Vec<f64>, usize), ZooError> {
    let ns = model.n_states;
    let mut h = vec![0.0; ns];
    let mut span = f64::INFINITY;
    for it in 1..=SOLVER_CAP {
        let th: Vec<f64> = (0..ns)
            .map(|s| {
                (0..model.n_actions)
                    .map(|a| model.q_value(s, a, &h))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        let (lo, hi) = th
            .iter()
            .zip(&h)
            .map(|(t, v)| t - v)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
                (lo.min(d), hi.max(d))
            });
        span = hi - lo;
        let anchor = th[0];
        h = th.iter().map(|t| t - anchor).collect();
        if span < SOLVER_TOL {
            return Ok(((lo + hi) / 2.0, h, it));
        }
    }
    Err(ZooError::SolverDiverged {
        iterations: SOLVER_CAP,
        span,
    })
}

/// Stationary controller reading the current state from the last observation.
#[derive(Clone, Debug)]
pub struct MdpController {
    actions: Arc<Vec<usize>>,
    initial_state: usize,
    obs_offset: usize,
    /// Action used on the empty history instead of `actions[initial_state]`.
    first_action: Option<usize>,
}

impl MdpController {
    pub fn new(
        model: &MdpModel,
        actions: &[usize],
        obs_offset: usize,
        first_action: Option<usize>,
    ) -> Self {
        Self {
            actions: Arc::new(actions.to_vec()),
            initial_state: model.initial_state,
            obs_offset,
            first_action,
        }
    }

    pub fn first_action(&self) -> Option<usize> {
        self.first_action
    }

    pub fn state_of(&self, history: &History) -> usize {
        match history.last() {
            None => self.initial_state,
            Some(step) => {
                let o = step.percept.observation;
                if o >= self.obs_offset && o - self.obs_offset < self.actions.len() {
                    o - self.obs_offset
                } else {
                    self.initial_state
                }
            }
        }
    }
}

impl Policy for MdpController {
    fn next_action(&mut self, history: &History) -> Result<ActionId, PolicyError> {
        if history.is_empty() {
            if let Some(a) = self.first_action {
                return Ok(ActionId(a));
            }
        }
        Ok(ActionId(self.actions[self.state_of(history)]))
    }

    fn label(&self) -> String {
        "mdp_controller".into()
    }
}

/// The MDP as an environment.
#[derive(Clone, Debug)]
pub struct MdpEnv {
    model: Arc<MdpModel>,
    space: SpaceSpec,
    label: String,
}

impl MdpEnv {
    pub fn new(model: Arc<MdpModel>, label: String) -> Self {
        let space = SpaceSpec {
            n_actions: model.n_actions,
            n_observations: model.n_states,
            reward_values: model.reward_values.clone(),
            r_max: model.r_max,
        };
        Self {
            model,
            space,
            label,
        }
    }

    pub fn model(&self) -> &Arc<MdpModel> {
        &self.model
    }
}

struct MdpCursor {
    model: Arc<MdpModel>,
    state: usize,
}

impl EnvCursor for MdpCursor {
    fn distribution(&self, action: ActionId) -> Vec<f64> {
        let m = &self.model;
        let a = action.0 % m.n_actions;
        let mut out = Vec::with_capacity(m.reward_values.len() * m.n_states);
        for pr in &m.reward_dist[self.state][a] {
            for ps in &m.transition[self.state][a] {
                out.push(pr * ps);
            }
        }
        out
    }

    fn probability(&self, action: ActionId, percept: &Percept) -> f64 {
        let m = &self.model;
        let a = action.0 % m.n_actions;
        if percept.observation >= m.n_states {
            return 0.0;
        }
        match m.reward_values.iter().position(|&r| r == percept.reward) {
            Some(ri) => {
                m.reward_dist[self.state][a][ri] * m.transition[self.state][a][percept.observation]
            }
            None => 0.0,
        }
    }

    fn advance(&mut self, step: &StepRecord) {
        if step.percept.observation < self.model.n_states {
            self.state = step.percept.observation;
        }
    }
}

impl Environment for MdpEnv {
    fn space(&self) -> &SpaceSpec {
        &self.space
    }

    fn label(&self) -> String {
        self.label.clone()
    }

    fn cursor(&self) -> Box<dyn EnvCursor> {
        Box::new(MdpCursor {
            model: self.model.clone(),
            state: self.model.initial_state,
        })
    }
}
