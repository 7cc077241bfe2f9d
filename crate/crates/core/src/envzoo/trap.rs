//! An ergodic MDP with a one-shot trap: taking the trap action on the very
//! first step scales every reward of the run, that step included, by
//! `penalty`. Observations are `observation_offset + next state`, so trap
//! environments with different offsets are told apart by their first percept.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::mdp::{MdpController, MdpModel, MdpSolution, MdpSpec, REFERENCE_TABLE_CAP};
use crate::certificates::{
    EpsilonSchedule, RecoverabilityCertificate, RecoveryLoss, ReferenceRewards, ViolationBound,
    WorstCaseCertificate,
};
use crate::error::ZooError;
use crate::sim::{ActionId, EnvCursor, Environment, History, Percept, SpaceSpec, StepRecord};

fn default_penalty() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrapSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub base: MdpSpec,
    pub trap_action: usize,
    #[serde(default = "default_penalty")]
    pub penalty: f64,
    #[serde(default)]
    pub observation_offset: usize,
}

#[derive(Debug)]
pub struct TrapModel {
    pub base: MdpModel,
    pub solution: MdpSolution,
    pub trap_action: usize,
    pub penalty: f64,
    pub offset: usize,
    /// Union index of base reward `v` when not trapped / trapped.
    plain_index: Vec<usize>,
    scaled_index: Vec<usize>,
    /// Best non-trap action on the initial state.
    safe_first: usize,
    space: SpaceSpec,
}

impl TrapModel {
    pub fn from_spec(spec: &TrapSpec) -> Result<Self, ZooError> {
        let base = MdpModel::from_spec(&spec.base)?;
        if spec.trap_action >= base.n_actions {
            return Err(ZooError::Malformed("trap_action out of range".into()));
        }
        if base.n_actions < 2 {
            return Err(ZooError::Malformed(
                "a trap needs an alternative action".into(),
            ));
        }
        if !(0.0..=1.0).contains(&spec.penalty) {
            return Err(ZooError::Malformed("penalty must lie in [0, 1]".into()));
        }
        let solution = base.solve()?;
        let scaled: Vec<f64> = base
            .reward_values
            .iter()
            .map(|r| spec.penalty * r)
            .collect();
        let mut union: Vec<f64> = base.reward_values.iter().chain(&scaled).copied().collect();
        union.sort_by(f64::total_cmp);
        union.dedup();
        let index = |r: f64| union.iter().position(|&u| u == r).expect("reward in union");
        let plain_index = base.reward_values.iter().map(|&r| index(r)).collect();
        let scaled_index = scaled.iter().map(|&r| index(r)).collect();
        let s0 = base.initial_state;
        let safe_first = (0..base.n_actions)
            .filter(|&a| a != spec.trap_action)
            .map(|a| (a, base.q_value(s0, a, &solution.bias)))
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, x| if x.1 > acc.1 { x } else { acc },
            )
            .0;
        let space = SpaceSpec::new(
            base.n_actions,
            spec.observation_offset + base.n_states,
            union,
            base.r_max,
        )?;
        Ok(Self {
            base,
            solution,
            trap_action: spec.trap_action,
            penalty: spec.penalty,
            offset: spec.observation_offset,
            plain_index,
            scaled_index,
            safe_first,
            space,
        })
    }

    pub fn is_trapped(&self, history: &History) -> bool {
        history
            .steps()
            .first()
            .is_some_and(|s| s.action.0 % self.base.n_actions == self.trap_action)
    }

    /// Optimal average reward from the start, avoiding the trap.
    pub fn base_value(&self) -> f64 {
        self.solution.gain
    }

    pub fn conditional_value(&self, history: &History) -> f64 {
        if self.is_trapped(history) {
            self.penalty * self.solution.gain
        } else {
            self.solution.gain
        }
    }

    pub fn controller(&self) -> MdpController {
        let first = (self.solution.controller[self.base.initial_state] == self.trap_action)
            .then_some(self.safe_first);
        MdpController::new(&self.base, &self.solution.controller, self.offset, first)
    }

    /// Realized rewards of `history` followed by the expected rewards of the
    /// controller from the current state.
    pub fn conditional_reference(&self, history: &History) -> ReferenceRewards {
        let mut rewards: Vec<f64> = history.steps().iter().map(|s| s.percept.reward).collect();
        let factor = if self.is_trapped(history) {
            self.penalty
        } else {
            1.0
        };
        let controller = self.controller();
        let ns = self.base.n_states;
        let mut init = vec![0.0; ns];
        if history.is_empty() {
            let s0 = self.base.initial_state;
            let a = controller
                .first_action()
                .unwrap_or(self.solution.controller[s0]);
            rewards.push(self.base.mean_reward[s0][a]);
            init = self.base.transition[s0][a].clone();
        } else {
            init[controller.state_of(history)] = 1.0;
        }
        let future =
            self.base
                .expected_rewards(&self.solution.controller, init, REFERENCE_TABLE_CAP);
        rewards.extend(future.iter().map(|r| factor * r));
        ReferenceRewards::from_rewards(&rewards, self.conditional_value(history))
    }
}

pub fn build(
    spec: &TrapSpec,
    label: String,
) -> Result<(TrapEnv, WorstCaseCertificate, RecoverabilityCertificate), ZooError> {
    let model = Arc::new(TrapModel::from_spec(spec)?);
    let rate = spec
        .base
        .phi
        .as_ref()
        .map(|c| c.rate)
        .unwrap_or_else(|| model.base.default_phi_rate(&model.solution.controller));
    let violation = ViolationBound::Exponential { scale: 2.0, rate };
    let (m1, m2, m3) = (model.clone(), model.clone(), model.clone());
    let worst = WorstCaseCertificate {
        worst_value: model.penalty * model.base_value(),
        r_max: model.base.r_max,
        conditional: Arc::new(move |h| m1.conditional_value(h)),
        conditional_reference: Arc::new(move |h| Arc::new(m2.conditional_reference(h))),
        conditional_recovery: Arc::new(move |_| Box::new(m3.controller())),
        loss: RecoveryLoss::Zero,
        violation,
        epsilon: EpsilonSchedule::matched(&violation, model.base.r_max),
    };
    let m4 = model.clone();
    // Claimed, not true: after the trap the base value is out of reach.
    let claimed = RecoverabilityCertificate {
        upper_optimal_value: model.base_value(),
        recovery: Arc::new(move |_| Box::new(m4.controller())),
    };
    Ok((TrapEnv { model, label }, worst, claimed))
}

#[derive(Debug)]
pub struct TrapEnv {
    model: Arc<TrapModel>,
    label: String,
}

impl TrapEnv {
    pub fn model(&self) -> &Arc<TrapModel> {
        &self.model
    }
}

struct TrapCursor {
    model: Arc<TrapModel>,
    state: usize,
    /// `None` before the first step.
    trapped: Option<bool>,
}

impl TrapCursor {
    fn trapped_with(&self, a: usize) -> bool {
        self.trapped.unwrap_or(a == self.model.trap_action)
    }
}

impl EnvCursor for TrapCursor {
    fn distribution(&self, action: ActionId) -> Vec<f64> {
        let m = &self.model;
        let a = action.0 % m.base.n_actions;
        let index = if self.trapped_with(a) {
            &m.scaled_index
        } else {
            &m.plain_index
        };
        let n_obs = m.space.n_observations;
        let mut out = vec![0.0; m.space.percept_count()];
        for (v, pr) in m.base.reward_dist[self.state][a].iter().enumerate() {
            for (s2, ps) in m.base.transition[self.state][a].iter().enumerate() {
                out[index[v] * n_obs + m.offset + s2] += pr * ps;
            }
        }
        out
    }

    fn probability(&self, action: ActionId, percept: &Percept) -> f64 {
        let m = &self.model;
        let o = percept.observation;
        if o < m.offset || o - m.offset >= m.base.n_states {
            return 0.0;
        }
        match m.space.reward_index(percept.reward) {
            Some(ri) => self.distribution(action)[ri * m.space.n_observations + o],
            None => 0.0,
        }
    }

    fn advance(&mut self, step: &StepRecord) {
        let a = step.action.0 % self.model.base.n_actions;
        self.trapped = Some(self.trapped_with(a));
        let o = step.percept.observation;
        if o >= self.model.offset && o - self.model.offset < self.model.base.n_states {
            self.state = o - self.model.offset;
        }
    }
}

impl Environment for TrapEnv {
    fn space(&self) -> &SpaceSpec {
        &self.model.space
    }

    fn label(&self) -> String {
        self.label.clone()
    }

    fn cursor(&self) -> Box<dyn EnvCursor> {
        Box::new(TrapCursor {
            model: self.model.clone(),
            state: self.model.base.initial_state,
            trapped: None,
        })
    }
}
