//! The two-action family showing that the recovery loss must be sublinear.
//!
//! Actions `a` (0) and `b` (1), rewards {0, 1, 2}, no observations. `a`
//! always pays 1. For `s = 0`, `b` pays 0. For `s > 0`, `b` pays 2 iff the
//! longest run of consecutive `b` so far (including this step) is longer
//! than the number of `a` taken so far, and that number is at least `s`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::certificates::{
    EpsilonSchedule, RecoveryLoss, ReferenceRewards, StabilityCertificate, ViolationBound,
};
use crate::error::PolicyError;
use crate::sim::{
    ActionId, EnvCursor, Environment, History, Percept, Policy, SpaceSpec, StepRecord,
};

pub const A: usize = 0;
pub const B: usize = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeclaredLoss {
    /// `d(k, eps) = k`, the honest linear declaration.
    #[default]
    Linear,
    /// `d(k, eps) = sqrt(k)`, a deliberately wrong sublinear declaration.
    Sqrt,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NecessitySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub s: u64,
    #[serde(default)]
    pub declared_loss: DeclaredLoss,
}

/// Counters determining the next reward.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NecessityState {
    pub n_a: u64,
    pub run_b: u64,
    pub longest_b: u64,
}

impl NecessityState {
    /// Reward of canonical action `a` and the state after it.
    pub fn step(&self, s: u64, a: usize) -> (f64, NecessityState) {
        let mut next = *self;
        if a == A {
            next.n_a += 1;
            next.run_b = 0;
            return (1.0, next);
        }
        next.run_b += 1;
        next.longest_b = next.longest_b.max(next.run_b);
        let reward = if s > 0 && next.longest_b > next.n_a && next.n_a >= s {
            2.0
        } else {
            0.0
        };
        (reward, next)
    }
}

#[derive(Debug)]
pub struct NecessityEnv {
    s: u64,
    space: SpaceSpec,
    label: String,
}

impl NecessityEnv {
    pub fn new(s: u64, label: String) -> Self {
        Self {
            s,
            space: SpaceSpec {
                n_actions: 2,
                n_observations: 1,
                reward_values: vec![0.0, 1.0, 2.0],
                r_max: 2.0,
            },
            label,
        }
    }

    pub fn s(&self) -> u64 {
        self.s
    }
}

struct NecessityCursor {
    s: u64,
    state: NecessityState,
}

impl NecessityCursor {
    fn reward(&self, action: ActionId) -> f64 {
        self.state.step(self.s, action.0 % 2).0
    }
}

impl EnvCursor for NecessityCursor {
    fn distribution(&self, action: ActionId) -> Vec<f64> {
        let mut out = vec![0.0; 3];
        out[self.reward(action) as usize] = 1.0;
        out
    }

    fn probability(&self, action: ActionId, percept: &Percept) -> f64 {
        if percept.observation == 0 && percept.reward == self.reward(action) {
            1.0
        } else {
            0.0
        }
    }

    fn advance(&mut self, step: &StepRecord) {
        self.state = self.state.step(self.s, step.action.0 % 2).1;
    }
}

impl Environment for NecessityEnv {
    fn space(&self) -> &SpaceSpec {
        &self.space
    }

    fn label(&self) -> String {
        self.label.clone()
    }

    fn cursor(&self) -> Box<dyn EnvCursor> {
        Box::new(NecessityCursor {
            s: self.s,
            state: NecessityState::default(),
        })
    }
}

/// Plays `a` until `s` of them have been taken, then `b` forever.
#[derive(Clone, Debug)]
pub struct NecessityRecovery {
    s: u64,
    seen: usize,
    state: NecessityState,
}

impl NecessityRecovery {
    pub fn new(s: u64) -> Self {
        Self {
            s,
            seen: 0,
            state: NecessityState::default(),
        }
    }
}

impl Policy for NecessityRecovery {
    fn next_action(&mut self, history: &History) -> Result<ActionId, PolicyError> {
        if self.seen > history.len() {
            self.seen = 0;
            self.state = NecessityState::default();
        }
        for step in &history.steps()[self.seen..] {
            self.state = self.state.step(self.s, step.action.0 % 2).1;
        }
        self.seen = history.len();
        Ok(ActionId(if self.s == 0 || self.state.n_a < self.s {
            A
        } else {
            B
        }))
    }

    fn label(&self) -> String {
        format!("necessity_recovery(s={})", self.s)
    }
}

/// Certificate for member `s`: `V* = 1` with `d = 0` for `s = 0`, otherwise
/// `V* = 2` with the declared (non-sublinear or wrong) recovery loss.
pub fn certificate(s: u64, declared: DeclaredLoss) -> StabilityCertificate {
    let policy = NecessityRecovery::new(s);
    let begin = policy.clone();
    let (value, reference, loss) = if s == 0 {
        (1.0, ReferenceRewards::constant(1.0), RecoveryLoss::Zero)
    } else {
        let mut rewards = vec![1.0; s as usize];
        rewards.extend(std::iter::repeat_n(0.0, s as usize));
        let loss = match declared {
            DeclaredLoss::Linear => RecoveryLoss::Linear(1.0),
            DeclaredLoss::Sqrt => RecoveryLoss::Sqrt {
                scale: 1.0,
                offset: 0.0,
            },
        };
        (2.0, ReferenceRewards::from_rewards(&rewards, 2.0), loss)
    };
    StabilityCertificate {
        optimal_value: value,
        r_max: 2.0,
        reference: Arc::new(reference),
        loss,
        violation: ViolationBound::Zero,
        epsilon: EpsilonSchedule::PowerLaw {
            scale: 0.5,
            exponent: 0.5,
        },
        recovery: Arc::new(move |_| Box::new(policy.clone())),
        begin_optimal: Arc::new(move || Box::new(begin.clone())),
    }
}
