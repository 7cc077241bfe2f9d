//! The chain of Bernoulli arms with actions g (play), u (up) and d (down).
//!
//! The agent starts at arm 0. `u` moves one arm up (clamped at the last
//! arm), `d` jumps down by `D(i)` where `D(i) = i` (back to arm 0) or
//! `D(i) = 1`. Only `g` is rewarded: Bernoulli with the current arm's
//! parameter. There is a single, empty observation.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::certificates::{
    EpsilonSchedule, RecoverabilityCertificate, RecoveryLoss, ReferenceRewards,
    StabilityCertificate, ViolationBound,
};
use crate::error::{PolicyError, ZooError};
use crate::sim::{
    ActionId, EnvCursor, Environment, History, Percept, Policy, SpaceSpec, StepRecord,
};

pub const PLAY: usize = 0;
pub const UP: usize = 1;
pub const DOWN: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownJump {
    /// `D(i) = i`: one `d` returns to arm 0.
    ToZero,
    /// `D(i) = 1`: one `d` moves one arm down.
    One,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BanditChainSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Success probability of each arm; the chain is truncated after the last.
    pub arm_probs: Vec<f64>,
    pub down: DownJump,
}

/// Arm reached from `arm` by canonical action `a`.
pub fn next_arm(arm: usize, a: usize, down: DownJump, max_arm: usize) -> usize {
    match a {
        UP => (arm + 1).min(max_arm),
        DOWN => match down {
            DownJump::ToZero => 0,
            DownJump::One => arm.saturating_sub(1),
        },
        _ => arm,
    }
}

/// Highest arm the ladder may use at step `t`: `floor(sqrt(t))`, truncated.
pub fn ladder_bound(t: u64, max_arm: usize) -> usize {
    (isqrt(t) as usize).min(max_arm)
}

fn isqrt(t: u64) -> u64 {
    let mut r = (t as f64).sqrt() as u64;
    while r * r > t {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= t {
        r += 1;
    }
    r
}

/// First arm with the largest parameter among arms `0..=upto`.
fn first_argmax(probs: &[f64], upto: usize) -> usize {
    let mut best = 0;
    for i in 1..=upto {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug)]
pub struct BanditModel {
    pub arm_probs: Vec<f64>,
    pub down: DownJump,
    /// `best_below[j]` is the first argmax over arms `0..=j`.
    best_below: Vec<usize>,
}

impl BanditModel {
    pub fn from_spec(spec: &BanditChainSpec) -> Result<Self, ZooError> {
        if spec.arm_probs.is_empty() {
            return Err(ZooError::Malformed(
                "bandit chain needs at least one arm".into(),
            ));
        }
        if spec
            .arm_probs
            .iter()
            .any(|p| !(0.0..=1.0).contains(p) || p.is_nan())
        {
            return Err(ZooError::Malformed(
                "arm probabilities must lie in [0, 1]".into(),
            ));
        }
        let best_below = (0..spec.arm_probs.len())
            .map(|j| first_argmax(&spec.arm_probs, j))
            .collect();
        Ok(Self {
            arm_probs: spec.arm_probs.clone(),
            down: spec.down,
            best_below,
        })
    }

    pub fn max_arm(&self) -> usize {
        self.arm_probs.len() - 1
    }

    pub fn best_value(&self) -> f64 {
        self.arm_probs.iter().copied().fold(0.0, f64::max)
    }

    /// Ladder target at step `t`.
    pub fn ladder_target(&self, t: u64) -> usize {
        self.best_below[ladder_bound(t, self.max_arm())]
    }

    pub fn space() -> SpaceSpec {
        SpaceSpec {
            n_actions: 3,
            n_observations: 1,
            reward_values: vec![0.0, 1.0],
            r_max: 1.0,
        }
    }

    /// Deterministic arm and action sequence of the ladder policy, together
    /// with its expected rewards, until the best arm is reached and played.
    pub fn ladder_reference(&self) -> Vec<f64> {
        let best = self.best_below[self.max_arm()];
        let mut arm = 0;
        let mut rewards = Vec::new();
        let mut t = 0u64;
        loop {
            let target = self.ladder_target(t);
            if arm < target {
                arm += 1;
                rewards.push(0.0);
            } else {
                if arm == best {
                    break;
                }
                rewards.push(self.arm_probs[arm]);
            }
            t += 1;
        }
        rewards
    }

    fn certificates(self: &Arc<Self>) -> (Option<StabilityCertificate>, RecoverabilityCertificate) {
        let v = self.best_value();
        match self.down {
            DownJump::ToZero => {
                let reference =
                    Arc::new(ReferenceRewards::from_rewards(&self.ladder_reference(), v));
                let violation = ViolationBound::Exponential {
                    scale: 1.0,
                    rate: 2.0,
                };
                let ladder = LadderPolicy::new(self.clone());
                let begin = ladder.clone();
                let stability = StabilityCertificate {
                    optimal_value: v,
                    r_max: 1.0,
                    reference,
                    loss: RecoveryLoss::Sqrt {
                        scale: 1.0,
                        offset: 2.0,
                    },
                    violation,
                    epsilon: EpsilonSchedule::matched(&violation, 1.0),
                    recovery: Arc::new(move |_| Box::new(ladder.clone())),
                    begin_optimal: Arc::new(move || Box::new(begin.clone())),
                };
                let rec = RecoverabilityCertificate {
                    upper_optimal_value: v,
                    recovery: stability.recovery.clone(),
                };
                (Some(stability), rec)
            }
            DownJump::One => {
                let climb = ClimbPolicy::new(self.clone());
                let rec = RecoverabilityCertificate {
                    upper_optimal_value: v,
                    recovery: Arc::new(move |_| Box::new(climb.clone())),
                };
                (None, rec)
            }
        }
    }
}

/// Builds the environment and its certificates.
pub fn build(
    spec: &BanditChainSpec,
    label: String,
) -> Result<
    (
        BanditEnv,
        Option<StabilityCertificate>,
        RecoverabilityCertificate,
    ),
    ZooError,
> {
    let model = Arc::new(BanditModel::from_spec(spec)?);
    let (stability, rec) = model.certificates();
    Ok((
        BanditEnv {
            model,
            space: BanditModel::space(),
            label,
        },
        stability,
        rec,
    ))
}

#[derive(Debug)]
pub struct BanditEnv {
    model: Arc<BanditModel>,
    space: SpaceSpec,
    label: String,
}

impl BanditEnv {
    pub fn model(&self) -> &Arc<BanditModel> {
        &self.model
    }
}

struct BanditCursor {
    model: Arc<BanditModel>,
    arm: usize,
}

impl EnvCursor for BanditCursor {
    fn distribution(&self, action: ActionId) -> Vec<f64> {
        if action.0 % 3 == PLAY {
            let p = self.model.arm_probs[self.arm];
            vec![1.0 - p, p]
        } else {
            vec![1.0, 0.0]
        }
    }

    fn probability(&self, action: ActionId, percept: &Percept) -> f64 {
        if percept.observation != 0 {
            return 0.0;
        }
        let dist = self.distribution(action);
        if percept.reward == 0.0 {
            dist[0]
        } else if percept.reward == 1.0 {
            dist[1]
        } else {
            0.0
        }
    }

    fn advance(&mut self, step: &StepRecord) {
        self.arm = next_arm(
            self.arm,
            step.action.0 % 3,
            self.model.down,
            self.model.max_arm(),
        );
    }
}

impl Environment for BanditEnv {
    fn space(&self) -> &SpaceSpec {
        &self.space
    }

    fn label(&self) -> String {
        self.label.clone()
    }

    fn cursor(&self) -> Box<dyn EnvCursor> {
        Box::new(BanditCursor {
            model: self.model.clone(),
            arm: 0,
        })
    }
}

/// Arm position along a history, cached for incremental calls.
#[derive(Clone, Debug, Default)]
struct ArmTracker {
    seen: usize,
    arm: usize,
    last_action: Option<ActionId>,
}

impl ArmTracker {
    fn arm(&mut self, history: &History, model: &BanditModel) -> usize {
        let steps = history.steps();
        let consistent = self.seen <= steps.len()
            && (self.seen == 0 || Some(steps[self.seen - 1].action) == self.last_action);
        if !consistent {
            *self = Self::default();
        }
        for step in &steps[self.seen..] {
            self.arm = next_arm(self.arm, step.action.0 % 3, model.down, model.max_arm());
        }
        self.seen = steps.len();
        self.last_action = steps.last().map(|s| s.action);
        self.arm
    }
}

/// Follows the ladder: play the best arm below `floor(sqrt(t))`. From an
/// arbitrary position it keeps a higher arm that is at least as good,
/// otherwise returns to arm 0 and climbs.
#[derive(Clone, Debug)]
pub struct LadderPolicy {
    model: Arc<BanditModel>,
    tracker: ArmTracker,
}

impl LadderPolicy {
    pub fn new(model: Arc<BanditModel>) -> Self {
        Self {
            model,
            tracker: ArmTracker::default(),
        }
    }

    /// Arm the agent occupies after `history`.
    pub fn current_arm(&mut self, history: &History) -> usize {
        self.tracker.arm(history, &self.model)
    }
}

impl Policy for LadderPolicy {
    fn next_action(&mut self, history: &History) -> Result<ActionId, PolicyError> {
        let arm = self.tracker.arm(history, &self.model);
        let target = self.model.ladder_target(history.len() as u64);
        let p = &self.model.arm_probs;
        let a = if arm == target || (arm > target && p[arm] >= p[target]) {
            PLAY
        } else if arm < target {
            UP
        } else {
            DOWN
        };
        Ok(ActionId(a))
    }

    fn label(&self) -> String {
        "bandit_ladder".into()
    }
}

/// Walks to the best arm of the whole chain and plays it.
#[derive(Clone, Debug)]
pub struct ClimbPolicy {
    model: Arc<BanditModel>,
    tracker: ArmTracker,
}

impl ClimbPolicy {
    pub fn new(model: Arc<BanditModel>) -> Self {
        Self {
            model,
            tracker: ArmTracker::default(),
        }
    }
}

impl Policy for ClimbPolicy {
    fn next_action(&mut self, history: &History) -> Result<ActionId, PolicyError> {
        let arm = self.tracker.arm(history, &self.model);
        let target = self.model.best_below[self.model.max_arm()];
        let a = match arm.cmp(&target) {
            std::cmp::Ordering::Less => UP,
            std::cmp::Ordering::Equal => PLAY,
            std::cmp::Ordering::Greater => DOWN,
        };
        Ok(ActionId(a))
    }

    fn label(&self) -> String {
        "bandit_climb".into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isqrt_exact() {
        for t in 0..10_000u64 {
            let r = isqrt(t);
            assert!(r * r <= t && (r + 1) * (r + 1) > t);
        }
    }

    #[test]
    fn ladder_reference_reaches_best_arm() {
        let model = BanditModel::from_spec(&BanditChainSpec {
            name: None,
            arm_probs: vec![0.1, 0.2, 0.3],
            down: DownJump::ToZero,
        })
        .unwrap();
        // t=0: play arm 0; t=1: up to arm 1; t=2,3: play arm 1; t=4: up to arm 2
        assert_eq!(model.ladder_reference(), vec![0.1, 0.0, 0.2, 0.2, 0.0]);
    }

    #[test]
    fn up_clamps_at_last_arm() {
        assert_eq!(next_arm(2, UP, DownJump::One, 2), 2);
        assert_eq!(next_arm(0, DOWN, DownJump::One, 2), 0);
    }
}
