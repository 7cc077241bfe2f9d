//! Histories, the environment/policy interfaces and the seeded simulation loop.
//!
//! A run draws exactly one uniform `f64` per step from a ChaCha8 stream seeded
//! with the run seed, and maps it to a percept by inverse CDF over the exact
//! distribution in (reward-major, observation-minor) order. Because the
//! stream position after `t` steps is known, a run can be resumed from any
//! prefix and reproduce the single-shot run bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{PolicyError, SimError};

/// Tolerance on the total mass of a percept distribution.
pub const NORMALIZATION_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub usize);

/// Reward/observation pair emitted by an environment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Percept {
    pub reward: f64,
    pub observation: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub action: ActionId,
    pub percept: Percept,
}

/// Append-only interaction history with running reward sums.
///
/// `cumulative_reward()[i]` is the sum of the rewards of steps `0..=i`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    steps: Vec<StepRecord>,
    cumulative: Vec<f64>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            steps: Vec::with_capacity(capacity),
            cumulative: Vec::with_capacity(capacity),
        }
    }

    pub fn from_steps(steps: &[StepRecord]) -> Self {
        let mut history = Self::with_capacity(steps.len());
        for step in steps {
            history.push(*step);
        }
        history
    }

    pub fn push(&mut self, step: StepRecord) {
        let total = self.total_reward() + step.percept.reward;
        self.steps.push(step);
        self.cumulative.push(total);
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[StepRecord] {
        &self.steps
    }

    pub fn last(&self) -> Option<&StepRecord> {
        self.steps.last()
    }

    pub fn cumulative_reward(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn total_reward(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }

    /// Sum of rewards over the first `len` steps.
    pub fn reward_prefix(&self, len: usize) -> f64 {
        if len == 0 {
            0.0
        } else {
            self.cumulative[len - 1]
        }
    }

    /// Sum of rewards of steps `from..to` (zero-based, half open).
    pub fn reward_sum(&self, from: usize, to: usize) -> f64 {
        self.reward_prefix(to) - self.reward_prefix(from)
    }

    /// Average reward of steps `from..to`.
    pub fn average_reward(&self, from: usize, to: usize) -> Result<f64, SimError> {
        if from >= to || to > self.len() {
            return Err(SimError::Range {
                from,
                to,
                len: self.len(),
            });
        }
        Ok(self.reward_sum(from, to) / (to - from) as f64)
    }

    /// Average reward over the whole history, zero when empty.
    pub fn mean_reward(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.total_reward() / self.len() as f64
        }
    }

    pub fn prefix(&self, len: usize) -> History {
        History {
            steps: self.steps[..len].to_vec(),
            cumulative: self.cumulative[..len].to_vec(),
        }
    }
}

/// Free-function form of [`History::average_reward`].
pub fn average_reward(history: &History, from: usize, to: usize) -> Result<f64, SimError> {
    history.average_reward(from, to)
}

/// Action, observation and reward spaces of an environment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceSpec {
    pub n_actions: usize,
    pub n_observations: usize,
    pub reward_values: Vec<f64>,
    pub r_max: f64,
}

impl SpaceSpec {
    pub fn new(
        n_actions: usize,
        n_observations: usize,
        reward_values: Vec<f64>,
        r_max: f64,
    ) -> Result<Self, SimError> {
        let spec = Self {
            n_actions,
            n_observations,
            reward_values,
            r_max,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_actions == 0 || self.n_observations == 0 {
            return Err(SimError::InvalidSpace(
                "action and observation spaces must be non-empty".into(),
            ));
        }
        if self.reward_values.is_empty() {
            return Err(SimError::InvalidSpace("reward set is empty".into()));
        }
        if !(self.r_max > 0.0 && self.r_max.is_finite()) {
            return Err(SimError::InvalidSpace(format!(
                "r_max must be positive, got {}",
                self.r_max
            )));
        }
        for pair in self.reward_values.windows(2) {
            if !(pair[0] < pair[1]) {
                return Err(SimError::InvalidSpace(
                    "reward values must be strictly increasing".into(),
                ));
            }
        }
        let lo = self.reward_values[0];
        let hi = self.reward_values[self.reward_values.len() - 1];
        if lo < 0.0 || hi > self.r_max {
            return Err(SimError::InvalidSpace(format!(
                "reward values must lie in [0, {}]",
                self.r_max
            )));
        }
        Ok(())
    }

    /// Smallest space containing every member space: max action and
    /// observation counts, union of reward sets, max `r_max`.
    pub fn union<'a>(specs: impl IntoIterator<Item = &'a SpaceSpec>) -> Result<Self, SimError> {
        let mut n_actions = 0;
        let mut n_observations = 0;
        let mut r_max: f64 = 0.0;
        let mut rewards: Vec<f64> = Vec::new();
        for spec in specs {
            n_actions = n_actions.max(spec.n_actions);
            n_observations = n_observations.max(spec.n_observations);
            r_max = r_max.max(spec.r_max);
            rewards.extend_from_slice(&spec.reward_values);
        }
        rewards.sort_by(f64::total_cmp);
        rewards.dedup();
        Self::new(n_actions, n_observations, rewards, r_max)
    }

    pub fn percept_count(&self) -> usize {
        self.reward_values.len() * self.n_observations
    }

    /// Exact-match lookup; rewards always originate from the declared set.
    pub fn reward_index(&self, reward: f64) -> Option<usize> {
        self.reward_values.iter().position(|&r| r == reward)
    }

    pub fn percept_index(&self, reward_index: usize, observation: usize) -> usize {
        reward_index * self.n_observations + observation
    }

    pub fn percept_at(&self, index: usize) -> Percept {
        Percept {
            reward: self.reward_values[index / self.n_observations],
            observation: index % self.n_observations,
        }
    }

    /// Actions beyond the native range behave like `action mod n_actions`,
    /// which lets environments with different action counts share a class.
    pub fn canonical_action(&self, action: ActionId) -> usize {
        action.0 % self.n_actions
    }
}

/// Incremental view of an environment's conditional law along one history.
pub trait EnvCursor: Send {
    /// Percept distribution for the next step, indexed by
    /// [`SpaceSpec::percept_index`].
    fn distribution(&self, action: ActionId) -> Vec<f64>;

    /// Probability of `percept` for the next step. Percepts outside the
    /// environment's own spaces have probability zero.
    fn probability(&self, action: ActionId, percept: &Percept) -> f64;

    /// Condition on one more step.
    fn advance(&mut self, step: &StepRecord);
}

/// A conditional law over percepts given the full history and the action.
pub trait Environment: Send + Sync {
    fn space(&self) -> &SpaceSpec;

    fn label(&self) -> String;

    /// A cursor positioned at the empty history.
    fn cursor(&self) -> Box<dyn EnvCursor>;

    fn cursor_at(&self, history: &[StepRecord]) -> Box<dyn EnvCursor> {
        let mut cursor = self.cursor();
        for step in history {
            cursor.advance(step);
        }
        cursor
    }

    fn percept_distribution(&self, history: &[StepRecord], action: ActionId) -> Vec<f64> {
        self.cursor_at(history).distribution(action)
    }
}

/// Snapshot of a learning policy's internal state, for logs and CSV output.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PolicyTrace {
    pub phase: String,
    pub s: u64,
    pub n: u64,
    pub nu_t: Option<usize>,
    pub nu_e: Option<usize>,
    pub log_ratios: Vec<f64>,
}

/// A deterministic policy.
///
/// `next_action` is always handed the full history of the run so far. An
/// implementation may keep state between calls, but the returned action must
/// be a function of the history alone: a fresh instance given the same
/// history returns the same action.
pub trait Policy: Send {
    fn next_action(&mut self, history: &History) -> Result<ActionId, PolicyError>;

    fn label(&self) -> String;

    fn trace(&self) -> Option<PolicyTrace> {
        None
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn next_action(&mut self, history: &History) -> Result<ActionId, PolicyError> {
        (**self).next_action(history)
    }

    fn label(&self) -> String {
        (**self).label()
    }

    fn trace(&self) -> Option<PolicyTrace> {
        (**self).trace()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub history: History,
    pub seed: u64,
    pub env_label: String,
    pub policy_label: String,
}

/// SplitMix64 output for `(seed, index)`; used to derive independent
/// sub-seeds and hash-based pseudo-random choices.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream_at(seed: u64, steps: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // one u64 (two 32-bit words) per step
    rng.set_word_pos(2 * steps as u128);
    rng
}

/// First index whose cumulative mass exceeds `u`, skipping zero entries.
pub fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last_positive = i;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

fn check_distribution(probs: &[f64], expected_len: usize, step: usize) -> Result<(), SimError> {
    if probs.len() != expected_len {
        return Err(SimError::MalformedDistribution {
            step,
            reason: format!("expected {expected_len} entries, got {}", probs.len()),
        });
    }
    let mut total = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        if !(p >= 0.0 && p.is_finite()) {
            return Err(SimError::MalformedDistribution {
                step,
                reason: format!("entry {i} is {p}"),
            });
        }
        total += p;
    }
    if (total - 1.0).abs() > NORMALIZATION_TOL {
        return Err(SimError::MalformedDistribution {
            step,
            reason: format!("mass {total} differs from 1"),
        });
    }
    Ok(())
}

/// Run `policy` against `env` for `horizon` steps.
pub fn simulate(
    env: &dyn Environment,
    policy: &mut dyn Policy,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory, SimError> {
    simulate_observed(env, policy, horizon, seed, &mut |_, _| {})
}

/// [`simulate`] with a callback invoked after every step.
pub fn simulate_observed(
    env: &dyn Environment,
    policy: &mut dyn Policy,
    horizon: usize,
    seed: u64,
    observer: &mut dyn FnMut(&History, &dyn Policy),
) -> Result<Trajectory, SimError> {
    if horizon == 0 {
        return Err(SimError::ZeroHorizon);
    }
    let mut history = History::with_capacity(horizon);
    run_steps(env, policy, &mut history, horizon, seed, observer)?;
    Ok(Trajectory {
        history,
        seed,
        env_label: env.label(),
        policy_label: policy.label(),
    })
}

/// Extend `traj` by `extra_steps`, continuing its random stream. The result
/// equals a single [`simulate`] call over the combined horizon with the same
/// seed and a policy that behaves identically on the shared prefix.
pub fn continue_simulation(
    traj: Trajectory,
    env: &dyn Environment,
    policy: &mut dyn Policy,
    extra_steps: usize,
) -> Result<Trajectory, SimError> {
    continue_observed(traj, env, policy, extra_steps, &mut |_, _| {})
}

pub fn continue_observed(
    traj: Trajectory,
    env: &dyn Environment,
    policy: &mut dyn Policy,
    extra_steps: usize,
    observer: &mut dyn FnMut(&History, &dyn Policy),
) -> Result<Trajectory, SimError> {
    if traj.env_label != env.label() {
        return Err(SimError::SpecMismatch(format!(
            "trajectory recorded against `{}`, continuing against `{}`",
            traj.env_label,
            env.label()
        )));
    }
    let space = env.space();
    for (i, step) in traj.history.steps().iter().enumerate() {
        if step.percept.observation >= space.n_observations
            || space.reward_index(step.percept.reward).is_none()
        {
            return Err(SimError::SpecMismatch(format!(
                "step {i} percept {:?} lies outside the environment's spaces",
                step.percept
            )));
        }
    }
    let Trajectory {
        mut history,
        seed,
        env_label,
        ..
    } = traj;
    run_steps(env, policy, &mut history, extra_steps, seed, observer)?;
    Ok(Trajectory {
        history,
        seed,
        env_label,
        policy_label: policy.label(),
    })
}

fn run_steps(
    env: &dyn Environment,
    policy: &mut dyn Policy,
    history: &mut History,
    steps: usize,
    seed: u64,
    observer: &mut dyn FnMut(&History, &dyn Policy),
) -> Result<(), SimError> {
    let space = env.space();
    let expected = space.percept_count();
    let mut cursor = env.cursor_at(history.steps());
    let mut rng = stream_at(seed, history.len());
    for _ in 0..steps {
        let step_index = history.len();
        let action = policy
            .next_action(history)
            .map_err(|source| SimError::Policy {
                step: step_index,
                source,
            })?;
        let probs = cursor.distribution(action);
        check_distribution(&probs, expected, step_index)?;
        let u: f64 = rng.gen();
        let percept = space.percept_at(inverse_cdf(&probs, u));
        let record = StepRecord { action, percept };
        cursor.advance(&record);
        history.push(record);
        observer(history, &*policy);
    }
    Ok(())
}

/// Natural-log likelihood of the percepts in `history` under `env`, given
/// the recorded actions. Returns `-inf` as soon as one factor is zero.
pub fn log_likelihood(env: &dyn Environment, history: &History) -> f64 {
    let mut cursor = env.cursor();
    let mut total = 0.0;
    for step in history.steps() {
        let p = cursor.probability(step.action, &step.percept);
        if p <= 0.0 {
            return f64::NEG_INFINITY;
        }
        total += p.ln();
        cursor.advance(step);
    }
    total
}
