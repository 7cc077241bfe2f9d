//! The weighted class, the Bayesian mixture over it and the consistency set.
//!
//! All likelihoods are kept in natural-log space. Environments that assign
//! probability zero to the realized history sit at `-inf` and are skipped
//! when summing the mixture, but keep their index.

use std::sync::Arc;

use crate::certificates::CertifiedEnv;
use crate::error::ZooError;
use crate::sim::{EnvCursor, Environment, History, SpaceSpec, StepRecord};

/// A finite list of certified environments with positive prior weights.
///
/// The countable enumeration visits the list round-robin, so every member
/// recurs in every window of `len()` consecutive positions. A lazily
/// materialized infinite class would replace [`WeightedClass::enumeration`].
#[derive(Clone, Debug)]
pub struct WeightedClass {
    members: Vec<CertifiedEnv>,
    weights: Vec<f64>,
    log_weights: Vec<f64>,
    space: SpaceSpec,
}

impl WeightedClass {
    /// Class with the default weights `2^-(i+1)`, renormalized.
    pub fn new(members: Vec<CertifiedEnv>) -> Result<Self, ZooError> {
        let raw: Vec<f64> = (0..members.len())
            .map(|i| 0.5f64.powi(i as i32 + 1))
            .collect();
        Self::with_weights(members, raw)
    }

    /// Class with explicit positive weights; they are renormalized to sum to 1.
    pub fn with_weights(members: Vec<CertifiedEnv>, weights: Vec<f64>) -> Result<Self, ZooError> {
        if members.is_empty() {
            return Err(ZooError::Malformed("class must not be empty".into()));
        }
        if weights.len() != members.len() {
            return Err(ZooError::Malformed(format!(
                "{} weights for {} environments",
                weights.len(),
                members.len()
            )));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(ZooError::Malformed(
                "weights must be positive and finite".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        let space = SpaceSpec::union(members.iter().map(|m| m.env.space()))?;
        Ok(Self {
            members,
            weights,
            log_weights,
            space,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn members(&self) -> &[CertifiedEnv] {
        &self.members
    }

    pub fn member(&self, index: usize) -> &CertifiedEnv {
        &self.members[index]
    }

    pub fn env(&self, index: usize) -> &Arc<dyn Environment> {
        &self.members[index].env
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Union of the member spaces.
    pub fn space(&self) -> &SpaceSpec {
        &self.space
    }

    /// Environment index at enumeration position `j`.
    pub fn enumeration(&self, j: u64) -> usize {
        (j % self.members.len() as u64) as usize
    }

    /// The deterministic bound `nu / xi <= 1 / w_nu`.
    pub fn true_env_ratio_floor(&self, index: usize) -> f64 {
        1.0 / self.weights[index]
    }
}

/// Free-function form of [`WeightedClass::true_env_ratio_floor`].
pub fn true_env_ratio_floor(class: &WeightedClass, true_index: usize) -> f64 {
    class.true_env_ratio_floor(true_index)
}

/// `ln sum exp(x)` over the finite entries; `-inf` if there are none.
pub fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.into_iter().filter(|v| v.is_finite()).collect();
    let Some(max) = values.iter().copied().reduce(f64::max) else {
        return f64::NEG_INFINITY;
    };
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Per-environment log-likelihoods and the log-mixture.
#[derive(Clone, Debug, PartialEq)]
pub struct MixtureState {
    pub per_env_loglik: Vec<f64>,
    pub log_xi: f64,
    pub step_count: usize,
}

impl MixtureState {
    pub fn new(class: &WeightedClass) -> Self {
        Self {
            per_env_loglik: vec![0.0; class.len()],
            log_xi: 0.0,
            step_count: 0,
        }
    }

    /// Batch recomputation from scratch.
    pub fn from_history(class: &WeightedClass, history: &History) -> Self {
        let per_env_loglik: Vec<f64> = class
            .members()
            .iter()
            .map(|m| crate::sim::log_likelihood(m.env.as_ref(), history))
            .collect();
        let log_xi = mixture_log(class, &per_env_loglik);
        Self {
            per_env_loglik,
            log_xi,
            step_count: history.len(),
        }
    }

    /// Condition on one more step; `prefix` is the history before it.
    /// Evaluates each environment from scratch on `prefix`; see
    /// [`MixtureTracker`] for the incremental form used inside policies.
    pub fn update(&self, class: &WeightedClass, step: &StepRecord, prefix: &History) -> Self {
        let mut next = self.clone();
        for (i, member) in class.members().iter().enumerate() {
            if next.per_env_loglik[i] == f64::NEG_INFINITY {
                continue;
            }
            let p = member
                .env
                .cursor_at(prefix.steps())
                .probability(step.action, &step.percept);
            next.per_env_loglik[i] = add_log(next.per_env_loglik[i], p);
        }
        next.log_xi = mixture_log(class, &next.per_env_loglik);
        next.step_count += 1;
        next
    }

    /// `ln(nu_i(z) / xi(z))`.
    pub fn log_ratio(&self, index: usize) -> f64 {
        let l = self.per_env_loglik[index];
        if l == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            l - self.log_xi
        }
    }

    pub fn log_ratios(&self) -> Vec<f64> {
        (0..self.per_env_loglik.len())
            .map(|i| self.log_ratio(i))
            .collect()
    }

    /// Indices whose ratio against the mixture is at least `alpha`.
    pub fn consistent_set(&self, alpha: f64) -> Vec<usize> {
        self.consistent_set_log(alpha.ln())
    }

    pub fn consistent_set_log(&self, log_alpha: f64) -> Vec<usize> {
        (0..self.per_env_loglik.len())
            .filter(|&i| self.is_consistent_log(i, log_alpha))
            .collect()
    }

    pub fn is_consistent_log(&self, index: usize, log_alpha: f64) -> bool {
        let r = self.log_ratio(index);
        r.is_finite() && r >= log_alpha
    }
}

/// Free-function form of [`MixtureState::consistent_set`].
pub fn consistent_set(state: &MixtureState, alpha: f64) -> Vec<usize> {
    state.consistent_set(alpha)
}

fn add_log(loglik: f64, p: f64) -> f64 {
    if p > 0.0 {
        loglik + p.ln()
    } else {
        f64::NEG_INFINITY
    }
}

fn mixture_log(class: &WeightedClass, loglik: &[f64]) -> f64 {
    log_sum_exp(class.log_weights().iter().zip(loglik).map(|(w, l)| w + l))
}

/// Incremental mixture maintenance with one cursor per environment.
pub struct MixtureTracker {
    state: MixtureState,
    cursors: Vec<Box<dyn EnvCursor>>,
    log_weights: Vec<f64>,
}

impl MixtureTracker {
    pub fn new(class: &WeightedClass) -> Self {
        Self {
            state: MixtureState::new(class),
            cursors: class.members().iter().map(|m| m.env.cursor()).collect(),
            log_weights: class.log_weights().to_vec(),
        }
    }

    pub fn state(&self) -> &MixtureState {
        &self.state
    }

    pub fn observe(&mut self, step: &StepRecord) {
        for (i, cursor) in self.cursors.iter_mut().enumerate() {
            let l = &mut self.state.per_env_loglik[i];
            if *l == f64::NEG_INFINITY {
                continue;
            }
            *l = add_log(*l, cursor.probability(step.action, &step.percept));
            if l.is_finite() {
                cursor.advance(step);
            }
        }
        self.state.log_xi = log_sum_exp(
            self.log_weights
                .iter()
                .zip(&self.state.per_env_loglik)
                .map(|(w, l)| w + l),
        );
        self.state.step_count += 1;
    }

    /// Observe every step of `history` not seen yet.
    pub fn catch_up(&mut self, history: &History) {
        while self.state.step_count < history.len() {
            let step = history.steps()[self.state.step_count];
            self.observe(&step);
        }
    }
}
