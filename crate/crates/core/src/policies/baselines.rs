use std::sync::Arc;

use crate::certificates::StabilityCertificate;
use crate::error::PolicyError;
use crate::sim::{mix_seed, ActionId, History, Policy, PolicyTrace};

/// Always the same action.
#[derive(Clone, Debug)]
pub struct ConstantPolicy {
    action: ActionId,
}

impl ConstantPolicy {
    pub fn new(action: ActionId) -> Self {
        Self { action }
    }
}

impl Policy for ConstantPolicy {
    fn next_action(&mut self, _history: &History) -> Result<ActionId, PolicyError> {
        Ok(self.action)
    }

    fn label(&self) -> String {
        format!("always:{}", self.action.0)
    }
}

/// Pseudo-random actions hashed from `(seed, step)`, so the action is a
/// function of the history length alone.
#[derive(Clone, Debug)]
pub struct UniformRandomPolicy {
    n_actions: usize,
    seed: u64,
}

impl UniformRandomPolicy {
    pub fn new(n_actions: usize, seed: u64) -> Self {
        assert!(n_actions > 0, "uniform policy over an empty action set");
        Self { n_actions, seed }
    }
}

impl Policy for UniformRandomPolicy {
    fn next_action(&mut self, history: &History) -> Result<ActionId, PolicyError> {
        let h = mix_seed(self.seed, history.len() as u64);
        Ok(ActionId((h % self.n_actions as u64) as usize))
    }

    fn label(&self) -> String {
        "random".into()
    }
}

/// Action chosen by a fixed function of the step index.
#[derive(Clone)]
pub struct SchedulePolicy {
    schedule: Arc<dyn Fn(u64) -> ActionId + Send + Sync>,
    label: String,
}

impl SchedulePolicy {
    pub fn new(
        label: impl Into<String>,
        schedule: impl Fn(u64) -> ActionId + Send + Sync + 'static,
    ) -> Self {
        Self {
            schedule: Arc::new(schedule),
            label: label.into(),
        }
    }
}

impl Policy for SchedulePolicy {
    fn next_action(&mut self, history: &History) -> Result<ActionId, PolicyError> {
        Ok((self.schedule)(history.len() as u64))
    }

    fn label(&self) -> String {
        self.label.clone()
    }
}

/// Plays a fixed action prefix, then defers to `inner`. The inner policy is
/// handed the full history, prefix included.
pub struct PrefixPolicy {
    prefix: Vec<ActionId>,
    inner: Box<dyn Policy>,
}

impl PrefixPolicy {
    pub fn new(prefix: Vec<ActionId>, inner: Box<dyn Policy>) -> Self {
        Self { prefix, inner }
    }
}

impl Policy for PrefixPolicy {
    fn next_action(&mut self, history: &History) -> Result<ActionId, PolicyError> {
        match self.prefix.get(history.len()) {
            Some(a) => Ok(*a),
            None => self.inner.next_action(history),
        }
    }

    fn label(&self) -> String {
        self.inner.label()
    }

    fn trace(&self) -> Option<PolicyTrace> {
        self.inner.trace()
    }
}

/// The oracle baseline: the certificate's begin-optimal policy.
pub fn informed_optimal(cert: &StabilityCertificate) -> Box<dyn Policy> {
    cert.begin_optimal_policy()
}
