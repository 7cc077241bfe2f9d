//! Round-robin policy for classes of recoverable environments.
//!
//! Follows the recovery policy of the current enumeration entry until the
//! running average comes within `eps_n = 2^-n` of its upper value, or the
//! entry's likelihood ratio against the mixture falls below `alpha_s = 2^-s`;
//! then moves on to the next entry with `n` and `s` incremented.

use std::f64::consts::LN_2;
use std::sync::Arc;

use super::ValueMode;
use crate::certificates::UpperCertificate;
use crate::error::PolicyError;
use crate::mixture::{MixtureTracker, WeightedClass};
use crate::sim::{ActionId, History, Policy, PolicyTrace, StepRecord};

#[derive(Clone, Debug, PartialEq)]
pub struct UpperSelfOptState {
    /// Enumeration position of the current entry.
    pub j: u64,
    pub s: u64,
    pub n: u64,
    /// Step at which the current entry was adopted.
    pub i: u64,
    pub current: usize,
    pub switches: u64,
}

pub struct UpperSelfOptimizingPolicy {
    class: Arc<WeightedClass>,
    certs: Vec<Arc<dyn UpperCertificate>>,
    mode: ValueMode,
    tracker: MixtureTracker,
    own: History,
    state: UpperSelfOptState,
    acting: Option<Box<dyn Policy>>,
    pending: Option<ActionId>,
}

impl UpperSelfOptimizingPolicy {
    pub fn new(class: Arc<WeightedClass>, mode: ValueMode) -> Result<Self, PolicyError> {
        let mut certs: Vec<Arc<dyn UpperCertificate>> = Vec::with_capacity(class.len());
        for (index, member) in class.members().iter().enumerate() {
            let worst = match mode {
                ValueMode::WorstCase => member
                    .worst_case
                    .clone()
                    .map(|c| c as Arc<dyn UpperCertificate>),
                ValueMode::Plain => None,
            };
            let cert = worst.or_else(|| {
                member
                    .recoverability
                    .clone()
                    .map(|c| c as Arc<dyn UpperCertificate>)
            });
            certs.push(cert.ok_or_else(|| PolicyError::MissingCertificate {
                index,
                label: member.label(),
                kind: "recoverability",
            })?);
        }
        let tracker = MixtureTracker::new(&class);
        Ok(Self {
            class,
            certs,
            mode,
            tracker,
            own: History::new(),
            state: Self::initial(),
            acting: None,
            pending: None,
        })
    }

    fn initial() -> UpperSelfOptState {
        UpperSelfOptState {
            j: 0,
            s: 1,
            n: 1,
            i: 0,
            current: 0,
            switches: 0,
        }
    }

    pub fn state(&self) -> &UpperSelfOptState {
        &self.state
    }

    fn reset(&mut self) {
        self.tracker = MixtureTracker::new(&self.class);
        self.own = History::new();
        self.state = Self::initial();
        self.acting = None;
        self.pending = None;
    }

    fn current_action(&mut self) -> Result<ActionId, PolicyError> {
        if let Some(a) = self.pending {
            return Ok(a);
        }
        let a = self.decide()?;
        self.pending = Some(a);
        Ok(a)
    }

    fn observe(&mut self, step: StepRecord) -> Result<(), PolicyError> {
        self.current_action()?;
        self.pending = None;
        self.tracker.observe(&step);
        self.own.push(step);
        Ok(())
    }

    fn should_switch(&self) -> bool {
        let st = &self.state;
        let eps = 0.5f64.powi(st.n.min(1000) as i32);
        let cert = &self.certs[st.current];
        let close = !self.own.is_empty()
            && (self.own.mean_reward() - cert.upper_value(&self.own)).abs() < eps;
        let log_alpha = -(st.s as f64) * LN_2;
        let ratio = self.tracker.state().log_ratio(st.current);
        close || ratio < log_alpha
    }

    fn decide(&mut self) -> Result<ActionId, PolicyError> {
        if self.acting.is_none() {
            self.acting = Some(self.certs[self.state.current].recovery_policy(&self.own));
        }
        // every entry may fire at once; stop after two full rounds and act
        for _ in 0..2 * self.class.len() {
            if !self.should_switch() {
                break;
            }
            let st = &mut self.state;
            st.n += 1;
            st.s += 1;
            st.j += 1;
            st.current = self.class.enumeration(st.j);
            st.i = self.own.len() as u64;
            st.switches += 1;
            self.acting = Some(self.certs[st.current].recovery_policy(&self.own));
        }
        self.acting.as_mut().unwrap().next_action(&self.own)
    }
}

impl Policy for UpperSelfOptimizingPolicy {
    fn next_action(&mut self, history: &History) -> Result<ActionId, PolicyError> {
        let n = self.own.len();
        let extends =
            n <= history.len() && (n == 0 || self.own.steps()[n - 1] == history.steps()[n - 1]);
        if !extends {
            self.reset();
        }
        while self.own.len() < history.len() {
            let step = history.steps()[self.own.len()];
            self.observe(step)?;
        }
        self.current_action()
    }

    fn label(&self) -> String {
        match self.mode {
            ValueMode::Plain => "upper_self_opt".into(),
            ValueMode::WorstCase => "worst_case_upper".into(),
        }
    }

    fn trace(&self) -> Option<PolicyTrace> {
        Some(PolicyTrace {
            phase: "follow".into(),
            s: self.state.s,
            n: self.state.n,
            nu_t: Some(self.state.current),
            nu_e: None,
            log_ratios: self.tracker.state().log_ratios(),
        })
    }
}
