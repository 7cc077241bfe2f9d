//! The exploit/explore phase machine for classes of value-stable (or
//! worst-case value-stable) environments.
//!
//! The policy keeps a mixture over the class and the consistency set
//! `T = {nu : nu(z)/xi(z) >= 2^-s}`. It exploits the recovery policy of the
//! current candidate `nu_t` and, when some environment `nu_e` claims a
//! strictly higher value, schedules exploration attempts of that claim at
//! steps `k` far enough in the future that a failed attempt costs at most a
//! vanishing fraction of the average.

use std::f64::consts::LN_2;
use std::sync::Arc;

use super::ValueMode;
use crate::certificates::{ReferenceRewards, ValueCertificate, VALUE_TOL};
use crate::error::PolicyError;
use crate::mixture::{MixtureTracker, WeightedClass};
use crate::sim::{ActionId, History, Policy, PolicyTrace, StepRecord};

/// Largest exploration start the `k` search will consider.
pub const K_SEARCH_CAP: u64 = 10_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    SelectT,
    SelectE,
    PrepareK,
    RunToK,
    Explore,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::SelectT => "select_t",
            Phase::SelectE => "select_e",
            Phase::PrepareK => "prepare_k",
            Phase::RunToK => "run_to_k",
            Phase::Explore => "explore",
        }
    }
}

/// Which continuation condition ended an exploration attempt.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExploreExit {
    /// Realized rewards drifted from `nu_e`'s reference.
    Deviation,
    /// The attempt reached step `3k`.
    Deadline,
    /// `nu_e` left the consistency set.
    Inconsistent,
}

#[derive(Clone, Debug, PartialEq)]
pub enum EventKind {
    IncrementS {
        reason: &'static str,
    },
    SelectT {
        nu_t: usize,
    },
    SelectE {
        nu_e: usize,
    },
    LoopStart {
        delta: f64,
        eps: f64,
    },
    Prepare {
        h: u64,
        k: u64,
        thresholds: [u64; 4],
    },
    /// A `k4` term whose loss bound is not sublinear enough to satisfy.
    DroppedTerm {
        which: &'static str,
    },
    ExploreStart {
        k: u64,
    },
    ExploreEnd {
        exit: ExploreExit,
        length: u64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseEvent {
    pub step: u64,
    pub s: u64,
    pub n: u64,
    pub kind: EventKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelfOptState {
    /// Threshold exponent: `alpha_s = 2^-s`.
    pub s: u64,
    /// Loop counter, indexes the epsilon schedule.
    pub n: u64,
    /// Next enumeration position scanned for `nu_t` / `nu_e`.
    pub j_t: u64,
    pub j_e: u64,
    /// Exploration-attempt counter; each attempt lasts at least `h` steps.
    pub h: u64,
    pub phase: Phase,
    pub nu_t: Option<usize>,
    pub nu_e: Option<usize>,
    pub i_h: u64,
    pub k: u64,
    pub delta: f64,
    pub eps: f64,
    pub thresholds: [u64; 4],
    pub explore_len: u64,
}

impl SelfOptState {
    fn initial() -> Self {
        Self {
            s: 1,
            n: 0,
            j_t: 0,
            j_e: 0,
            h: 0,
            phase: Phase::SelectT,
            nu_t: None,
            nu_e: None,
            i_h: 0,
            k: 0,
            delta: 0.0,
            eps: 0.0,
            thresholds: [0; 4],
            explore_len: 0,
        }
    }

    pub fn log_alpha(&self) -> f64 {
        -(self.s as f64) * LN_2
    }
}

pub struct SelfOptimizingPolicy {
    class: Arc<WeightedClass>,
    certs: Vec<Arc<dyn ValueCertificate>>,
    mode: ValueMode,
    r_max: f64,
    tracker: MixtureTracker,
    own: History,
    state: SelfOptState,
    acting: Option<Box<dyn Policy>>,
    ref_t: Option<Arc<ReferenceRewards>>,
    ref_e: Option<Arc<ReferenceRewards>>,
    pending: Option<ActionId>,
    last_phase: Phase,
    events: Vec<PhaseEvent>,
}

impl SelfOptimizingPolicy {
    pub fn new(class: Arc<WeightedClass>, mode: ValueMode) -> Result<Self, PolicyError> {
        let mut certs: Vec<Arc<dyn ValueCertificate>> = Vec::with_capacity(class.len());
        for (index, member) in class.members().iter().enumerate() {
            let cert: Option<Arc<dyn ValueCertificate>> = match mode {
                ValueMode::Plain => member
                    .stability
                    .clone()
                    .map(|c| c as Arc<dyn ValueCertificate>),
                ValueMode::WorstCase => member
                    .worst_case
                    .clone()
                    .map(|c| c as Arc<dyn ValueCertificate>),
            };
            certs.push(cert.ok_or_else(|| PolicyError::MissingCertificate {
                index,
                label: member.label(),
                kind: match mode {
                    ValueMode::Plain => "stability",
                    ValueMode::WorstCase => "worst-case",
                },
            })?);
        }
        let r_max = class.space().r_max;
        let tracker = MixtureTracker::new(&class);
        Ok(Self {
            class,
            certs,
            mode,
            r_max,
            tracker,
            own: History::new(),
            state: SelfOptState::initial(),
            acting: None,
            ref_t: None,
            ref_e: None,
            pending: None,
            last_phase: Phase::SelectT,
            events: Vec::new(),
        })
    }

    pub fn state(&self) -> &SelfOptState {
        &self.state
    }

    pub fn events(&self) -> &[PhaseEvent] {
        &self.events
    }

    fn reset(&mut self) {
        self.tracker = MixtureTracker::new(&self.class);
        self.own = History::new();
        self.state = SelfOptState::initial();
        self.acting = None;
        self.ref_t = None;
        self.ref_e = None;
        self.pending = None;
        self.last_phase = Phase::SelectT;
        self.events.clear();
    }

    fn extends_own(&self, history: &History) -> bool {
        let n = self.own.len();
        n <= history.len() && (n == 0 || self.own.steps()[n - 1] == history.steps()[n - 1])
    }

    fn log(&mut self, kind: EventKind) {
        self.events.push(PhaseEvent {
            step: self.own.len() as u64,
            s: self.state.s,
            n: self.state.n,
            kind,
        });
    }

    fn consistent(&self, index: usize) -> bool {
        self.tracker
            .state()
            .is_consistent_log(index, self.state.log_alpha())
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

    fn act(&mut self) -> Result<ActionId, PolicyError> {
        self.last_phase = self.state.phase;
        let policy = self
            .acting
            .as_mut()
            .expect("acting policy set before acting");
        policy.next_action(&self.own)
    }

    fn recovery(&self, index: usize) -> Box<dyn Policy> {
        self.certs[index].recovery_policy(&self.own)
    }

    fn value(&self, index: usize) -> f64 {
        self.certs[index].value(&self.own)
    }

    fn decide(&mut self) -> Result<ActionId, PolicyError> {
        let t = self.own.len() as u64;
        if let Some(nt) = self.state.nu_t {
            if !self.consistent(nt) {
                self.log(EventKind::IncrementS {
                    reason: "nu_t left T",
                });
                self.state.s += 1;
                self.state.nu_t = None;
                self.state.phase = Phase::SelectT;
            }
        }
        let guard = 4 * self.class.len() + 16;
        for _ in 0..guard {
            match self.state.phase {
                Phase::SelectT => {
                    self.select_t()?;
                    self.state.phase = Phase::SelectE;
                }
                Phase::SelectE => {
                    if self.select_e() {
                        self.loop_start();
                        self.state.phase = Phase::PrepareK;
                    } else {
                        return self.act();
                    }
                }
                Phase::PrepareK => {
                    self.prepare()?;
                    self.state.phase = Phase::RunToK;
                }
                Phase::RunToK => {
                    if t < self.state.k {
                        return self.act();
                    }
                    let nu_e = self.state.nu_e.expect("nu_e set before exploring");
                    self.acting = Some(self.recovery(nu_e));
                    self.state.explore_len = 0;
                    self.log(EventKind::ExploreStart { k: self.state.k });
                    self.state.phase = Phase::Explore;
                }
                Phase::Explore => match self.explore_exit(t) {
                    None => {
                        self.state.explore_len += 1;
                        return self.act();
                    }
                    Some(exit) => {
                        self.log(EventKind::ExploreEnd {
                            exit,
                            length: self.state.explore_len,
                        });
                        let nu_e = self.state.nu_e.expect("nu_e set while exploring");
                        if self.consistent(nu_e) {
                            self.state.phase = Phase::PrepareK;
                        } else {
                            self.state.nu_e = None;
                            let nu_t = self.state.nu_t.expect("nu_t set while exploring");
                            self.acting = Some(self.recovery(nu_t));
                            self.state.phase = Phase::SelectE;
                        }
                    }
                },
            }
        }
        Err(PolicyError::PhaseLoop { step: t })
    }

    fn select_t(&mut self) -> Result<(), PolicyError> {
        let n = self.class.len() as u64;
        if self
            .tracker
            .state()
            .per_env_loglik
            .iter()
            .all(|l| *l == f64::NEG_INFINITY)
        {
            return Err(PolicyError::ClassExhausted);
        }
        loop {
            let found = (self.state.j_t..self.state.j_t + n)
                .find(|&pos| self.consistent(self.class.enumeration(pos)));
            if let Some(pos) = found {
                let nu_t = self.class.enumeration(pos);
                self.state.j_t = pos + 1;
                self.state.nu_t = Some(nu_t);
                self.state.nu_e = None;
                self.acting = Some(self.recovery(nu_t));
                self.log(EventKind::SelectT { nu_t });
                return Ok(());
            }
            // unreachable while some member is finite: max nu/xi >= 1
            self.log(EventKind::IncrementS { reason: "T empty" });
            self.state.s += 1;
        }
    }

    fn select_e(&mut self) -> bool {
        let nu_t = self.state.nu_t.expect("nu_t set before nu_e");
        let v_t = self.value(nu_t);
        let n = self.class.len() as u64;
        let loglik = &self.tracker.state().per_env_loglik;
        let found = (self.state.j_e..self.state.j_e + n).find(|&pos| {
            let i = self.class.enumeration(pos);
            loglik[i].is_finite() && self.value(i) > v_t + VALUE_TOL
        });
        match found {
            Some(pos) => {
                let nu_e = self.class.enumeration(pos);
                self.state.j_e = pos + 1;
                self.state.nu_e = Some(nu_e);
                self.log(EventKind::SelectE { nu_e });
                true
            }
            None => false,
        }
    }

    fn loop_start(&mut self) {
        let (nu_t, nu_e) = (self.state.nu_t.unwrap(), self.state.nu_e.unwrap());
        self.state.n += 1;
        let mut delta = (self.value(nu_e) - self.value(nu_t)) / 2.0;
        let eps = self.certs[nu_t].epsilon_schedule().eval(self.state.n);
        if eps < delta {
            delta = eps;
        }
        self.state.delta = delta;
        self.state.eps = eps;
        self.state.h = self.state.j_e;
        self.log(EventKind::LoopStart { delta, eps });
    }

    fn prepare(&mut self) -> Result<(), PolicyError> {
        let nu_t = self.state.nu_t.unwrap();
        self.state.h += 1;
        self.acting = Some(self.recovery(nu_t));
        self.state.i_h = self.own.len() as u64;
        let (k, thresholds) = self.compute_k()?;
        self.state.k = k;
        self.state.thresholds = thresholds;
        self.log(EventKind::Prepare {
            h: self.state.h,
            k,
            thresholds,
        });
        Ok(())
    }

    /// Thresholds `k1..k4` and the exploration start `k`.
    fn compute_k(&mut self) -> Result<(u64, [u64; 4]), PolicyError> {
        let (nu_t, nu_e) = (self.state.nu_t.unwrap(), self.state.nu_e.unwrap());
        let ct = self.certs[nu_t].clone();
        let ce = self.certs[nu_e].clone();
        let v_t = ct.value(&self.own);
        let ref_t = ct.reference(&self.own);
        let ref_e = ce.reference(&self.own);
        let eps = self.state.eps;
        let i_h = self.state.i_h;
        let i = i_h as f64;

        // i_h V_t / k1 <= eps/8
        let k1 = to_u64((8.0 * i * v_t / eps).ceil());

        // window averages of nu_t's reference from i_h on stay within eps/8
        // of V_t, via |cumsum(m)/m - V_t| <= eps/32 for m >= M and m > 2 i_h
        let modulus = ref_t.convergence_time(v_t, eps / 32.0);
        let offset = (ref_t.cumsum(i_h) - i * v_t).abs();
        let k2 = (2 * i_h + 1)
            .max(modulus)
            .max(i_h.saturating_add(to_u64((16.0 * offset / eps).ceil())));

        // h r_max / k3 < eps/8
        let k3 = to_u64((8.0 * self.state.h as f64 * self.r_max / eps).floor()).saturating_add(1);

        let mut k4 = to_u64((8.0 * ct.loss().eval(i_h, eps / 8.0) / eps).ceil());
        for (which, threshold) in [
            ("d_e(m, eps/4)/m", ce.loss().sublinear_threshold(eps / 8.0)),
            ("d_t(m, eps/8)/m", ct.loss().sublinear_threshold(eps / 8.0)),
        ] {
            match threshold {
                Some(m) => k4 = k4.max(m),
                None => self.log(EventKind::DroppedTerm { which }),
            }
        }

        let thresholds = [k1, k2, k3, k4];
        let from = thresholds.iter().copied().max().unwrap().saturating_add(1);
        let k = search_k(&ref_t, &ref_e, self.state.delta, from, K_SEARCH_CAP)?;
        self.ref_t = Some(ref_t);
        self.ref_e = Some(ref_e);
        Ok((k, thresholds))
    }

    /// The first failing continuation condition at step `t`, if any.
    fn explore_exit(&self, t: u64) -> Option<ExploreExit> {
        let nu_e = self.state.nu_e.unwrap();
        let in_t = self.consistent(nu_e);
        if self.state.explore_len < self.state.h {
            return (!in_t).then_some(ExploreExit::Inconsistent);
        }
        let k = self.state.k;
        let eps = self.state.eps;
        let reference = self.ref_e.as_ref().expect("reference set at prepare");
        let gap = (reference.window(k, t) - self.own.reward_sum(k as usize, t as usize)).abs();
        let bound = (t - k) as f64 * eps / 4.0 + self.certs[nu_e].loss().eval(k, eps / 4.0);
        if !(gap < bound) {
            Some(ExploreExit::Deviation)
        } else if t >= 3 * k {
            Some(ExploreExit::Deadline)
        } else if !in_t {
            Some(ExploreExit::Inconsistent)
        } else {
            None
        }
    }
}

fn to_u64(x: f64) -> u64 {
    if x.is_nan() || x <= 0.0 {
        0
    } else if x >= u64::MAX as f64 {
        u64::MAX
    } else {
        x as u64
    }
}

/// First `k >= from` with `ref_e[k..3k) >= ref_t[k..3k) + 2k delta`. Once
/// both references are past their tables the condition no longer depends
/// on `k`, so the scan stops there.
fn search_k(
    ref_t: &ReferenceRewards,
    ref_e: &ReferenceRewards,
    delta: f64,
    from: u64,
    cap: u64,
) -> Result<u64, PolicyError> {
    let exhausted = PolicyError::KSearchExhausted { from, cap };
    let settled = ref_t.table_len().max(ref_e.table_len());
    let mut k = from.max(1);
    while k <= cap {
        let span = 2.0 * k as f64;
        let lhs = ref_e.window(k, 3 * k);
        let rhs = ref_t.window(k, 3 * k) + span * delta;
        if lhs >= rhs - 1e-9 * span {
            return Ok(k);
        }
        if k > settled {
            return Err(exhausted);
        }
        k += 1;
    }
    Err(exhausted)
}

impl Policy for SelfOptimizingPolicy {
    fn next_action(&mut self, history: &History) -> Result<ActionId, PolicyError> {
        if !self.extends_own(history) {
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
            ValueMode::Plain => "self_opt".into(),
            ValueMode::WorstCase => "worst_case_vs".into(),
        }
    }

    fn trace(&self) -> Option<PolicyTrace> {
        Some(PolicyTrace {
            phase: self.last_phase.name().to_string(),
            s: self.state.s,
            n: self.state.n,
            nu_t: self.state.nu_t,
            nu_e: self.state.nu_e,
            log_ratios: self.tracker.state().log_ratios(),
        })
    }
}
