//! Value-stability, recoverability and worst-case declarations.
//!
//! Certificates are supplied by environment authors. The stability data
//! (reference rewards, recovery loss `d(k, eps)`, violation bound
//! `phi(n, eps)`, epsilon schedule) is consumed by the learning policies and
//! checked statistically by [`crate::checkers`].

use std::fmt;
use std::sync::Arc;

use crate::sim::{Environment, History, Policy};

/// Builds the recovery policy for a given history prefix.
pub type PolicyFactory = Arc<dyn Fn(&History) -> Box<dyn Policy> + Send + Sync>;
/// Builds a policy that acts optimally from the first step.
pub type BeginPolicyFactory = Arc<dyn Fn() -> Box<dyn Policy> + Send + Sync>;
/// Optimal value conditional on a history.
pub type ConditionalValue = Arc<dyn Fn(&History) -> f64 + Send + Sync>;
/// Reference rewards conditional on a history.
pub type ConditionalReference = Arc<dyn Fn(&History) -> Arc<ReferenceRewards> + Send + Sync>;

/// Values closer than this are treated as equal.
pub const VALUE_TOL: f64 = 1e-9;

/// The recovery-loss bound `d(k, eps)`. None of the zoo bounds depend on `eps`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RecoveryLoss {
    Zero,
    Constant(f64),
    /// `scale * sqrt(k) + offset`
    Sqrt {
        scale: f64,
        offset: f64,
    },
    /// `scale * k`
    Linear(f64),
}

impl RecoveryLoss {
    pub fn eval(&self, k: u64, _eps: f64) -> f64 {
        let k = k as f64;
        match *self {
            RecoveryLoss::Zero => 0.0,
            RecoveryLoss::Constant(c) => c,
            RecoveryLoss::Sqrt { scale, offset } => scale * k.sqrt() + offset,
            RecoveryLoss::Linear(scale) => scale * k,
        }
    }

    /// Smallest `m0` with `eval(m)/m <= ratio` for every `m >= m0`, or `None`
    /// when no such `m0` exists.
    pub fn sublinear_threshold(&self, ratio: f64) -> Option<u64> {
        if ratio <= 0.0 {
            return match self {
                RecoveryLoss::Zero => Some(0),
                _ => None,
            };
        }
        match *self {
            RecoveryLoss::Zero => Some(0),
            RecoveryLoss::Constant(c) => Some((c.max(0.0) / ratio).ceil() as u64),
            RecoveryLoss::Sqrt { scale, offset } => {
                // scale * x + offset <= ratio * x^2 with x = sqrt(m)
                let offset = offset.max(0.0);
                let x = (scale + (scale * scale + 4.0 * ratio * offset).sqrt()) / (2.0 * ratio);
                Some((x * x).ceil() as u64)
            }
            RecoveryLoss::Linear(scale) => (scale <= ratio).then_some(0),
        }
    }
}

/// The violation-probability bound `phi(n, eps)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ViolationBound {
    Zero,
    /// `min(1, scale * exp(-rate * n * eps^2))`
    Exponential {
        scale: f64,
        rate: f64,
    },
    /// `min(1, scale / n)`; not summable, used to exercise the validator.
    Harmonic {
        scale: f64,
    },
}

impl ViolationBound {
    pub fn eval(&self, n: u64, eps: f64) -> f64 {
        let n = n as f64;
        match *self {
            ViolationBound::Zero => 0.0,
            ViolationBound::Exponential { scale, rate } => {
                (scale * (-rate * n * eps * eps).exp()).min(1.0)
            }
            ViolationBound::Harmonic { scale } => (scale / n.max(1.0)).min(1.0),
        }
    }
}

/// The per-environment sequence `eps_n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EpsilonSchedule {
    /// `scale * n^(-exponent)`
    PowerLaw { scale: f64, exponent: f64 },
    /// `min(cap, sqrt((ln scale + 2 ln n) / (rate n)))`, chosen so that an
    /// exponential violation bound with the same `scale` and `rate` gives
    /// `phi(n, eps_n) <= 1/n^2`.
    Matched { scale: f64, rate: f64, cap: f64 },
}

impl EpsilonSchedule {
    pub fn eval(&self, n: u64) -> f64 {
        let n = (n.max(1)) as f64;
        match *self {
            EpsilonSchedule::PowerLaw { scale, exponent } => scale * n.powf(-exponent),
            EpsilonSchedule::Matched { scale, rate, cap } => {
                let num = scale.max(1.0).ln() + 2.0 * n.ln();
                (num / (rate * n)).sqrt().min(cap)
            }
        }
    }

    /// Schedule paired with [`ViolationBound::Exponential`] of the same constants.
    pub fn matched(bound: &ViolationBound, cap: f64) -> Self {
        match *bound {
            ViolationBound::Exponential { scale, rate } => {
                EpsilonSchedule::Matched { scale, rate, cap }
            }
            _ => EpsilonSchedule::PowerLaw {
                scale: cap,
                exponent: 0.5,
            },
        }
    }
}

/// Cumulative reference rewards: an explicit table followed by a constant
/// per-step tail rate.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceRewards {
    /// `prefix[i]` is the sum of the first `i` reference rewards.
    prefix: Vec<f64>,
    tail_rate: f64,
}

impl ReferenceRewards {
    pub fn constant(rate: f64) -> Self {
        Self {
            prefix: vec![0.0],
            tail_rate: rate,
        }
    }

    pub fn from_rewards(rewards: &[f64], tail_rate: f64) -> Self {
        let mut prefix = Vec::with_capacity(rewards.len() + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for r in rewards {
            acc += r;
            prefix.push(acc);
        }
        Self { prefix, tail_rate }
    }

    pub fn table_len(&self) -> u64 {
        (self.prefix.len() - 1) as u64
    }

    pub fn limit(&self) -> f64 {
        self.tail_rate
    }

    /// Sum of the first `n` reference rewards.
    pub fn cumsum(&self, n: u64) -> f64 {
        let len = self.table_len();
        if n <= len {
            self.prefix[n as usize]
        } else {
            self.prefix[len as usize] + self.tail_rate * (n - len) as f64
        }
    }

    /// Reference reward of step `i` (zero-based).
    pub fn reward(&self, i: u64) -> f64 {
        self.cumsum(i + 1) - self.cumsum(i)
    }

    /// Sum of reference rewards of steps `from..to`.
    pub fn window(&self, from: u64, to: u64) -> f64 {
        self.cumsum(to) - self.cumsum(from)
    }

    /// Smallest `M >= 1` such that `|cumsum(m)/m - target| <= eps` for all
    /// `m >= M`; `u64::MAX` if the averages do not converge to `target`.
    pub fn convergence_time(&self, target: f64, eps: f64) -> u64 {
        if (self.tail_rate - target).abs() > VALUE_TOL || eps <= 0.0 {
            return u64::MAX;
        }
        let len = self.table_len();
        // beyond the table the deviation is |excess| / m
        let excess = self.prefix[len as usize] - target * len as f64;
        let mut threshold = ((excess.abs() / eps) * (1.0 - 1e-12)).ceil().max(1.0) as u64;
        if threshold <= len {
            threshold = 1;
        }
        for m in (1..=len).rev() {
            if (self.prefix[m as usize] / m as f64 - target).abs() > eps {
                threshold = threshold.max(m + 1);
                break;
            }
        }
        threshold.max(1)
    }
}

/// Value-stability declaration of an explorable environment.
#[derive(Clone)]
pub struct StabilityCertificate {
    pub optimal_value: f64,
    pub r_max: f64,
    pub reference: Arc<ReferenceRewards>,
    pub loss: RecoveryLoss,
    pub violation: ViolationBound,
    pub epsilon: EpsilonSchedule,
    pub recovery: PolicyFactory,
    pub begin_optimal: BeginPolicyFactory,
}

impl fmt::Debug for StabilityCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StabilityCertificate")
            .field("optimal_value", &self.optimal_value)
            .field("r_max", &self.r_max)
            .field("reference_limit", &self.reference.limit())
            .field("loss", &self.loss)
            .field("violation", &self.violation)
            .field("epsilon", &self.epsilon)
            .finish_non_exhaustive()
    }
}

impl StabilityCertificate {
    pub fn reference_cumsum(&self, n: u64) -> f64 {
        self.reference.cumsum(n)
    }

    pub fn d(&self, k: u64, eps: f64) -> f64 {
        self.loss.eval(k, eps)
    }

    pub fn phi(&self, n: u64, eps: f64) -> f64 {
        self.violation.eval(n, eps)
    }

    pub fn epsilon_schedule(&self, n: u64) -> f64 {
        self.epsilon.eval(n)
    }

    pub fn convergence_time(&self, eps: f64) -> u64 {
        self.reference.convergence_time(self.optimal_value, eps)
    }

    pub fn recovery_policy(&self, history: &History) -> Box<dyn Policy> {
        (self.recovery)(history)
    }

    pub fn begin_optimal_policy(&self) -> Box<dyn Policy> {
        (self.begin_optimal)()
    }
}

/// Recoverability declaration of an upper explorable environment.
#[derive(Clone)]
pub struct RecoverabilityCertificate {
    pub upper_optimal_value: f64,
    pub recovery: PolicyFactory,
}

impl fmt::Debug for RecoverabilityCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RecoverabilityCertificate")
            .field("upper_optimal_value", &self.upper_optimal_value)
            .finish_non_exhaustive()
    }
}

impl RecoverabilityCertificate {
    pub fn recovery_policy(&self, history: &History) -> Box<dyn Policy> {
        (self.recovery)(history)
    }
}

/// Worst-case value-stability declaration of a strongly explorable
/// environment. All values and references are conditional on the history.
#[derive(Clone)]
pub struct WorstCaseCertificate {
    pub worst_value: f64,
    pub r_max: f64,
    pub conditional: ConditionalValue,
    pub conditional_reference: ConditionalReference,
    pub conditional_recovery: PolicyFactory,
    pub loss: RecoveryLoss,
    pub violation: ViolationBound,
    pub epsilon: EpsilonSchedule,
}

impl fmt::Debug for WorstCaseCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("WorstCaseCertificate")
            .field("worst_value", &self.worst_value)
            .field("loss", &self.loss)
            .field("violation", &self.violation)
            .field("epsilon", &self.epsilon)
            .finish_non_exhaustive()
    }
}

impl WorstCaseCertificate {
    /// For a value-stable environment the conditional value is constant.
    pub fn from_stability(cert: &StabilityCertificate) -> Self {
        let value = cert.optimal_value;
        let reference = cert.reference.clone();
        Self {
            worst_value: value,
            r_max: cert.r_max,
            conditional: Arc::new(move |_| value),
            conditional_reference: Arc::new(move |_| reference.clone()),
            conditional_recovery: cert.recovery.clone(),
            loss: cert.loss,
            violation: cert.violation,
            epsilon: cert.epsilon,
        }
    }

    pub fn conditional_value(&self, history: &History) -> f64 {
        (self.conditional)(history)
    }
}

/// Read access shared by the stability and worst-case certificates, as used
/// by the exploit/explore policy.
pub trait ValueCertificate: Send + Sync {
    fn value(&self, history: &History) -> f64;
    fn reference(&self, history: &History) -> Arc<ReferenceRewards>;
    fn loss(&self) -> &RecoveryLoss;
    fn epsilon_schedule(&self) -> &EpsilonSchedule;
    fn recovery_policy(&self, history: &History) -> Box<dyn Policy>;
}

impl ValueCertificate for StabilityCertificate {
    fn value(&self, _history: &History) -> f64 {
        self.optimal_value
    }
    fn reference(&self, _history: &History) -> Arc<ReferenceRewards> {
        self.reference.clone()
    }
    fn loss(&self) -> &RecoveryLoss {
        &self.loss
    }
    fn epsilon_schedule(&self) -> &EpsilonSchedule {
        &self.epsilon
    }
    fn recovery_policy(&self, history: &History) -> Box<dyn Policy> {
        (self.recovery)(history)
    }
}

impl ValueCertificate for WorstCaseCertificate {
    fn value(&self, history: &History) -> f64 {
        (self.conditional)(history)
    }
    fn reference(&self, history: &History) -> Arc<ReferenceRewards> {
        (self.conditional_reference)(history)
    }
    fn loss(&self) -> &RecoveryLoss {
        &self.loss
    }
    fn epsilon_schedule(&self) -> &EpsilonSchedule {
        &self.epsilon
    }
    fn recovery_policy(&self, history: &History) -> Box<dyn Policy> {
        (self.conditional_recovery)(history)
    }
}

/// Read access used by the round-robin upper policy.
pub trait UpperCertificate: Send + Sync {
    fn upper_value(&self, history: &History) -> f64;
    fn recovery_policy(&self, history: &History) -> Box<dyn Policy>;
}

impl UpperCertificate for RecoverabilityCertificate {
    fn upper_value(&self, _history: &History) -> f64 {
        self.upper_optimal_value
    }
    fn recovery_policy(&self, history: &History) -> Box<dyn Policy> {
        (self.recovery)(history)
    }
}

impl UpperCertificate for WorstCaseCertificate {
    fn upper_value(&self, history: &History) -> f64 {
        (self.conditional)(history)
    }
    fn recovery_policy(&self, history: &History) -> Box<dyn Policy> {
        (self.conditional_recovery)(history)
    }
}

/// An environment together with whatever certificates it ships.
#[derive(Clone)]
pub struct CertifiedEnv {
    pub env: Arc<dyn Environment>,
    pub stability: Option<Arc<StabilityCertificate>>,
    pub recoverability: Option<Arc<RecoverabilityCertificate>>,
    pub worst_case: Option<Arc<WorstCaseCertificate>>,
}

impl fmt::Debug for CertifiedEnv {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CertifiedEnv")
            .field("label", &self.env.label())
            .field("stability", &self.stability)
            .field("recoverability", &self.recoverability)
            .field("worst_case", &self.worst_case)
            .finish()
    }
}

impl CertifiedEnv {
    pub fn new(env: Arc<dyn Environment>) -> Self {
        Self {
            env,
            stability: None,
            recoverability: None,
            worst_case: None,
        }
    }

    /// Attach a stability certificate. A value-stable environment is also
    /// recoverable and worst-case value-stable with constant conditional
    /// value; those certificates are derived unless already present.
    pub fn with_stability(mut self, cert: StabilityCertificate) -> Self {
        if self.recoverability.is_none() {
            self.recoverability = Some(Arc::new(RecoverabilityCertificate {
                upper_optimal_value: cert.optimal_value,
                recovery: cert.recovery.clone(),
            }));
        }
        if self.worst_case.is_none() {
            self.worst_case = Some(Arc::new(WorstCaseCertificate::from_stability(&cert)));
        }
        self.stability = Some(Arc::new(cert));
        self
    }

    pub fn with_recoverability(mut self, cert: RecoverabilityCertificate) -> Self {
        self.recoverability = Some(Arc::new(cert));
        self
    }

    pub fn with_worst_case(mut self, cert: WorstCaseCertificate) -> Self {
        self.worst_case = Some(Arc::new(cert));
        self
    }

    pub fn label(&self) -> String {
        self.env.label()
    }
}

/// Runs the shape checks on a stability certificate. An empty result means
/// every check passed.
pub fn validate_certificate_shape(cert: &StabilityCertificate) -> Vec<String> {
    let mut violations = Vec::new();
    let reference = &cert.reference;

    if reference.cumsum(0) != 0.0 {
        violations.push("reference_cumsum(0) is not 0".to_string());
    }
    let scan = reference.table_len() + 2;
    for i in 0..scan {
        let r = reference.reward(i);
        if !(-1e-12..=cert.r_max + 1e-12).contains(&r) {
            violations.push(format!(
                "reference increment {r} at step {i} outside [0, {}]",
                cert.r_max
            ));
            break;
        }
    }

    for eps in [0.1, 0.05, 0.01] {
        let m0 = cert.convergence_time(eps);
        if m0 == u64::MAX {
            violations.push(format!("convergence_time({eps}) undefined"));
            continue;
        }
        for m in [m0, 2 * m0, 10 * m0] {
            let dev = (reference.cumsum(m) / m as f64 - cert.optimal_value).abs();
            if dev > eps + 1e-12 {
                violations.push(format!(
                    "convergence_time({eps}) = {m0} but deviation at {m} is {dev}"
                ));
            }
        }
    }

    if !(cert.epsilon_schedule(1_000_000) < cert.epsilon_schedule(10)) {
        violations.push("epsilon schedule does not decrease".to_string());
    }

    if cert.d(1_000_000, 0.1) / 1e6 >= 0.01 {
        violations.push("d not o(k)".to_string());
    }

    let sums = phi_partial_sums(cert, &[1_000, 10_000, 100_000]);
    if sums[2] - sums[1] >= 0.01 {
        violations.push(format!(
            "phi not summable (partial sums {:.4}, {:.4}, {:.4})",
            sums[0], sums[1], sums[2]
        ));
    }
    violations
}

/// Partial sums of `phi(n, eps_n)` at increasing checkpoints.
pub fn phi_partial_sums(cert: &StabilityCertificate, checkpoints: &[u64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(checkpoints.len());
    let mut acc = 0.0;
    let mut n = 1;
    for &cp in checkpoints {
        while n <= cp {
            acc += cert.phi(n, cert.epsilon_schedule(n));
            n += 1;
        }
        out.push(acc);
    }
    out
}
