use thiserror::Error;

/// Failures raised by policies while choosing an action.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("recovery-horizon search exhausted (scanned k in [{from}, {cap}])")]
    KSearchExhausted { from: u64, cap: u64 },
    #[error("class member {index} ({label}) lacks a {kind} certificate")]
    MissingCertificate {
        index: usize,
        label: String,
        kind: &'static str,
    },
    #[error("every class member is inconsistent with the history")]
    ClassExhausted,
    #[error("phase machine did not settle on an action at step {step}")]
    PhaseLoop { step: u64 },
}

/// Failures of the simulation loop and history accessors.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("horizon must be at least 1")]
    ZeroHorizon,
    #[error("step {step}: malformed percept distribution: {reason}")]
    MalformedDistribution { step: usize, reason: String },
    #[error("step {step}: {source}")]
    Policy {
        step: usize,
        #[source]
        source: PolicyError,
    },
    #[error("reward range [{from}, {to}) is invalid for a history of length {len}")]
    Range { from: usize, to: usize, len: usize },
    #[error("trajectory does not match environment: {0}")]
    SpecMismatch(String),
    #[error("invalid space: {0}")]
    InvalidSpace(String),
}

/// Failures while validating or building zoo environments.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ZooError {
    #[error("malformed spec: {0}")]
    Malformed(String),
    #[error("MDP is not ergodic: state {from} cannot reach state {to} under the uniform policy")]
    NotErgodic { from: usize, to: usize },
    #[error(
        "average-reward solver did not converge after {iterations} iterations (span {span:e})"
    )]
    SolverDiverged { iterations: usize, span: f64 },
    #[error(transparent)]
    Space(#[from] SimError),
}
