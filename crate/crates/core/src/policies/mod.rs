//! Learning policies and baselines.

mod baselines;
mod self_opt;
mod upper;

pub use baselines::{
    informed_optimal, ConstantPolicy, PrefixPolicy, SchedulePolicy, UniformRandomPolicy,
};
pub use self_opt::{
    EventKind, ExploreExit, Phase, PhaseEvent, SelfOptState, SelfOptimizingPolicy, K_SEARCH_CAP,
};
pub use upper::{UpperSelfOptState, UpperSelfOptimizingPolicy};

/// Which certified values a learning policy reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueMode {
    /// Unconditional optimal values `V*` or `upper V*`.
    Plain,
    /// Values conditional on the current history, re-read every step.
    WorstCase,
}

/// Registered policy kinds, sorted. `always:<action>` takes an argument.
pub const POLICY_KINDS: [&str; 7] = [
    "always:<action>",
    "informed",
    "random",
    "self_opt",
    "upper_self_opt",
    "worst_case_upper",
    "worst_case_vs",
];
