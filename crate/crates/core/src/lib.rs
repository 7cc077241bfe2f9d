//! Self-optimizing reinforcement-learning policies for countable classes of
//! history-dependent environments.
//!
//! The crate is organised around a small number of layers:
//!
//! - [`sim`]: histories, the [`Environment`] and [`Policy`] interfaces and the
//!   seeded agent/environment loop.
//! - [`certificates`]: explicit value-stability, recoverability and worst-case
//!   declarations that environments ship with.
//! - [`mixture`]: the weighted class, the Bayesian mixture over it and the
//!   likelihood-ratio consistency set.
//! - [`policies`]: the exploit/explore phase machine, the round-robin upper
//!   policy, their worst-case variants and simple baselines.
//! - [`envzoo`]: certified environment families (ergodic MDPs, the infinitely
//!   armed bandit chain, sequence prediction, the necessity family, traps).
//! - [`checkers`]: Monte Carlo validation of certificates and demonstrations.
//!
//! Everything is deterministic given a seed: one uniform draw per simulated
//! step, inverse-CDF sampling over the exact percept distribution.

pub mod certificates;
pub mod checkers;
pub mod envzoo;
pub mod error;
pub mod mixture;
pub mod policies;
pub mod sim;

pub use certificates::{
    CertifiedEnv, RecoverabilityCertificate, StabilityCertificate, WorstCaseCertificate,
};
pub use error::{PolicyError, SimError, ZooError};
pub use mixture::{MixtureState, WeightedClass};
pub use sim::{
    simulate, ActionId, EnvCursor, Environment, History, Percept, Policy, SpaceSpec, StepRecord,
    Trajectory,
};
