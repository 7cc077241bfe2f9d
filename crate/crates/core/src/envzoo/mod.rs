//! Certified environment families and their JSON specs.

pub mod bandit;
pub mod mdp;
pub mod necessity;
pub mod sequence;
pub mod trap;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::certificates::CertifiedEnv;
use crate::error::ZooError;

pub use bandit::{BanditChainSpec, DownJump};
pub use mdp::{MdpModel, MdpSolution, MdpSpec, PhiConstants};
pub use necessity::{DeclaredLoss, NecessitySpec};
pub use sequence::{Sequence, SequencePredictionSpec};
pub use trap::TrapSpec;

/// A serialized environment description, tagged by `kind`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    Mdp(MdpSpec),
    BanditChain(BanditChainSpec),
    SequencePrediction(SequencePredictionSpec),
    Necessity(NecessitySpec),
    Trap(TrapSpec),
}

/// Registered environment kinds, sorted.
pub const ENV_KINDS: [&str; 5] = [
    "bandit_chain",
    "mdp",
    "necessity",
    "sequence_prediction",
    "trap",
];

impl EnvSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            EnvSpec::Mdp(_) => "mdp",
            EnvSpec::BanditChain(_) => "bandit_chain",
            EnvSpec::SequencePrediction(_) => "sequence_prediction",
            EnvSpec::Necessity(_) => "necessity",
            EnvSpec::Trap(_) => "trap",
        }
    }

    pub fn name(&self) -> Option<&str> {
        match self {
            EnvSpec::Mdp(s) => s.name.as_deref(),
            EnvSpec::BanditChain(s) => s.name.as_deref(),
            EnvSpec::SequencePrediction(s) => s.name.as_deref(),
            EnvSpec::Necessity(s) => s.name.as_deref(),
            EnvSpec::Trap(s) => s.name.as_deref(),
        }
    }

    /// The explicit name, or a label derived from the kind.
    pub fn label(&self) -> String {
        if let Some(name) = self.name() {
            return name.to_string();
        }
        match self {
            EnvSpec::Necessity(s) => format!("necessity(s={})", s.s),
            other => other.kind().to_string(),
        }
    }

    pub fn build(&self) -> Result<CertifiedEnv, ZooError> {
        let label = self.label();
        Ok(match self {
            EnvSpec::Mdp(spec) => {
                let model = Arc::new(MdpModel::from_spec(spec)?);
                let solution = model.solve()?;
                let cert = model.certificate(&solution, spec.phi.as_ref(), 0);
                let env = mdp::MdpEnv::new(model, label);
                CertifiedEnv::new(Arc::new(env)).with_stability(cert)
            }
            EnvSpec::BanditChain(spec) => {
                let (env, stability, rec) = bandit::build(spec, label)?;
                let mut out = CertifiedEnv::new(Arc::new(env)).with_recoverability(rec);
                if let Some(cert) = stability {
                    out = out.with_stability(cert);
                }
                out
            }
            EnvSpec::SequencePrediction(spec) => {
                let (env, cert) = sequence::build(spec, label)?;
                CertifiedEnv::new(Arc::new(env)).with_stability(cert)
            }
            EnvSpec::Necessity(spec) => {
                let env = necessity::NecessityEnv::new(spec.s, label);
                let cert = necessity::certificate(spec.s, spec.declared_loss);
                CertifiedEnv::new(Arc::new(env)).with_stability(cert)
            }
            EnvSpec::Trap(spec) => {
                let (env, worst, claimed) = trap::build(spec, label)?;
                CertifiedEnv::new(Arc::new(env))
                    .with_worst_case(worst)
                    .with_recoverability(claimed)
            }
        })
    }
}
