//! Next-symbol prediction of a fixed deterministic sequence.
//!
//! At step `t` the agent names a symbol; the reward is 1 iff it equals
//! `sequence(t)`, and the observation reveals `sequence(t)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::certificates::{
    EpsilonSchedule, RecoveryLoss, ReferenceRewards, StabilityCertificate, ViolationBound,
};
use crate::error::{PolicyError, ZooError};
use crate::sim::{
    ActionId, EnvCursor, Environment, History, Percept, Policy, SpaceSpec, StepRecord,
};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Sequence {
    /// Repeats `pattern` forever.
    Periodic { pattern: Vec<usize> },
    /// `popcount(t) mod 2`.
    ThueMorse,
}

impl Sequence {
    pub fn symbol(&self, t: u64) -> usize {
        match self {
            Sequence::Periodic { pattern } => pattern[(t % pattern.len() as u64) as usize],
            Sequence::ThueMorse => (t.count_ones() % 2) as usize,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequencePredictionSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub alphabet: usize,
    pub sequence: Sequence,
}

impl SequencePredictionSpec {
    pub fn validate(&self) -> Result<(), ZooError> {
        if self.alphabet == 0 {
            return Err(ZooError::Malformed("alphabet must be non-empty".into()));
        }
        match &self.sequence {
            Sequence::Periodic { pattern } => {
                if pattern.is_empty() {
                    return Err(ZooError::Malformed("periodic pattern is empty".into()));
                }
                if pattern.iter().any(|&s| s >= self.alphabet) {
                    return Err(ZooError::Malformed(
                        "pattern symbol outside alphabet".into(),
                    ));
                }
            }
            Sequence::ThueMorse => {
                if self.alphabet < 2 {
                    return Err(ZooError::Malformed(
                        "Thue-Morse needs a binary alphabet".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug)]
pub struct SequenceEnv {
    sequence: Arc<Sequence>,
    alphabet: usize,
    space: SpaceSpec,
    label: String,
}

pub fn build(
    spec: &SequencePredictionSpec,
    label: String,
) -> Result<(SequenceEnv, StabilityCertificate), ZooError> {
    spec.validate()?;
    let sequence = Arc::new(spec.sequence.clone());
    let env = SequenceEnv {
        sequence: sequence.clone(),
        alphabet: spec.alphabet,
        space: SpaceSpec::new(spec.alphabet, spec.alphabet, vec![0.0, 1.0], 1.0)?,
        label,
    };
    let predictor = Predictor { sequence };
    let begin = predictor.clone();
    let cert = StabilityCertificate {
        optimal_value: 1.0,
        r_max: 1.0,
        reference: Arc::new(ReferenceRewards::constant(1.0)),
        loss: RecoveryLoss::Constant(1.0),
        violation: ViolationBound::Zero,
        epsilon: EpsilonSchedule::PowerLaw {
            scale: 0.5,
            exponent: 0.5,
        },
        recovery: Arc::new(move |_| Box::new(predictor.clone())),
        begin_optimal: Arc::new(move || Box::new(begin.clone())),
    };
    Ok((env, cert))
}

struct SequenceCursor {
    sequence: Arc<Sequence>,
    alphabet: usize,
    t: u64,
}

impl EnvCursor for SequenceCursor {
    fn distribution(&self, action: ActionId) -> Vec<f64> {
        let sym = self.sequence.symbol(self.t);
        let hit = usize::from(action.0 % self.alphabet == sym);
        let mut out = vec![0.0; 2 * self.alphabet];
        out[hit * self.alphabet + sym] = 1.0;
        out
    }

    fn probability(&self, action: ActionId, percept: &Percept) -> f64 {
        let sym = self.sequence.symbol(self.t);
        let reward = if action.0 % self.alphabet == sym {
            1.0
        } else {
            0.0
        };
        if percept.observation == sym && percept.reward == reward {
            1.0
        } else {
            0.0
        }
    }

    fn advance(&mut self, _step: &StepRecord) {
        self.t += 1;
    }
}

impl Environment for SequenceEnv {
    fn space(&self) -> &SpaceSpec {
        &self.space
    }

    fn label(&self) -> String {
        self.label.clone()
    }

    fn cursor(&self) -> Box<dyn EnvCursor> {
        Box::new(SequenceCursor {
            sequence: self.sequence.clone(),
            alphabet: self.alphabet,
            t: 0,
        })
    }
}

/// Predicts the known sequence at the current position.
#[derive(Clone, Debug)]
pub struct Predictor {
    sequence: Arc<Sequence>,
}

impl Policy for Predictor {
    fn next_action(&mut self, history: &History) -> Result<ActionId, PolicyError> {
        Ok(ActionId(self.sequence.symbol(history.len() as u64)))
    }

    fn label(&self) -> String {
        "sequence_predictor".into()
    }
}
