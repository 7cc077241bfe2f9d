use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use valstab::envzoo::EnvSpec;
use valstab::mixture::WeightedClass;
use valstab::policies::{
    informed_optimal, ConstantPolicy, PrefixPolicy, SelfOptimizingPolicy, UniformRandomPolicy,
    UpperSelfOptimizingPolicy, ValueMode,
};
use valstab::sim::{mix_seed, ActionId, History, Policy};

use crate::HarnessError;

fn default_checkpoint_every() -> usize {
    100
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassEntry {
    pub spec: EnvSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub class: Vec<ClassEntry>,
    /// Index into `class` of the environment that generates percepts.
    pub true_env: usize,
    pub policy: String,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Actions played before the policy takes over.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub forced_prefix: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PolicyKind {
    SelfOpt,
    UpperSelfOpt,
    WorstCaseVs,
    WorstCaseUpper,
    Informed,
    Random,
    Always(usize),
}

impl FromStr for PolicyKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "self_opt" => PolicyKind::SelfOpt,
            "upper_self_opt" => PolicyKind::UpperSelfOpt,
            "worst_case_vs" => PolicyKind::WorstCaseVs,
            "worst_case_upper" => PolicyKind::WorstCaseUpper,
            "informed" => PolicyKind::Informed,
            "random" => PolicyKind::Random,
            other => match other.strip_prefix("always:").map(str::parse::<usize>) {
                Some(Ok(a)) => PolicyKind::Always(a),
                _ => return Err(HarnessError::Config(format!("unknown policy `{other}`"))),
            },
        })
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::SelfOpt => f.write_str("self_opt"),
            PolicyKind::UpperSelfOpt => f.write_str("upper_self_opt"),
            PolicyKind::WorstCaseVs => f.write_str("worst_case_vs"),
            PolicyKind::WorstCaseUpper => f.write_str("worst_case_upper"),
            PolicyKind::Informed => f.write_str("informed"),
            PolicyKind::Random => f.write_str("random"),
            PolicyKind::Always(a) => write!(f, "always:{a}"),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        let config: Self =
            serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn policy_kind(&self) -> Result<PolicyKind, HarnessError> {
        self.policy.parse()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        self.policy_kind()?;
        if self.class.is_empty() {
            return fail("class is empty".into());
        }
        if self.true_env >= self.class.len() {
            return fail(format!(
                "true_env {} outside a class of {}",
                self.true_env,
                self.class.len()
            ));
        }
        if self.horizon == 0 {
            return fail("horizon must be positive".into());
        }
        if self.seeds.is_empty() {
            return fail("no seeds".into());
        }
        if self.checkpoint_every == 0 {
            return fail("checkpoint_every must be positive".into());
        }
        let given = self.class.iter().filter(|e| e.weight.is_some()).count();
        if given != 0 && given != self.class.len() {
            return fail("weights must be given for every class member or for none".into());
        }
        Ok(())
    }

    /// Builds every certified class member.
    pub fn build_class(&self) -> Result<Arc<WeightedClass>, HarnessError> {
        let members = self
            .class
            .iter()
            .map(|e| e.spec.build())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let class = if self.class.iter().all(|e| e.weight.is_some()) {
            let weights = self.class.iter().map(|e| e.weight.unwrap_or(0.0)).collect();
            WeightedClass::with_weights(members, weights)
        } else {
            WeightedClass::new(members)
        };
        class
            .map(Arc::new)
            .map_err(|e| HarnessError::Config(e.to_string()))
    }

    /// The policy for one seed, forced prefix included.
    pub fn build_policy(
        &self,
        class: &Arc<WeightedClass>,
        seed: u64,
    ) -> Result<Box<dyn Policy>, HarnessError> {
        let config_err = |e: valstab::PolicyError| HarnessError::Config(e.to_string());
        let member = class.member(self.true_env);
        let inner: Box<dyn Policy> = match self.policy_kind()? {
            PolicyKind::SelfOpt => Box::new(
                SelfOptimizingPolicy::new(class.clone(), ValueMode::Plain).map_err(config_err)?,
            ),
            PolicyKind::WorstCaseVs => Box::new(
                SelfOptimizingPolicy::new(class.clone(), ValueMode::WorstCase)
                    .map_err(config_err)?,
            ),
            PolicyKind::UpperSelfOpt => Box::new(
                UpperSelfOptimizingPolicy::new(class.clone(), ValueMode::Plain)
                    .map_err(config_err)?,
            ),
            PolicyKind::WorstCaseUpper => Box::new(
                UpperSelfOptimizingPolicy::new(class.clone(), ValueMode::WorstCase)
                    .map_err(config_err)?,
            ),
            PolicyKind::Informed => match (&member.stability, &member.recoverability) {
                (Some(cert), _) => informed_optimal(cert),
                (None, Some(cert)) => cert.recovery_policy(&History::new()),
                (None, None) => {
                    return Err(HarnessError::Config(format!(
                        "`{}` has no certificate to inform the policy",
                        member.label()
                    )))
                }
            },
            PolicyKind::Random => Box::new(UniformRandomPolicy::new(
                class.space().n_actions,
                mix_seed(seed, 0x5eed),
            )),
            PolicyKind::Always(a) => Box::new(ConstantPolicy::new(ActionId(a))),
        };
        if self.forced_prefix.is_empty() {
            return Ok(inner);
        }
        let prefix = self.forced_prefix.iter().map(|&a| ActionId(a)).collect();
        Ok(Box::new(PrefixPolicy::new(prefix, inner)))
    }
}
