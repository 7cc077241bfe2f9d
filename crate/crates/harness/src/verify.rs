use std::str::FromStr;

use valstab::checkers::{
    check_recoverability, check_value_stability, PrefixGenerator, RecoverabilityParams,
    StabilityParams, ViolationReport,
};
use valstab::envzoo::EnvSpec;

use crate::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckerKind {
    ValueStability,
    Recoverability,
}

impl FromStr for CheckerKind {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "value_stability" => Ok(CheckerKind::ValueStability),
            "recoverability" => Ok(CheckerKind::Recoverability),
            other => Err(HarnessError::Config(format!("unknown checker `{other}`"))),
        }
    }
}

/// Parses `uniform`, `repeat:<action>` or `forced:<a>,<b>,...`.
pub fn parse_prefix(s: &str) -> Result<PrefixGenerator, HarnessError> {
    let bad = || HarnessError::Config(format!("bad prefix generator `{s}`"));
    if s == "uniform" {
        return Ok(PrefixGenerator::UniformRandom);
    }
    if let Some(a) = s.strip_prefix("repeat:") {
        return Ok(PrefixGenerator::Repeat {
            action: a.parse().map_err(|_| bad())?,
        });
    }
    if let Some(list) = s.strip_prefix("forced:") {
        let actions = list
            .split(',')
            .map(|a| a.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        return Ok(PrefixGenerator::ForcedThenUniform { actions });
    }
    Err(bad())
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyParams {
    pub checker: CheckerKind,
    pub k: u64,
    /// Window length for value stability, horizon for recoverability.
    pub n: u64,
    pub eps: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub prefix: PrefixGenerator,
    /// Averaging window of the recoverability check; defaults to `n / 10`.
    pub window: Option<u64>,
}

pub fn verify(spec: &EnvSpec, params: &VerifyParams) -> Result<ViolationReport, HarnessError> {
    if params.n_samples == 0 || params.n == 0 {
        return Err(HarnessError::Config(
            "samples and n must be positive".into(),
        ));
    }
    if !(params.eps > 0.0) {
        return Err(HarnessError::Config("eps must be positive".into()));
    }
    let member = spec
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let missing = |what: &str| {
        HarnessError::Config(format!(
            "`{}` declares no {what} certificate",
            member.label()
        ))
    };
    let result = match params.checker {
        CheckerKind::ValueStability => {
            let cert = member
                .stability
                .as_ref()
                .ok_or_else(|| missing("value-stability"))?;
            check_value_stability(
                member.env.as_ref(),
                cert,
                &StabilityParams {
                    k: params.k,
                    n: params.n,
                    eps: params.eps,
                    n_samples: params.n_samples,
                    seed: params.seed,
                    prefix: params.prefix.clone(),
                },
            )
        }
        CheckerKind::Recoverability => {
            let cert = member
                .recoverability
                .as_ref()
                .ok_or_else(|| missing("recoverability"))?;
            check_recoverability(
                member.env.as_ref(),
                cert,
                &RecoverabilityParams {
                    k: params.k,
                    horizon: params.n,
                    eps: params.eps,
                    window: params.window.unwrap_or((params.n / 10).max(1)),
                    n_samples: params.n_samples,
                    seed: params.seed,
                    prefix: params.prefix.clone(),
                },
            )
        }
    };
    result.map_err(|e| HarnessError::Runtime(e.to_string()))
}
