#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use valstab::envzoo::{EnvSpec, MdpSpec};
use valstab::mixture::WeightedClass;
use valstab::sim::{ActionId, EnvCursor, Environment, Percept, SpaceSpec, StepRecord};
use valstab::CertifiedEnv;

pub fn spec(name: &str) -> EnvSpec {
    let path = format!(
        "{}/../../fixtures/envs/{name}.json",
        env!("CARGO_MANIFEST_DIR")
    );
    let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"));
    serde_json::from_str(&text).unwrap()
}

pub fn member(name: &str) -> CertifiedEnv {
    spec(name).build().unwrap()
}

pub fn mdp_spec(name: &str) -> MdpSpec {
    match spec(name) {
        EnvSpec::Mdp(m) => m,
        other => panic!("{name} is a {}", other.kind()),
    }
}

pub fn class_of(members: Vec<CertifiedEnv>) -> Arc<WeightedClass> {
    Arc::new(WeightedClass::new(members).unwrap())
}

/// One-state MDP whose actions pay Bernoulli rewards.
pub fn bernoulli_arms(name: &str, probs: &[f64]) -> CertifiedEnv {
    let m = MdpSpec {
        name: Some(name.into()),
        n_states: 1,
        n_actions: probs.len(),
        transition: vec![probs.iter().map(|_| vec![1.0]).collect()],
        reward_values: vec![0.0, 1.0],
        reward_dist: vec![probs.iter().map(|&p| vec![1.0 - p, p]).collect()],
        initial_state: 0,
        r_max: None,
        phi: None,
    };
    EnvSpec::Mdp(m).build().unwrap()
}

/// Stationary distribution of an irreducible chain, by a direct solve of
/// `pi (P - I) = 0` with one equation replaced by normalization.
pub fn stationary(p: &[Vec<f64>]) -> Vec<f64> {
    let n = p.len();
    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(j, i)] = p[i][j] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for i in 0..n {
        a[(n - 1, i)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let x = a.lu().solve(&b).expect("irreducible chain");
    x.iter().copied().collect()
}

pub fn mean_reward(spec: &MdpSpec, s: usize, a: usize) -> f64 {
    spec.reward_values
        .iter()
        .zip(&spec.reward_dist[s][a])
        .map(|(r, p)| r * p)
        .sum()
}

/// Average reward of a stationary randomized policy `weights[s][a]`.
pub fn policy_value(spec: &MdpSpec, weights: &[Vec<f64>]) -> f64 {
    let n = spec.n_states;
    let chain: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            (0..n)
                .map(|t| {
                    (0..spec.n_actions)
                        .map(|a| weights[s][a] * spec.transition[s][a][t])
                        .sum()
                })
                .collect()
        })
        .collect();
    let pi = stationary(&chain);
    (0..n)
        .map(|s| {
            pi[s]
                * (0..spec.n_actions)
                    .map(|a| weights[s][a] * mean_reward(spec, s, a))
                    .sum::<f64>()
        })
        .sum()
}

/// Best average reward over all deterministic stationary policies.
pub fn brute_force_value(spec: &MdpSpec) -> f64 {
    let (n, m) = (spec.n_states, spec.n_actions);
    let total = m.pow(n as u32);
    (0..total)
        .map(|code| {
            let mut c = code;
            let weights: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let a = c % m;
                    c /= m;
                    (0..m).map(|b| if a == b { 1.0 } else { 0.0 }).collect()
                })
                .collect();
            policy_value(spec, &weights)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn uniform_value(spec: &MdpSpec) -> f64 {
    let w = vec![vec![1.0 / spec.n_actions as f64; spec.n_actions]; spec.n_states];
    policy_value(spec, &w)
}

/// Emits reward `reward` forever, whatever the action.
pub struct ConstantEnv {
    pub space: SpaceSpec,
}

impl ConstantEnv {
    pub fn new(reward: f64) -> Self {
        Self {
            space: SpaceSpec::new(1, 1, vec![reward], reward.max(1.0)).unwrap(),
        }
    }
}

struct ConstantCursor;

impl EnvCursor for ConstantCursor {
    fn distribution(&self, _action: ActionId) -> Vec<f64> {
        vec![1.0]
    }
    fn probability(&self, _action: ActionId, percept: &Percept) -> f64 {
        if percept.observation == 0 {
            1.0
        } else {
            0.0
        }
    }
    fn advance(&mut self, _step: &StepRecord) {}
}

impl Environment for ConstantEnv {
    fn space(&self) -> &SpaceSpec {
        &self.space
    }
    fn label(&self) -> String {
        "constant".into()
    }
    fn cursor(&self) -> Box<dyn EnvCursor> {
        Box::new(ConstantCursor)
    }
}
