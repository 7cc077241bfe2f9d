mod common;

use proptest::prelude::*;
use valstab::envzoo::EnvSpec;
use valstab::mixture::{
    consistent_set, true_env_ratio_floor, MixtureState, MixtureTracker, WeightedClass,
};
use valstab::policies::{ConstantPolicy, UniformRandomPolicy};
use valstab::sim::{simulate, ActionId, History, StepRecord};
use valstab::CertifiedEnv;

use common::*;

fn periodic(pattern: &[usize]) -> CertifiedEnv {
    let spec: EnvSpec = serde_json::from_value(serde_json::json!({
        "kind": "sequence_prediction",
        "alphabet": 2,
        "sequence": {"type": "periodic", "pattern": pattern}
    }))
    .unwrap();
    spec.build().unwrap()
}

fn mdp_class() -> WeightedClass {
    WeightedClass::new(vec![
        member("two_state"),
        member("mdp_low"),
        member("mdp_high"),
    ])
    .unwrap()
}

#[test]
fn identical_members_keep_ratio_one() {
    let class = WeightedClass::with_weights(
        vec![member("two_state"), member("two_state")],
        vec![0.3, 0.7],
    )
    .unwrap();
    let h = simulate(
        class.env(0).as_ref(),
        &mut UniformRandomPolicy::new(2, 1),
        5000,
        1,
    )
    .unwrap()
    .history;
    let state = MixtureState::from_history(&class, &h);
    for i in 0..2 {
        assert!(state.log_ratio(i).abs() < 1e-9);
    }
}

#[test]
fn true_ratio_approaches_inverse_weight() {
    let class = WeightedClass::with_weights(
        vec![bernoulli_arms("a", &[0.3]), bernoulli_arms("b", &[0.7])],
        vec![0.5, 0.5],
    )
    .unwrap();
    let h = simulate(
        class.env(0).as_ref(),
        &mut ConstantPolicy::new(ActionId(0)),
        2000,
        3,
    )
    .unwrap()
    .history;
    let state = MixtureState::from_history(&class, &h);
    assert!((state.log_ratio(0).exp() - 2.0).abs() < 1e-6);
    assert!(state.log_ratio(1) < -50.0);
    assert_eq!(true_env_ratio_floor(&class, 0), 2.0);
}

#[test]
fn bernoulli_posterior_concentrates() {
    let probs = [0.2, 0.5, 0.8];
    let class =
        WeightedClass::new(probs.iter().map(|&p| bernoulli_arms("arm", &[p])).collect()).unwrap();
    let mut hits = 0;
    for seed in 0..100 {
        let h = simulate(
            class.env(1).as_ref(),
            &mut ConstantPolicy::new(ActionId(0)),
            200,
            seed,
        )
        .unwrap()
        .history;
        let state = MixtureState::from_history(&class, &h);
        if consistent_set(&state, 0.5) == vec![1] {
            hits += 1;
        }
    }
    assert!(hits >= 95, "{hits}/100");
}

#[test]
fn consistent_set_thresholds() {
    let class = WeightedClass::new(vec![
        member("two_state"),
        member("mdp_low"),
        member("mdp_high"),
    ])
    .unwrap();
    let mut state = MixtureState::new(&class);
    // weights 4/7, 2/7, 1/7; ratios against the mixture before any data are 1
    assert_eq!(state.consistent_set(1.0), vec![0, 1, 2]);
    state.per_env_loglik = vec![0.0, (0.5f64).ln(), f64::NEG_INFINITY];
    let xi: f64 = 4.0 / 7.0 + 2.0 / 7.0 * 0.5;
    state.log_xi = xi.ln();
    assert_eq!(state.consistent_set(1.0), vec![0]);
    assert_eq!(state.consistent_set(0.5 / xi - 1e-9), vec![0, 1]);
    assert_eq!(state.consistent_set(1e-300), vec![0, 1]);
}

#[test]
fn disagreeing_deterministic_members_separate() {
    let class = WeightedClass::new(vec![periodic(&[1, 0]), periodic(&[1, 1, 0])]).unwrap();
    let h = simulate(
        class.env(0).as_ref(),
        &mut ConstantPolicy::new(ActionId(0)),
        2,
        0,
    )
    .unwrap()
    .history;
    let mut tracker = MixtureTracker::new(&class);
    tracker.observe(&h.steps()[0]);
    assert_eq!(tracker.state().consistent_set(0.1), vec![0, 1]);
    tracker.observe(&h.steps()[1]);
    assert_eq!(tracker.state().consistent_set(0.1), vec![0]);
    assert_eq!(tracker.state().log_ratio(1), f64::NEG_INFINITY);
    // weights 2/3 and 1/3: the survivor's ratio is 1 / (2/3)
    assert!((tracker.state().log_ratio(0) - 1.5f64.ln()).abs() < 1e-12);
}

/// `E_nu[nu/xi after one more step] >= nu/xi now`, computed exactly.
fn one_step_drift(
    class: &WeightedClass,
    truth: usize,
    history: &History,
    action: ActionId,
) -> (f64, f64) {
    let now = MixtureState::from_history(class, history);
    let dist = class
        .env(truth)
        .percept_distribution(history.steps(), action);
    let mut expected = 0.0;
    for (idx, &p) in dist.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let step = StepRecord {
            action,
            percept: class.env(truth).space().percept_at(idx),
        };
        let next = now.update(class, &step, history);
        expected += p * next.log_ratio(truth).exp();
    }
    (now.log_ratio(truth).exp(), expected)
}

#[test]
fn true_ratio_is_a_submartingale() {
    let class = mdp_class();
    for seed in 0..20 {
        let h = simulate(
            class.env(0).as_ref(),
            &mut UniformRandomPolicy::new(2, seed),
            30,
            seed,
        )
        .unwrap()
        .history;
        for t in [0, 5, 29] {
            let prefix = h.prefix(t);
            for a in 0..2 {
                let (now, next) = one_step_drift(&class, 0, &prefix, ActionId(a));
                assert!(next >= now - 1e-12, "seed {seed} t {t}: {next} < {now}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn incremental_batch_and_stepwise_agree(seed in any::<u64>(), len in 1usize..300, truth in 0usize..3) {
        let class = mdp_class();
        let h = simulate(class.env(truth).as_ref(), &mut UniformRandomPolicy::new(2, seed), len, seed).unwrap().history;
        let batch = MixtureState::from_history(&class, &h);
        let mut tracker = MixtureTracker::new(&class);
        tracker.catch_up(&h);
        let mut stepwise = MixtureState::new(&class);
        for t in 0..len {
            stepwise = stepwise.update(&class, &h.steps()[t], &h.prefix(t));
        }
        for state in [tracker.state(), &stepwise] {
            prop_assert_eq!(state.step_count, len);
            prop_assert!((state.log_xi - batch.log_xi).abs() < 1e-9);
            for i in 0..3 {
                let (a, b) = (state.per_env_loglik[i], batch.per_env_loglik[i]);
                prop_assert!(a == b || (a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn mixture_dominates_every_member(seed in any::<u64>(), len in 1usize..300, truth in 0usize..3) {
        let class = mdp_class();
        let h = simulate(class.env(truth).as_ref(), &mut UniformRandomPolicy::new(2, seed), len, seed).unwrap().history;
        let state = MixtureState::from_history(&class, &h);
        for i in 0..3 {
            // xi >= w_i nu_i, so nu_i / xi <= 1 / w_i
            prop_assert!(state.log_ratio(i) <= true_env_ratio_floor(&class, i).ln() + 1e-12);
        }
    }
}
