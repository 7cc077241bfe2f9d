mod common;

use valstab::checkers::{
    binomial_half_width, check_recoverability, check_value_stability, demo_necessity,
    estimate_mixing_coefficients, stability_battery, BatteryMember, CylinderEvents, MixingConfig,
    PrefixGenerator, RecoverabilityParams, StabilityParams, DEMO_POLICIES,
};
use valstab::policies::{ConstantPolicy, UniformRandomPolicy};
use valstab::sim::{ActionId, Policy};

use common::*;

fn stability(
    k: u64,
    n: u64,
    eps: f64,
    n_samples: usize,
    prefix: PrefixGenerator,
) -> StabilityParams {
    StabilityParams {
        k,
        n,
        eps,
        n_samples,
        seed: 5,
        prefix,
    }
}

#[test]
fn half_width_matches_agresti_coull_values() {
    // computed independently with z = 1.959963984540054
    for (s, n, want) in [
        (0, 200, 0.013262727887780424),
        (10, 200, 0.032212295218606544),
        (100, 1000, 0.018683827315746422),
    ] {
        assert!((binomial_half_width(s, n) - want).abs() < 1e-12);
    }
}

#[test]
fn deterministic_sequence_never_violates() {
    let m = member("periodic_prediction");
    let cert = m.stability.as_ref().unwrap();
    let r = check_value_stability(
        m.env.as_ref(),
        cert,
        &stability(100, 1000, 0.05, 100, PrefixGenerator::UniformRandom),
    )
    .unwrap();
    assert_eq!(r.violations, 0);
    assert_eq!(r.empirical_violation_rate, 0.0);
    assert!(r.pass);
    assert_eq!(r.note, "statistical evidence, not proof");
}

#[test]
fn mdp_certificate_survives_sampling() {
    let m = member("two_state");
    let cert = m.stability.as_ref().unwrap();
    let r = check_value_stability(
        m.env.as_ref(),
        cert,
        &stability(1000, 10_000, 0.05, 200, PrefixGenerator::UniformRandom),
    )
    .unwrap();
    assert!(r.pass, "{r:?}");
    assert!(r.empirical_violation_rate <= r.claimed_phi + r.half_width);
}

#[test]
fn understated_necessity_loss_is_caught() {
    // the sqrt declaration is too optimistic after a long run of `a`
    let m = member("necessity_1_sqrt");
    let cert = m.stability.as_ref().unwrap();
    let r = check_value_stability(
        m.env.as_ref(),
        cert,
        &stability(400, 400, 0.1, 100, PrefixGenerator::Repeat { action: 0 }),
    )
    .unwrap();
    assert!(!r.pass, "{r:?}");
    assert_eq!(r.violations, 100);
}

#[test]
fn battery_covers_the_grid() {
    let m = member("periodic_prediction");
    let members = [BatteryMember {
        env: m.env.clone(),
        cert: (**m.stability.as_ref().unwrap()).clone(),
        prefix: PrefixGenerator::UniformRandom,
    }];
    let reports = stability_battery(&members, 20, 1).unwrap();
    assert_eq!(reports.len(), 8);
    assert!(reports.iter().all(|r| r.pass));
}

fn recover(k: u64, horizon: u64, prefix: PrefixGenerator) -> RecoverabilityParams {
    RecoverabilityParams {
        k,
        horizon,
        eps: 0.05,
        window: horizon / 10,
        n_samples: 50,
        seed: 8,
        prefix,
    }
}

#[test]
fn recoverability_checks() {
    let seq = member("periodic_prediction");
    let r = check_recoverability(
        seq.env.as_ref(),
        seq.recoverability.as_ref().unwrap(),
        &recover(100, 1000, PrefixGenerator::UniformRandom),
    )
    .unwrap();
    assert!(r.pass && r.violations == 0);

    let peak = member("climb_bandit_peak5");
    let r = check_recoverability(
        peak.env.as_ref(),
        peak.recoverability.as_ref().unwrap(),
        &recover(100, 100_000, PrefixGenerator::UniformRandom),
    )
    .unwrap();
    assert!(r.pass, "{r:?}");

    // the trap's claimed upper value does not survive stepping into it
    let trap = member("trap_a");
    let r = check_recoverability(
        trap.env.as_ref(),
        trap.recoverability.as_ref().unwrap(),
        &recover(
            1,
            10_000,
            PrefixGenerator::ForcedThenUniform { actions: vec![1] },
        ),
    )
    .unwrap();
    assert!(!r.pass);
    assert_eq!(r.violations, 50);
}

#[test]
fn reports_are_reproducible() {
    let m = member("ladder_bandit");
    let cert = m.stability.as_ref().unwrap();
    let params = stability(100, 1000, 0.05, 50, PrefixGenerator::UniformRandom);
    let a = check_value_stability(m.env.as_ref(), cert, &params).unwrap();
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let b = single
        .install(|| check_value_stability(m.env.as_ref(), cert, &params))
        .unwrap();
    assert_eq!(a, b);
    let json = serde_json::to_string(&a).unwrap();
    assert_eq!(
        serde_json::from_str::<valstab::checkers::ViolationReport>(&json).unwrap(),
        a
    );
}

fn mixing(lags: &[u64], n_samples: usize, spread: u64) -> MixingConfig {
    MixingConfig {
        lags: lags.to_vec(),
        events: CylinderEvents::all_patterns(&[0.0, 1.0], 1),
        n_samples,
        seed: 3,
        burn_in: 20,
        anchor_spread: spread,
    }
}

#[test]
fn iid_rewards_show_no_dependence() {
    let m = bernoulli_arms("coin", &[0.4]);
    let make = |_| Box::new(ConstantPolicy::new(ActionId(0))) as Box<dyn Policy>;
    let est =
        estimate_mixing_coefficients(m.env.as_ref(), &make, &mixing(&[1, 5], 10_000, 1)).unwrap();
    for (a, se) in est.alpha.iter().zip(&est.std_error) {
        assert!(*a <= 4.0 * se + 0.005, "{a} vs se {se}");
    }
}

#[test]
fn markov_dependence_decays_with_lag() {
    let m = member("two_state");
    let make = |seed| Box::new(UniformRandomPolicy::new(2, seed)) as Box<dyn Policy>;
    let est =
        estimate_mixing_coefficients(m.env.as_ref(), &make, &mixing(&[1, 5, 10, 20], 10_000, 1))
            .unwrap();
    assert!(est.alpha[0] > 0.05, "{:?}", est.alpha);
    assert!(
        est.alpha[3] <= 4.0 * est.std_error[3] + 0.01,
        "{:?}",
        est.alpha
    );
    assert!(est.alpha[0] > est.alpha[3]);
}

#[test]
fn periodic_rewards_never_mix() {
    let m = member("periodic_prediction");
    let make = |_| Box::new(ConstantPolicy::new(ActionId(0))) as Box<dyn Policy>;
    let est = estimate_mixing_coefficients(m.env.as_ref(), &make, &mixing(&[1, 2, 9, 20], 2000, 2))
        .unwrap();
    assert!(est.alpha.iter().all(|&a| a >= 0.2), "{:?}", est.alpha);
}

#[test]
fn mixing_rejects_bad_configs() {
    let m = member("two_state");
    let make = |seed| Box::new(UniformRandomPolicy::new(2, seed)) as Box<dyn Policy>;
    assert!(estimate_mixing_coefficients(m.env.as_ref(), &make, &mixing(&[0], 10, 1)).is_err());
    let mut long = mixing(&[1], 10, 1);
    long.events = CylinderEvents::all_patterns(&[0.0, 1.0], 9);
    assert!(estimate_mixing_coefficients(m.env.as_ref(), &make, &long).is_err());
}

#[test]
fn necessity_demo_shows_the_trade_off() {
    let report = demo_necessity(20_000, &[1]).unwrap();
    assert_eq!(report.runs.len(), DEMO_POLICIES.len());
    assert_eq!(report.optimal_values.len(), 9);
    assert!(report.qualifying_runs >= 1);
    assert!(report.headline_holds);
    let always_a = report.runs.iter().find(|r| r.policy == "always_a").unwrap();
    assert!((always_a.base_average - 1.0).abs() < 1e-12);
    assert!(!always_a.qualifies);
    assert_eq!(report.certificate_flags.len(), 8);
    assert!(report
        .certificate_flags
        .iter()
        .all(|f| f.violations == vec!["d not o(k)".to_string()]));
}
