//! One PASS/FAIL line per acceptance criterion, printed to stdout. Run with
//! `cargo test -p valstab-cli --test acceptance`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};
use valstab::checkers::{demo_necessity, stability_battery, BatteryMember, PrefixGenerator};
use valstab::envzoo::{BanditChainSpec, DownJump, EnvSpec, MdpModel, MdpSpec, NecessitySpec};
use valstab::mixture::{MixtureState, MixtureTracker, WeightedClass};
use valstab::policies::{ConstantPolicy, PrefixPolicy, UniformRandomPolicy};
use valstab::sim::{mix_seed, simulate, ActionId, Percept, StepRecord};
use valstab_cli::config::ExperimentConfig;
use valstab_cli::{run_experiment, ExperimentSummary};

const SEEDS: usize = 5;
/// Seeds out of five that must meet the statistical criteria.
const MAJORITY: usize = 4;
/// Checkpoint gaps closer than this count as equal.
const GAP_TIE: f64 = 1e-9;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn env_spec(name: &str) -> EnvSpec {
    let text = std::fs::read_to_string(fixtures().join(format!("envs/{name}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn mdp_spec(name: &str) -> MdpSpec {
    match env_spec(name) {
        EnvSpec::Mdp(m) => m,
        EnvSpec::Trap(t) => t.base,
        other => panic!("{name} is a {}", other.kind()),
    }
}

fn config(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&fixtures().join(format!("configs/{name}.json"))).unwrap()
}

/// Average reward of the best deterministic stationary policy, by exact
/// stationary distributions of every induced chain.
fn brute_force_value(spec: &MdpSpec) -> f64 {
    let (n, m) = (spec.n_states, spec.n_actions);
    let mut best = f64::NEG_INFINITY;
    for code in 0..m.pow(n as u32) {
        let choice: Vec<usize> = (0..n).map(|s| code / m.pow(s as u32) % m).collect();
        // pi (P - I) = 0 with the last equation replaced by sum(pi) = 1
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(j, i)] = spec.transition[i][choice[i]][j] - if i == j { 1.0 } else { 0.0 };
            }
        }
        for i in 0..n {
            a[(n - 1, i)] = 1.0;
        }
        let mut b = DVector::<f64>::zeros(n);
        b[n - 1] = 1.0;
        let pi = a.lu().solve(&b).expect("irreducible chain");
        let value: f64 = (0..n)
            .map(|s| {
                let dist = &spec.reward_dist[s][choice[s]];
                pi[s]
                    * dist
                        .iter()
                        .zip(&spec.reward_values)
                        .map(|(p, r)| p * r)
                        .sum::<f64>()
            })
            .sum();
        best = best.max(value);
    }
    best
}

struct Outcome {
    pass: bool,
    detail: String,
    artifacts: Vec<(String, Vec<u8>)>,
}

fn run_config(cfg: &ExperimentConfig, dir: &Path) -> (ExperimentSummary, Vec<(String, Vec<u8>)>) {
    let out = dir.join(format!("{}_{}", cfg.name, cfg.true_env));
    let summary = run_experiment(cfg, &out).unwrap();
    let mut files: Vec<_> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| !p.to_string_lossy().ends_with(".meta.json"))
        .collect();
    files.sort();
    let artifacts = files
        .into_iter()
        .map(|p| {
            let name = format!(
                "{}/{}",
                out.file_name().unwrap().to_string_lossy(),
                p.file_name().unwrap().to_string_lossy()
            );
            (name, std::fs::read(&p).unwrap())
        })
        .collect();
    (summary, artifacts)
}

fn informed_baseline(dir: &Path) -> Outcome {
    let clock = Instant::now();
    let v_star = brute_force_value(&mdp_spec("two_state"));
    let (summary, artifacts) = run_config(&config("informed_two_state"), dir);
    let secs = clock.elapsed().as_secs_f64();
    let gaps: Vec<f64> = summary
        .runs
        .iter()
        .map(|r| (r.final_avg - v_star).abs())
        .collect();
    let hits = gaps.iter().filter(|&&g| g <= 0.02).count();
    Outcome {
        pass: hits == SEEDS && secs < 10.0,
        detail: format!(
            "{hits}/5 seeds within 0.02 of V*={v_star:.6}, max gap {:.4}, {secs:.1}s",
            gaps.iter().cloned().fold(0.0, f64::max)
        ),
        artifacts,
    }
}

fn self_optimization(dir: &Path) -> Outcome {
    let mut artifacts = Vec::new();
    let mut details = Vec::new();
    let mut pass = true;
    let base = config("self_opt_four");
    for truth in 0..base.class.len() {
        let clock = Instant::now();
        let cfg = ExperimentConfig {
            true_env: truth,
            ..base.clone()
        };
        let (summary, files) = run_config(&cfg, dir);
        let secs = clock.elapsed().as_secs_f64();
        artifacts.extend(files);
        let close = summary
            .runs
            .iter()
            .filter(|r| r.final_gap.unwrap() < 0.05)
            .count();
        let monotone = summary
            .runs
            .iter()
            .filter(|r| {
                let gaps: Vec<f64> = r
                    .checkpoints
                    .iter()
                    .filter(|c| [10_000, 100_000, 1_000_000].contains(&c.step))
                    .map(|c| c.gap.unwrap())
                    .collect();
                // summation rounding over 10^6 steps reaches ~1e-11; treat it as a tie
                gaps.len() == 3 && gaps.windows(2).all(|w| w[1] <= w[0] + GAP_TIE)
            })
            .count();
        pass &= close >= MAJORITY && monotone >= MAJORITY && secs < 600.0;
        details.push(format!(
            "{}: {close}/5 close, {monotone}/5 monotone, {secs:.0}s",
            summary.true_env
        ));
    }
    Outcome {
        pass,
        detail: details.join("; "),
        artifacts,
    }
}

fn upper_self_optimization(dir: &Path) -> Outcome {
    let mut artifacts = Vec::new();
    let mut details = Vec::new();
    let mut pass = true;
    let base = config("upper_bandits");
    let clock = Instant::now();
    for truth in 0..base.class.len() {
        let cfg = ExperimentConfig {
            true_env: truth,
            ..base.clone()
        };
        let (summary, files) = run_config(&cfg, dir);
        artifacts.extend(files);
        let hits = summary
            .runs
            .iter()
            .filter(|r| r.best_window_avg >= 0.85)
            .count();
        let worst = summary
            .runs
            .iter()
            .map(|r| r.best_window_avg)
            .fold(1.0, f64::min);
        pass &= hits >= MAJORITY;
        details.push(format!("{}: {hits}/5 (min {worst:.3})", summary.true_env));
    }
    let secs = clock.elapsed().as_secs_f64();
    Outcome {
        pass: pass && secs < 600.0,
        detail: format!("{}, {secs:.0}s", details.join("; ")),
        artifacts,
    }
}

fn worst_case(dir: &Path) -> Outcome {
    let cfg = config("trap_worst_case");
    let penalty = match &cfg.class[cfg.true_env].spec {
        EnvSpec::Trap(t) => t.penalty,
        _ => unreachable!("trap config"),
    };
    let target = penalty * brute_force_value(&mdp_spec("trap_a"));
    let (summary, artifacts) = run_config(&cfg, dir);
    let hits = summary
        .runs
        .iter()
        .filter(|r| (r.final_avg - target).abs() <= 0.05)
        .count();
    let avgs: Vec<String> = summary
        .runs
        .iter()
        .map(|r| format!("{:.4}", r.final_avg))
        .collect();
    Outcome {
        pass: hits == SEEDS,
        detail: format!(
            "{hits}/5 within 0.05 of conditional optimum {target:.6}; averages {}",
            avgs.join(" ")
        ),
        artifacts,
    }
}

fn bernoulli_member(p_play: &[f64]) -> valstab::CertifiedEnv {
    EnvSpec::Mdp(MdpSpec {
        name: None,
        n_states: 1,
        n_actions: p_play.len(),
        transition: vec![p_play.iter().map(|_| vec![1.0]).collect()],
        reward_values: vec![0.0, 1.0],
        reward_dist: vec![p_play.iter().map(|&p| vec![1.0 - p, p]).collect()],
        initial_state: 0,
        r_max: None,
        phi: None,
    })
    .build()
    .unwrap()
}

fn mixture_dominance(_: &Path) -> Outcome {
    let arms = [[0.2, 0.6], [0.3, 0.5], [0.5, 0.5], [0.6, 0.4], [0.8, 0.3]];
    let class = WeightedClass::new(arms.iter().map(|a| bernoulli_member(a)).collect()).unwrap();
    let floors: Vec<f64> = (0..class.len())
        .map(|i| class.true_env_ratio_floor(i).ln())
        .collect();
    let mut worst_slack = f64::NEG_INFINITY;
    let mut worst_batch = 0.0f64;
    for traj in 0..100u64 {
        let truth = (traj % 5) as usize;
        let h = simulate(
            class.env(truth).as_ref(),
            &mut UniformRandomPolicy::new(2, traj),
            10_000,
            traj,
        )
        .unwrap()
        .history;
        let mut tracker = MixtureTracker::new(&class);
        for step in h.steps() {
            tracker.observe(step);
            for (i, floor) in floors.iter().enumerate() {
                worst_slack = worst_slack.max(tracker.state().log_ratio(i) - floor);
            }
        }
        let batch = MixtureState::from_history(&class, &h);
        worst_batch = worst_batch.max((batch.log_xi - tracker.state().log_xi).abs());
    }
    let detail = format!("max log(nu/xi) - log(1/w) = {worst_slack:.3e}, max |incremental - batch| log_xi = {worst_batch:.3e}");
    Outcome {
        pass: worst_slack <= 1e-9 && worst_batch <= 1e-9,
        artifacts: vec![("dominance.txt".into(), detail.clone().into_bytes())],
        detail,
    }
}

fn battery_member(name: &str, prefix: PrefixGenerator) -> BatteryMember {
    let m = env_spec(name).build().unwrap();
    BatteryMember {
        env: m.env.clone(),
        cert: (**m.stability.as_ref().unwrap()).clone(),
        prefix,
    }
}

fn certificate_battery(_: &Path) -> Outcome {
    let clock = Instant::now();
    let stable = [
        "two_state",
        "mdp_low",
        "mdp_high",
        "ladder_bandit",
        "periodic_prediction",
        "thue_morse_prediction",
        "necessity_0",
    ];
    let mut members: Vec<BatteryMember> = stable
        .iter()
        .map(|n| battery_member(n, PrefixGenerator::UniformRandom))
        .collect();
    members.push(battery_member(
        "necessity_1_sqrt",
        PrefixGenerator::Repeat { action: 0 },
    ));
    let reports = stability_battery(&members, 200, 2024).unwrap();
    let per = reports.len() / members.len();
    let stable_passes = reports[..per * stable.len()]
        .iter()
        .filter(|r| r.pass)
        .count();
    // where n * eps exceeds the true loss of about 2k the sqrt declaration
    // happens to hold, so the degenerate member only has to be caught somewhere
    let degenerate_fails = reports[per * stable.len()..]
        .iter()
        .filter(|r| !r.pass)
        .count();
    let secs = clock.elapsed().as_secs_f64();
    Outcome {
        pass: stable_passes == per * stable.len() && degenerate_fails > 0 && secs < 300.0,
        detail: format!(
            "{stable_passes}/{} stable checks pass, {degenerate_fails}/{per} degenerate checks fail, {secs:.0}s",
            per * stable.len()
        ),
        artifacts: vec![("battery.json".into(), serde_json::to_vec_pretty(&reports).unwrap())],
    }
}

fn necessity_demo(_: &Path) -> Outcome {
    let report = demo_necessity(100_000, &[1, 2, 3]).unwrap();
    let flagged = report
        .certificate_flags
        .iter()
        .all(|f| f.violations.iter().any(|v| v == "d not o(k)"));
    let base: Vec<String> = report
        .runs
        .iter()
        .filter(|r| r.qualifies)
        .map(|r| format!("{}:{:.3}", r.policy, r.base_average))
        .collect();
    Outcome {
        pass: report.headline_holds && report.qualifying_runs > 0 && flagged,
        detail: format!(
            "{} qualifying runs, base-member averages [{}], d-flag on all members: {flagged}",
            report.qualifying_runs,
            base.join(" ")
        ),
        artifacts: vec![(
            "necessity.json".into(),
            serde_json::to_vec_pretty(&report).unwrap(),
        )],
    }
}

fn necessity_oracle(s: u64, actions: &[usize]) -> Vec<f64> {
    (0..actions.len())
        .map(|i| {
            let upto = &actions[..=i];
            let n_a = upto.iter().filter(|&&a| a == 0).count() as u64;
            let longest_b = upto
                .split(|&a| a == 0)
                .map(|r| r.len() as u64)
                .max()
                .unwrap_or(0);
            match (actions[i], s) {
                (0, _) => 1.0,
                (_, 0) => 0.0,
                _ if longest_b > n_a && n_a >= s => 2.0,
                _ => 0.0,
            }
        })
        .collect()
}

fn oracle_equivalences(_: &Path) -> Outcome {
    let mut solver_err = 0.0f64;
    for name in ["two_state", "mdp_low", "mdp_high", "trap_a", "trap_b"] {
        let spec = mdp_spec(name);
        let gain = MdpModel::from_spec(&spec).unwrap().solve().unwrap().gain;
        solver_err = solver_err.max((gain - brute_force_value(&spec)).abs());
    }

    let envs: Vec<_> = [0u64, 1, 2, 5]
        .iter()
        .map(|&s| {
            let spec = EnvSpec::Necessity(NecessitySpec {
                name: None,
                s,
                declared_loss: Default::default(),
            });
            (s, spec.build().unwrap().env)
        })
        .collect();
    let mut necessity_mismatches = 0;
    for i in 0..10_000u64 {
        let h = mix_seed(77, i);
        let len = 1 + (h % 200) as usize;
        let p_b = [0.5, 0.8, 0.95][(h >> 8) as usize % 3];
        let actions: Vec<usize> = (0..len)
            .map(|t| usize::from((mix_seed(h, t as u64) as f64 / u64::MAX as f64) < p_b))
            .collect();
        let (s, env) = &envs[(h >> 16) as usize % envs.len()];
        let mut p = PrefixPolicy::new(
            actions.iter().map(|&a| ActionId(a)).collect(),
            Box::new(ConstantPolicy::new(ActionId(0))),
        );
        let got: Vec<f64> = simulate(env.as_ref(), &mut p, len, i)
            .unwrap()
            .history
            .steps()
            .iter()
            .map(|st| st.percept.reward)
            .collect();
        if got != necessity_oracle(*s, &actions) {
            necessity_mismatches += 1;
        }
    }

    // arm j pays with probability j/1000, so the play distribution reveals the arm
    let mut law_mismatches = 0;
    for down in [DownJump::ToZero, DownJump::One] {
        let env = EnvSpec::BanditChain(BanditChainSpec {
            name: None,
            arm_probs: (0..=1000).map(|i| i as f64 / 1000.0).collect(),
            down,
        })
        .build()
        .unwrap()
        .env;
        let step = |a: usize| StepRecord {
            action: ActionId(a),
            percept: Percept {
                reward: 0.0,
                observation: 0,
            },
        };
        let mut history: Vec<StepRecord> = Vec::new();
        for j in 0..=1000usize {
            let at = |h: &[StepRecord]| env.percept_distribution(h, ActionId(0))[1];
            if at(&history) != j as f64 / 1000.0 {
                law_mismatches += 1;
            }
            let mut down_hist = history.clone();
            down_hist.push(step(2));
            let want = match down {
                DownJump::ToZero => 0.0,
                DownJump::One => j.saturating_sub(1) as f64 / 1000.0,
            };
            if at(&down_hist) != want {
                law_mismatches += 1;
            }
            history.push(step(1));
        }
    }
    let detail = format!(
        "solver vs brute force max error {solver_err:.2e}, necessity mismatches {necessity_mismatches}/10000, position-law mismatches {law_mismatches}/2002"
    );
    Outcome {
        pass: solver_err <= 1e-8 && necessity_mismatches == 0 && law_mismatches == 0,
        artifacts: vec![("oracles.txt".into(), detail.clone().into_bytes())],
        detail,
    }
}

type Criterion = (&'static str, fn(&Path) -> Outcome);

const CRITERIA: [Criterion; 8] = [
    ("informed baseline on the two-state MDP", informed_baseline),
    (
        "self-optimization on the four-member class",
        self_optimization,
    ),
    (
        "upper self-optimization on climb bandits",
        upper_self_optimization,
    ),
    ("worst-case policy after a forced trap", worst_case),
    ("mixture dominance and batch agreement", mixture_dominance),
    ("value-stability certificate battery", certificate_battery),
    ("necessity trade-off demonstration", necessity_demo),
    ("oracle equivalences", oracle_equivalences),
];

fn digest(artifacts: &[(String, Vec<u8>)]) -> String {
    let mut h = Sha256::new();
    for (name, body) in artifacts {
        h.update(name.as_bytes());
        h.update((body.len() as u64).to_le_bytes());
        h.update(body);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes past the test harness's capture so the lines show in plain
/// `cargo test` output.
fn report(line: String) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

#[test]
fn acceptance() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let mut failed = Vec::new();
    let mut digests = Vec::new();
    for (i, (title, run)) in CRITERIA.iter().enumerate() {
        let out = run(first.path());
        let d = digest(&out.artifacts);
        report(format!(
            "criterion {}: {} {}: {} [sha256 {}]",
            i + 1,
            if out.pass { "PASS" } else { "FAIL" },
            title,
            out.detail,
            &d[..16]
        ));
        if !out.pass {
            failed.push(i + 1);
        }
        digests.push(d);
    }
    let mut differing = Vec::new();
    for (i, (_, run)) in CRITERIA.iter().enumerate() {
        if digest(&run(second.path()).artifacts) != digests[i] {
            differing.push(i + 1);
        }
    }
    let reproducible = differing.is_empty();
    report(format!(
        "criterion 9: {} reproducibility: {} of 8 criteria rerun with byte-identical artifacts{}",
        if reproducible { "PASS" } else { "FAIL" },
        8 - differing.len(),
        if reproducible {
            String::new()
        } else {
            format!(", differing {differing:?}")
        }
    ));
    if !reproducible {
        failed.push(9);
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
