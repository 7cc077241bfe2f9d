use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use valstab::mixture::WeightedClass;
use valstab::sim::{simulate_observed, History, Policy};

use crate::config::{ExperimentConfig, PolicyKind};
use crate::format::g9;
use crate::HarnessError;

pub const CSV_HEADER: &str = "step,action,reward,avg_reward,phase,s,n,nu_t,nu_e,log_ratio_true";

/// Longest window used for the best-window average in summaries.
pub const SUMMARY_WINDOW: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointGap {
    pub step: usize,
    pub avg_reward: f64,
    pub gap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub csv: String,
    pub final_avg: f64,
    /// The benchmark value for the policy kind; absent when the true
    /// environment has no matching certificate.
    pub target: Option<f64>,
    pub final_gap: Option<f64>,
    pub window: usize,
    pub best_window_avg: f64,
    /// Averages at every power of ten within the horizon.
    pub checkpoints: Vec<CheckpointGap>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub policy: String,
    pub true_env: String,
    pub horizon: usize,
    pub checkpoint_every: usize,
    pub runs: Vec<RunSummary>,
}

#[derive(Serialize)]
struct RunMeta<'a> {
    name: &'a str,
    started_unix: u64,
    finished_unix: u64,
    elapsed_secs: f64,
    threads: usize,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn csv_name(config: &ExperimentConfig, seed: u64) -> String {
    format!("{}.seed{seed}.csv", config.name)
}

pub fn summary_path(config: &ExperimentConfig, out_dir: &Path) -> PathBuf {
    out_dir.join(format!("{}.summary.json", config.name))
}

fn csv_row(out: &mut String, history: &History, policy: &dyn Policy, true_env: usize) {
    let t = history.len();
    let last = history.last().expect("rows follow a step");
    let _ = write!(
        out,
        "{t},{},{},{},",
        last.action.0,
        g9(last.percept.reward),
        g9(history.mean_reward())
    );
    match policy.trace() {
        Some(tr) => {
            let opt = |v: Option<usize>| v.map(|i| i.to_string()).unwrap_or_default();
            let ratio = tr
                .log_ratios
                .get(true_env)
                .map(|&r| g9(r))
                .unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{ratio}",
                tr.phase,
                tr.s,
                tr.n,
                opt(tr.nu_t),
                opt(tr.nu_e)
            );
        }
        None => out.push_str(",,,,,\n"),
    }
}

fn target_value(
    kind: PolicyKind,
    class: &WeightedClass,
    true_env: usize,
    history: &History,
) -> Option<f64> {
    let member = class.member(true_env);
    let stable = member.stability.as_ref().map(|c| c.optimal_value);
    let upper = member
        .recoverability
        .as_ref()
        .map(|c| c.upper_optimal_value);
    let worst = member
        .worst_case
        .as_ref()
        .map(|c| c.conditional_value(history));
    match kind {
        PolicyKind::UpperSelfOpt => upper,
        PolicyKind::WorstCaseVs | PolicyKind::WorstCaseUpper => worst.or(upper),
        _ => stable.or(upper),
    }
}

fn best_window(history: &History, window: usize) -> f64 {
    (window..=history.len())
        .map(|e| history.reward_sum(e - window, e))
        .fold(f64::NEG_INFINITY, f64::max)
        / window as f64
}

fn run_seed(
    config: &ExperimentConfig,
    class: &std::sync::Arc<WeightedClass>,
    seed: u64,
    out_dir: &Path,
) -> Result<RunSummary, HarnessError> {
    let mut policy = config.build_policy(class, seed)?;
    let env = class.env(config.true_env).clone();
    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    let every = config.checkpoint_every;
    let traj = simulate_observed(
        env.as_ref(),
        policy.as_mut(),
        config.horizon,
        seed,
        &mut |h, p| {
            if h.len() % every == 0 {
                csv_row(&mut csv, h, p, config.true_env);
            }
        },
    )
    .map_err(|e| HarnessError::Runtime(format!("seed {seed}: {e}")))?;
    let name = csv_name(config, seed);
    let path = out_dir.join(&name);
    std::fs::write(&path, csv).map_err(|e| HarnessError::io(&path, e))?;

    let history = &traj.history;
    let kind = config.policy_kind()?;
    let target = target_value(kind, class, config.true_env, history);
    let final_avg = history.mean_reward();
    let window = SUMMARY_WINDOW.min(config.horizon);
    let checkpoints = std::iter::successors(Some(10usize), |s| s.checked_mul(10))
        .take_while(|&s| s <= config.horizon)
        .map(|step| {
            let avg_reward = history.reward_prefix(step) / step as f64;
            CheckpointGap {
                step,
                avg_reward,
                gap: target.map(|v| (avg_reward - v).abs()),
            }
        })
        .collect();
    log::info!(
        "{} seed {seed}: average {final_avg:.6} target {target:?}",
        config.name
    );
    Ok(RunSummary {
        seed,
        csv: name,
        final_avg,
        target,
        final_gap: target.map(|v| (final_avg - v).abs()),
        window,
        best_window_avg: best_window(history, window),
        checkpoints,
    })
}

/// Runs every seed of `config`, writing one CSV per seed plus the summary
/// and a timestamp sidecar into `out_dir`.
pub fn run_experiment(
    config: &ExperimentConfig,
    out_dir: &Path,
) -> Result<ExperimentSummary, HarnessError> {
    config.validate()?;
    let started = unix_now();
    let clock = std::time::Instant::now();
    let class = config.build_class()?;
    // surface certificate problems before spending any simulation time
    config.build_policy(&class, config.seeds[0])?;
    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let runs = config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(config, &class, seed, out_dir))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = ExperimentSummary {
        name: config.name.clone(),
        policy: config.policy.clone(),
        true_env: class.member(config.true_env).label(),
        horizon: config.horizon,
        checkpoint_every: config.checkpoint_every,
        runs,
    };
    let path = summary_path(config, out_dir);
    let body = serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n";
    std::fs::write(&path, body).map_err(|e| HarnessError::io(&path, e))?;

    let meta = RunMeta {
        name: &config.name,
        started_unix: started,
        finished_unix: unix_now(),
        elapsed_secs: clock.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
    };
    let path = out_dir.join(format!("{}.meta.json", config.name));
    let body = serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n";
    std::fs::write(&path, body).map_err(|e| HarnessError::io(&path, e))?;
    Ok(summary)
}
