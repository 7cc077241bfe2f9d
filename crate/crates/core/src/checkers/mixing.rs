use rayon::prelude::*;

use crate::error::SimError;
use crate::sim::{mix_seed, simulate, Environment, Policy};

/// Longest cylinder window the estimator accepts.
pub const MAX_EVENT_LEN: usize = 8;

/// Cylinder events over the reward sequence. A past event `b` holds when the
/// rewards ending at the anchor step equal `b`; a future event `c` holds when
/// the rewards starting `lag` steps after the anchor equal `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct CylinderEvents {
    pub past: Vec<Vec<f64>>,
    pub future: Vec<Vec<f64>>,
}

impl CylinderEvents {
    /// Every reward pattern of length `len` over `values`, on both sides.
    pub fn all_patterns(values: &[f64], len: usize) -> Self {
        let mut patterns: Vec<Vec<f64>> = vec![Vec::new()];
        for _ in 0..len {
            patterns = patterns
                .into_iter()
                .flat_map(|p| {
                    values.iter().map(move |&v| {
                        let mut q = p.clone();
                        q.push(v);
                        q
                    })
                })
                .collect();
        }
        Self {
            past: patterns.clone(),
            future: patterns,
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let all = self.past.iter().chain(&self.future);
        for p in all {
            if p.is_empty() || p.len() > MAX_EVENT_LEN {
                return Err(SimError::InvalidSpace(format!(
                    "cylinder event length {} outside 1..={MAX_EVENT_LEN}",
                    p.len()
                )));
            }
        }
        if self.past.is_empty() || self.future.is_empty() {
            return Err(SimError::InvalidSpace("empty cylinder event family".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixingConfig {
    /// Lags to estimate, each at least 1.
    pub lags: Vec<u64>,
    pub events: CylinderEvents,
    pub n_samples: usize,
    pub seed: u64,
    /// Steps discarded before the earliest anchor.
    pub burn_in: u64,
    /// Anchors are drawn uniformly from `spread` consecutive steps, which
    /// randomizes the phase of periodic processes.
    pub anchor_spread: u64,
}

/// Point estimates and delta-method standard errors per lag. A diagnostic,
/// not a certified bound.
#[derive(Clone, Debug, PartialEq)]
pub struct MixingEstimate {
    pub lags: Vec<u64>,
    pub alpha: Vec<f64>,
    pub std_error: Vec<f64>,
}

fn matches(rewards: &[f64], start: usize, pattern: &[f64]) -> bool {
    rewards[start..start + pattern.len()] == *pattern
}

/// `policy` builds the behaviour policy for one sample from that sample's seed.
pub fn estimate_mixing_coefficients(
    env: &dyn Environment,
    policy: &(dyn Fn(u64) -> Box<dyn Policy> + Sync),
    config: &MixingConfig,
) -> Result<MixingEstimate, SimError> {
    config.events.validate()?;
    if config.lags.contains(&0) {
        return Err(SimError::InvalidSpace("mixing lags start at 1".into()));
    }
    let ev = &config.events;
    let past_len = ev.past.iter().map(Vec::len).max().unwrap_or(1);
    let future_len = ev.future.iter().map(Vec::len).max().unwrap_or(1);
    let max_lag = config.lags.iter().copied().max().unwrap_or(1) as usize;
    let spread = config.anchor_spread.max(1);

    // per sample: matched past events, and matched future events per lag
    type Matches = (Vec<usize>, Vec<Vec<usize>>);
    let samples = (0..config.n_samples)
        .into_par_iter()
        .map(|i| -> Result<Matches, SimError> {
            let seed = mix_seed(config.seed, i as u64);
            let anchor =
                config.burn_in as usize + past_len - 1 + (mix_seed(seed, 0xa4c) % spread) as usize;
            let horizon = anchor + max_lag + future_len;
            let mut p = policy(mix_seed(seed, 0x9011));
            let traj = simulate(env, p.as_mut(), horizon, seed)?;
            let rewards: Vec<f64> = traj
                .history
                .steps()
                .iter()
                .map(|s| s.percept.reward)
                .collect();
            let past = (0..ev.past.len())
                .filter(|&b| matches(&rewards, anchor + 1 - ev.past[b].len(), &ev.past[b]))
                .collect();
            let future = config
                .lags
                .iter()
                .map(|&lag| {
                    (0..ev.future.len())
                        .filter(|&c| matches(&rewards, anchor + lag as usize, &ev.future[c]))
                        .collect()
                })
                .collect();
            Ok((past, future))
        })
        .collect::<Result<Vec<Matches>, _>>()?;

    let n = config.n_samples as f64;
    let mut p_past = vec![0.0; ev.past.len()];
    for (past, _) in &samples {
        for &b in past {
            p_past[b] += 1.0 / n;
        }
    }
    let mut alpha = Vec::with_capacity(config.lags.len());
    let mut std_error = Vec::with_capacity(config.lags.len());
    for l in 0..config.lags.len() {
        let mut p_future = vec![0.0; ev.future.len()];
        let mut joint = vec![0.0; ev.past.len() * ev.future.len()];
        for (past, future) in &samples {
            for &c in &future[l] {
                p_future[c] += 1.0 / n;
                for &b in past {
                    joint[b * ev.future.len() + c] += 1.0 / n;
                }
            }
        }
        let mut best = (0.0f64, 0, 0);
        for b in 0..ev.past.len() {
            for c in 0..ev.future.len() {
                let dev = (joint[b * ev.future.len() + c] - p_past[b] * p_future[c]).abs();
                if dev > best.0 {
                    best = (dev, b, c);
                }
            }
        }
        let (dev, b, c) = best;
        // influence function of P(BC) - P(B)P(C)
        let (pb, pc) = (p_past[b], p_future[c]);
        let values: Vec<f64> = samples
            .iter()
            .map(|(past, future)| {
                let ib = f64::from(u8::from(past.contains(&b)));
                let ic = f64::from(u8::from(future[l].contains(&c)));
                ib * ic - pc * ib - pb * ic
            })
            .collect();
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        alpha.push(dev);
        std_error.push((var / n).sqrt());
    }
    Ok(MixingEstimate {
        lags: config.lags.clone(),
        alpha,
        std_error,
    })
}
