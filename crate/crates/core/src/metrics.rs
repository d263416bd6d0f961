//! Greedy evaluation, convergence detection and cross-seed aggregation.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::cell::Action;
use crate::error::{domain, Error, Result};
use crate::grid_env::{GridWorld, Observation};

/// Deterministic action selection used during evaluation.
pub trait GreedyPolicy {
    fn greedy_actions(&self, obs: &[Observation]) -> Result<Vec<Action>>;
}

/// Mean over evaluation episodes at one training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    /// Mean per-agent cumulative task reward.
    pub reward: f64,
    pub coverage: f64,
    pub redundancy: f64,
    pub per_agent_reward: Vec<f64>,
    pub episodes: usize,
}

/// Runs `episodes` greedy episodes on a copy of `env` and averages them.
///
/// Episode `k` is reset with a seed drawn from `seed`, so two calls with the
/// same arguments see identical target layouts.
pub fn evaluate<P: GreedyPolicy + ?Sized>(
    env: &GridWorld,
    policy: &P,
    episodes: usize,
    seed: u64,
    step: usize,
) -> Result<EvalRecord> {
    if episodes == 0 {
        return domain("evaluation needs at least one episode");
    }
    let mut env = env.clone();
    let n = env.n_agents();
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut per_agent = vec![0.0; n];
    let (mut coverage, mut redundancy) = (0.0, 0.0);
    for _ in 0..episodes {
        let mut obs = env.reset(seeds.gen());
        loop {
            let actions = policy.greedy_actions(&obs)?;
            let result = env.step(&actions)?;
            for (acc, r) in per_agent.iter_mut().zip(&result.task_rewards) {
                *acc += r;
            }
            if result.done {
                break;
            }
            obs = result.observations;
        }
        coverage += env.coverage_ratio();
        redundancy += env.redundancy()?;
    }
    let e = episodes as f64;
    per_agent.iter_mut().for_each(|r| *r /= e);
    Ok(EvalRecord {
        step,
        reward: per_agent.iter().sum::<f64>() / n as f64,
        coverage: coverage / e,
        redundancy: redundancy / e,
        per_agent_reward: per_agent,
        episodes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConfig {
    pub window_episodes: usize,
    pub threshold: f64,
    pub consecutive: usize,
    pub eval_every: usize,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        Self {
            window_episodes: 100,
            threshold: 0.9,
            consecutive: 10,
            eval_every: 10_000,
        }
    }
}

impl ConvergenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config(
                "convergence threshold must lie in (0, 1]".into(),
            ));
        }
        if self.window_episodes == 0 || self.consecutive == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "convergence windows and cadence must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Trailing means; entry `k` averages episodes `k .. k + window`.
pub fn rolling_means(series: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || series.len() < window {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(series.len() - window + 1);
    let mut sum: f64 = series[..window].iter().sum();
    out.push(sum / window as f64);
    for k in window..series.len() {
        sum += series[k] - series[k - window];
        out.push(sum / window as f64);
    }
    out
}

fn qualifies(mean: f64, running_max: f64, fraction: f64) -> bool {
    let bar = if running_max >= 0.0 {
        fraction * running_max
    } else {
        running_max - (1.0 - fraction) * running_max.abs()
    };
    mean >= bar
}

/// Episode index (0-based) at which the rolling mean has stayed above the
/// threshold fraction of the best rolling mean of the whole series for the
/// required number of consecutive windows, or `None` if that never happens.
pub fn detect_convergence(series: &[f64], cfg: &ConvergenceConfig) -> Option<usize> {
    let means = rolling_means(series, cfg.window_episodes);
    let best = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut streak = 0;
    for (k, &m) in means.iter().enumerate() {
        if qualifies(m, best, cfg.threshold) {
            streak += 1;
            if streak >= cfg.consecutive {
                return Some(k + cfg.window_episodes - 1);
            }
        } else {
            streak = 0;
        }
    }
    None
}

/// Cross-seed summary; non-finite inputs are censored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: Option<f64>,
    pub half_width: Option<f64>,
    pub n: usize,
    pub censored: usize,
}

pub fn aggregate_seeds(values: &[f64], confidence: f64) -> Result<Aggregate> {
    if values.len() < 2 {
        return domain(format!(
            "aggregation needs at least 2 seeds, got {}",
            values.len()
        ));
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return domain(format!("confidence {confidence} outside (0, 1)"));
    }
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    let censored = values.len() - finite.len();
    let n = finite.len();
    let mean = (n > 0).then(|| finite.iter().sum::<f64>() / n as f64);
    let half_width = match mean {
        Some(mu) if n >= 2 => {
            let var = finite.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1) as f64;
            let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
                .map_err(|e| Error::Domain(e.to_string()))?
                .inverse_cdf(0.5 + confidence / 2.0);
            Some(t * var.sqrt() / (n as f64).sqrt())
        }
        _ => None,
    };
    Ok(Aggregate {
        mean,
        half_width,
        n,
        censored,
    })
}

/// One line of the evaluation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub run_id: String,
    pub algo: String,
    pub n_agents: usize,
    pub seed: u64,
    pub step: usize,
    pub reward: f64,
    pub coverage: f64,
    pub redundancy: f64,
}

pub fn write_eval_csv<W: Write>(out: W, rows: &[EvalRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    if rows.is_empty() {
        w.write_record([
            "run_id",
            "algo",
            "n_agents",
            "seed",
            "step",
            "reward",
            "coverage",
            "redundancy",
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_eval_csv(path: &Path) -> Result<Vec<EvalRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}
