//! Training, evaluation, comparison and trajectory export pipelines behind
//! the command-line tool.
//!
//! Layout of a training run:
//!
//! ```text
//! <out>/<run_id>/summary.json
//! <out>/<run_id>/seed_<n>/config.cfg
//! <out>/<run_id>/seed_<n>/eval.csv
//! <out>/<run_id>/seed_<n>/checkpoint.json
//! <out>/<run_id>/seed_<n>/run_summary.json
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cell::Cell;
use crate::config::{Algo, RunConfig};
use crate::dqn::{DqnGreedy, DqnTrainer};
use crate::error::{Error, Result};
use crate::grid_env::{EnvConfig, GridWorld};
use crate::metrics::{
    aggregate_seeds, detect_convergence, evaluate, read_eval_csv, write_eval_csv, Aggregate,
    EvalRecord, EvalRow, GreedyPolicy,
};
use crate::nn::{AdamSnapshot, MlpNet, NetSnapshot};
use crate::ppo::{PpoGreedy, PpoTrainer};
use crate::trajectory::{
    cells_to_waypoints, expand_cells, time_parameterize, to_primitives, validate_trajectory,
    TimedSe2Trajectory, ValidationReport,
};

pub const CHECKPOINT_FORMAT: &str = "hswarm-checkpoint/1";

/// Seed for the evaluation episodes run at `step`.
pub fn eval_seed(seed: u64, step: usize) -> u64 {
    seed.wrapping_mul(0x2545_F491_4F6C_DD1D) ^ (step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

enum Trainer {
    Dqn(Box<DqnTrainer>),
    Ppo(Box<PpoTrainer>),
}

impl Trainer {
    fn new(cfg: &RunConfig, seed: u64) -> Result<Self> {
        let env = GridWorld::new(
            EnvConfig {
                seed,
                ..cfg.env.clone()
            },
            cfg.shaping_config(),
        )?;
        Ok(if cfg.algo.is_value_based() {
            Trainer::Dqn(Box::new(DqnTrainer::new(cfg.dqn_config(), env, seed)?))
        } else {
            Trainer::Ppo(Box::new(PpoTrainer::new(cfg.ppo_config(), env, seed)?))
        })
    }

    fn env_steps(&self) -> usize {
        match self {
            Trainer::Dqn(t) => t.env_steps(),
            Trainer::Ppo(t) => t.env_steps(),
        }
    }

    fn advance_to(&mut self, goal: usize) -> Result<()> {
        let steps = goal.saturating_sub(self.env_steps());
        match self {
            Trainer::Dqn(t) => t.advance(steps).map(|_| ()),
            Trainer::Ppo(t) => t.advance(steps),
        }
    }

    fn evaluate(&self, episodes: usize, seed: u64) -> Result<EvalRecord> {
        let step = self.env_steps();
        match self {
            Trainer::Dqn(t) => evaluate(t.env(), &t.greedy(), episodes, seed, step),
            Trainer::Ppo(t) => evaluate(t.env(), &t.greedy(), episodes, seed, step),
        }
    }

    fn episode_returns(&self) -> &[f64] {
        match self {
            Trainer::Dqn(t) => &t.episode_returns,
            Trainer::Ppo(t) => &t.episode_returns,
        }
    }

    fn networks(
        &self,
    ) -> (
        BTreeMap<String, NetSnapshot>,
        BTreeMap<String, AdamSnapshot>,
    ) {
        let mut nets = BTreeMap::new();
        let mut opts = BTreeMap::new();
        match self {
            Trainer::Dqn(t) => {
                nets.insert("q".to_string(), t.learner.q.snapshot());
                nets.insert("target".to_string(), t.learner.target.snapshot());
                opts.insert("q".to_string(), t.learner.adam.snapshot());
            }
            Trainer::Ppo(t) => {
                nets.insert("policy".to_string(), t.learner.policy.snapshot());
                nets.insert("value".to_string(), t.learner.value.snapshot());
                opts.insert("policy".to_string(), t.learner.policy_adam.snapshot());
                opts.insert("value".to_string(), t.learner.value_adam.snapshot());
            }
        }
        (nets, opts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub algo: Algo,
    pub seed: u64,
    pub env_steps: usize,
    /// Resolved configuration as key-value pairs.
    pub config: Vec<(String, String)>,
    pub networks: BTreeMap<String, NetSnapshot>,
    pub optimizers: BTreeMap<String, AdamSnapshot>,
}

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(format!("{}: {m}", path.display()));
        let text = fs::read_to_string(path).map_err(|e| bad(e.to_string()))?;
        let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("unsupported format {:?}", ck.format)));
        }
        ck.run_config().map_err(|e| bad(e.to_string()))?;
        ck.policy_net()?;
        Ok(ck)
    }

    pub fn run_config(&self) -> Result<RunConfig> {
        RunConfig::from_pairs(&self.config, Path::new("."))
    }

    /// Network used for greedy action selection.
    pub fn policy_net(&self) -> Result<MlpNet> {
        let key = if self.algo.is_value_based() {
            "q"
        } else {
            "policy"
        };
        let snap = self
            .networks
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing {key} network")))?;
        MlpNet::from_snapshot(snap)
    }
}

/// Greedy policy restored from a checkpoint.
pub struct LoadedPolicy {
    algo: Algo,
    net: MlpNet,
    augment_state: bool,
}

impl LoadedPolicy {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let cfg = ck.run_config()?;
        Ok(Self {
            algo: ck.algo,
            net: ck.policy_net()?,
            augment_state: cfg.augment_state,
        })
    }
}

impl GreedyPolicy for LoadedPolicy {
    fn greedy_actions(
        &self,
        obs: &[crate::grid_env::Observation],
    ) -> Result<Vec<crate::cell::Action>> {
        if self.algo.is_value_based() {
            DqnGreedy {
                q: &self.net,
                augment_state: self.augment_state,
            }
            .greedy_actions(obs)
        } else {
            PpoGreedy {
                policy: &self.net,
                augment_state: self.augment_state,
            }
            .greedy_actions(obs)
        }
    }
}

/// Contents of `run_summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub run_id: String,
    pub algo: Algo,
    pub n_agents: usize,
    pub seed: u64,
    pub env_steps: usize,
    pub episodes: usize,
    pub final_reward: f64,
    pub final_coverage: f64,
    pub final_redundancy: f64,
    /// Episode index of convergence; absent when the run never converged.
    pub t_conv: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub coverage: Aggregate,
    pub redundancy: Aggregate,
    pub reward: Aggregate,
    pub t_conv: Aggregate,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub algo: Algo,
    pub n_agents: usize,
    pub seeds: Vec<SeedSummary>,
    pub metrics: MetricSummary,
}

/// Mean and t-interval, tolerating a single seed.
pub fn summarize(values: &[f64]) -> Aggregate {
    if values.len() >= 2 {
        if let Ok(a) = aggregate_seeds(values, 0.95) {
            return a;
        }
    }
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    Aggregate {
        mean: finite.first().copied(),
        half_width: None,
        n: finite.len(),
        censored: values.len() - finite.len(),
    }
}

fn metric_summary(seeds: &[SeedSummary]) -> MetricSummary {
    let pick = |f: fn(&SeedSummary) -> f64| summarize(&seeds.iter().map(f).collect::<Vec<_>>());
    MetricSummary {
        coverage: pick(|s| s.final_coverage),
        redundancy: pick(|s| s.final_redundancy),
        reward: pick(|s| s.final_reward),
        t_conv: pick(|s| s.t_conv.map_or(f64::INFINITY, |t| t as f64)),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[derive(Serialize)]
struct Diagnostic<'a> {
    run_id: &'a str,
    algo: Algo,
    seed: u64,
    env_steps: usize,
    episodes: usize,
    error: String,
    config: Vec<(String, String)>,
}

/// Trains one seed and writes its artifacts into `dir`.
pub fn train_seed(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<SeedSummary> {
    fs::create_dir_all(dir)?;
    let seed_cfg = cfg.for_seed(seed);
    fs::write(dir.join("config.cfg"), seed_cfg.to_kv_text())?;
    let mut trainer = Trainer::new(cfg, seed)?;
    let mut rows = Vec::new();
    let mut last: Option<EvalRecord> = None;
    let every = cfg.convergence.eval_every;
    let mut next = every;
    while trainer.env_steps() < cfg.total_steps {
        let goal = next.min(cfg.total_steps);
        if let Err(e) = trainer.advance_to(goal) {
            if let Error::Training(_) = e {
                write_json(
                    &dir.join("diag.json"),
                    &Diagnostic {
                        run_id: &cfg.run_id,
                        algo: cfg.algo,
                        seed,
                        env_steps: trainer.env_steps(),
                        episodes: trainer.episode_returns().len(),
                        error: e.to_string(),
                        config: seed_cfg.to_pairs(),
                    },
                )?;
            }
            return Err(e);
        }
        let steps = trainer.env_steps();
        if steps >= next || steps >= cfg.total_steps {
            let rec = trainer.evaluate(cfg.eval_episodes, eval_seed(seed, steps))?;
            rows.push(EvalRow {
                run_id: cfg.run_id.clone(),
                algo: cfg.algo.to_string(),
                n_agents: cfg.env.n_agents,
                seed,
                step: steps,
                reward: rec.reward,
                coverage: rec.coverage,
                redundancy: rec.redundancy,
            });
            last = Some(rec);
            while next <= steps {
                next += every;
            }
        }
    }
    write_eval_csv(fs::File::create(dir.join("eval.csv"))?, &rows)?;
    let (networks, optimizers) = trainer.networks();
    write_json(
        &dir.join("checkpoint.json"),
        &Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            algo: cfg.algo,
            seed,
            env_steps: trainer.env_steps(),
            config: seed_cfg.to_pairs(),
            networks,
            optimizers,
        },
    )?;
    let last = last.ok_or_else(|| Error::Config("run produced no evaluation".into()))?;
    let summary = SeedSummary {
        run_id: cfg.run_id.clone(),
        algo: cfg.algo,
        n_agents: cfg.env.n_agents,
        seed,
        env_steps: trainer.env_steps(),
        episodes: trainer.episode_returns().len(),
        final_reward: last.reward,
        final_coverage: last.coverage,
        final_redundancy: last.redundancy,
        t_conv: detect_convergence(trainer.episode_returns(), &cfg.convergence),
    };
    write_json(&dir.join("run_summary.json"), &summary)?;
    Ok(summary)
}

/// Runs every configured seed under `<out_root>/<run_id>`.
pub fn cmd_train(cfg: &RunConfig, out_root: &Path) -> Result<RunSummary> {
    cfg.validate()?;
    let run_dir = out_root.join(&cfg.run_id);
    fs::create_dir_all(&run_dir)?;
    let mut seeds = Vec::new();
    for &seed in &cfg.seeds {
        seeds.push(train_seed(
            cfg,
            seed,
            &run_dir.join(format!("seed_{seed}")),
        )?);
    }
    let summary = RunSummary {
        run_id: cfg.run_id.clone(),
        algo: cfg.algo,
        n_agents: cfg.env.n_agents,
        metrics: metric_summary(&seeds),
        seeds,
    };
    write_json(&run_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Greedy evaluation of a saved checkpoint.
pub fn cmd_eval(
    checkpoint: &Path,
    episodes: Option<usize>,
    seed: Option<u64>,
) -> Result<EvalRecord> {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = ck.run_config()?;
    let policy = LoadedPolicy::from_checkpoint(&ck)?;
    let env = GridWorld::new(cfg.env.clone(), cfg.shaping_config())?;
    let seed = seed.unwrap_or(ck.seed);
    evaluate(
        &env,
        &policy,
        episodes.unwrap_or(cfg.eval_episodes),
        eval_seed(seed, ck.env_steps),
        ck.env_steps,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub algo: Algo,
    pub n_agents: usize,
    pub seeds: usize,
    pub metrics: MetricSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    /// Seed directories without a finished summary.
    pub incomplete: Vec<PathBuf>,
}

fn seed_dirs(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(run_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("seed_"))
        })
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// Groups finished seeds of the given run directories by algorithm and team size.
pub fn cmd_compare(run_dirs: &[PathBuf]) -> Result<Comparison> {
    if run_dirs.is_empty() {
        return Err(Error::Config(
            "compare needs at least one run directory".into(),
        ));
    }
    let mut groups: BTreeMap<(Algo, usize), Vec<SeedSummary>> = BTreeMap::new();
    let mut incomplete = Vec::new();
    for run in run_dirs {
        if !run.is_dir() {
            return Err(Error::Config(format!(
                "{} is not a run directory",
                run.display()
            )));
        }
        for dir in seed_dirs(run)? {
            let parsed = fs::read_to_string(dir.join("run_summary.json"))
                .ok()
                .and_then(|t| serde_json::from_str::<SeedSummary>(&t).ok())
                .filter(|_| read_eval_csv(&dir.join("eval.csv")).is_ok_and(|r| !r.is_empty()));
            match parsed {
                Some(s) => groups.entry((s.algo, s.n_agents)).or_default().push(s),
                None => incomplete.push(dir),
            }
        }
    }
    if groups.is_empty() {
        return Err(Error::Config("no completed runs to compare".into()));
    }
    let rows = groups
        .into_iter()
        .map(|((algo, n_agents), seeds)| ComparisonRow {
            algo,
            n_agents,
            seeds: seeds.len(),
            metrics: metric_summary(&seeds),
        })
        .collect();
    Ok(Comparison { rows, incomplete })
}

fn fmt_agg(a: &Aggregate, digits: usize) -> String {
    match (a.mean, a.half_width) {
        (Some(m), Some(h)) => format!("{m:.digits$} ± {h:.digits$}"),
        (Some(m), None) => format!("{m:.digits$}"),
        _ => "inf".into(),
    }
}

impl Comparison {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<6} {:>6} {:>5}  {:<17} {:<17} {:<17} {:<20}\n",
            "algo", "agents", "seeds", "coverage", "redundancy", "reward", "t_conv"
        );
        for r in &self.rows {
            let mut t = fmt_agg(&r.metrics.t_conv, 1);
            if r.metrics.t_conv.censored > 0 {
                let _ = write!(t, " ({} inf)", r.metrics.t_conv.censored);
            }
            let _ = writeln!(
                out,
                "{:<6} {:>6} {:>5}  {:<17} {:<17} {:<17} {:<20}",
                r.algo.to_string(),
                r.n_agents,
                r.seeds,
                fmt_agg(&r.metrics.coverage, 3),
                fmt_agg(&r.metrics.redundancy, 3),
                fmt_agg(&r.metrics.reward, 3),
                t
            );
        }
        for d in &self.incomplete {
            let _ = writeln!(out, "incomplete: {}", d.display());
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "algo",
            "n_agents",
            "seeds",
            "coverage_mean",
            "coverage_ci",
            "redundancy_mean",
            "redundancy_ci",
            "reward_mean",
            "reward_ci",
            "t_conv_mean",
            "t_conv_ci",
            "t_conv_censored",
        ])?;
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            let m = &r.metrics;
            w.write_record([
                r.algo.to_string(),
                r.n_agents.to_string(),
                r.seeds.to_string(),
                cell(m.coverage.mean),
                cell(m.coverage.half_width),
                cell(m.redundancy.mean),
                cell(m.redundancy.half_width),
                cell(m.reward.mean),
                cell(m.reward.half_width),
                cell(m.t_conv.mean),
                cell(m.t_conv.half_width),
                m.t_conv.censored.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum TrajSource {
    HilbertSweep,
    Checkpoint(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExportReport {
    pub cells: usize,
    pub waypoints: usize,
    /// Visits over unique cells along the expanded path.
    pub redundancy: f64,
    pub duration: f64,
    pub trajectory_file: PathBuf,
    pub primitives_file: PathBuf,
    pub validation: ValidationReport,
}

/// Single-agent greedy rollout on the configured workspace.
fn rollout_cells(cfg: &RunConfig, policy: &dyn GreedyPolicy, seed: u64) -> Result<Vec<Cell>> {
    let mut env = GridWorld::new(
        EnvConfig {
            n_agents: 1,
            ..cfg.env.clone()
        },
        cfg.shaping_config(),
    )?;
    let mut obs = env.reset(seed);
    let mut cells = vec![env.agents()[0]];
    loop {
        let actions = policy.greedy_actions(&obs)?;
        let r = env.step(&actions)?;
        cells.push(env.agents()[0]);
        if r.done {
            break;
        }
        obs = r.observations;
    }
    Ok(cells)
}

/// Converts a cell ordering into `trajectory.json` and `primitives.txt`
/// inside `out_dir` and validates the trajectory.
pub fn cmd_export_traj(
    cfg: &RunConfig,
    source: &TrajSource,
    out_dir: &Path,
) -> Result<ExportReport> {
    let cells = match source {
        TrajSource::HilbertSweep => cfg.env.hilbert_map()?.cells().to_vec(),
        TrajSource::Checkpoint(path) => {
            let ck = Checkpoint::load(path)?;
            let policy = LoadedPolicy::from_checkpoint(&ck)?;
            rollout_cells(cfg, &policy, ck.seed)?
        }
    };
    let expanded = expand_cells(&cells);
    let unique: std::collections::BTreeSet<Cell> = expanded.iter().copied().collect();
    let path = cells_to_waypoints(&cells, cfg.env.cell_size_m)?;
    let traj = time_parameterize(&path, &cfg.limits, 0.0, &cfg.frame_label)?;
    let heading = path.headings().first().copied().unwrap_or(0.0);
    let program = to_primitives(&path, heading, cfg.step_length, cfg.turn_deg)?;
    fs::create_dir_all(out_dir)?;
    let trajectory_file = out_dir.join("trajectory.json");
    let primitives_file = out_dir.join("primitives.txt");
    fs::write(&trajectory_file, traj.to_json()? + "\n")?;
    fs::write(&primitives_file, program.to_text())?;
    let validation = validate_trajectory(&traj, &cfg.limits);
    let report = ExportReport {
        cells: expanded.len(),
        waypoints: path.len(),
        redundancy: expanded.len() as f64 / unique.len() as f64,
        duration: traj.duration(),
        trajectory_file,
        primitives_file,
        validation,
    };
    if let Some(v) = &report.validation.violation {
        return Err(Error::Validation(format!(
            "{} violation at sample {}: {} > {}",
            v.kind, v.index, v.value, v.limit
        )));
    }
    Ok(report)
}

pub fn cmd_validate_traj(path: &Path, cfg: &RunConfig) -> Result<ValidationReport> {
    let text = fs::read_to_string(path)?;
    let traj = TimedSe2Trajectory::from_json(&text)?;
    let report = validate_trajectory(&traj, &cfg.limits);
    match &report.violation {
        Some(v) => Err(Error::Validation(format!(
            "{} violation at sample {}: {} > {}",
            v.kind, v.index, v.value, v.limit
        ))),
        None => Ok(report),
    }
}
