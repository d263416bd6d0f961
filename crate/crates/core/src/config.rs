//! Run configuration: flat `section.key=value` text or an equivalent JSON
//! object, resolved against per-algorithm defaults.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dqn::DqnConfig;
use crate::error::{Error, Result};
use crate::grid_env::EnvConfig;
use crate::metrics::ConvergenceConfig;
use crate::ppo::PpoConfig;
use crate::shaping::ShapingConfig;
use crate::trajectory::SpeedLimits;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Dqn,
    Hdqn,
    Ppo,
    Hppo,
}

impl Algo {
    pub const ALL: [Algo; 4] = [Algo::Dqn, Algo::Hdqn, Algo::Ppo, Algo::Hppo];

    pub fn is_hilbert(self) -> bool {
        matches!(self, Algo::Hdqn | Algo::Hppo)
    }

    pub fn is_value_based(self) -> bool {
        matches!(self, Algo::Dqn | Algo::Hdqn)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Algo::Dqn => "dqn",
            Algo::Hdqn => "hdqn",
            Algo::Ppo => "ppo",
            Algo::Hppo => "hppo",
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dqn" => Ok(Algo::Dqn),
            "hdqn" | "h-dqn" => Ok(Algo::Hdqn),
            "ppo" => Ok(Algo::Ppo),
            "hppo" | "h-ppo" => Ok(Algo::Hppo),
            other => Err(Error::Config(format!("unknown algo {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub run_id: String,
    pub algo: Algo,
    pub total_steps: usize,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub env: EnvConfig,
    pub map: Option<PathBuf>,
    pub shaping: ShapingConfig,
    pub guided_exploration: bool,
    pub augment_state: bool,
    pub dqn: DqnConfig,
    pub ppo: PpoConfig,
    pub eval_episodes: usize,
    pub convergence: ConvergenceConfig,
    pub limits: SpeedLimits,
    pub frame_label: String,
    pub step_length: f64,
    pub turn_deg: i32,
}

impl RunConfig {
    /// 16×16 grid, 4 agents, 50k steps, seeds 0–4.
    pub fn desk(algo: Algo) -> Self {
        let h = algo.is_hilbert();
        Self {
            run_id: format!("desk_{algo}"),
            algo,
            total_steps: 50_000,
            seeds: (0..5).collect(),
            out: PathBuf::from("out"),
            env: EnvConfig::open(16, 16, 4),
            map: None,
            shaping: if h {
                ShapingConfig::default()
            } else {
                ShapingConfig::none(0.99)
            },
            guided_exploration: h,
            augment_state: h,
            dqn: DqnConfig::default(),
            ppo: PpoConfig::default(),
            eval_episodes: 5,
            convergence: ConvergenceConfig::default(),
            limits: SpeedLimits::default(),
            frame_label: "VISION".into(),
            step_length: 0.25,
            turn_deg: 30,
        }
    }

    /// DQN settings with the run-level switches applied.
    pub fn dqn_config(&self) -> DqnConfig {
        DqnConfig {
            total_steps: self.total_steps,
            guided_exploration: self.guided_exploration,
            augment_state: self.augment_state,
            ..self.dqn.clone()
        }
    }

    pub fn ppo_config(&self) -> PpoConfig {
        PpoConfig {
            total_steps: self.total_steps,
            guided_exploration: self.guided_exploration,
            augment_state: self.augment_state,
            ..self.ppo.clone()
        }
    }

    pub fn gamma(&self) -> f64 {
        if self.algo.is_value_based() {
            self.dqn.gamma
        } else {
            self.ppo.gamma
        }
    }

    pub fn shaping_config(&self) -> ShapingConfig {
        ShapingConfig {
            gamma: self.gamma(),
            ..self.shaping
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return bad(format!("run id {:?} is not a plain name", self.run_id));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if self.total_steps == 0 || self.eval_episodes == 0 {
            return bad("steps and evaluation episodes must be positive".into());
        }
        if let Some(m) = &self.map {
            if !m.is_file() {
                return bad(format!("map file {} does not exist", m.display()));
            }
        }
        if !(self.step_length > 0.0) || self.turn_deg <= 0 {
            return bad("primitive step and turn resolution must be positive".into());
        }
        self.env.validate()?;
        self.shaping_config().validate()?;
        self.dqn_config().validate()?;
        self.ppo_config().validate()?;
        self.convergence.validate()?;
        self.limits.validate()?;
        Ok(())
    }

    /// Parses `section.key=value` lines. `#` starts a comment. Relative map
    /// paths resolve against `base_dir`.
    pub fn from_kv_text(text: &str, base_dir: &Path) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", n + 1)))?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }
        Self::from_pairs(&pairs, base_dir)
    }

    /// Accepts the nested JSON mirror of the key-value format.
    pub fn from_json_text(text: &str, base_dir: &Path) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid json config: {e}")))?;
        let mut pairs = Vec::new();
        flatten("", &value, &mut pairs)?;
        Self::from_pairs(&pairs, base_dir)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_text(&text, base)
        } else {
            Self::from_kv_text(&text, base)
        }
    }

    pub fn from_pairs(pairs: &[(String, String)], base_dir: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (k, v) in pairs {
            if map.insert(k.as_str(), v.as_str()).is_some() {
                return Err(Error::Config(format!("duplicate key {k}")));
            }
        }
        let algo = map.get("run.algo").map_or(Ok(Algo::Hppo), |s| s.parse())?;
        let mut cfg = Self::desk(algo);
        for (&k, &v) in &map {
            cfg.set(k, v, base_dir)?;
        }
        if let Some(path) = cfg.map.clone() {
            if !path.is_file() {
                return Err(Error::Config(format!(
                    "map file {} does not exist",
                    path.display()
                )));
            }
            cfg.env.load_map(&path)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str, base_dir: &Path) -> Result<()> {
        let v = value;
        match key {
            "run.id" => self.run_id = v.to_string(),
            "run.algo" => {}
            "run.steps" => self.total_steps = num(key, v)?,
            "run.seeds" => self.seeds = list(key, v)?,
            "run.out" => self.out = PathBuf::from(v),
            "env.width" => self.env.width = num(key, v)?,
            "env.height" => self.env.height = num(key, v)?,
            "env.agents" => self.env.n_agents = num(key, v)?,
            "env.targets" => self.env.n_targets = num(key, v)?,
            "env.horizon" => self.env.horizon = auto(key, v)?,
            "env.obs_radius" => self.env.obs_radius = num(key, v)?,
            "env.cell_size" => self.env.cell_size_m = num(key, v)?,
            "env.map" => {
                self.map = (!v.is_empty()).then(|| {
                    let p = PathBuf::from(v);
                    if p.is_absolute() {
                        p
                    } else {
                        base_dir.join(p)
                    }
                })
            }
            "shaping.mode" => self.shaping.mode = v.parse()?,
            "shaping.alpha" => self.shaping.alpha = num(key, v)?,
            "shaping.r_h" => self.shaping.r_h = num(key, v)?,
            "explore.guided" => self.guided_exploration = flag(key, v)?,
            "explore.augment" => self.augment_state = flag(key, v)?,
            "dqn.gamma" => self.dqn.gamma = num(key, v)?,
            "dqn.batch" => self.dqn.batch = num(key, v)?,
            "dqn.buffer" => self.dqn.buffer_capacity = num(key, v)?,
            "dqn.target_sync" => self.dqn.target_sync_every = num(key, v)?,
            "dqn.eps_start" => self.dqn.eps_start = num(key, v)?,
            "dqn.eps_end" => self.dqn.eps_end = num(key, v)?,
            "dqn.lr" => self.dqn.lr = num(key, v)?,
            "dqn.hidden" => self.dqn.hidden = list(key, v)?,
            "ppo.gamma" => self.ppo.gamma = num(key, v)?,
            "ppo.lambda" => self.ppo.gae_lambda = num(key, v)?,
            "ppo.clip" => self.ppo.clip = num(key, v)?,
            "ppo.eps_start" => self.ppo.eps_start = num(key, v)?,
            "ppo.eps_min" => self.ppo.eps_min = num(key, v)?,
            "ppo.kappa" => self.ppo.kappa = auto(key, v)?,
            "ppo.epochs" => self.ppo.epochs = num(key, v)?,
            "ppo.minibatch" => self.ppo.minibatch = num(key, v)?,
            "ppo.lr_policy" => self.ppo.lr_policy = num(key, v)?,
            "ppo.lr_value" => self.ppo.lr_value = num(key, v)?,
            "ppo.horizon" => self.ppo.horizon = num(key, v)?,
            "ppo.hidden" => self.ppo.hidden = list(key, v)?,
            "ppo.mixture" => self.ppo.mixture_correction = flag(key, v)?,
            "ppo.entropy" => self.ppo.entropy_coef = num(key, v)?,
            "eval.every" => self.convergence.eval_every = num(key, v)?,
            "eval.episodes" => self.eval_episodes = num(key, v)?,
            "eval.window" => self.convergence.window_episodes = num(key, v)?,
            "eval.threshold" => self.convergence.threshold = num(key, v)?,
            "eval.consecutive" => self.convergence.consecutive = num(key, v)?,
            "traj.v_max" => self.limits.v_max = num(key, v)?,
            "traj.a_max" => self.limits.a_max = num(key, v)?,
            "traj.omega_max" => self.limits.omega_max = num(key, v)?,
            "traj.frame" => self.frame_label = v.to_string(),
            "traj.step" => self.step_length = num(key, v)?,
            "traj.turn_deg" => self.turn_deg = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let join = |xs: &[usize]| {
            xs.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let opt = |o: Option<String>| o.unwrap_or_else(|| "auto".into());
        let v: Vec<(&str, String)> = vec![
            ("run.id", self.run_id.clone()),
            ("run.algo", self.algo.to_string()),
            ("run.steps", self.total_steps.to_string()),
            (
                "run.seeds",
                self.seeds
                    .iter()
                    .map(|s| s.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            ("run.out", self.out.display().to_string()),
            ("env.width", self.env.width.to_string()),
            ("env.height", self.env.height.to_string()),
            ("env.agents", self.env.n_agents.to_string()),
            ("env.targets", self.env.n_targets.to_string()),
            ("env.horizon", opt(self.env.horizon.map(|h| h.to_string()))),
            ("env.obs_radius", self.env.obs_radius.to_string()),
            ("env.cell_size", self.env.cell_size_m.to_string()),
            (
                "env.map",
                self.map
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("shaping.mode", self.shaping.mode.to_string()),
            ("shaping.alpha", self.shaping.alpha.to_string()),
            ("shaping.r_h", self.shaping.r_h.to_string()),
            ("explore.guided", self.guided_exploration.to_string()),
            ("explore.augment", self.augment_state.to_string()),
            ("dqn.gamma", self.dqn.gamma.to_string()),
            ("dqn.batch", self.dqn.batch.to_string()),
            ("dqn.buffer", self.dqn.buffer_capacity.to_string()),
            ("dqn.target_sync", self.dqn.target_sync_every.to_string()),
            ("dqn.eps_start", self.dqn.eps_start.to_string()),
            ("dqn.eps_end", self.dqn.eps_end.to_string()),
            ("dqn.lr", self.dqn.lr.to_string()),
            ("dqn.hidden", join(&self.dqn.hidden)),
            ("ppo.gamma", self.ppo.gamma.to_string()),
            ("ppo.lambda", self.ppo.gae_lambda.to_string()),
            ("ppo.clip", self.ppo.clip.to_string()),
            ("ppo.eps_start", self.ppo.eps_start.to_string()),
            ("ppo.eps_min", self.ppo.eps_min.to_string()),
            ("ppo.kappa", opt(self.ppo.kappa.map(|k| k.to_string()))),
            ("ppo.epochs", self.ppo.epochs.to_string()),
            ("ppo.minibatch", self.ppo.minibatch.to_string()),
            ("ppo.lr_policy", self.ppo.lr_policy.to_string()),
            ("ppo.lr_value", self.ppo.lr_value.to_string()),
            ("ppo.horizon", self.ppo.horizon.to_string()),
            ("ppo.hidden", join(&self.ppo.hidden)),
            ("ppo.mixture", self.ppo.mixture_correction.to_string()),
            ("ppo.entropy", self.ppo.entropy_coef.to_string()),
            ("eval.every", self.convergence.eval_every.to_string()),
            ("eval.episodes", self.eval_episodes.to_string()),
            ("eval.window", self.convergence.window_episodes.to_string()),
            ("eval.threshold", self.convergence.threshold.to_string()),
            ("eval.consecutive", self.convergence.consecutive.to_string()),
            ("traj.v_max", self.limits.v_max.to_string()),
            ("traj.a_max", self.limits.a_max.to_string()),
            ("traj.omega_max", self.limits.omega_max.to_string()),
            ("traj.frame", self.frame_label.clone()),
            ("traj.step", self.step_length.to_string()),
            ("traj.turn_deg", self.turn_deg.to_string()),
        ];
        v.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_kv_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    /// Same run restricted to one seed.
    pub fn for_seed(&self, seed: u64) -> Self {
        Self {
            seeds: vec![seed],
            ..self.clone()
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected a boolean, got {v:?}"
        ))),
    }
}

fn auto<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v == "auto" || v.is_empty() {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

fn list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| num(key, x.trim())).collect()
}

fn flatten(prefix: &str, value: &serde_json::Value, out: &mut Vec<(String, String)>) -> Result<()> {
    use serde_json::Value;
    let scalar = |v: &Value| -> Result<String> {
        match v {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            Value::Bool(b) => Ok(b.to_string()),
            Value::Null => Ok("auto".into()),
            _ => Err(Error::Config(format!(
                "{prefix}: nested value not allowed here"
            ))),
        }
    };
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out)?;
            }
        }
        Value::Array(items) => {
            let parts = items.iter().map(scalar).collect::<Result<Vec<_>>>()?;
            out.push((prefix.to_string(), parts.join(",")));
        }
        v if !prefix.is_empty() => out.push((prefix.to_string(), scalar(v)?)),
        _ => return Err(Error::Config("config root must be an object".into())),
    }
    Ok(())
}
