//! Curve-progress reward shaping.
//!
//! Two transforms are available: a fixed bonus `r_h` for stepping to the
//! immediate curve successor, and the potential form
//! `r' = r + γ·Φ(h') − Φ(h)` with `Φ(h) = α·h` over integer ranks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapingMode {
    None,
    Heuristic,
    Potential,
}

impl std::str::FromStr for ShapingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ShapingMode::None),
            "heuristic" => Ok(ShapingMode::Heuristic),
            "potential" => Ok(ShapingMode::Potential),
            other => Err(Error::Config(format!("unknown shaping mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for ShapingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ShapingMode::None => "none",
            ShapingMode::Heuristic => "heuristic",
            ShapingMode::Potential => "potential",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapingConfig {
    pub mode: ShapingMode,
    /// Potential scale α.
    pub alpha: f64,
    /// Heuristic successor bonus.
    pub r_h: f64,
    /// Discount shared with the learner.
    pub gamma: f64,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        Self {
            mode: ShapingMode::Potential,
            alpha: 0.01,
            r_h: 0.05,
            gamma: 0.99,
        }
    }
}

impl ShapingConfig {
    pub fn none(gamma: f64) -> Self {
        Self {
            mode: ShapingMode::None,
            gamma,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "shaping.alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if !(self.r_h >= 0.0 && self.r_h.is_finite()) {
            return Err(Error::Config(format!(
                "shaping.r_h must be >= 0, got {}",
                self.r_h
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!(
                "gamma must lie in [0, 1), got {}",
                self.gamma
            )));
        }
        Ok(())
    }
}

/// `Φ(h) = α·h`.
pub fn potential(rank: usize, alpha: f64) -> f64 {
    alpha * rank as f64
}

/// Reward after shaping the transition `rank → next_rank`.
pub fn shaped_reward(reward: f64, rank: usize, next_rank: usize, cfg: &ShapingConfig) -> f64 {
    match cfg.mode {
        ShapingMode::None => reward,
        ShapingMode::Heuristic => {
            if next_rank == rank + 1 {
                reward + cfg.r_h
            } else {
                reward
            }
        }
        ShapingMode::Potential => {
            reward + cfg.gamma * potential(next_rank, cfg.alpha) - potential(rank, cfg.alpha)
        }
    }
}
