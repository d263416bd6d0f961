//! Hilbert-curve guided multi-agent coverage.
//!
//! The crate bundles a grid-world coverage environment, value-based and
//! policy-gradient learners that can follow a Hilbert curve during
//! exploration, evaluation/aggregation utilities, and a pipeline that turns
//! cell orderings into time-parameterized SE(2) trajectories and discrete
//! step/turn programs.

pub mod cell;
pub mod config;
pub mod dqn;
pub mod error;
pub mod grid_env;
pub mod hilbert;
pub mod metrics;
pub mod nn;
pub mod ppo;
pub mod runner;
pub mod shaping;
pub mod trajectory;

pub use cell::{Action, Cell};
pub use error::{Error, Result};
