//! Seedable cooperative environments.

mod lbf;
mod matrix;

pub use lbf::{Agent, Food, LbfConfig, LbfEnv, LbfState, Pos, LOAD, NONE};
pub use matrix::{MatrixConfig, MatrixEnv, CLIMBING};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("agent {agent}: invalid action {action}")]
    InvalidAction { agent: usize, action: usize },
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("grid has {cells} cells but {needed} entities must be placed")]
    GridTooSmall { cells: usize, needed: usize },
    #[error("invalid environment config: {0}")]
    Config(String),
    #[error("step called before reset or after the episode ended")]
    NotRunning,
}

/// Per-agent observations plus the global state.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub obs: Vec<Vec<f64>>,
    pub state: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub next: Observation,
    pub reward: f64,
    /// Episode is over, by termination or time limit.
    pub done: bool,
    /// Episode ended by reaching a terminal state (not the time limit).
    pub terminal: bool,
}

pub trait Env {
    fn n_agents(&self) -> usize;
    fn n_actions(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn state_dim(&self) -> usize;
    fn max_steps(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Result<Observation, EnvError>;
    fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError>;
    /// Availability mask for one agent in the current state.
    fn available(&self, agent: usize) -> Vec<bool> {
        let _ = agent;
        vec![true; self.n_actions()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvConfig {
    Lbf(LbfConfig),
    Matrix(MatrixConfig),
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::Lbf(LbfConfig::default())
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        match self {
            EnvConfig::Lbf(c) => c.validate(),
            EnvConfig::Matrix(c) => c.validate(),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Env + Send>, EnvError> {
        Ok(match self {
            EnvConfig::Lbf(c) => Box::new(LbfEnv::new(c.clone())?),
            EnvConfig::Matrix(c) => Box::new(MatrixEnv::new(c.clone())?),
        })
    }
}
