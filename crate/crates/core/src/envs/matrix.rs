use serde::{Deserialize, Serialize};

use super::{Env, EnvError, Observation, StepResult};

/// Two-agent climbing game payoff, row = agent 0's action.
pub const CLIMBING: [f64; 9] = [11.0, -30.0, 0.0, -30.0, 7.0, 6.0, 0.0, 0.0, 5.0];

/// One-step cooperative game with a payoff tensor over joint actions.
///
/// The tensor is row-major with agent 0 as the slowest axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatrixConfig {
    pub n_agents: usize,
    pub n_actions: usize,
    pub payoff: Vec<f64>,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        MatrixConfig {
            n_agents: 2,
            n_actions: 3,
            payoff: CLIMBING.to_vec(),
        }
    }
}

impl MatrixConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.n_agents == 0 || self.n_actions == 0 {
            return Err(EnvError::Config(
                "env.n_agents and env.n_actions must be positive".into(),
            ));
        }
        let cells = (self.n_actions as u64).checked_pow(self.n_agents as u32);
        if cells != Some(self.payoff.len() as u64) {
            return Err(EnvError::Config(format!(
                "env.payoff has {} entries, expected n_actions^n_agents = {}^{}",
                self.payoff.len(),
                self.n_actions,
                self.n_agents
            )));
        }
        if self.payoff.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::Config("env.payoff must be finite".into()));
        }
        Ok(())
    }

    pub fn index(&self, actions: &[usize]) -> usize {
        actions.iter().fold(0, |acc, &a| acc * self.n_actions + a)
    }

    /// Payoff of a joint action.
    pub fn payoff_of(&self, actions: &[usize]) -> Result<f64, EnvError> {
        check_actions(actions, self.n_agents, self.n_actions)?;
        Ok(self.payoff[self.index(actions)])
    }

    /// Best joint action by enumeration (lowest index on ties).
    pub fn optimum(&self) -> (Vec<usize>, f64) {
        let mut best = 0;
        for (i, &v) in self.payoff.iter().enumerate() {
            if v > self.payoff[best] {
                best = i;
            }
        }
        let mut actions = vec![0; self.n_agents];
        let mut rest = best;
        for slot in actions.iter_mut().rev() {
            *slot = rest % self.n_actions;
            rest /= self.n_actions;
        }
        (actions, self.payoff[best])
    }
}

pub(super) fn check_actions(actions: &[usize], n_agents: usize, n_actions: usize) -> Result<(), EnvError> {
    if actions.len() != n_agents {
        return Err(EnvError::ActionCount {
            expected: n_agents,
            got: actions.len(),
        });
    }
    if let Some((agent, &action)) = actions.iter().enumerate().find(|(_, &a)| a >= n_actions) {
        return Err(EnvError::InvalidAction { agent, action });
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct MatrixEnv {
    cfg: MatrixConfig,
    running: bool,
}

impl MatrixEnv {
    pub fn new(cfg: MatrixConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        Ok(MatrixEnv { cfg, running: false })
    }

    pub fn config(&self) -> &MatrixConfig {
        &self.cfg
    }

    fn observation(&self) -> Observation {
        Observation {
            obs: vec![vec![1.0]; self.cfg.n_agents],
            state: vec![1.0],
        }
    }
}

impl Env for MatrixEnv {
    fn n_agents(&self) -> usize {
        self.cfg.n_agents
    }

    fn n_actions(&self) -> usize {
        self.cfg.n_actions
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn state_dim(&self) -> usize {
        1
    }

    fn max_steps(&self) -> usize {
        1
    }

    fn reset(&mut self, _seed: u64) -> Result<Observation, EnvError> {
        self.running = true;
        Ok(self.observation())
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        if !self.running {
            return Err(EnvError::NotRunning);
        }
        let reward = self.cfg.payoff_of(actions)?;
        self.running = false;
        Ok(StepResult {
            next: self.observation(),
            reward,
            done: true,
            terminal: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn climbing_payoffs() {
        let mut env = MatrixEnv::new(MatrixConfig::default()).unwrap();
        env.reset(0).unwrap();
        let r = env.step(&[0, 0]).unwrap();
        assert_eq!(r.reward, 11.0);
        assert!(r.done && r.terminal);
        assert_eq!(env.step(&[0, 0]).unwrap_err(), EnvError::NotRunning);
        assert_eq!(MatrixConfig::default().optimum(), (vec![0, 0], 11.0));
    }

    #[test]
    fn identity_game() {
        let cfg = MatrixConfig {
            n_agents: 2,
            n_actions: 3,
            payoff: vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        };
        assert_eq!(cfg.payoff_of(&[1, 1]).unwrap(), 1.0);
        assert_eq!(cfg.payoff_of(&[1, 2]).unwrap(), 0.0);
    }

    /// Relabeling both agents' actions by the same permutation and permuting
    /// the payoff tensor accordingly leaves every joint payoff unchanged.
    #[test]
    fn action_relabeling_permutes_payoffs() {
        let cfg = MatrixConfig::default();
        let perm = [2, 0, 1];
        let mut permuted = vec![0.0; 9];
        for a in 0..3 {
            for b in 0..3 {
                permuted[perm[a] * 3 + perm[b]] = cfg.payoff[a * 3 + b];
            }
        }
        let pcfg = MatrixConfig {
            payoff: permuted,
            ..cfg.clone()
        };
        for a in 0..3 {
            for b in 0..3 {
                assert_eq!(
                    cfg.payoff_of(&[a, b]).unwrap(),
                    pcfg.payoff_of(&[perm[a], perm[b]]).unwrap()
                );
            }
        }
    }

    #[test]
    fn invalid_inputs() {
        let cfg = MatrixConfig::default();
        assert_eq!(
            cfg.payoff_of(&[0, 3]).unwrap_err(),
            EnvError::InvalidAction { agent: 1, action: 3 }
        );
        let bad = MatrixConfig {
            payoff: vec![0.0; 8],
            ..cfg
        };
        assert!(matches!(bad.validate(), Err(EnvError::Config(_))));
    }
}
