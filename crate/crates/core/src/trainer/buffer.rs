use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{AgentError, AgentNetParams};

/// One complete trajectory.
///
/// `obs`, `states` and `avail` hold `len + 1` entries: the last one is the
/// observation after the final step, used for bootstrapping when the
/// episode was cut by the time limit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub obs: Vec<Vec<Vec<f64>>>,
    pub states: Vec<Vec<f64>>,
    pub avail: Vec<Vec<Vec<bool>>>,
    pub actions: Vec<Vec<usize>>,
    pub rewards: Vec<f64>,
    /// Final step reached a terminal state (as opposed to the time limit).
    pub terminated: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn last_action(&self, t: usize, agent: usize) -> Option<usize> {
        t.checked_sub(1).map(|p| self.actions[p][agent])
    }
}

/// Ring buffer of complete episodes.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    episodes: Vec<Episode>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity: capacity.max(1),
            episodes: Vec::new(),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn push(&mut self, ep: Episode) {
        if self.episodes.len() < self.capacity {
            self.episodes.push(ep);
        } else {
            self.episodes[self.next] = ep;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Uniform sample of distinct episodes; `None` until enough are stored.
    pub fn sample(&self, size: usize, rng: &mut impl Rng) -> Option<Vec<&Episode>> {
        if size == 0 || self.episodes.len() < size {
            return None;
        }
        Some(
            sample(rng, self.episodes.len(), size)
                .into_iter()
                .map(|i| &self.episodes[i])
                .collect(),
        )
    }
}

/// Episodes padded to the longest one in the batch.
///
/// Per-agent arrays are agent-major: row `i * size + b` is agent `i` of
/// episode `b`. Time-indexed fields with `t_max + 1` entries include the
/// bootstrap step.
#[derive(Clone, Debug)]
pub struct EpisodeBatch {
    pub size: usize,
    pub n_agents: usize,
    pub t_max: usize,
    pub lens: Vec<usize>,
    pub input_dim: usize,
    /// `[t][n*B*input_dim]`, `t ≤ t_max`.
    pub inputs: Vec<Vec<f64>>,
    pub state_dim: usize,
    /// `[t][B*state_dim]`, `t ≤ t_max`.
    pub states: Vec<Vec<f64>>,
    /// `[t][n*B][U]`, `t ≤ t_max`.
    pub avail: Vec<Vec<Vec<bool>>>,
    /// `[t][n*B]`, `t < t_max`; padding uses action 0.
    pub actions: Vec<Vec<usize>>,
    /// `[t][B]`, `t < t_max`.
    pub rewards: Vec<Vec<f64>>,
    pub terminal: Vec<Vec<bool>>,
    pub mask: Vec<Vec<f64>>,
}

impl EpisodeBatch {
    pub fn new(episodes: &[&Episode], agents: &AgentNetParams) -> Result<Self, AgentError> {
        let size = episodes.len();
        let n = agents.n_agents;
        let u = agents.n_actions;
        let t_max = episodes.iter().map(|e| e.len()).max().unwrap_or(0);
        let input_dim = agents.input_dim();
        let state_dim = episodes.first().map_or(0, |e| e.states[0].len());
        let mut batch = EpisodeBatch {
            size,
            n_agents: n,
            t_max,
            lens: episodes.iter().map(|e| e.len()).collect(),
            input_dim,
            inputs: Vec::with_capacity(t_max + 1),
            state_dim,
            states: Vec::with_capacity(t_max + 1),
            avail: Vec::with_capacity(t_max + 1),
            actions: Vec::with_capacity(t_max),
            rewards: Vec::with_capacity(t_max),
            terminal: Vec::with_capacity(t_max),
            mask: Vec::with_capacity(t_max),
        };
        for t in 0..=t_max {
            let mut inputs = vec![0.0; n * size * input_dim];
            let mut states = vec![0.0; size * state_dim];
            let mut avail = vec![vec![true; u]; n * size];
            for (b, ep) in episodes.iter().enumerate() {
                if t > ep.len() {
                    continue;
                }
                for i in 0..n {
                    let row = i * size + b;
                    let x = agents.input_features(&ep.obs[t][i], i, ep.last_action(t, i))?;
                    inputs[row * input_dim..(row + 1) * input_dim].copy_from_slice(&x);
                    avail[row].clone_from(&ep.avail[t][i]);
                }
                states[b * state_dim..(b + 1) * state_dim].copy_from_slice(&ep.states[t]);
            }
            batch.inputs.push(inputs);
            batch.states.push(states);
            batch.avail.push(avail);
            if t == t_max {
                break;
            }
            let mut actions = vec![0; n * size];
            let mut rewards = vec![0.0; size];
            let mut terminal = vec![false; size];
            let mut mask = vec![0.0; size];
            for (b, ep) in episodes.iter().enumerate() {
                if t >= ep.len() {
                    continue;
                }
                for i in 0..n {
                    actions[i * size + b] = ep.actions[t][i];
                }
                rewards[b] = ep.rewards[t];
                terminal[b] = ep.terminated && t + 1 == ep.len();
                mask[b] = 1.0;
            }
            batch.actions.push(actions);
            batch.rewards.push(rewards);
            batch.terminal.push(terminal);
            batch.mask.push(mask);
        }
        Ok(batch)
    }

    pub fn valid_steps(&self) -> f64 {
        self.mask.iter().flatten().sum()
    }
}
