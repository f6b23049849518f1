//! Recurrent per-agent utility networks and ε-greedy action selection.
//!
//! Each agent maps `(o_i, u_i^{t-1}, h_i^{t-1})` to action values through
//! `ReLU(linear)` → GRU cell → linear head. Agents share one parameter set by
//! default, with an agent-id one-hot appended to the observation so shared
//! weights can still specialise.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{sigmoid, DiffError, Tape, Var};
use crate::params::{linear, linear_row, Bound, ParamId, ParamStore};

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("{what}: expected width {expected}, got {got}")]
    Width {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("action {action} out of range for {n_actions} actions")]
    InvalidAction { action: usize, n_actions: usize },
    #[error("no available actions")]
    NoAvailableAction,
    #[error("agent index {0} out of range")]
    InvalidAgent(usize),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentNetConfig {
    pub hidden: usize,
    pub agent_id_feature: bool,
    pub per_agent_params: bool,
}

impl Default for AgentNetConfig {
    fn default() -> Self {
        AgentNetConfig {
            hidden: 64,
            agent_id_feature: true,
            per_agent_params: false,
        }
    }
}

#[derive(Clone, Debug)]
struct GruBlock {
    embed_w: ParamId,
    embed_b: ParamId,
    // input → gate weights (reset, update, candidate)
    w_i: [ParamId; 3],
    b_i: [ParamId; 3],
    // hidden → gate weights
    w_h: [ParamId; 3],
    b_h: [ParamId; 3],
    head_w: ParamId,
    head_b: ParamId,
}

/// Layout of the agent network parameters inside a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct AgentNetParams {
    pub obs_dim: usize,
    pub n_actions: usize,
    pub n_agents: usize,
    pub hidden: usize,
    pub agent_id_feature: bool,
    blocks: Vec<GruBlock>,
}

/// Hidden state of one agent.
pub type HiddenState = Vec<f64>;

const GATES: [&str; 3] = ["r", "z", "n"];

impl AgentNetParams {
    pub fn register(
        store: &mut ParamStore,
        cfg: &AgentNetConfig,
        obs_dim: usize,
        n_actions: usize,
        n_agents: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let h = cfg.hidden;
        let in_dim = obs_dim + if cfg.agent_id_feature { n_agents } else { 0 } + n_actions;
        let copies = if cfg.per_agent_params { n_agents } else { 1 };
        let blocks = (0..copies)
            .map(|c| {
                let p = if cfg.per_agent_params {
                    format!("agent{c}")
                } else {
                    "agent".to_string()
                };
                let embed_w = store.add_uniform(&format!("{p}.embed.w"), &[in_dim, h], in_dim, rng);
                let embed_b = store.add_uniform(&format!("{p}.embed.b"), &[1, h], in_dim, rng);
                let mut gate = |kind: &str, fan: usize| -> [ParamId; 3] {
                    GATES.map(|g| {
                        let shape: &[usize] = if kind.starts_with('b') { &[1, h] } else { &[fan, h] };
                        store.add_uniform(&format!("{p}.gru.{kind}_{g}"), shape, h, rng)
                    })
                };
                let w_i = gate("w_i", h);
                let b_i = gate("b_i", h);
                let w_h = gate("w_h", h);
                let b_h = gate("b_h", h);
                let head_w = store.add_uniform(&format!("{p}.head.w"), &[h, n_actions], h, rng);
                let head_b = store.add_uniform(&format!("{p}.head.b"), &[1, n_actions], h, rng);
                GruBlock {
                    embed_w,
                    embed_b,
                    w_i,
                    b_i,
                    w_h,
                    b_h,
                    head_w,
                    head_b,
                }
            })
            .collect();
        AgentNetParams {
            obs_dim,
            n_actions,
            n_agents,
            hidden: h,
            agent_id_feature: cfg.agent_id_feature,
            blocks,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.obs_dim + if self.agent_id_feature { self.n_agents } else { 0 } + self.n_actions
    }

    pub fn per_agent(&self) -> bool {
        self.blocks.len() > 1
    }

    fn block(&self, agent: usize) -> &GruBlock {
        &self.blocks[if self.per_agent() { agent } else { 0 }]
    }

    /// Network input row: observation ⊕ agent one-hot ⊕ last-action one-hot.
    ///
    /// `last_action = None` (first step) encodes as an all-zero one-hot.
    pub fn input_features(
        &self,
        obs: &[f64],
        agent: usize,
        last_action: Option<usize>,
    ) -> Result<Vec<f64>, AgentError> {
        if obs.len() != self.obs_dim {
            return Err(AgentError::Width {
                what: "observation",
                expected: self.obs_dim,
                got: obs.len(),
            });
        }
        if agent >= self.n_agents {
            return Err(AgentError::InvalidAgent(agent));
        }
        let mut x = Vec::with_capacity(self.input_dim());
        x.extend_from_slice(obs);
        if self.agent_id_feature {
            x.extend((0..self.n_agents).map(|i| if i == agent { 1.0 } else { 0.0 }));
        }
        let start = x.len();
        x.resize(start + self.n_actions, 0.0);
        if let Some(a) = last_action {
            if a >= self.n_actions {
                return Err(AgentError::InvalidAction {
                    action: a,
                    n_actions: self.n_actions,
                });
            }
            x[start + a] = 1.0;
        }
        Ok(x)
    }

    /// One recurrent step without recording gradients.
    pub fn step_plain(
        &self,
        store: &ParamStore,
        agent: usize,
        x: &[f64],
        h_prev: &[f64],
    ) -> Result<(Vec<f64>, HiddenState), AgentError> {
        if x.len() != self.input_dim() {
            return Err(AgentError::Width {
                what: "agent input",
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if h_prev.len() != self.hidden {
            return Err(AgentError::Width {
                what: "hidden state",
                expected: self.hidden,
                got: h_prev.len(),
            });
        }
        let b = self.block(agent);
        let h = self.hidden;
        let mut e = linear_row(x, store.get(b.embed_w), Some(store.get(b.embed_b)), h);
        e.iter_mut().for_each(|v| *v = v.max(0.0));
        let gi: Vec<Vec<f64>> = (0..3)
            .map(|g| linear_row(&e, store.get(b.w_i[g]), Some(store.get(b.b_i[g])), h))
            .collect();
        let gh: Vec<Vec<f64>> = (0..3)
            .map(|g| linear_row(h_prev, store.get(b.w_h[g]), Some(store.get(b.b_h[g])), h))
            .collect();
        let mut h_next = vec![0.0; h];
        for j in 0..h {
            let r = sigmoid(gi[0][j] + gh[0][j]);
            let z = sigmoid(gi[1][j] + gh[1][j]);
            let n = (gi[2][j] + r * gh[2][j]).tanh();
            h_next[j] = (1.0 - z) * n + z * h_prev[j];
        }
        let q = linear_row(
            &h_next,
            store.get(b.head_w),
            Some(store.get(b.head_b)),
            self.n_actions,
        );
        Ok((q, h_next))
    }

    /// Batched step on the tape.
    ///
    /// Rows are agent-major: rows `i*batch .. (i+1)*batch` belong to agent
    /// `i`. `x: [n*batch, in]`, `h: [n*batch, H]`.
    pub fn step_tape(
        &self,
        tape: &mut Tape<f64>,
        bound: &Bound,
        x: Var,
        h: Var,
        batch: usize,
    ) -> Result<(Var, Var), AgentError> {
        if !self.per_agent() {
            return Ok(self.block_tape(tape, bound, &self.blocks[0], x, h)?);
        }
        let mut qs = Vec::with_capacity(self.n_agents);
        let mut hs = Vec::with_capacity(self.n_agents);
        for (i, block) in self.blocks.iter().enumerate() {
            let xi = tape.slice_rows(x, i * batch, batch)?;
            let hi = tape.slice_rows(h, i * batch, batch)?;
            let (q, hn) = self.block_tape(tape, bound, block, xi, hi)?;
            qs.push(q);
            hs.push(hn);
        }
        Ok((tape.concat_rows(&qs)?, tape.concat_rows(&hs)?))
    }

    fn block_tape(
        &self,
        tape: &mut Tape<f64>,
        bound: &Bound,
        b: &GruBlock,
        x: Var,
        h: Var,
    ) -> Result<(Var, Var), DiffError> {
        let v = |id: ParamId| bound.var(id);
        let e = linear(tape, x, v(b.embed_w), v(b.embed_b))?;
        let e = tape.relu(e);
        let mut pre = Vec::with_capacity(3);
        for g in 0..3 {
            let xi = linear(tape, e, v(b.w_i[g]), v(b.b_i[g]))?;
            let hi = linear(tape, h, v(b.w_h[g]), v(b.b_h[g]))?;
            pre.push((xi, hi));
        }
        let r_in = tape.add(pre[0].0, pre[0].1)?;
        let r = tape.sigmoid(r_in);
        let z_in = tape.add(pre[1].0, pre[1].1)?;
        let z = tape.sigmoid(z_in);
        let rh = tape.mul(r, pre[2].1)?;
        let n_in = tape.add(pre[2].0, rh)?;
        let n = tape.tanh(n_in);
        // h' = n + z ⊙ (h − n)
        let diff = tape.sub(h, n)?;
        let zd = tape.mul(z, diff)?;
        let h_next = tape.add(n, zd)?;
        let q = linear(tape, h_next, v(b.head_w), v(b.head_b))?;
        Ok((q, h_next))
    }
}

/// Single-agent forward step: returns `(q_values, h_next)`.
pub fn agent_forward(
    store: &ParamStore,
    params: &AgentNetParams,
    agent: usize,
    obs: &[f64],
    last_action: Option<usize>,
    h_prev: &[f64],
) -> Result<(Vec<f64>, HiddenState), AgentError> {
    let x = params.input_features(obs, agent, last_action)?;
    params.step_plain(store, agent, &x, h_prev)
}

/// Index of the largest available entry; ties go to the lowest index.
pub fn greedy_action(q: &[f64], available: &[bool]) -> Result<usize, AgentError> {
    let mut best: Option<usize> = None;
    for (a, (&v, &ok)) in q.iter().zip(available).enumerate() {
        if ok && best.is_none_or(|b| v > q[b]) {
            best = Some(a);
        }
    }
    best.ok_or(AgentError::NoAvailableAction)
}

/// ε-greedy choice over the available actions.
pub fn select_action(
    q: &[f64],
    epsilon: f64,
    available: &[bool],
    rng: &mut impl Rng,
) -> Result<usize, AgentError> {
    if q.len() != available.len() {
        return Err(AgentError::Width {
            what: "availability mask",
            expected: q.len(),
            got: available.len(),
        });
    }
    let n_avail = available.iter().filter(|&&a| a).count();
    if n_avail == 0 {
        return Err(AgentError::NoAvailableAction);
    }
    let explore: f64 = rng.random();
    if explore < epsilon {
        let pick = rng.random_range(0..n_avail);
        let action = available
            .iter()
            .enumerate()
            .filter(|(_, &ok)| ok)
            .nth(pick)
            .map(|(a, _)| a)
            .unwrap();
        return Ok(action);
    }
    greedy_action(q, available)
}

/// Linear ε annealing schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub anneal_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        EpsilonSchedule {
            start: 1.0,
            end: 0.05,
            anneal_steps: 50_000,
        }
    }
}

pub fn epsilon_at(step: u64, schedule: &EpsilonSchedule) -> f64 {
    if schedule.anneal_steps == 0 || step >= schedule.anneal_steps {
        return schedule.end;
    }
    let frac = step as f64 / schedule.anneal_steps as f64;
    schedule.start + (schedule.end - schedule.start) * frac
}
