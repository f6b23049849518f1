//! Recurrent value-decomposition training.
//!
//! Each iteration collects one ε-greedy episode, stores it, and takes one
//! gradient step on a batch of replayed episodes. Targets are double-Q:
//! the online network picks each agent's greedy next action and the target
//! network scores the joint value of that choice. The loss is the masked
//! mean squared TD error plus the assistive-information loss.

mod buffer;
mod checkpoint;
mod logs;
mod optim;

pub use buffer::{Episode, EpisodeBatch, ReplayBuffer};
pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use logs::{
    read_episode_log, read_metrics, transitions, write_episode_log, write_metrics, MetricsRow,
    TransitionRecord, METRICS_HEADER,
};
pub use optim::{clip_grad_norm, grad_norm, RmsProp};

use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{epsilon_at, greedy_action, select_action, AgentError, AgentNetParams};
use crate::config::{ConfigError, RunConfig};
use crate::diffcore::{DiffError, Tape, Tensor, Var};
use crate::envs::{Env, EnvError};
use crate::mixer::{vdn_mix, MixerError, MixerKind, MixerNet, Variant};
use crate::params::{Bound, ParamMismatch, ParamStore};
use crate::vib::{sample_noise, VibError, VibNet};

/// Value added to unavailable actions before taking an argmax.
pub const UNAVAILABLE: f64 = -1e9;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Mixer(#[from] MixerError),
    #[error(transparent)]
    Vib(#[from] VibError),
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Params(#[from] ParamMismatch),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("non-finite loss at update {update}: td {td}, vib {vib}, largest |Q_tot| {max_q_tot}")]
    NonFinite {
        update: u64,
        td: f64,
        vib: f64,
        max_q_tot: f64,
    },
    #[error("empty batch")]
    EmptyBatch,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("bad file format: {0}")]
    Format(String),
}

impl TrainError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        TrainError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnvDims {
    pub n_agents: usize,
    pub n_actions: usize,
    pub obs_dim: usize,
    pub state_dim: usize,
}

impl EnvDims {
    pub fn of(env: &dyn Env) -> Self {
        EnvDims {
            n_agents: env.n_agents(),
            n_actions: env.n_actions(),
            obs_dim: env.obs_dim(),
            state_dim: env.state_dim(),
        }
    }
}

/// Frozen inputs of one loss evaluation.
#[derive(Clone, Debug)]
pub struct LossInputs {
    /// TD targets, `[t * B + b]` for `t < t_max` (zero on padding).
    pub y: Vec<f64>,
    /// Decoder targets per step, agent-major rows.
    pub vib_targets: Vec<Vec<usize>>,
    /// Noise per step, `[rows * M]`.
    pub noise: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub td: Var,
    pub vib: Option<Var>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub td_loss: f64,
    pub vib_loss: f64,
    pub grad_norm: f64,
}

/// Online and target parameters with their network layouts.
#[derive(Clone, Debug)]
pub struct Learner {
    pub cfg: RunConfig,
    pub dims: EnvDims,
    pub store: ParamStore,
    pub target: ParamStore,
    pub agents: AgentNetParams,
    pub vib: Option<VibNet>,
    pub mixer: MixerNet,
    episodes_since_sync: u64,
    updates: u64,
}

impl Learner {
    pub fn new(cfg: &RunConfig, dims: EnvDims) -> Result<Self, TrainError> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.trainer.seed);
        let mut store = ParamStore::new();
        let agents = AgentNetParams::register(
            &mut store,
            &cfg.agent,
            dims.obs_dim,
            dims.n_actions,
            dims.n_agents,
            &mut rng,
        );
        let uses_m = cfg.mixer.kind == MixerKind::Cfn && cfg.mixer.variant != Variant::Decoupled;
        let vib = uses_m.then(|| {
            VibNet::register(&mut store, &cfg.vib, cfg.agent.hidden, dims.n_actions, &mut rng)
        });
        let m_dim = vib.as_ref().map_or(0, |v| v.latent);
        let mixer = MixerNet::register(
            &mut store,
            &cfg.mixer,
            dims.n_agents,
            m_dim,
            dims.state_dim,
            &mut rng,
        )?;
        let target = store.clone();
        Ok(Learner {
            cfg: cfg.clone(),
            dims,
            store,
            target,
            agents,
            vib,
            mixer,
            episodes_since_sync: 0,
            updates: 0,
        })
    }

    /// Builds the environment named by the config to read its dimensions.
    pub fn from_config(cfg: &RunConfig) -> Result<Self, TrainError> {
        let env = cfg.env.build()?;
        Self::new(cfg, EnvDims::of(env.as_ref()))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, TrainError> {
        let mut l = Self::from_config(&ck.config)?;
        l.store.load_named(&ck.params)?;
        l.target.load_named(&ck.target)?;
        Ok(l)
    }

    pub fn checkpoint(&self, step: u64) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.cfg.clone(),
            step,
            params: self.store.entries().to_vec(),
            target: self.target.entries().to_vec(),
        }
    }

    pub fn hidden_width(&self) -> usize {
        self.agents.hidden
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Hard copy of the online parameters into the target network.
    pub fn sync_target(&mut self) {
        self.target.copy_from(&self.store);
        self.episodes_since_sync = 0;
    }

    /// Counts one collected episode and syncs when the interval is reached.
    pub fn note_episode(&mut self) -> bool {
        self.episodes_since_sync += 1;
        if self.episodes_since_sync >= self.cfg.trainer.target_update_interval {
            self.sync_target();
            true
        } else {
            false
        }
    }

    pub fn episodes_since_sync(&self) -> u64 {
        self.episodes_since_sync
    }

    /// One decentralized step for all agents; updates `hidden` in place.
    pub fn agent_values(
        &self,
        store: &ParamStore,
        obs: &[Vec<f64>],
        last: &[Option<usize>],
        hidden: &mut [Vec<f64>],
    ) -> Result<Vec<Vec<f64>>, TrainError> {
        let mut qs = Vec::with_capacity(obs.len());
        for (i, o) in obs.iter().enumerate() {
            let x = self.agents.input_features(o, i, last[i])?;
            let (q, h) = self.agents.step_plain(store, i, &x, &hidden[i])?;
            hidden[i] = h;
            qs.push(q);
        }
        Ok(qs)
    }

    /// Joint value of chosen utilities for one sample; the assistive vector
    /// is the agent mean of the encoder means.
    pub fn q_tot(
        &self,
        store: &ParamStore,
        q: &[f64],
        hidden: &[Vec<f64>],
        state: &[f64],
    ) -> Result<f64, TrainError> {
        if self.mixer.cfg.kind == MixerKind::Vdn {
            return Ok(vdn_mix(q));
        }
        let m = self.pooled_mean(store, hidden)?;
        Ok(self.mixer.q_tot(store, q, &m, state)?)
    }

    /// Agent-mean of the encoder means (empty without an encoder).
    pub fn pooled_mean(&self, store: &ParamStore, hidden: &[Vec<f64>]) -> Result<Vec<f64>, TrainError> {
        let Some(vib) = &self.vib else {
            return Ok(Vec::new());
        };
        let mut m = vec![0.0; vib.latent];
        for h in hidden {
            for (acc, v) in m.iter_mut().zip(vib.mean(store, h)?) {
                *acc += v / hidden.len() as f64;
            }
        }
        Ok(m)
    }

    fn unroll(
        &self,
        tape: &mut Tape<f64>,
        bound: &Bound,
        batch: &EpisodeBatch,
        steps: usize,
    ) -> Result<(Vec<Var>, Vec<Var>), TrainError> {
        let rows = batch.n_agents * batch.size;
        let mut h = tape.constant(Tensor::zeros(&[rows, self.agents.hidden]));
        let mut qs = Vec::with_capacity(steps);
        let mut hs = Vec::with_capacity(steps);
        for t in 0..steps {
            let x = tape.constant(Tensor::matrix(rows, batch.input_dim, batch.inputs[t].clone())?);
            let (q, hn) = self.agents.step_tape(tape, bound, x, h, batch.size)?;
            h = hn;
            qs.push(q);
            hs.push(hn);
        }
        Ok((qs, hs))
    }

    /// Chosen utilities as a `[B, n]` matrix.
    fn chosen(tape: &mut Tape<f64>, q: Var, actions: &[usize], batch: &EpisodeBatch) -> Result<Var, DiffError> {
        let picked = tape.gather_cols(q, actions)?;
        let grid = tape.reshape(picked, &[batch.n_agents, batch.size])?;
        tape.transpose(grid)
    }

    /// Joint values `[B, 1]` at step `t`, plus the encoder outputs.
    #[allow(clippy::too_many_arguments)]
    fn mix_step(
        &self,
        tape: &mut Tape<f64>,
        bound: &Bound,
        batch: &EpisodeBatch,
        t: usize,
        chosen: Var,
        h: Var,
        noise: Option<&[f64]>,
    ) -> Result<(Var, Option<(Var, Var)>), TrainError> {
        let state = tape.constant(Tensor::matrix(batch.size, batch.state_dim, batch.states[t].clone())?);
        let enc = match &self.vib {
            Some(vib) => {
                let eps = match noise {
                    Some(n) => Some(tape.constant(Tensor::matrix(
                        batch.n_agents * batch.size,
                        vib.latent,
                        n.to_vec(),
                    )?)),
                    None => None,
                };
                Some(vib.encode_tape(tape, bound, h, eps)?)
            }
            None => None,
        };
        let pooled = match enc {
            Some((_, m)) => Some(tape.mean_row_blocks(m, batch.n_agents)?),
            None => None,
        };
        let q_tot = self.mixer.forward_tape(tape, bound, chosen, pooled, state)?;
        Ok((q_tot, enc))
    }

    fn greedy_rows(&self, q: &[f64], avail: &[Vec<bool>]) -> Result<Vec<usize>, TrainError> {
        let u = self.dims.n_actions;
        avail
            .iter()
            .enumerate()
            .map(|(r, a)| Ok(greedy_action(&q[r * u..(r + 1) * u], a)?))
            .collect()
    }

    /// Online greedy actions for every step `0..=t_max`.
    fn online_greedy(&self, tape: &Tape<f64>, qs: &[Var], batch: &EpisodeBatch) -> Result<Vec<Vec<usize>>, TrainError> {
        qs.iter()
            .enumerate()
            .map(|(t, &q)| self.greedy_rows(tape.values(q), &batch.avail[t]))
            .collect()
    }

    /// Double-Q targets `y = r + γ(1 − terminal) Q̂_tot(s', u'*)` where
    /// `u'*` are the online network's agentwise greedy actions.
    pub fn compute_targets(&self, batch: &EpisodeBatch) -> Result<Vec<f64>, TrainError> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false);
        let (qs, _) = self.unroll(&mut tape, &bound, batch, batch.t_max + 1)?;
        let greedy = self.online_greedy(&tape, &qs, batch)?;
        self.targets_from_greedy(batch, &greedy)
    }

    fn targets_from_greedy(&self, batch: &EpisodeBatch, greedy: &[Vec<usize>]) -> Result<Vec<f64>, TrainError> {
        let gamma = self.cfg.trainer.gamma;
        let mut tape = Tape::new();
        let bound = self.target.bind(&mut tape, false);
        let (qs, hs) = self.unroll(&mut tape, &bound, batch, batch.t_max + 1)?;
        let mut y = vec![0.0; batch.t_max * batch.size];
        for t in 0..batch.t_max {
            let next = t + 1;
            let chosen = Self::chosen(&mut tape, qs[next], &greedy[next], batch)?;
            let (q_tot, _) = self.mix_step(&mut tape, &bound, batch, next, chosen, hs[next], None)?;
            let q_tot = tape.values(q_tot);
            for b in 0..batch.size {
                if batch.mask[t][b] == 0.0 {
                    continue;
                }
                let cont = if batch.terminal[t][b] { 0.0 } else { 1.0 };
                y[t * batch.size + b] = batch.rewards[t][b] + gamma * cont * q_tot[b];
            }
        }
        Ok(y)
    }

    /// Records the combined loss on `tape` from an existing online unroll.
    pub fn loss_from_unroll(
        &self,
        tape: &mut Tape<f64>,
        bound: &Bound,
        batch: &EpisodeBatch,
        qs: &[Var],
        hs: &[Var],
        inputs: &LossInputs,
    ) -> Result<LossVars, TrainError> {
        let t_max = batch.t_max;
        if t_max == 0 || batch.size == 0 {
            return Err(TrainError::EmptyBatch);
        }
        let mut q_tots = Vec::with_capacity(t_max);
        let mut vib_rows = Vec::with_capacity(t_max);
        for t in 0..t_max {
            let chosen = Self::chosen(tape, qs[t], &batch.actions[t], batch)?;
            let noise = inputs.noise.get(t).map(Vec::as_slice);
            let (q_tot, enc) = self.mix_step(tape, bound, batch, t, chosen, hs[t], noise)?;
            q_tots.push(q_tot);
            if let (Some(vib), Some((mu, m))) = (&self.vib, enc) {
                vib_rows.push(vib.row_losses_tape(tape, bound, mu, m, &inputs.vib_targets[t])?);
            }
        }
        let valid = batch.valid_steps();
        let mask: Vec<f64> = batch.mask.concat();
        let q_all = tape.concat_rows(&q_tots)?;
        let y = tape.constant(Tensor::matrix(t_max * batch.size, 1, inputs.y.clone())?);
        let m = tape.constant(Tensor::matrix(t_max * batch.size, 1, mask.clone())?);
        let diff = tape.sub(q_all, y)?;
        let sq = tape.square(diff);
        let masked = tape.mul(sq, m)?;
        let td_sum = tape.sum(masked);
        let td = tape.scale(td_sum, 1.0 / valid);
        if vib_rows.is_empty() {
            return Ok(LossVars {
                total: td,
                td,
                vib: None,
            });
        }
        let n = batch.n_agents;
        let row_mask: Vec<f64> = batch
            .mask
            .iter()
            .flat_map(|mt| (0..n).flat_map(move |_| mt.iter().copied()))
            .collect();
        let rows = tape.concat_rows(&vib_rows)?;
        let rm = tape.constant(Tensor::matrix(row_mask.len(), 1, row_mask)?);
        let masked = tape.mul(rows, rm)?;
        let vib_sum = tape.sum(masked);
        let vib = tape.scale(vib_sum, 1.0 / (n as f64 * valid));
        let total = tape.add(td, vib)?;
        Ok(LossVars {
            total,
            td,
            vib: Some(vib),
        })
    }

    /// Records the combined loss with frozen targets and noise, unrolling
    /// the online network first. Used for gradient checks.
    pub fn loss_tape(
        &self,
        tape: &mut Tape<f64>,
        bound: &Bound,
        batch: &EpisodeBatch,
        inputs: &LossInputs,
    ) -> Result<LossVars, TrainError> {
        let (qs, hs) = self.unroll(tape, bound, batch, batch.t_max)?;
        self.loss_from_unroll(tape, bound, batch, &qs, &hs, inputs)
    }

    /// Targets, decoder labels and fresh noise for one update.
    pub fn loss_inputs(&self, batch: &EpisodeBatch, rng: &mut impl Rng) -> Result<LossInputs, TrainError> {
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, false);
        let (qs, _) = self.unroll(&mut tape, &bound, batch, batch.t_max + 1)?;
        let greedy = self.online_greedy(&tape, &qs, batch)?;
        self.inputs_from_greedy(batch, greedy, rng)
    }

    fn inputs_from_greedy(
        &self,
        batch: &EpisodeBatch,
        mut greedy: Vec<Vec<usize>>,
        rng: &mut impl Rng,
    ) -> Result<LossInputs, TrainError> {
        let y = self.targets_from_greedy(batch, &greedy)?;
        greedy.truncate(batch.t_max);
        let rows = batch.n_agents * batch.size;
        let noise = match &self.vib {
            Some(v) => (0..batch.t_max).map(|_| sample_noise(rows * v.latent, rng)).collect(),
            None => Vec::new(),
        };
        Ok(LossInputs {
            y,
            vib_targets: greedy,
            noise,
        })
    }

    /// One optimization step on a batch.
    pub fn train_step(
        &mut self,
        batch: &EpisodeBatch,
        opt: &mut RmsProp,
        rng: &mut impl Rng,
    ) -> Result<StepMetrics, TrainError> {
        if batch.size == 0 || batch.t_max == 0 {
            return Err(TrainError::EmptyBatch);
        }
        let mut tape = Tape::new();
        let bound = self.store.bind(&mut tape, true);
        let (qs, hs) = self.unroll(&mut tape, &bound, batch, batch.t_max + 1)?;
        let greedy = self.online_greedy(&tape, &qs, batch)?;
        let inputs = self.inputs_from_greedy(batch, greedy, rng)?;
        let lv = self.loss_from_unroll(&mut tape, &bound, batch, &qs, &hs, &inputs)?;
        let td_loss = tape.values(lv.td)[0];
        let vib_loss = lv.vib.map_or(0.0, |v| tape.values(v)[0]);
        if !(td_loss.is_finite() && vib_loss.is_finite()) {
            let max_q_tot = inputs.y.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            return Err(TrainError::NonFinite {
                update: self.updates,
                td: td_loss,
                vib: vib_loss,
                max_q_tot,
            });
        }
        tape.backward(lv.total)?;
        let mut grads = self.store.grads(&tape, &bound);
        let norm = clip_grad_norm(&mut grads, self.cfg.trainer.grad_clip);
        opt.step(&mut self.store, &grads);
        self.updates += 1;
        Ok(StepMetrics {
            td_loss,
            vib_loss,
            grad_norm: norm,
        })
    }

    pub fn optimizer(&self) -> RmsProp {
        let t = &self.cfg.trainer;
        RmsProp::new(&self.store, t.lr, t.rms_alpha, t.rms_eps)
    }
}

/// Runs one ε-greedy episode with the online parameters.
pub fn collect_episode(
    env: &mut dyn Env,
    learner: &Learner,
    epsilon: f64,
    env_seed: u64,
    rng: &mut impl Rng,
) -> Result<Episode, TrainError> {
    let n = env.n_agents();
    let first = env.reset(env_seed)?;
    let mut ep = Episode {
        obs: vec![first.obs],
        states: vec![first.state],
        avail: vec![(0..n).map(|i| env.available(i)).collect()],
        actions: Vec::new(),
        rewards: Vec::new(),
        terminated: false,
    };
    let mut hidden = vec![vec![0.0; learner.hidden_width()]; n];
    let mut last = vec![None; n];
    loop {
        let t = ep.actions.len();
        let qs = learner.agent_values(&learner.store, &ep.obs[t], &last, &mut hidden)?;
        let actions: Vec<usize> = qs
            .iter()
            .zip(&ep.avail[t])
            .map(|(q, a)| select_action(q, epsilon, a, rng))
            .collect::<Result<_, _>>()?;
        let res = env.step(&actions)?;
        last = actions.iter().map(|&a| Some(a)).collect();
        ep.actions.push(actions);
        ep.rewards.push(res.reward);
        ep.obs.push(res.next.obs);
        ep.states.push(res.next.state);
        ep.avail.push((0..n).map(|i| env.available(i)).collect());
        if res.done {
            ep.terminated = res.terminal;
            return Ok(ep);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean: f64,
    pub std: f64,
    pub returns: Vec<f64>,
}

impl EvalSummary {
    pub fn of(returns: Vec<f64>) -> Self {
        let n = returns.len().max(1) as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        EvalSummary {
            mean,
            std: var.sqrt(),
            returns,
        }
    }
}

/// Greedy evaluation over `episodes` environment seeds drawn from `seed`.
pub fn evaluate(
    env: &mut dyn Env,
    learner: &Learner,
    episodes: usize,
    seed: u64,
) -> Result<(EvalSummary, Vec<Episode>), TrainError> {
    let mut seeds = ChaCha8Rng::seed_from_u64(seed);
    let mut unused = ChaCha8Rng::seed_from_u64(seed);
    let mut eps = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        eps.push(collect_episode(env, learner, 0.0, seeds.next_u64(), &mut unused)?);
    }
    Ok((EvalSummary::of(eps.iter().map(Episode::total_reward).collect()), eps))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub episode: u64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub seed: u64,
    pub mixer: MixerKind,
    pub steps: u64,
    pub episodes: u64,
    pub updates: u64,
    pub final_eval: EvalRecord,
    pub best_eval: f64,
    /// First evaluation step reaching `stop_at_return`, if any.
    pub reached_at: Option<u64>,
    pub evals: Vec<EvalRecord>,
}

pub struct RunArtifacts {
    pub learner: Learner,
    pub metrics: Vec<MetricsRow>,
    pub summary: RunSummary,
}

#[derive(Default)]
struct Accum {
    n: u64,
    td: f64,
    vib: f64,
    norm: f64,
}

impl Accum {
    fn add(&mut self, m: &StepMetrics) {
        self.n += 1;
        self.td += m.td_loss;
        self.vib += m.vib_loss;
        self.norm += m.grad_norm;
    }

    fn take(&mut self) -> (Option<f64>, Option<f64>, Option<f64>) {
        let out = if self.n == 0 {
            (None, None, None)
        } else {
            let n = self.n as f64;
            (Some(self.td / n), Some(self.vib / n), Some(self.norm / n))
        };
        *self = Accum::default();
        out
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

/// Collect-and-train loop with periodic greedy evaluation. When `out` is
/// given, writes `metrics.csv`, `checkpoint.json`, `config.toml` and
/// `summary.json` there.
pub fn run_training(cfg: &RunConfig, out: Option<&Path>) -> Result<RunArtifacts, TrainError> {
    cfg.validate()?;
    let tc = &cfg.trainer;
    let mut env = cfg.env.build()?;
    let mut eval_env = cfg.env.build()?;
    let mut learner = Learner::new(cfg, EnvDims::of(env.as_ref()))?;
    let mut opt = learner.optimizer();
    let mut act_rng = stream(tc.seed, 1);
    let mut env_seeds = stream(tc.seed, 2);
    let mut sample_rng = stream(tc.seed, 3);
    let mut noise_rng = stream(tc.seed, 4);
    let eval_seed = stream(tc.seed, 5).next_u64();
    let schedule = tc.epsilon();
    let mut buffer = ReplayBuffer::new(tc.buffer_size);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| TrainError::io(dir, e))?;
        let path = dir.join("config.toml");
        std::fs::write(&path, cfg.to_toml()).map_err(|e| TrainError::io(&path, e))?;
    }

    let mut metrics = Vec::new();
    let mut evals = Vec::new();
    let mut acc = Accum::default();
    let (mut t_env, mut episode) = (0u64, 0u64);
    let (mut last_log, mut last_test, mut last_ckpt) = (0u64, 0u64, 0u64);
    let mut reached_at = None;

    let mut eval_row = |learner: &Learner, t_env: u64, episode: u64, acc: &mut Accum, metrics: &mut Vec<MetricsRow>, evals: &mut Vec<EvalRecord>| -> Result<f64, TrainError> {
        let (summary, _) = evaluate(eval_env.as_mut(), learner, tc.test_episodes, eval_seed)?;
        let (td, vib, norm) = acc.take();
        metrics.push(MetricsRow {
            step: t_env,
            episode,
            td_loss: td,
            vib_loss: vib,
            grad_norm: norm,
            eval_return: Some(summary.mean),
            epsilon: epsilon_at(t_env, &schedule),
        });
        evals.push(EvalRecord {
            step: t_env,
            episode,
            mean: summary.mean,
            std: summary.std,
        });
        Ok(summary.mean)
    };

    let first = eval_row(&learner, 0, 0, &mut acc, &mut metrics, &mut evals)?;
    if tc.stop_at_return.is_some_and(|s| first >= s) {
        reached_at = Some(0);
    }
    while t_env < tc.total_steps && reached_at.is_none() {
        let eps = epsilon_at(t_env, &schedule);
        let ep = collect_episode(env.as_mut(), &learner, eps, env_seeds.next_u64(), &mut act_rng)?;
        t_env += ep.len() as u64;
        episode += 1;
        buffer.push(ep);
        if let Some(sample) = buffer.sample(tc.batch_size, &mut sample_rng) {
            let batch = EpisodeBatch::new(&sample, &learner.agents)?;
            let m = learner.train_step(&batch, &mut opt, &mut noise_rng)?;
            acc.add(&m);
        }
        learner.note_episode();
        if t_env - last_test >= tc.test_interval || t_env >= tc.total_steps {
            let mean = eval_row(&learner, t_env, episode, &mut acc, &mut metrics, &mut evals)?;
            last_test = t_env;
            last_log = t_env;
            if tc.stop_at_return.is_some_and(|s| mean >= s) {
                reached_at = Some(t_env);
            }
        } else if t_env - last_log >= tc.log_interval {
            let (td, vib, norm) = acc.take();
            metrics.push(MetricsRow {
                step: t_env,
                episode,
                td_loss: td,
                vib_loss: vib,
                grad_norm: norm,
                eval_return: None,
                epsilon: epsilon_at(t_env, &schedule),
            });
            last_log = t_env;
        }
        if let Some(dir) = out {
            if tc.checkpoint_interval > 0 && t_env - last_ckpt >= tc.checkpoint_interval {
                learner
                    .checkpoint(t_env)
                    .save(&dir.join(format!("checkpoint_{t_env}.json")))?;
                last_ckpt = t_env;
            }
        }
    }

    let final_eval = evals.last().cloned().expect("at least one evaluation");
    let summary = RunSummary {
        name: cfg.run.name.clone(),
        seed: tc.seed,
        mixer: cfg.mixer.kind,
        steps: t_env,
        episodes: episode,
        updates: learner.updates(),
        best_eval: evals.iter().map(|e| e.mean).fold(f64::NEG_INFINITY, f64::max),
        final_eval,
        reached_at,
        evals,
    };
    if let Some(dir) = out {
        write_metrics(&dir.join("metrics.csv"), &metrics)?;
        learner.checkpoint(t_env).save(&dir.join("checkpoint.json"))?;
        let path = dir.join("summary.json");
        let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        std::fs::write(&path, text).map_err(|e| TrainError::io(&path, e))?;
    }
    Ok(RunArtifacts {
        learner,
        metrics,
        summary,
    })
}
