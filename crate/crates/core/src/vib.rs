//! Variational information bottleneck over agent hidden states.
//!
//! The encoder maps `h_i` to the mean `μ_i` of `N(μ_i, I)`; samples are
//! reparameterized as `m_i = μ_i + ε`. The decoder predicts the agent's
//! target action from `m_i`. The loss is the decoder cross-entropy plus
//! `β · KL(N(μ, I) ‖ N(0, I))`, both averaged over agents.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{DiffError, Tape, Var};
use crate::params::{linear, linear_row, Bound, ParamId, ParamStore};

#[derive(Debug, Error, PartialEq)]
pub enum VibError {
    #[error("{what}: expected width {expected}, got {got}")]
    Width {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("target action {action} out of range for {n_actions} actions")]
    InvalidAction { action: usize, n_actions: usize },
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VibConfig {
    pub latent: usize,
    pub beta: f64,
}

impl Default for VibConfig {
    fn default() -> Self {
        VibConfig {
            latent: 32,
            beta: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssistiveSample {
    pub mu: Vec<f64>,
    pub eps: Vec<f64>,
    pub m: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct VibNet {
    pub hidden: usize,
    pub latent: usize,
    pub n_actions: usize,
    pub beta: f64,
    enc: [(ParamId, ParamId); 2],
    dec: [(ParamId, ParamId); 2],
}

impl VibNet {
    pub fn register(
        store: &mut ParamStore,
        cfg: &VibConfig,
        hidden: usize,
        n_actions: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let m = cfg.latent;
        let mut layer = |name: &str, fan_in: usize, out: usize| {
            (
                store.add_uniform(&format!("vib.{name}.w"), &[fan_in, out], fan_in, rng),
                store.add_uniform(&format!("vib.{name}.b"), &[1, out], fan_in, rng),
            )
        };
        let enc = [layer("enc1", hidden, m), layer("enc2", m, m)];
        let dec = [layer("dec1", m, m), layer("dec2", m, n_actions)];
        VibNet {
            hidden,
            latent: m,
            n_actions,
            beta: cfg.beta,
            enc,
            dec,
        }
    }

    fn mlp(store: &ParamStore, layers: &[(ParamId, ParamId); 2], x: &[f64], mid: usize, out: usize) -> Vec<f64> {
        let (w1, b1) = layers[0];
        let (w2, b2) = layers[1];
        let mut a = linear_row(x, store.get(w1), Some(store.get(b1)), mid);
        a.iter_mut().for_each(|v| *v = v.max(0.0));
        linear_row(&a, store.get(w2), Some(store.get(b2)), out)
    }

    pub fn mean(&self, store: &ParamStore, h: &[f64]) -> Result<Vec<f64>, VibError> {
        if h.len() != self.hidden {
            return Err(VibError::Width {
                what: "hidden state",
                expected: self.hidden,
                got: h.len(),
            });
        }
        Ok(Self::mlp(store, &self.enc, h, self.latent, self.latent))
    }

    /// `m = f_m(h) + ε`.
    pub fn encode(&self, store: &ParamStore, h: &[f64], eps: &[f64]) -> Result<AssistiveSample, VibError> {
        if eps.len() != self.latent {
            return Err(VibError::Width {
                what: "noise draw",
                expected: self.latent,
                got: eps.len(),
            });
        }
        let mu = self.mean(store, h)?;
        let m = mu.iter().zip(eps).map(|(a, b)| a + b).collect();
        Ok(AssistiveSample {
            mu,
            eps: eps.to_vec(),
            m,
        })
    }

    pub fn decode_logits(&self, store: &ParamStore, m: &[f64]) -> Vec<f64> {
        Self::mlp(store, &self.dec, m, self.latent, self.n_actions)
    }

    /// Per-agent averaged loss for one timestep without recording gradients.
    pub fn loss(
        &self,
        store: &ParamStore,
        hidden: &[Vec<f64>],
        targets: &[usize],
        eps: &[Vec<f64>],
    ) -> Result<f64, VibError> {
        let n = hidden.len();
        if targets.len() != n || eps.len() != n {
            return Err(VibError::Width {
                what: "agents",
                expected: n,
                got: targets.len().min(eps.len()),
            });
        }
        let mut total = 0.0;
        for ((h, &u), e) in hidden.iter().zip(targets).zip(eps) {
            self.check_action(u)?;
            let sample = self.encode(store, h, e)?;
            let logp = log_softmax(&self.decode_logits(store, &sample.m));
            total += -logp[u] + self.beta * kl_to_standard_normal(&sample.mu);
        }
        Ok(total / n.max(1) as f64)
    }

    fn check_action(&self, u: usize) -> Result<(), VibError> {
        if u >= self.n_actions {
            return Err(VibError::InvalidAction {
                action: u,
                n_actions: self.n_actions,
            });
        }
        Ok(())
    }

    /// Encoder on the tape: returns `(μ, m)` for `h: [R, H]` and optional
    /// noise `eps: [R, M]` (`m = μ` when absent).
    pub fn encode_tape(
        &self,
        tape: &mut Tape<f64>,
        bound: &Bound,
        h: Var,
        eps: Option<Var>,
    ) -> Result<(Var, Var), VibError> {
        let (w1, b1) = self.enc[0];
        let (w2, b2) = self.enc[1];
        let a = linear(tape, h, bound.var(w1), bound.var(b1))?;
        let a = tape.relu(a);
        let mu = linear(tape, a, bound.var(w2), bound.var(b2))?;
        let m = match eps {
            Some(e) => tape.add(mu, e)?,
            None => mu,
        };
        Ok((mu, m))
    }

    /// Per-row loss `−log q(u*|m) + β·‖μ‖²/2` as a `[R, 1]` column.
    pub fn row_losses_tape(
        &self,
        tape: &mut Tape<f64>,
        bound: &Bound,
        mu: Var,
        m: Var,
        targets: &[usize],
    ) -> Result<Var, VibError> {
        for &u in targets {
            self.check_action(u)?;
        }
        let (w1, b1) = self.dec[0];
        let (w2, b2) = self.dec[1];
        let a = linear(tape, m, bound.var(w1), bound.var(b1))?;
        let a = tape.relu(a);
        let logits = linear(tape, a, bound.var(w2), bound.var(b2))?;
        let logp = tape.log_softmax(logits);
        let picked = tape.gather_cols(logp, targets)?;
        let ce = tape.scale(picked, -1.0);
        if self.beta == 0.0 {
            return Ok(ce);
        }
        let sq = tape.square(mu);
        let kl = tape.sum_cols(sq)?;
        let kl = tape.scale(kl, 0.5 * self.beta);
        Ok(tape.add(ce, kl)?)
    }
}

/// `KL(N(μ, I) ‖ N(0, I)) = ‖μ‖² / 2`.
pub fn kl_to_standard_normal(mu: &[f64]) -> f64 {
    0.5 * mu.iter().map(|v| v * v).sum::<f64>()
}

/// `x − max − ln Σ exp(x − max)`; a uniform row gives exactly `−ln n`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shift = mx + logits.iter().map(|&v| (v - mx).exp()).sum::<f64>().ln();
    logits.iter().map(|&v| v - shift).collect()
}

/// Standard normal draw of width `m`.
pub fn sample_noise(m: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..m).map(|_| rng.sample(StandardNormal)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check_many, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net(hidden: usize, latent: usize, actions: usize, beta: f64, seed: u64) -> (ParamStore, VibNet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cfg = VibConfig { latent, beta };
        let v = VibNet::register(&mut store, &cfg, hidden, actions, &mut rng);
        (store, v)
    }

    fn zero(store: &mut ParamStore, prefix: &str) {
        for e in store.entries_mut().filter(|e| e.name.starts_with(prefix)) {
            e.values.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn encode_examples() {
        let (mut store, v) = net(4, 3, 2, 1e-3, 0);
        let h = [0.1, -0.5, 0.3, 0.9];
        let s = v.encode(&store, &h, &[0.0; 3]).unwrap();
        assert_eq!(s.m, s.mu);
        zero(&mut store, "vib.enc");
        let e = [0.4, -1.2, 2.0];
        let s = v.encode(&store, &h, &e).unwrap();
        assert_eq!(s.m, e.to_vec());
        assert!(matches!(
            v.encode(&store, &h, &[0.0; 2]),
            Err(VibError::Width { .. })
        ));
    }

    /// 10 000 draws: per-coordinate mean within 3σ = 3/√N of μ, sample
    /// covariance within 0.05 of the identity.
    #[test]
    fn reparameterized_samples_have_identity_covariance() {
        let (store, v) = net(4, 3, 2, 1e-3, 1);
        let h = [0.2, 0.4, -0.1, 0.7];
        let mu = v.mean(&store, &h).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let samples: Vec<Vec<f64>> = (0..n)
            .map(|_| v.encode(&store, &h, &sample_noise(3, &mut rng)).unwrap().m)
            .collect();
        let mean: Vec<f64> = (0..3)
            .map(|j| samples.iter().map(|s| s[j]).sum::<f64>() / n as f64)
            .collect();
        for j in 0..3 {
            assert!((mean[j] - mu[j]).abs() < 3.0 / (n as f64).sqrt());
            for k in 0..3 {
                let cov = samples
                    .iter()
                    .map(|s| (s[j] - mean[j]) * (s[k] - mean[k]))
                    .sum::<f64>()
                    / (n - 1) as f64;
                let want = if j == k { 1.0 } else { 0.0 };
                assert!((cov - want).abs() < 0.05, "cov[{j}][{k}] = {cov}");
            }
        }
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_to_standard_normal(&[0.0, 0.0]), 0.0);
        assert_eq!(kl_to_standard_normal(&[1.0, 1.0]), 1.0);
    }

    #[test]
    fn uniform_decoder_loss_is_log_actions() {
        for beta in [0.0, 1.0] {
            let (mut store, v) = net(3, 2, 4, beta, 3);
            zero(&mut store, "vib.dec");
            zero(&mut store, "vib.enc");
            let hs = vec![vec![0.3, -0.2, 0.8], vec![1.0, 0.0, -1.0]];
            let eps = vec![vec![0.0, 0.0]; 2];
            let loss = v.loss(&store, &hs, &[1, 3], &eps).unwrap();
            assert!((loss - 4f64.ln()).abs() < 1e-15, "{loss}");
        }
    }

    #[test]
    fn invalid_target_is_an_error() {
        let (store, v) = net(3, 2, 4, 0.0, 3);
        let err = v
            .loss(&store, &[vec![0.0; 3]], &[4], &[vec![0.0; 2]])
            .unwrap_err();
        assert_eq!(err, VibError::InvalidAction { action: 4, n_actions: 4 });
    }

    #[test]
    fn loss_is_nonnegative_and_monotone_in_beta() {
        let hs = vec![vec![0.3, -0.2, 0.8], vec![1.0, 0.5, -1.0]];
        let eps = vec![vec![0.2, -0.7], vec![1.1, 0.3]];
        let mut prev = -1.0;
        for beta in [0.0, 0.01, 0.1, 1.0, 10.0] {
            let (store, v) = net(3, 2, 4, beta, 7);
            let loss = v.loss(&store, &hs, &[0, 2], &eps).unwrap();
            assert!(loss >= 0.0);
            assert!(loss >= prev);
            prev = loss;
        }
    }

    #[test]
    fn tape_rows_match_plain_loss() {
        let (store, v) = net(3, 2, 4, 0.5, 9);
        let hs = vec![vec![0.3, -0.2, 0.8], vec![1.0, 0.5, -1.0]];
        let eps = vec![vec![0.2, -0.7], vec![1.1, 0.3]];
        let targets = [3, 1];
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape, false);
        let h = tape.constant(Tensor::matrix(2, 3, hs.concat()).unwrap());
        let e = tape.constant(Tensor::matrix(2, 2, eps.concat()).unwrap());
        let (mu, m) = v.encode_tape(&mut tape, &bound, h, Some(e)).unwrap();
        let rows = v.row_losses_tape(&mut tape, &bound, mu, m, &targets).unwrap();
        let mean = tape.values(rows).iter().sum::<f64>() / 2.0;
        let plain = v.loss(&store, &hs, &targets, &eps).unwrap();
        assert!((mean - plain).abs() < 1e-13);
    }

    #[test]
    fn gradient_matches_finite_differences_with_frozen_noise() {
        let (store, v) = net(3, 4, 3, 0.3, 11);
        let hs: Vec<f64> = (0..9).map(|i| ((i as f64) * 0.7).sin()).collect();
        let eps: Vec<f64> = (0..12).map(|i| ((i as f64) * 1.3).cos()).collect();
        let targets = [0, 2, 1];
        let params: Vec<Tensor<f64>> = store
            .entries()
            .iter()
            .map(|e| Tensor::new(&e.shape, e.values.clone()).unwrap())
            .collect();
        let report = grad_check_many(
            |tape, vars| {
                let bound = Bound(vars.to_vec());
                let h = tape.constant(Tensor::matrix(3, 3, hs.clone()).unwrap());
                let e = tape.constant(Tensor::matrix(3, 4, eps.clone()).unwrap());
                let (mu, m) = v.encode_tape(tape, &bound, h, Some(e)).map_err(unwrap_diff)?;
                let rows = v.row_losses_tape(tape, &bound, mu, m, &targets).map_err(unwrap_diff)?;
                Ok(tape.mean(rows))
            },
            &params,
            1e-6,
            1e-4,
            None,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    fn unwrap_diff(e: VibError) -> DiffError {
        match e {
            VibError::Diff(d) => d,
            other => panic!("{other}"),
        }
    }
}
