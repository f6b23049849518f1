//! Continued-fraction mixing network.
//!
//! A ladder of depth `d` evaluates
//! `t_d = 1/max(|w_d·Q|, δ)`, `t_k = 1/max(|w_k·Q + t_{k+1}|, δ)` and returns
//! `t_1`. The joint value is a credit-weighted sum of `l` such ladders, where
//! the credits are a softmax over per-ladder bilinear scores of the pooled
//! assistive vector `m` and the global state `s`.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diffcore::{DiffError, Tape, Var};
use crate::params::{Bound, ParamId, ParamStore};
use crate::scalar::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum MixerError {
    #[error("{what}: expected width {expected}, got {got}")]
    Width {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid mixer config: {0}")]
    Config(String),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixerKind {
    #[default]
    Cfn,
    /// Plain sum of utilities, kept as a comparison baseline.
    Vdn,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// Full-input ladders only.
    #[default]
    #[serde(rename = "cfn")]
    Full,
    /// Full-input ladders plus one single-feature ladder per agent.
    #[serde(rename = "cfn-c")]
    Combined,
    /// Single-feature ladders only; the result is additive across agents.
    #[serde(rename = "cfn-d")]
    Decoupled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixerConfig {
    pub kind: MixerKind,
    pub variant: Variant,
    pub ladders: usize,
    pub depth: usize,
    pub floor: f64,
    pub igm: bool,
    pub key_width: usize,
    pub single_depth: usize,
}

impl Default for MixerConfig {
    fn default() -> Self {
        MixerConfig {
            kind: MixerKind::Cfn,
            variant: Variant::Full,
            ladders: 4,
            depth: 2,
            floor: 0.01,
            igm: true,
            key_width: 32,
            single_depth: 2,
        }
    }
}

impl MixerConfig {
    pub fn validate(&self) -> Result<(), MixerError> {
        let bad = |m: &str| Err(MixerError::Config(m.to_string()));
        if self.kind == MixerKind::Vdn {
            return Ok(());
        }
        if !(self.floor > 0.0 && self.floor.is_finite()) {
            return bad("mixer.floor must be a positive finite number");
        }
        if self.variant != Variant::Decoupled {
            if self.ladders == 0 {
                return bad("mixer.ladders must be at least 1");
            }
            if self.depth == 0 {
                return bad("mixer.depth must be at least 1");
            }
            if self.key_width == 0 {
                return bad("mixer.key_width must be at least 1");
            }
        }
        if self.variant != Variant::Full && self.single_depth == 0 {
            return bad("mixer.single_depth must be at least 1");
        }
        Ok(())
    }
}

/// Effective ladder weights: `|raw|` under IGM mode, `raw` otherwise.
pub fn enforce_igm<T: Scalar>(raw: &[T], igm: bool) -> Vec<T> {
    if igm {
        raw.iter().map(|w| w.abs()).collect()
    } else {
        raw.to_vec()
    }
}

/// Evaluates one ladder.
///
/// `weights` is layer-major: row `k` (length `q.len()`) holds `w_{k+1}`.
/// Weights are used as given; apply [`enforce_igm`] first where needed.
pub fn ladder_forward<T: Scalar>(q: &[T], weights: &[T], floor: T) -> T {
    let n = q.len();
    let depth = weights.len() / n.max(1);
    let mut tail = T::zero();
    for k in (0..depth).rev() {
        let z: T = weights[k * n..(k + 1) * n]
            .iter()
            .zip(q)
            .map(|(&w, &x)| w * x)
            .sum();
        tail = T::one() / (z + tail).abs().max(floor);
    }
    tail
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Credits `α_k = softmax_k((W_m^k m)ᵀ ReLU(W_s^k s))`.
///
/// Each head is `(w_m: [M, key], w_s: [S, key])`, row-major.
pub fn credits<T: Scalar>(m: &[T], s: &[T], heads: &[(&[T], &[T])], key: usize) -> Vec<T> {
    let logits: Vec<T> = heads
        .iter()
        .map(|(wm, ws)| {
            let mut dot = T::zero();
            for j in 0..key {
                let a: T = m.iter().enumerate().map(|(i, &v)| v * wm[i * key + j]).sum();
                let b: T = s.iter().enumerate().map(|(i, &v)| v * ws[i * key + j]).sum();
                dot += a * b.max(T::zero());
            }
            dot
        })
        .collect();
    softmax(&logits)
}

/// Parameter layout of a mixer inside a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct MixerNet {
    pub cfg: MixerConfig,
    pub n_agents: usize,
    pub m_dim: usize,
    pub s_dim: usize,
    ladders: Vec<ParamId>,
    heads: Vec<(ParamId, ParamId)>,
    singles: Vec<ParamId>,
}

impl MixerNet {
    pub fn register(
        store: &mut ParamStore,
        cfg: &MixerConfig,
        n_agents: usize,
        m_dim: usize,
        s_dim: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, MixerError> {
        cfg.validate()?;
        let mut net = MixerNet {
            cfg: cfg.clone(),
            n_agents,
            m_dim,
            s_dim,
            ladders: Vec::new(),
            heads: Vec::new(),
            singles: Vec::new(),
        };
        if cfg.kind == MixerKind::Vdn {
            return Ok(net);
        }
        if cfg.variant != Variant::Decoupled {
            for k in 0..cfg.ladders {
                let w = store.add_uniform(
                    &format!("mixer.ladder{k}.w"),
                    &[cfg.depth, n_agents],
                    n_agents,
                    rng,
                );
                net.ladders.push(w);
            }
            for k in 0..cfg.ladders {
                let wm = store.add_uniform(
                    &format!("mixer.head{k}.w_m"),
                    &[m_dim, cfg.key_width],
                    m_dim,
                    rng,
                );
                let ws = store.add_uniform(
                    &format!("mixer.head{k}.w_s"),
                    &[s_dim, cfg.key_width],
                    s_dim,
                    rng,
                );
                net.heads.push((wm, ws));
            }
        }
        if cfg.variant != Variant::Full {
            for i in 0..n_agents {
                let w = store.add_uniform(
                    &format!("mixer.single{i}.w"),
                    &[cfg.single_depth, 1],
                    1,
                    rng,
                );
                net.singles.push(w);
            }
        }
        Ok(net)
    }

    pub fn uses_assistive(&self) -> bool {
        !self.heads.is_empty()
    }

    fn check(&self, what: &'static str, expected: usize, got: usize) -> Result<(), MixerError> {
        if expected == got {
            Ok(())
        } else {
            Err(MixerError::Width {
                what,
                expected,
                got,
            })
        }
    }

    /// Credits for one sample; empty when the variant has no full ladders.
    pub fn credits(&self, store: &ParamStore, m: &[f64], s: &[f64]) -> Result<Vec<f64>, MixerError> {
        if self.heads.is_empty() {
            return Ok(Vec::new());
        }
        self.check("assistive vector", self.m_dim, m.len())?;
        self.check("state", self.s_dim, s.len())?;
        let heads: Vec<(&[f64], &[f64])> = self
            .heads
            .iter()
            .map(|&(wm, ws)| (store.get(wm), store.get(ws)))
            .collect();
        Ok(credits(m, s, &heads, self.cfg.key_width))
    }

    /// Joint value for one sample without recording gradients.
    pub fn q_tot(
        &self,
        store: &ParamStore,
        q: &[f64],
        m: &[f64],
        s: &[f64],
    ) -> Result<f64, MixerError> {
        self.check("utilities", self.n_agents, q.len())?;
        if self.cfg.kind == MixerKind::Vdn {
            return Ok(vdn_mix(q));
        }
        let alpha = self.credits(store, m, s)?;
        self.q_tot_with_credits(store, q, &alpha)
    }

    /// Joint value with credits held fixed, as used by the expansion fit.
    pub fn q_tot_with_credits(
        &self,
        store: &ParamStore,
        q: &[f64],
        alpha: &[f64],
    ) -> Result<f64, MixerError> {
        if self.cfg.kind == MixerKind::Vdn {
            return Ok(vdn_mix(q));
        }
        self.check("credits", self.ladders.len(), alpha.len())?;
        let floor = self.cfg.floor;
        let mut total = 0.0;
        for (&w, &a) in self.ladders.iter().zip(alpha) {
            let eff = enforce_igm(store.get(w), self.cfg.igm);
            total += a * ladder_forward(q, &eff, floor);
        }
        for (i, &w) in self.singles.iter().enumerate() {
            let eff = enforce_igm(store.get(w), self.cfg.igm);
            total += ladder_forward(&q[i..i + 1], &eff, floor);
        }
        Ok(total)
    }

    /// Batched joint value on the tape: `q: [B, n]`, `m: [B, M]`,
    /// `s: [B, S]` → `[B, 1]`.
    pub fn forward_tape(
        &self,
        tape: &mut Tape<f64>,
        bound: &Bound,
        q: Var,
        m: Option<Var>,
        s: Var,
    ) -> Result<Var, MixerError> {
        let (rows, n) = dims(tape, q)?;
        self.check("utilities", self.n_agents, n)?;
        if self.cfg.kind == MixerKind::Vdn {
            return Ok(tape.sum_cols(q)?);
        }
        let floor = self.cfg.floor;
        let mut parts = Vec::new();
        if !self.ladders.is_empty() {
            let m = m.ok_or(MixerError::Width {
                what: "assistive vector",
                expected: self.m_dim,
                got: 0,
            })?;
            self.check("assistive vector", self.m_dim, dims(tape, m)?.1)?;
            self.check("state", self.s_dim, dims(tape, s)?.1)?;
            let mut outs = Vec::with_capacity(self.ladders.len());
            for &w in &self.ladders {
                outs.push(self.ladder_tape(tape, bound.var(w), q, rows, floor)?);
            }
            let ladders = tape.concat_cols(&outs)?;
            let mut logits = Vec::with_capacity(self.heads.len());
            for &(wm, ws) in &self.heads {
                let a = tape.matmul(m, bound.var(wm))?;
                let b = tape.matmul(s, bound.var(ws))?;
                let b = tape.relu(b);
                let ab = tape.mul(a, b)?;
                logits.push(tape.sum_cols(ab)?);
            }
            let logits = tape.concat_cols(&logits)?;
            let alpha = tape.softmax(logits);
            let weighted = tape.mul(alpha, ladders)?;
            parts.push(tape.sum_cols(weighted)?);
        }
        for (i, &w) in self.singles.iter().enumerate() {
            let qi = tape.gather_cols(q, &vec![i; rows])?;
            parts.push(self.ladder_tape(tape, bound.var(w), qi, rows, floor)?);
        }
        let mut total = parts[0];
        for &p in &parts[1..] {
            total = tape.add(total, p)?;
        }
        Ok(total)
    }

    /// One ladder on the tape; `w: [d, n]` raw weights.
    fn ladder_tape(
        &self,
        tape: &mut Tape<f64>,
        w: Var,
        q: Var,
        rows: usize,
        floor: f64,
    ) -> Result<Var, MixerError> {
        let w = if self.cfg.igm { tape.abs(w) } else { w };
        let wt = tape.transpose(w)?;
        // pre[:, k] = w_{k+1} · Q
        let pre = tape.matmul(q, wt)?;
        let depth = dims(tape, pre)?.1;
        let mut tail: Option<Var> = None;
        for k in (0..depth).rev() {
            let z = tape.gather_cols(pre, &vec![k; rows])?;
            let z = match tail {
                Some(t) => tape.add(z, t)?,
                None => z,
            };
            let a = tape.abs(z);
            let a = tape.max_const(a, floor);
            tail = Some(tape.recip(a));
        }
        Ok(tail.expect("depth >= 1"))
    }
}

fn dims(tape: &Tape<f64>, v: Var) -> Result<(usize, usize), MixerError> {
    tape.value(v).dims2().ok_or_else(|| {
        MixerError::Diff(DiffError::RankMismatch {
            op: "mixer",
            shape: tape.shape(v).to_vec(),
        })
    })
}

/// Additive baseline `Σ_i Q_i`.
pub fn vdn_mix(q: &[f64]) -> f64 {
    q.iter().sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check_many, Tensor};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ladder_examples() {
        assert_eq!(ladder_forward(&[1.0], &[2.0], 0.01), 0.5);
        assert_eq!(ladder_forward(&[1.0], &[1.0, 1.0], 0.01), 0.5);
        // w_2·Q = 0: the floor gives t_2 = 100 and t_1 = 1/|1 + 100|
        let v: f64 = ladder_forward(&[1.0, -1.0], &[1.0, 0.0, 1.0, 1.0], 0.01);
        assert!((v - 1.0 / 101.0).abs() < 1e-15);
        assert_eq!(ladder_forward(&[1.0f32], &[2.0f32], 0.01), 0.5);
    }

    #[test]
    fn enforce_igm_examples() {
        assert_eq!(enforce_igm(&[-1.0, 2.0], true), vec![1.0, 2.0]);
        assert_eq!(enforce_igm(&[-1.0, 2.0], false), vec![-1.0, 2.0]);
    }

    #[test]
    fn credits_examples() {
        let zeros = vec![0.0; 6];
        let heads: Vec<(&[f64], &[f64])> = vec![(&zeros, &zeros); 3];
        let a = credits(&[1.0, 2.0], &[3.0, -1.0, 0.5], &heads[..], 1);
        assert!(a.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let a = credits(&[1.0], &[1.0], &[(&[4.0][..], &[2.0][..])], 1);
        assert_eq!(a, vec![1.0]);
    }

    fn build(variant: Variant, igm: bool, seed: u64) -> (ParamStore, MixerNet) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cfg = MixerConfig {
            variant,
            igm,
            ladders: 3,
            depth: 3,
            key_width: 4,
            ..Default::default()
        };
        let net = MixerNet::register(&mut store, &cfg, 3, 2, 5, &mut rng).unwrap();
        (store, net)
    }

    /// Straight-line evaluation of ladders, credits and the weighted sum,
    /// written independently of the module's helpers.
    fn reference_q_tot(store: &ParamStore, net: &MixerNet, q: &[f64], m: &[f64], s: &[f64]) -> f64 {
        let get = |name: &str| store.get(store.id(name).unwrap()).to_vec();
        let fix = |w: Vec<f64>| -> Vec<f64> {
            if net.cfg.igm {
                w.into_iter().map(f64::abs).collect()
            } else {
                w
            }
        };
        let ladder = |w: &[f64], x: &[f64]| -> f64 {
            let n = x.len();
            let d = w.len() / n;
            let dot = |k: usize| -> f64 { (0..n).map(|i| w[k * n + i] * x[i]).sum() };
            let mut t = 1.0 / dot(d - 1).abs().max(net.cfg.floor);
            for k in (0..d - 1).rev() {
                t = 1.0 / (dot(k) + t).abs().max(net.cfg.floor);
            }
            t
        };
        let mut total = 0.0;
        if net.cfg.variant != Variant::Decoupled {
            let key = net.cfg.key_width;
            let mut logits = Vec::new();
            for k in 0..net.cfg.ladders {
                let wm = get(&format!("mixer.head{k}.w_m"));
                let ws = get(&format!("mixer.head{k}.w_s"));
                let mut acc = 0.0;
                for j in 0..key {
                    let a: f64 = (0..m.len()).map(|i| m[i] * wm[i * key + j]).sum();
                    let b: f64 = (0..s.len()).map(|i| s[i] * ws[i * key + j]).sum();
                    acc += a * if b > 0.0 { b } else { 0.0 };
                }
                logits.push(acc);
            }
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for k in 0..net.cfg.ladders {
                let w = fix(get(&format!("mixer.ladder{k}.w")));
                total += logits[k].exp() / z * ladder(&w, q);
            }
        }
        if net.cfg.variant != Variant::Full {
            for i in 0..q.len() {
                let w = fix(get(&format!("mixer.single{i}.w")));
                total += ladder(&w, &q[i..i + 1]);
            }
        }
        total
    }

    fn batch_inputs(rows: usize, seed: u64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |k: usize| (0..k).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<f64>>();
        (draw(rows * 3), draw(rows * 2), draw(rows * 5))
    }

    #[test]
    fn plain_and_tape_match_reference() {
        for variant in [Variant::Full, Variant::Combined, Variant::Decoupled] {
            for igm in [true, false] {
                let (store, net) = build(variant, igm, 5);
                let rows = 6;
                let (q, m, s) = batch_inputs(rows, 17);
                let mut tape = Tape::new();
                let bound = store.bind(&mut tape, false);
                let qv = tape.constant(Tensor::matrix(rows, 3, q.clone()).unwrap());
                let mv = tape.constant(Tensor::matrix(rows, 2, m.clone()).unwrap());
                let sv = tape.constant(Tensor::matrix(rows, 5, s.clone()).unwrap());
                let out = net.forward_tape(&mut tape, &bound, qv, Some(mv), sv).unwrap();
                for r in 0..rows {
                    let (qr, mr, sr) = (&q[r * 3..r * 3 + 3], &m[r * 2..r * 2 + 2], &s[r * 5..r * 5 + 5]);
                    let want = reference_q_tot(&store, &net, qr, mr, sr);
                    let plain = net.q_tot(&store, qr, mr, sr).unwrap();
                    assert!((want - plain).abs() <= 1e-12 * want.abs().max(1.0));
                    assert!((want - tape.values(out)[r]).abs() <= 1e-12 * want.abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn single_ladder_equal_credits() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let cfg = MixerConfig {
            ladders: 1,
            ..Default::default()
        };
        let net = MixerNet::register(&mut store, &cfg, 2, 3, 2, &mut rng).unwrap();
        let q = [0.7, -0.3];
        let w = enforce_igm(store.get(store.id("mixer.ladder0.w").unwrap()), true);
        let got = net.q_tot(&store, &q, &[0.1, 0.2, 0.3], &[1.0, 1.0]).unwrap();
        assert_eq!(got, ladder_forward(&q, &w, 0.01));
    }

    #[test]
    fn identical_ladders_with_equal_logits_give_that_ladder() {
        let (mut store, net) = build(Variant::Full, true, 2);
        let w0 = store.get(store.id("mixer.ladder0.w").unwrap()).to_vec();
        for k in 0..3 {
            let id = store.id(&format!("mixer.ladder{k}.w")).unwrap();
            store.get_mut(id).copy_from_slice(&w0);
            for h in ["w_m", "w_s"] {
                let id = store.id(&format!("mixer.head{k}.{h}")).unwrap();
                store.get_mut(id).iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let q = [0.4, 1.2, -0.6];
        let got = net.q_tot(&store, &q, &[1.0, 2.0], &[0.0; 5]).unwrap();
        let want = ladder_forward(&q, &enforce_igm(&w0, true), 0.01);
        assert!((got - want).abs() < 1e-14);
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let (store, net) = build(Variant::Full, true, 0);
        let err = net.q_tot(&store, &[1.0, 2.0], &[0.0; 2], &[0.0; 5]).unwrap_err();
        assert!(matches!(err, MixerError::Width { what: "utilities", .. }));
    }

    fn cross_difference(f: impl Fn(&[f64]) -> f64, q: &[f64], i: usize, j: usize, h: f64) -> f64 {
        let at = |di: f64, dj: f64| {
            let mut x = q.to_vec();
            x[i] += di;
            x[j] += dj;
            f(&x)
        };
        at(h, h) - at(h, 0.0) - at(0.0, h) + at(0.0, 0.0)
    }

    #[test]
    fn decoupled_variant_is_additive_and_full_variant_is_not() {
        let m = [0.3, -0.2];
        let s = [0.1, 0.5, -0.4, 0.9, 0.2];
        let (store_d, net_d) = build(Variant::Decoupled, true, 4);
        let (store_f, net_f) = build(Variant::Full, true, 4);
        let q = [0.8, 1.1, 0.6];
        let fd = |x: &[f64]| net_d.q_tot(&store_d, x, &m, &s).unwrap();
        let ff = |x: &[f64]| net_f.q_tot(&store_f, x, &m, &s).unwrap();
        let mut full_max: f64 = 0.0;
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert!(cross_difference(fd, &q, i, j, 0.1).abs() < 1e-8);
            full_max = full_max.max(cross_difference(ff, &q, i, j, 0.1).abs());
        }
        assert!(full_max > 1e-6, "{full_max}");
    }

    /// Gradient of Q_tot w.r.t. every mixer weight and Q entry. Inputs are
    /// chosen so every ladder denominator stays clear of the floor.
    #[test]
    fn gradient_matches_finite_differences() {
        for variant in [Variant::Full, Variant::Combined, Variant::Decoupled] {
            let (store, net) = build(variant, true, 8);
            let rows = 4;
            let (_, m, s) = batch_inputs(rows, 3);
            let q: Vec<f64> = (0..rows * 3).map(|i| 0.5 + 0.1 * i as f64).collect();
            let mut inputs: Vec<Tensor<f64>> = store
                .entries()
                .iter()
                .map(|e| Tensor::new(&e.shape, e.values.clone()).unwrap())
                .collect();
            inputs.push(Tensor::matrix(rows, 3, q).unwrap());
            let np = store.len();
            let report = grad_check_many(
                |tape, vars| {
                    let bound = Bound(vars[..np].to_vec());
                    let mv = tape.constant(Tensor::matrix(rows, 2, m.clone()).unwrap());
                    let sv = tape.constant(Tensor::matrix(rows, 5, s.clone()).unwrap());
                    let out = net
                        .forward_tape(tape, &bound, vars[np], Some(mv), sv)
                        .map_err(|e| match e {
                            MixerError::Diff(d) => d,
                            other => panic!("{other}"),
                        })?;
                    let sq = tape.square(out);
                    Ok(tape.sum(sq))
                },
                &inputs,
                1e-6,
                1e-4,
                None,
            )
            .unwrap();
            assert!(report.passed, "{variant:?}: {report:?}");
        }
    }

    proptest! {
        #[test]
        fn ladder_output_is_bounded(
            q in proptest::collection::vec(-1e6f64..1e6, 3),
            w in proptest::collection::vec(-1e3f64..1e3, 6),
            floor in 1e-4f64..1.0,
        ) {
            let v = ladder_forward(&q, &w, floor);
            prop_assert!(v.is_finite());
            prop_assert!(v > 0.0 && v <= 1.0 / floor * (1.0 + 1e-12));
        }

        #[test]
        fn credits_are_a_distribution(
            m in proptest::collection::vec(-5f64..5.0, 2),
            s in proptest::collection::vec(-5f64..5.0, 2),
            w in proptest::collection::vec(-1f64..1.0, 16),
        ) {
            let heads: Vec<(&[f64], &[f64])> = w.chunks(8).map(|c| (&c[..4], &c[4..])).collect();
            let a = credits(&m, &s, &heads, 2);
            prop_assert!(a.iter().all(|&v| v > 0.0));
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn vdn_examples() {
        assert_eq!(vdn_mix(&[1.0, 2.0, 3.0]), 6.0);
        assert_eq!(vdn_mix(&[0.0; 4]), 0.0);
        assert_eq!(vdn_mix(&[3.0, 1.0, 2.0]), vdn_mix(&[1.0, 2.0, 3.0]));
    }
}
