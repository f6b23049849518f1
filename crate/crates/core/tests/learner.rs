use qcofr_core::config::RunConfig;
use qcofr_core::diffcore::Tape;
use qcofr_core::envs::{EnvConfig, LbfConfig};
use qcofr_core::mixer::{MixerConfig, Variant};
use qcofr_core::params::ParamStore;
use qcofr_core::trainer::{collect_episode, EnvDims, Episode, EpisodeBatch, Learner, LossInputs};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn lbf_learner(variant: Variant) -> Learner {
    let mut cfg = RunConfig::new(EnvConfig::Lbf(LbfConfig {
        width: 6,
        height: 6,
        agent_levels: vec![1, 1],
        food_levels: vec![1, 1],
        ..LbfConfig::default()
    }));
    cfg.agent.hidden = 16;
    cfg.vib.latent = 8;
    cfg.mixer = MixerConfig {
        variant,
        key_width: 8,
        ..MixerConfig::default()
    };
    Learner::from_config(&cfg).unwrap()
}

fn truncate(ep: &Episode, len: usize) -> Episode {
    Episode {
        obs: ep.obs[..=len].to_vec(),
        states: ep.states[..=len].to_vec(),
        avail: ep.avail[..=len].to_vec(),
        actions: ep.actions[..len].to_vec(),
        rewards: ep.rewards[..len].to_vec(),
        terminated: false,
    }
}

/// Frozen inputs with zero noise so batches of different shape are comparable.
fn inputs(l: &Learner, batch: &EpisodeBatch) -> LossInputs {
    let rows = batch.n_agents * batch.size;
    LossInputs {
        y: l.compute_targets(batch).unwrap(),
        vib_targets: batch.actions.clone(),
        noise: match &l.vib {
            Some(v) => vec![vec![0.0; rows * v.latent]; batch.t_max],
            None => Vec::new(),
        },
    }
}

fn loss_and_grads(l: &Learner, episodes: &[&Episode]) -> (f64, Vec<Vec<f64>>) {
    let batch = EpisodeBatch::new(episodes, &l.agents).unwrap();
    let inputs = inputs(l, &batch);
    let mut tape = Tape::new();
    let bound = l.store.bind(&mut tape, true);
    let lv = l.loss_tape(&mut tape, &bound, &batch, &inputs).unwrap();
    let value = tape.values(lv.total)[0];
    tape.backward(lv.total).unwrap();
    (value, l.store.grads(&tape, &bound))
}

/// A padded batch weighs each episode by its valid steps, so its loss and
/// gradient are the step-weighted mix of the single-episode ones.
#[test]
fn padding_does_not_leak_into_loss_or_gradient() {
    for variant in [Variant::Full, Variant::Decoupled] {
        let l = lbf_learner(variant);
        let mut env = l.cfg.env.build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let long = collect_episode(env.as_mut(), &l, 1.0, 1, &mut rng).unwrap();
        let other = collect_episode(env.as_mut(), &l, 1.0, 2, &mut rng).unwrap();
        let short = truncate(&other, 7);
        let (la, ga) = loss_and_grads(&l, &[&short]);
        let (lb, gb) = loss_and_grads(&l, &[&long]);
        let (lab, gab) = loss_and_grads(&l, &[&short, &long]);
        let (na, nb) = (short.len() as f64, long.len() as f64);
        let mix = |a: f64, b: f64| (na * a + nb * b) / (na + nb);
        assert!((lab - mix(la, lb)).abs() < 1e-12 * lab.abs().max(1.0), "{variant:?}: {lab} vs {}", mix(la, lb));
        for ((p, q), r) in gab.iter().zip(&ga).zip(&gb) {
            for ((x, y), z) in p.iter().zip(q).zip(r) {
                let want = mix(*y, *z);
                assert!((x - want).abs() < 1e-10 * want.abs().max(1.0), "{variant:?}: {x} vs {want}");
            }
        }
    }
}

const U: usize = 3;

/// Agent network whose utilities ignore the input: every weight is zero,
/// so the recurrent state stays at zero and the head bias is the output.
fn constant_utilities(store: &mut ParamStore, utilities: [f64; U]) {
    for p in store.entries_mut() {
        if p.name.starts_with("agent.") {
            p.values.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let id = store.id("agent.head.b").unwrap();
    store.get_mut(id).copy_from_slice(&utilities);
}

/// Ladder weights chosen by hand, credit heads zeroed (uniform credits).
fn set_mixer(store: &mut ParamStore, ladders: &[[f64; 4]]) {
    for p in store.entries_mut() {
        if p.name.starts_with("mixer.head") {
            p.values.iter_mut().for_each(|v| *v = 0.0);
        }
    }
    for (k, w) in ladders.iter().enumerate() {
        let id = store.id(&format!("mixer.ladder{k}.w")).unwrap();
        store.get_mut(id).copy_from_slice(w);
    }
}

fn hand_learner(gamma: f64) -> Learner {
    let mut cfg = RunConfig::new(EnvConfig::default());
    cfg.agent.hidden = 4;
    cfg.vib.latent = 2;
    cfg.mixer = MixerConfig {
        ladders: 2,
        depth: 2,
        key_width: 2,
        ..MixerConfig::default()
    };
    cfg.trainer.gamma = gamma;
    let dims = EnvDims {
        n_agents: 2,
        n_actions: U,
        obs_dim: 2,
        state_dim: 2,
    };
    let mut l = Learner::new(&cfg, dims).unwrap();
    // online prefers action 2, target prefers action 0
    constant_utilities(&mut l.store, [0.1, 0.2, 0.9]);
    constant_utilities(&mut l.target, [1.5, 0.4, 0.3]);
    let ladders = [[0.5, 1.0, 2.0, 0.25], [1.0, 0.3, 0.7, 1.2]];
    set_mixer(&mut l.store, &ladders);
    set_mixer(&mut l.target, &ladders);
    l
}

fn two_step_episode(terminated: bool) -> Episode {
    let obs = vec![vec![vec![0.3, -0.2]; 2]; 3];
    Episode {
        obs,
        states: vec![vec![0.5, 0.1], vec![0.2, 0.9], vec![-0.4, 0.6]],
        avail: vec![vec![vec![true; U]; 2]; 3],
        actions: vec![vec![0, 1], vec![2, 2]],
        rewards: vec![0.25, -1.0],
        terminated,
    }
}

/// `1 / max(|w_1·q + 1 / max(|w_2·q|, δ)|, δ)` for two agents.
fn ladder(w: [f64; 4], q: [f64; 2]) -> f64 {
    let inner = 1.0 / (w[2] * q[0] + w[3] * q[1]).abs().max(0.01);
    1.0 / (w[0] * q[0] + w[1] * q[1] + inner).abs().max(0.01)
}

#[test]
fn double_q_target_matches_hand_computation() {
    let gamma = 0.9;
    // every joint action the online network could pick; it picks (2, 2)
    let online = [0.1, 0.2, 0.9];
    let mut best = (0, 0);
    for a in 0..U {
        for b in 0..U {
            if online[a] + online[b] > online[best.0] + online[best.1] {
                best = (a, b);
            }
        }
    }
    assert_eq!(best, (2, 2));
    let target = [1.5, 0.4, 0.3];
    let q = [target[best.0], target[best.1]];
    let q_hat = 0.5 * ladder([0.5, 1.0, 2.0, 0.25], q) + 0.5 * ladder([1.0, 0.3, 0.7, 1.2], q);

    let l = hand_learner(gamma);
    let ep = two_step_episode(true);
    let batch = EpisodeBatch::new(&[&ep], &l.agents).unwrap();
    let y = l.compute_targets(&batch).unwrap();
    assert!((y[0] - (0.25 + gamma * q_hat)).abs() < 1e-12, "{y:?}");
    assert_eq!(y[1], -1.0);

    // a time-limit ending bootstraps from the final observation
    let ep = two_step_episode(false);
    let batch = EpisodeBatch::new(&[&ep], &l.agents).unwrap();
    let y = l.compute_targets(&batch).unwrap();
    assert!((y[1] - (-1.0 + gamma * q_hat)).abs() < 1e-12, "{y:?}");

    // the target network's own greedy choice (0, 0) would give another value
    let q_own = [target[0], target[0]];
    let own = 0.5 * ladder([0.5, 1.0, 2.0, 0.25], q_own) + 0.5 * ladder([1.0, 0.3, 0.7, 1.2], q_own);
    assert!((own - q_hat).abs() > 1e-3);
}

#[test]
fn zero_discount_targets_are_rewards() {
    let l = hand_learner(0.0);
    let ep = two_step_episode(false);
    let batch = EpisodeBatch::new(&[&ep], &l.agents).unwrap();
    assert_eq!(l.compute_targets(&batch).unwrap(), ep.rewards);
}

/// Same seed, same run; a different seed changes the trajectory.
#[test]
fn training_runs_are_reproducible() {
    let mut cfg = lbf_learner(Variant::Full).cfg;
    cfg.trainer.batch_size = 2;
    cfg.trainer.total_steps = 300;
    cfg.trainer.test_interval = 150;
    cfg.trainer.test_episodes = 2;
    cfg.trainer.log_interval = 50;
    let a = qcofr_core::trainer::run_training(&cfg, None).unwrap();
    let b = qcofr_core::trainer::run_training(&cfg, None).unwrap();
    assert_eq!(a.metrics, b.metrics);
    assert_eq!(a.learner.store, b.learner.store);
    cfg.trainer.seed = 1;
    let c = qcofr_core::trainer::run_training(&cfg, None).unwrap();
    assert_ne!(a.learner.store, c.learner.store);
}
