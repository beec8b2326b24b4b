use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::config::RunConfig;
use crate::curriculum::{CurriculumPhase, TrainingMode};
use crate::env::EnvConfig;
use crate::evalbench::Scenario;
use crate::plant::PlantParams;
use crate::rng::seeded;

fn small_config() -> SacConfig {
    SacConfig {
        hidden: vec![6, 5],
        batch_size: 4,
        hidden_gain: std::f64::consts::SQRT_2,
        output_gain: 1.0,
        ..SacConfig::default()
    }
}

fn random_batch(rng: &mut ChaCha8Rng, b: usize, od: usize, ad: usize) -> Batch {
    let ts: Vec<Transition> = (0..b)
        .map(|_| Transition {
            obs: (0..od).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            action: (0..ad).map(|_| rng.gen_range(-0.9..0.9)).collect(),
            reward: rng.gen_range(-1.0..1.0),
            next_obs: (0..od).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            done: false,
        })
        .collect();
    Batch::from_transitions(&ts)
}

fn constant_net(sizes: &[usize], out_bias: &[f64]) -> Mlp {
    let mut m = Mlp::zeros(sizes);
    let last = m.layers.len() - 1;
    for (b, v) in m.layers[last].bias.iter_mut().zip(out_bias) {
        *b = *v;
    }
    m
}

#[test]
fn log_prob_at_origin() {
    for n in 1..=4 {
        let lp = squashed_log_prob(&vec![0.0; n], &vec![0.0; n], &vec![0.0; n]);
        assert!((lp - (-0.918_938_533_204_672_7 * n as f64)).abs() < 1e-5 * n as f64);
    }
}

#[test]
fn squashed_density_integrates_to_one() {
    let mut rng = seeded(5);
    for _ in 0..20 {
        let mu = rng.gen_range(-1.5..1.5);
        let ls: f64 = rng.gen_range(-1.5..0.5);
        let sigma = ls.exp();
        // integrate pi(a) da with a = tanh z, da = (1 - a^2) dz, Simpson in z
        let (lo, hi) = (mu - 12.0 * sigma, mu + 12.0 * sigma);
        let m = 20_000;
        let h = (hi - lo) / m as f64;
        let f = |z: f64| {
            let a: f64 = z.tanh();
            squashed_log_prob(&[mu], &[ls], &[z]).exp() * (1.0 - a * a)
        };
        let mut s = f(lo) + f(hi);
        for i in 1..m {
            s += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let integral = s * h / 3.0;
        assert!((integral - 1.0).abs() < 1e-3, "mu {mu} ls {ls}: {integral}");
    }
}

#[test]
fn actions_stay_inside_the_box() {
    let mut rng = seeded(2);
    let agent = SacAgent::new(5, 2, small_config(), &mut rng);
    for _ in 0..200 {
        let obs: Vec<f64> = (0..5).map(|_| rng.gen_range(-50.0..50.0)).collect();
        let (a, lp) = agent.sample_action(&obs, false, &mut rng);
        assert!(a.iter().all(|x| x.abs() < 1.0));
        assert!(lp.unwrap().is_finite());
        let (d, none) = agent.sample_action(&obs, true, &mut rng);
        assert!(none.is_none());
        let (mu, _) = agent.policy_params(&obs);
        for (x, m) in d.iter().zip(&mu) {
            assert_eq!(*x, squash(*m));
            assert!(x.abs() < 1.0);
        }
    }
}

#[test]
fn td_target_trivial_cases() {
    let mut rng = seeded(3);
    let mut agent = SacAgent::new(4, 2, small_config(), &mut rng);
    let mut batch = random_batch(&mut rng, 6, 4, 2);
    batch.dones.fill(1.0);
    let y = agent.td_target(&batch, &mut rng);
    for (yi, ri) in y.iter().zip(batch.rewards.iter()) {
        assert_eq!(yi, ri);
    }
    batch.dones.fill(0.0);
    agent.config.gamma = 0.0;
    let y = agent.td_target(&batch, &mut rng);
    for (yi, ri) in y.iter().zip(batch.rewards.iter()) {
        assert_eq!(yi, ri);
    }
}

#[test]
fn td_target_by_hand() {
    let cfg = SacConfig {
        hidden: vec![1],
        gamma: 0.9,
        ..SacConfig::default()
    };
    let actor = constant_net(&[1, 1, 2], &[0.3, -2.0]);
    let t1 = constant_net(&[2, 1, 1], &[1.5]);
    let t2 = constant_net(&[2, 1, 1], &[1.2]);
    let agent = SacAgent::from_parts(
        actor,
        [t1.clone(), t2.clone()],
        [t1, t2],
        (0.5f64).ln(),
        cfg,
    );
    let batch = Batch::from_transitions(&[Transition {
        obs: vec![0.0],
        action: vec![0.0],
        reward: 0.25,
        next_obs: vec![0.7],
        done: false,
    }]);
    let mut rng = seeded(10);
    let mut replay = rng.clone();
    let y = agent.td_target(&batch, &mut rng)[0];

    let eps: f64 = replay.sample(StandardNormal);
    let sigma = (-2.0f64).exp();
    let a = (0.3 + sigma * eps).tanh();
    let logp = -0.5 * eps * eps + 2.0 - 0.5 * (2.0 * std::f64::consts::PI).ln() - (1.0 - a * a + 1e-6).ln();
    let expect = 0.25 + 0.9 * (1.2 - 0.5 * logp);
    assert!((y - expect).abs() < 1e-12, "{y} vs {expect}");
}

#[test]
fn actor_gradient_matches_finite_differences() {
    let mut rng = seeded(4);
    let mut agent = SacAgent::new(3, 2, small_config(), &mut rng);
    agent.log_alpha = (0.3f64).ln();
    let alpha = agent.alpha();
    let obs = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-1.0..1.0));
    let (_, grad, _) = agent.actor_objective(obs.view(), alpha, &mut seeded(9));
    let g = grad.flat();
    let theta = agent.actor.flat();
    let loss_at = |agent: &mut SacAgent, th: &[f64]| {
        agent.actor.set_flat(th);
        agent.actor_objective(obs.view(), alpha, &mut seeded(9)).0
    };
    let mut checked = 0;
    for idx in 0..theta.len() {
        let h = 1e-5 * theta[idx].abs().max(1.0);
        let mut plus = theta.clone();
        plus[idx] += h;
        let mut minus = theta.clone();
        minus[idx] -= h;
        let fd = (loss_at(&mut agent, &plus) - loss_at(&mut agent, &minus)) / (2.0 * h);
        let scale = g[idx].abs().max(fd.abs());
        if scale < 1e-8 {
            continue;
        }
        assert!(
            (g[idx] - fd).abs() / scale < 1e-4,
            "param {idx}: analytic {} fd {fd}",
            g[idx]
        );
        checked += 1;
    }
    assert!(checked > theta.len() / 2);
}

#[test]
fn identical_calls_are_deterministic() {
    let mut rng = seeded(6);
    let batch = random_batch(&mut rng, 8, 4, 2);
    let make = || SacAgent::new(4, 2, small_config(), &mut seeded(1));
    let (mut a, mut b) = (make(), make());
    for _ in 0..3 {
        let sa = a.update_on_batch(&batch, &mut seeded(77));
        let sb = b.update_on_batch(&batch, &mut seeded(77));
        assert_eq!(sa, sb);
    }
    assert_eq!(a.actor, b.actor);
    assert_eq!(a.target2, b.target2);
}

#[test]
fn critic_loss_decreases_on_a_constant_target() {
    let mut cfg = small_config();
    cfg.gamma = 0.0;
    cfg.batch_size = 16;
    let mut rng = seeded(8);
    let mut agent = SacAgent::new(4, 2, cfg, &mut rng);
    let mut buffer = ReplayBuffer::new(64, 4, 2);
    let t = Transition {
        obs: vec![0.1, -0.2, 0.3, 0.0],
        action: vec![0.5, -0.5],
        reward: 1.0,
        next_obs: vec![0.0; 4],
        done: false,
    };
    for _ in 0..64 {
        buffer.push(&t);
    }
    let mut prev = f64::INFINITY;
    for _ in 0..100 {
        let s = agent.update(&buffer, &mut rng).unwrap();
        assert!(s.critic1_loss < prev, "{} !< {prev}", s.critic1_loss);
        prev = s.critic1_loss;
    }
}

#[test]
fn temperature_follows_entropy_gap() {
    let mut rng = seeded(12);
    let batch = random_batch(&mut rng, 32, 3, 1);
    let cfg = SacConfig {
        hidden: vec![4],
        ..SacConfig::default()
    };
    for (log_std, should_drop) in [(0.0, true), (-5.0, false)] {
        let actor = constant_net(&[3, 4, 2], &[0.0, log_std]);
        let critic = constant_net(&[4, 4, 1], &[0.0]);
        let mut agent = SacAgent::from_parts(
            actor,
            [critic.clone(), critic.clone()],
            [critic.clone(), critic],
            0.0,
            cfg.clone(),
        );
        let stats = agent.update_on_batch(&batch, &mut rng);
        // target entropy is -1 for one action dimension
        assert_eq!(stats.entropy > -1.0, should_drop);
        assert_eq!(agent.alpha() < 1.0, should_drop, "log_std {log_std}");
    }
}

#[test]
fn polyak_recursion() {
    let mut rng = seeded(13);
    let mut agent = SacAgent::new(3, 1, small_config(), &mut rng);
    let before = agent.target1.flat();
    agent.polyak_update();
    for (a, b) in agent.target1.flat().iter().zip(&before) {
        assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
    }

    for t in agent.target1.tensors_mut() {
        t.fill(0.0);
    }
    for t in agent.critic1.tensors_mut() {
        t.fill(1.0);
    }
    agent.polyak_update();
    assert!(agent.target1.flat().iter().all(|&x| (x - 0.005).abs() < 1e-15));
    for _ in 1..200 {
        agent.polyak_update();
    }
    let expect = 1.0 - 0.995f64.powi(200);
    assert!(agent.target1.flat().iter().all(|&x| (x - expect).abs() < 1e-12));
}

#[test]
fn update_needs_a_full_batch() {
    let mut rng = seeded(14);
    let mut agent = SacAgent::new(3, 1, small_config(), &mut rng);
    let buffer = ReplayBuffer::new(10, 3, 1);
    let err = agent.update(&buffer, &mut rng).unwrap_err();
    assert_eq!(err, InsufficientData { have: 0, need: 4 });
    assert_eq!(agent.updates, 0);
}

#[test]
fn fresh_policy_scores_below_ceiling() {
    let p = PlantParams::default();
    let env = EnvConfig::default();
    let agent = SacAgent::new(22, 3, SacConfig::default(), &mut seeded(15));
    let mut policy = SacPolicy::from_agent(&agent);
    let s = evaluate_policy(&mut policy, &p, &env, Scenario::Phase(CurriculumPhase::FOUNDATION), 2, 1)
        .unwrap();
    assert_eq!(s.returns.len(), 2);
    assert!(s.mean_return() < 5.0);
}

fn tiny_run_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.sac.hidden = vec![16];
    cfg.sac.total_steps = 2_000;
    cfg.sac.warmup_steps = 1_000;
    cfg.sac.batch_size = 32;
    cfg.sac.eval_interval = 1_000;
    cfg.sac.eval_episodes = 1;
    cfg.sac.schedule.mode = TrainingMode::Curriculum;
    cfg
}

#[test]
fn training_is_seeded_and_warms_up() {
    let cfg = tiny_run_config();
    let a = run_training(&cfg, 42, None, &mut |_| {}).unwrap();
    let b = run_training(&cfg, 42, None, &mut |_| {}).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.records, b.records);
    assert_eq!(a.log.len(), 4);
    assert!(a.log[..2].iter().all(|r| r.critic1_loss.is_none()));
    assert!(a.log[2..].iter().all(|r| r.critic1_loss.is_some()));
    assert_eq!(a.agent.updates, 1_000);
    assert_eq!(a.records.len(), 2);
    assert!(a.log[1].eval_return.is_some() && a.log[0].eval_return.is_none());
    let c = run_training(&cfg, 43, None, &mut |_| {}).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn training_writes_artifacts() {
    let cfg = tiny_run_config();
    let dir = tempfile::tempdir().unwrap();
    let out = run_training(&cfg, 7, Some(dir.path()), &mut |_| {}).unwrap();
    let log = std::fs::read_to_string(dir.path().join(TRAIN_LOG_FILE)).unwrap();
    assert!(log.starts_with(LOG_HEADER));
    assert_eq!(log.lines().count(), 1 + out.log.len());
    let best = crate::checkpoint::Checkpoint::load(&dir.path().join(BEST_CHECKPOINT_FILE)).unwrap();
    let (rec, ck) = out.best.as_ref().unwrap();
    assert_eq!(&best, ck);
    assert_eq!(best.step, rec.step);
    assert_eq!(best.config_hash, cfg.hash());
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["checkpoints"].as_array().unwrap().len(), 2);
}
