//! Soft Actor-Critic with a tanh-squashed Gaussian actor, twin critics,
//! Polyak-averaged targets and automatic entropy temperature.

mod buffer;
mod train;

pub use buffer::{Batch, ReplayBuffer, Transition};
pub use train::{
    describe_row, evaluate_policy, log_csv, run_training, CheckpointRecord, EvalSummary, LogRow,
    SacPolicy, TrainingError, TrainingOutcome, BEST_CHECKPOINT_FILE, LOG_HEADER, MANIFEST_FILE,
    TRAIN_LOG_FILE,
};

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::curriculum::Schedule;
use crate::nnet::{AdamConfig, AdamState, ForwardCache, Mlp, ScalarAdam};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Guard inside `log(1 - tanh^2 + eps)`.
pub const SQUASH_EPS: f64 = 1e-6;
/// `tanh` rounds to exactly 1 beyond |z| ~ 19; squashed actions are kept this far inside.
pub const ACTION_BOUND: f64 = 1.0 - f64::EPSILON;

#[inline]
pub fn squash(z: f64) -> f64 {
    z.tanh().clamp(-ACTION_BOUND, ACTION_BOUND)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Steps of uniformly random actions before any gradient update.
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub optimizer: AdamConfig,
    pub initial_alpha: f64,
    /// Defaults to `-N` when unset.
    pub target_entropy: Option<f64>,
    pub log_std_bounds: [f64; 2],
    pub hidden_gain: f64,
    pub output_gain: f64,
    pub schedule: Schedule,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256, 256],
            gamma: 0.99,
            tau: 0.005,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            warmup_steps: 10_000,
            total_steps: 500_000,
            eval_interval: 5_000,
            eval_episodes: 5,
            optimizer: AdamConfig::default(),
            initial_alpha: 1.0,
            target_entropy: None,
            log_std_bounds: [-20.0, 2.0],
            hidden_gain: std::f64::consts::SQRT_2,
            output_gain: 0.01,
            schedule: Schedule::default(),
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err("hidden layer sizes must be non-empty and positive".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err("batch_size must be positive and not exceed buffer_capacity".into());
        }
        if self.total_steps == 0 || self.eval_interval == 0 || self.eval_episodes == 0 {
            return Err("total_steps, eval_interval and eval_episodes must be positive".into());
        }
        if !(self.initial_alpha > 0.0) {
            return Err(format!("initial_alpha must be > 0, got {}", self.initial_alpha));
        }
        if !(self.log_std_bounds[0] < self.log_std_bounds[1]) {
            return Err("log_std_bounds must be increasing".into());
        }
        if !(self.optimizer.lr > 0.0) {
            return Err("optimizer.lr must be > 0".into());
        }
        let s = &self.schedule;
        if !(0.0 <= s.expansion_start && s.expansion_start <= s.mastery_start && s.mastery_start <= 1.0)
        {
            return Err("schedule boundaries must satisfy 0 <= expansion <= mastery <= 1".into());
        }
        Ok(())
    }
}

/// Log-density of `a = tanh(z)` where `z ~ N(mu, exp(log_std)^2)`, summed over dimensions.
pub fn squashed_log_prob(mu: &[f64], log_std: &[f64], z: &[f64]) -> f64 {
    mu.iter()
        .zip(log_std)
        .zip(z)
        .map(|((&m, &ls), &zz)| {
            let eps = (zz - m) / ls.exp();
            let a = squash(zz);
            -0.5 * eps * eps - ls - 0.5 * LN_2PI - (1.0 - a * a + SQUASH_EPS).ln()
        })
        .sum()
}

/// Reparameterised actor sample for a batch, with what the actor gradient needs.
#[derive(Debug, Clone)]
struct PolicyBatch {
    actions: Array2<f64>,
    log_prob: Array1<f64>,
    log_std: Array2<f64>,
    noise: Array2<f64>,
    /// 1 where the raw log-std lay inside the clamp range.
    ls_mask: Array2<f64>,
    cache: ForwardCache,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UpdateStats {
    pub critic1_loss: f64,
    pub critic2_loss: f64,
    pub actor_loss: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    /// Batch estimate of policy entropy, `-mean(log pi)`.
    pub entropy: f64,
}

impl UpdateStats {
    pub fn is_finite(&self) -> bool {
        [
            self.critic1_loss,
            self.critic2_loss,
            self.actor_loss,
            self.alpha_loss,
            self.alpha,
            self.entropy,
        ]
        .iter()
        .all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("replay buffer holds {have} transitions, need {need} for an update")]
pub struct InsufficientData {
    pub have: usize,
    pub need: usize,
}

#[derive(Debug, Clone)]
pub struct SacAgent {
    pub actor: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub target1: Mlp,
    pub target2: Mlp,
    pub log_alpha: f64,
    pub target_entropy: f64,
    pub config: SacConfig,
    obs_dim: usize,
    act_dim: usize,
    actor_opt: AdamState,
    critic1_opt: AdamState,
    critic2_opt: AdamState,
    alpha_opt: ScalarAdam,
    pub updates: u64,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, config: SacConfig, rng: &mut R) -> Self {
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend(&config.hidden);
        actor_sizes.push(2 * act_dim);
        let mut critic_sizes = vec![obs_dim + act_dim];
        critic_sizes.extend(&config.hidden);
        critic_sizes.push(1);

        let (hg, og) = (config.hidden_gain, config.output_gain);
        let actor = Mlp::new(&actor_sizes, hg, og, rng);
        let critic1 = Mlp::new(&critic_sizes, hg, og, rng);
        let critic2 = Mlp::new(&critic_sizes, hg, og, rng);
        let opt = config.optimizer;
        Self {
            actor_opt: AdamState::new(&actor, opt),
            critic1_opt: AdamState::new(&critic1, opt),
            critic2_opt: AdamState::new(&critic2, opt),
            alpha_opt: ScalarAdam::new(opt),
            target1: critic1.clone(),
            target2: critic2.clone(),
            actor,
            critic1,
            critic2,
            log_alpha: config.initial_alpha.ln(),
            target_entropy: config.target_entropy.unwrap_or(-(act_dim as f64)),
            config,
            obs_dim,
            act_dim,
            updates: 0,
        }
    }

    /// Rebuild an agent around stored networks (fresh optimizer state).
    pub fn from_parts(
        actor: Mlp,
        critics: [Mlp; 2],
        targets: [Mlp; 2],
        log_alpha: f64,
        config: SacConfig,
    ) -> Self {
        let act_dim = actor.output_dim() / 2;
        let obs_dim = actor.input_dim();
        let opt = config.optimizer;
        let [critic1, critic2] = critics;
        let [target1, target2] = targets;
        Self {
            actor_opt: AdamState::new(&actor, opt),
            critic1_opt: AdamState::new(&critic1, opt),
            critic2_opt: AdamState::new(&critic2, opt),
            alpha_opt: ScalarAdam::new(opt),
            target_entropy: config.target_entropy.unwrap_or(-(act_dim as f64)),
            actor,
            critic1,
            critic2,
            target1,
            target2,
            log_alpha,
            config,
            obs_dim,
            act_dim,
            updates: 0,
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn param_count(&self) -> usize {
        self.actor.param_count() + self.critic1.param_count() + self.critic2.param_count()
    }

    fn clamp_log_std(&self, raw: f64) -> (f64, f64) {
        let [lo, hi] = self.config.log_std_bounds;
        if raw < lo {
            (lo, 0.0)
        } else if raw > hi {
            (hi, 0.0)
        } else {
            (raw, 1.0)
        }
    }

    /// Mean and clamped log-std of the pre-squash Gaussian for one observation.
    pub fn policy_params(&self, obs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let out = self.actor.predict(obs);
        let n = self.act_dim;
        let mu = out[..n].to_vec();
        let ls = out[n..].iter().map(|&r| self.clamp_log_std(r).0).collect();
        (mu, ls)
    }

    /// Action in `(-1, 1)^N`. Stochastic draws also return `log pi(a|s)`;
    /// deterministic mode returns `tanh(mu)` and no log-probability.
    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        deterministic: bool,
        rng: &mut R,
    ) -> (Vec<f64>, Option<f64>) {
        assert_eq!(obs.len(), self.obs_dim, "observation width mismatch");
        let (mu, ls) = self.policy_params(obs);
        if deterministic {
            return (mu.iter().map(|&m| squash(m)).collect(), None);
        }
        let z: Vec<f64> = mu
            .iter()
            .zip(&ls)
            .map(|(m, l)| m + l.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let logp = squashed_log_prob(&mu, &ls, &z);
        (z.iter().map(|&v| squash(v)).collect(), Some(logp))
    }

    fn policy_batch<R: Rng + ?Sized>(&self, obs: ArrayView2<f64>, rng: &mut R) -> PolicyBatch {
        let (out, cache) = self.actor.forward(obs);
        let b = out.nrows();
        let n = self.act_dim;
        let mut actions = Array2::zeros((b, n));
        let mut log_std = Array2::zeros((b, n));
        let mut noise = Array2::zeros((b, n));
        let mut ls_mask = Array2::zeros((b, n));
        let mut log_prob = Array1::zeros(b);
        for i in 0..b {
            let mut lp = 0.0;
            for j in 0..n {
                let mu = out[[i, j]];
                let (ls, mask) = self.clamp_log_std(out[[i, n + j]]);
                let e: f64 = rng.sample(StandardNormal);
                let a = squash(mu + ls.exp() * e);
                lp += -0.5 * e * e - ls - 0.5 * LN_2PI - (1.0 - a * a + SQUASH_EPS).ln();
                actions[[i, j]] = a;
                log_std[[i, j]] = ls;
                noise[[i, j]] = e;
                ls_mask[[i, j]] = mask;
            }
            log_prob[i] = lp;
        }
        PolicyBatch {
            actions,
            log_prob,
            log_std,
            noise,
            ls_mask,
            cache,
        }
    }

    fn critic_input(obs: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
        ndarray::concatenate(Axis(1), &[obs.view(), actions.view()]).expect("row counts match")
    }

    /// `y = r + gamma (1 - done) [min(Q1', Q2')(s', a') - alpha log pi(a'|s')]`
    /// with `a'` drawn from the current actor.
    pub fn td_target<R: Rng + ?Sized>(&self, batch: &Batch, rng: &mut R) -> Array1<f64> {
        let next = self.policy_batch(batch.next_obs.view(), rng);
        let sa = Self::critic_input(batch.next_obs.view(), next.actions.view());
        let q1 = self.target1.predict_batch(sa.view());
        let q2 = self.target2.predict_batch(sa.view());
        let alpha = self.alpha();
        let gamma = self.config.gamma;
        Array1::from_shape_fn(batch.len(), |i| {
            let soft = q1[[i, 0]].min(q2[[i, 0]]) - alpha * next.log_prob[i];
            batch.rewards[i] + gamma * (1.0 - batch.dones[i]) * soft
        })
    }

    /// One gradient step on both critics, the actor and the temperature,
    /// followed by a Polyak update of the targets.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        rng: &mut R,
    ) -> Result<UpdateStats, InsufficientData> {
        let need = self.config.batch_size;
        if buffer.len() < need {
            return Err(InsufficientData {
                have: buffer.len(),
                need,
            });
        }
        let batch = buffer.sample(need, rng);
        Ok(self.update_on_batch(&batch, rng))
    }

    pub fn update_on_batch<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> UpdateStats {
        let b = batch.len() as f64;
        let alpha = self.alpha();
        let y = self.td_target(batch, rng);

        // critics: 0.5 * mean (Q - y)^2 each
        let sa = Self::critic_input(batch.obs.view(), batch.actions.view());
        let mut critic_losses = [0.0; 2];
        for (k, loss) in critic_losses.iter_mut().enumerate() {
            let (net, opt) = match k {
                0 => (&mut self.critic1, &mut self.critic1_opt),
                _ => (&mut self.critic2, &mut self.critic2_opt),
            };
            let (q, cache) = net.forward(sa.view());
            let mut grad = Array2::zeros((q.nrows(), 1));
            let mut acc = 0.0;
            for i in 0..q.nrows() {
                let d = q[[i, 0]] - y[i];
                acc += d * d;
                grad[[i, 0]] = d / b;
            }
            *loss = 0.5 * acc / b;
            let (g, _) = net.backward(&cache, grad, true);
            opt.step(net, &g.expect("param grads requested"));
        }

        let (actor_loss, actor_grads, pol) = self.actor_objective(batch.obs.view(), alpha, rng);
        self.actor_opt.step(&mut self.actor, &actor_grads);

        // temperature: -mean(log_alpha * (log pi + target_entropy)), log pi held fixed
        let mean_logp = pol.log_prob.mean().unwrap_or(0.0);
        let alpha_loss = -self.log_alpha * (mean_logp + self.target_entropy);
        let alpha_grad = -(mean_logp + self.target_entropy);
        self.alpha_opt.step(&mut self.log_alpha, alpha_grad);

        self.polyak_update();
        self.updates += 1;
        UpdateStats {
            critic1_loss: critic_losses[0],
            critic2_loss: critic_losses[1],
            actor_loss,
            alpha_loss,
            alpha: self.alpha(),
            entropy: -mean_logp,
        }
    }

    /// Actor loss `mean(alpha log pi(a|s) - min_k Q_k(s, a))` over a fresh
    /// reparameterised sample, with its parameter gradient.
    fn actor_objective<R: Rng + ?Sized>(
        &self,
        obs: ArrayView2<f64>,
        alpha: f64,
        rng: &mut R,
    ) -> (f64, Mlp, PolicyBatch) {
        let b = obs.nrows() as f64;
        let pol = self.policy_batch(obs, rng);
        let sa_pi = Self::critic_input(obs, pol.actions.view());
        let (q1, c1) = self.critic1.forward(sa_pi.view());
        let (q2, c2) = self.critic2.forward(sa_pi.view());
        let rows = q1.nrows();
        let mut g1 = Array2::zeros((rows, 1));
        let mut g2 = Array2::zeros((rows, 1));
        let mut actor_loss = 0.0;
        for i in 0..rows {
            let (a, c) = (q1[[i, 0]], q2[[i, 0]]);
            if a <= c {
                g1[[i, 0]] = -1.0 / b;
            } else {
                g2[[i, 0]] = -1.0 / b;
            }
            actor_loss += alpha * pol.log_prob[i] - a.min(c);
        }
        actor_loss /= b;
        let (_, dx1) = self.critic1.backward(&c1, g1, false);
        let (_, dx2) = self.critic2.backward(&c2, g2, false);
        let od = self.obs_dim;
        let dqa = &dx1.slice(s![.., od..]) + &dx2.slice(s![.., od..]);

        let n = self.act_dim;
        let mut grad_out = Array2::zeros((rows, 2 * n));
        for i in 0..rows {
            for j in 0..n {
                let a = pol.actions[[i, j]];
                let one_m = 1.0 - a * a;
                let dlogp_dz = 2.0 * a * one_m / (one_m + SQUASH_EPS);
                let dz = alpha / b * dlogp_dz + dqa[[i, j]] * one_m;
                let sigma_eps = pol.log_std[[i, j]].exp() * pol.noise[[i, j]];
                grad_out[[i, j]] = dz;
                grad_out[[i, n + j]] = (-alpha / b + dz * sigma_eps) * pol.ls_mask[[i, j]];
            }
        }
        let (ga, _) = self.actor.backward(&pol.cache, grad_out, true);
        (actor_loss, ga.expect("param grads requested"), pol)
    }

    pub fn polyak_update(&mut self) {
        let tau = self.config.tau;
        self.target1.polyak_from(&self.critic1, tau);
        self.target2.polyak_from(&self.critic2, tau);
    }

    pub fn is_finite(&self) -> bool {
        self.log_alpha.is_finite()
            && [&self.actor, &self.critic1, &self.critic2, &self.target1, &self.target2]
                .iter()
                .all(|m| m.is_finite())
    }
}

#[cfg(test)]
mod tests;
