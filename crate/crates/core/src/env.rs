//! Episodic tracking task built on the plant: observation assembly, action
//! filtering, reward shaping and reference generation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curriculum::CurriculumPhase;
use crate::plant::{self, PlantError, PlantParams, PlantState};
use crate::rng::seeded;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error("episode already finished after {0} steps; call reset first")]
    EpisodeFinished(usize),
    #[error("action has {got} entries, expected {expected}")]
    ActionDimension { expected: usize, got: usize },
    #[error("non-finite action component {0}")]
    NonFiniteAction(usize),
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub tension: f64,
    pub velocity: f64,
    pub control: f64,
    pub smoothness: f64,
    pub violation: f64,
    pub success: f64,
    /// Overall scale applied to the bracketed sum.
    pub scale: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            tension: 100.0,
            velocity: 1000.0,
            control: 0.1,
            smoothness: 0.5,
            violation: 100.0,
            success: 1.0,
            scale: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub tension_nominal: f64,
    pub tension_range: f64,
    pub velocity_nominal: f64,
    pub velocity_range: f64,
    /// EMA weight on the newest command, in (0, 1].
    pub beta_smooth: f64,
    /// Std of the Gaussian noise added to the normalized torque.
    pub noise_sigma: f64,
    pub episode_len: usize,
    pub weights: RewardWeights,
    /// Safe tension band `[lo, hi]`, N.
    pub tension_bounds: [f64; 2],
    pub success_tol_tension: f64,
    pub success_tol_velocity: f64,
    /// Fractions of the episode between which a sampled reference step may occur.
    pub step_window: [f64; 2],
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            tension_nominal: 30.0,
            tension_range: 40.0,
            velocity_nominal: 0.01,
            velocity_range: 0.02,
            beta_smooth: 0.7,
            noise_sigma: 0.05,
            episode_len: 500,
            weights: RewardWeights::default(),
            tension_bounds: [10.0, 50.0],
            success_tol_tension: 0.5,
            success_tol_velocity: 0.001,
            step_window: [0.2, 0.8],
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |msg: String| Err(EnvError::InvalidConfig(msg));
        if !(self.tension_range > 0.0) {
            return bad(format!("tension_range must be > 0, got {}", self.tension_range));
        }
        if !(self.velocity_range > 0.0) {
            return bad(format!("velocity_range must be > 0, got {}", self.velocity_range));
        }
        if !(self.beta_smooth > 0.0 && self.beta_smooth <= 1.0) {
            return bad(format!("beta_smooth must lie in (0, 1], got {}", self.beta_smooth));
        }
        if !(self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if self.episode_len == 0 {
            return bad("episode_len must be positive".into());
        }
        if !(self.tension_bounds[0] < self.tension_bounds[1]) {
            return bad(format!("tension_bounds {:?} not increasing", self.tension_bounds));
        }
        let [a, b] = self.step_window;
        if !(0.0 <= a && a <= b && b <= 1.0) {
            return bad(format!("step_window {:?} must satisfy 0 <= lo <= hi <= 1", self.step_window));
        }
        Ok(())
    }

    pub fn observation_len(n_sections: usize) -> usize {
        7 * n_sections + 1
    }
}

/// `(x - nominal) / range`.
pub fn normalize(x: f64, nominal: f64, range: f64) -> f64 {
    (x - nominal) / range
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    /// 0-based section index.
    pub section: usize,
    /// First step index at which the new tension applies.
    pub step: usize,
    pub from: f64,
    pub to: f64,
}

/// Per-step tension and velocity targets for one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceProfile {
    /// Inlet velocity for this episode, m/s.
    pub unwind_velocity: f64,
    /// `tension_ref[k][i]`: target for section `i` at step `k`.
    pub tension_ref: Vec<Vec<f64>>,
    pub velocity_ref: Vec<Vec<f64>>,
    pub step_events: Vec<StepEvent>,
}

impl ReferenceProfile {
    /// Piecewise-constant profile from base tensions plus step events, with
    /// continuity velocities computed for every distinct tension row.
    pub fn build(
        params: &PlantParams,
        unwind_velocity: f64,
        base: &[f64],
        step_events: Vec<StepEvent>,
        len: usize,
    ) -> Result<Self, PlantError> {
        let episode_params = PlantParams {
            unwind_velocity,
            ..params.clone()
        };
        let mut tension_ref = Vec::with_capacity(len);
        let mut velocity_ref = Vec::with_capacity(len);
        let mut row = base.to_vec();
        let mut vel = plant::continuity_velocities(&episode_params, &row)?;
        for k in 0..len {
            let mut changed = false;
            for ev in step_events.iter().filter(|e| e.step == k) {
                row[ev.section] = ev.to;
                changed = true;
            }
            if changed {
                vel = plant::continuity_velocities(&episode_params, &row)?;
            }
            tension_ref.push(row.clone());
            velocity_ref.push(vel.clone());
        }
        Ok(Self {
            unwind_velocity,
            tension_ref,
            velocity_ref,
            step_events,
        })
    }

    pub fn constant(
        params: &PlantParams,
        unwind_velocity: f64,
        tensions: &[f64],
        len: usize,
    ) -> Result<Self, PlantError> {
        Self::build(params, unwind_velocity, tensions, Vec::new(), len)
    }

    pub fn len(&self) -> usize {
        self.tension_ref.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tension_ref.is_empty()
    }

    fn row(&self, k: usize) -> usize {
        k.min(self.len().saturating_sub(1))
    }

    /// Tension targets at step `k`; indices past the end clamp to the last row.
    pub fn tensions_at(&self, k: usize) -> &[f64] {
        &self.tension_ref[self.row(k)]
    }

    pub fn velocities_at(&self, k: usize) -> &[f64] {
        &self.velocity_ref[self.row(k)]
    }

    pub fn state_at(&self, k: usize) -> PlantState {
        PlantState::new(self.tensions_at(k).to_vec(), self.velocities_at(k).to_vec())
    }
}

/// Draw an episode reference from a curriculum phase.
pub fn sample_reference<R: Rng + ?Sized>(
    params: &PlantParams,
    cfg: &EnvConfig,
    phase: &CurriculumPhase,
    rng: &mut R,
) -> Result<ReferenceProfile, PlantError> {
    let n = params.n_sections;
    let base: Vec<f64> = (0..n)
        .map(|_| rng.gen_range(phase.tension_lo..=phase.tension_hi))
        .collect();
    let unwind = rng.gen_range(phase.velocity_lo..=phase.velocity_hi);
    let mut events = Vec::new();
    if rng.gen_bool(phase.step_change_prob) {
        let section = rng.gen_range(0..n);
        let len = cfg.episode_len as f64;
        let first = (cfg.step_window[0] * len).ceil() as usize;
        let last = ((cfg.step_window[1] * len).floor() as usize)
            .min(cfg.episode_len.saturating_sub(1))
            .max(first);
        let step = rng.gen_range(first..=last);
        let to = rng.gen_range(phase.tension_lo..=phase.tension_hi);
        events.push(StepEvent {
            section,
            step,
            from: base[section],
            to,
        });
    }
    ReferenceProfile::build(params, unwind, &base, events, cfg.episode_len)
}

/// EMA-smooth a raw command, add process noise and scale to torque.
///
/// Returns `(applied torques, smoothed command)`. The smoothed command is the
/// pre-noise value carried into the next step.
pub fn apply_action<R: Rng + ?Sized>(
    cfg: &EnvConfig,
    torque_limit: f64,
    raw_action: &[f64],
    prev_smoothed: &[f64],
    rng: &mut R,
) -> (Vec<f64>, Vec<f64>) {
    let beta = cfg.beta_smooth;
    let smoothed: Vec<f64> = raw_action
        .iter()
        .zip(prev_smoothed)
        .map(|(u, p)| beta * u + (1.0 - beta) * p)
        .collect();
    let torques = if cfg.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_sigma).expect("sigma validated");
        smoothed
            .iter()
            .map(|&s| (s + noise.sample(rng)).clamp(-1.0, 1.0) * torque_limit)
            .collect()
    } else {
        smoothed
            .iter()
            .map(|&s| s.clamp(-1.0, 1.0) * torque_limit)
            .collect()
    };
    (torques, smoothed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reward {
    pub value: f64,
    pub success: bool,
    /// Total tension excursion outside the safe band, N.
    pub violation: f64,
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Scaled multi-term tracking reward. `u` and `u_prev` are normalized commands.
pub fn compute_reward(
    cfg: &EnvConfig,
    tensions: &[f64],
    tension_ref: &[f64],
    velocities: &[f64],
    velocity_ref: &[f64],
    u: &[f64],
    u_prev: &[f64],
) -> Reward {
    let w = &cfg.weights;
    let [lo, hi] = cfg.tension_bounds;
    let violation: f64 = tensions
        .iter()
        .map(|&t| (lo - t).max(0.0) + (t - hi).max(0.0))
        .sum();
    let success = max_abs_diff(tensions, tension_ref) < cfg.success_tol_tension
        && max_abs_diff(velocities, velocity_ref) < cfg.success_tol_velocity;
    let effort: f64 = u.iter().map(|x| x * x).sum();
    let jerk: f64 = u.iter().zip(u_prev).map(|(a, b)| (a - b).powi(2)).sum();
    let inner = -w.tension * mse(tensions, tension_ref) - w.velocity * mse(velocities, velocity_ref)
        - w.control * effort
        - w.smoothness * jerk
        - w.violation * violation
        + if success { w.success } else { 0.0 };
    Reward {
        value: w.scale * inner,
        success,
        violation,
    }
}

/// Flat policy input of length `7N + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation(pub Vec<f64>);

impl std::ops::Deref for Observation {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Assemble `[T, v, T_ref, v_ref, e_T, e_v, u_prev, progress]`, all normalized.
pub fn build_observation(
    cfg: &EnvConfig,
    state: &PlantState,
    tension_ref: &[f64],
    velocity_ref: &[f64],
    u_prev: &[f64],
    progress: f64,
) -> Observation {
    let n = state.n_sections();
    let (tn, tr) = (cfg.tension_nominal, cfg.tension_range);
    let (vn, vr) = (cfg.velocity_nominal, cfg.velocity_range);
    let mut obs = Vec::with_capacity(7 * n + 1);
    obs.extend(state.tensions.iter().map(|&t| normalize(t, tn, tr)));
    obs.extend(state.velocities.iter().map(|&v| normalize(v, vn, vr)));
    obs.extend(tension_ref.iter().map(|&t| normalize(t, tn, tr)));
    obs.extend(velocity_ref.iter().map(|&v| normalize(v, vn, vr)));
    obs.extend(state.tensions.iter().zip(tension_ref).map(|(t, r)| (t - r) / tr));
    obs.extend(state.velocities.iter().zip(velocity_ref).map(|(v, r)| (v - r) / vr));
    obs.extend(u_prev.iter().map(|u| u.clamp(-1.0, 1.0)));
    obs.push(progress.clamp(0.0, 1.0));
    Observation(obs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepInfo {
    pub tensions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub applied_torques: Vec<f64>,
    /// Smoothed normalized command before noise.
    pub commanded: Vec<f64>,
    pub success: bool,
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    /// Always false: the task has no failure terminations.
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

/// Single-threaded environment instance with its own noise/reference RNG.
#[derive(Debug, Clone)]
pub struct R2rEnv {
    base_params: PlantParams,
    params: PlantParams,
    cfg: EnvConfig,
    state: PlantState,
    profile: ReferenceProfile,
    smoothed: Vec<f64>,
    step: usize,
    finished: bool,
    rng: ChaCha8Rng,
}

impl R2rEnv {
    pub fn new(params: PlantParams, cfg: EnvConfig, seed: u64) -> Result<Self, EnvError> {
        params.validate()?;
        cfg.validate()?;
        let n = params.n_sections;
        let nominal = vec![cfg.tension_nominal; n];
        let profile =
            ReferenceProfile::constant(&params, params.unwind_velocity, &nominal, cfg.episode_len)?;
        let mut env = Self {
            base_params: params.clone(),
            params,
            cfg,
            state: PlantState::zeros(n),
            profile: profile.clone(),
            smoothed: vec![0.0; n],
            step: 0,
            finished: false,
            rng: seeded(seed),
        };
        env.reset_with_profile(profile)?;
        Ok(env)
    }

    /// Start a new episode with a reference drawn from `phase`.
    pub fn reset(&mut self, phase: &CurriculumPhase) -> Result<Observation, EnvError> {
        let profile = sample_reference(&self.base_params, &self.cfg, phase, &mut self.rng)?;
        self.reset_with_profile(profile)
    }

    /// Start a new episode on a given reference. The plant starts exactly on the
    /// first reference row with the smoothed command at the holding torque.
    pub fn reset_with_profile(
        &mut self,
        profile: ReferenceProfile,
    ) -> Result<Observation, EnvError> {
        self.params = PlantParams {
            unwind_velocity: profile.unwind_velocity,
            ..self.base_params.clone()
        };
        let state = profile.state_at(0);
        let u_eq = plant::equilibrium_torques(&self.params, &state.tensions, &state.velocities)?;
        self.smoothed = u_eq
            .iter()
            .map(|u| (u / self.params.torque_limit).clamp(-1.0, 1.0))
            .collect();
        self.state = state;
        self.profile = profile;
        self.step = 0;
        self.finished = false;
        Ok(self.observation())
    }

    pub fn observation(&self) -> Observation {
        build_observation(
            &self.cfg,
            &self.state,
            self.profile.tensions_at(self.step),
            self.profile.velocities_at(self.step),
            &self.smoothed,
            self.step as f64 / self.cfg.episode_len as f64,
        )
    }

    /// Advance one control interval. The reward compares the new state with the
    /// reference that was in force when the action was issued.
    pub fn step(&mut self, raw_action: &[f64]) -> Result<StepOutcome, EnvError> {
        if self.finished {
            return Err(EnvError::EpisodeFinished(self.step));
        }
        let n = self.params.n_sections;
        if raw_action.len() != n {
            return Err(EnvError::ActionDimension {
                expected: n,
                got: raw_action.len(),
            });
        }
        if let Some(i) = raw_action.iter().position(|a| !a.is_finite()) {
            return Err(EnvError::NonFiniteAction(i));
        }
        let raw: Vec<f64> = raw_action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
        let (torques, smoothed) = apply_action(
            &self.cfg,
            self.params.torque_limit,
            &raw,
            &self.smoothed,
            &mut self.rng,
        );
        let next = plant::euler_step(&self.params, &self.state, &torques)?;
        let k = self.step;
        let reward = compute_reward(
            &self.cfg,
            &next.tensions,
            self.profile.tensions_at(k),
            &next.velocities,
            self.profile.velocities_at(k),
            &smoothed,
            &self.smoothed,
        );
        self.state = next;
        self.smoothed = smoothed;
        self.step += 1;
        let truncated = self.step >= self.cfg.episode_len;
        self.finished = truncated;
        Ok(StepOutcome {
            observation: self.observation(),
            reward: reward.value,
            terminated: false,
            truncated,
            info: StepInfo {
                tensions: self.state.tensions.clone(),
                velocities: self.state.velocities.clone(),
                applied_torques: torques,
                commanded: self.smoothed.clone(),
                success: reward.success,
                violation: reward.violation,
            },
        })
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    pub fn profile(&self) -> &ReferenceProfile {
        &self.profile
    }

    /// Number of steps taken in the current episode.
    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn smoothed_action(&self) -> &[f64] {
        &self.smoothed
    }

    /// Plant parameters of the current episode (inlet velocity included).
    pub fn params(&self) -> &PlantParams {
        &self.params
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn n_sections(&self) -> usize {
        self.params.n_sections
    }

    pub fn observation_len(&self) -> usize {
        EnvConfig::observation_len(self.params.n_sections)
    }

    pub fn rng_mut(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
