use std::fmt::Write as _;

use serde::Serialize;

use crate::env::{EnvError, Observation, R2rEnv};

/// Closed-loop controller acting through the environment's normalized action.
pub trait Controller {
    fn name(&self) -> String;

    /// Raw command in `[-1, 1]^N` for the current step.
    fn act(&mut self, env: &R2rEnv, obs: &Observation) -> Vec<f64>;

    /// Called before each episode.
    fn reset(&mut self) {}
}

/// Per-step record of one episode. Row `k` holds the state after step `k`
/// (at `time[k] = (k + 1) dt`) next to the reference that step was aiming at.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeTrace {
    pub dt: f64,
    pub time: Vec<f64>,
    pub tensions: Vec<Vec<f64>>,
    pub tension_refs: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    pub velocity_refs: Vec<Vec<f64>>,
    pub applied_torques: Vec<Vec<f64>>,
    /// Smoothed normalized command, before process noise.
    pub commanded: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub success: Vec<bool>,
}

impl EpisodeTrace {
    pub fn new(dt: f64) -> Self {
        Self {
            dt,
            time: Vec::new(),
            tensions: Vec::new(),
            tension_refs: Vec::new(),
            velocities: Vec::new(),
            velocity_refs: Vec::new(),
            applied_torques: Vec::new(),
            commanded: Vec::new(),
            rewards: Vec::new(),
            success: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn n_sections(&self) -> usize {
        self.tensions.first().map_or(0, Vec::len)
    }

    pub fn episode_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    /// Tension series of one section.
    pub fn section_tension(&self, section: usize) -> Vec<f64> {
        self.tensions.iter().map(|r| r[section]).collect()
    }

    pub fn section_tension_ref(&self, section: usize) -> Vec<f64> {
        self.tension_refs.iter().map(|r| r[section]).collect()
    }

    /// Wide CSV: step, time_s, then per-section T, T_ref, v, v_ref, u_applied,
    /// followed by reward and success.
    pub fn to_csv(&self) -> String {
        let n = self.n_sections();
        let mut out = String::from("step,time_s");
        for name in ["T", "T_ref", "v", "v_ref", "u_applied"] {
            for i in 1..=n {
                let _ = write!(out, ",{name}_{i}");
            }
        }
        out.push_str(",reward,success\n");
        for k in 0..self.len() {
            let _ = write!(out, "{},{}", k + 1, self.time[k]);
            for cols in [
                &self.tensions[k],
                &self.tension_refs[k],
                &self.velocities[k],
                &self.velocity_refs[k],
                &self.applied_torques[k],
            ] {
                for v in cols {
                    let _ = write!(out, ",{v}");
                }
            }
            let _ = writeln!(out, ",{},{}", self.rewards[k], u8::from(self.success[k]));
        }
        out
    }

    /// Long-format rows `(variable, section, time, value, controller)` for plotting.
    pub fn to_long_csv_rows(&self, controller: &str, out: &mut String) {
        for k in 0..self.len() {
            let t = self.time[k];
            for (var, rows) in [
                ("T", &self.tensions),
                ("T_ref", &self.tension_refs),
                ("v", &self.velocities),
                ("v_ref", &self.velocity_refs),
                ("u", &self.applied_torques),
            ] {
                for (i, v) in rows[k].iter().enumerate() {
                    let _ = writeln!(out, "{var},{},{t},{v},{controller}", i + 1);
                }
            }
        }
    }
}

pub const LONG_CSV_HEADER: &str = "variable,section,time,value,controller\n";

/// Drive the environment to the end of the current episode.
pub fn run_episode(
    env: &mut R2rEnv,
    controller: &mut dyn Controller,
    first_obs: Observation,
) -> Result<EpisodeTrace, EnvError> {
    controller.reset();
    let mut trace = EpisodeTrace::new(env.params().dt);
    let dt = env.params().dt;
    let mut obs = first_obs;
    loop {
        let k = env.step_index();
        let t_ref = env.profile().tensions_at(k).to_vec();
        let v_ref = env.profile().velocities_at(k).to_vec();
        let action = controller.act(env, &obs);
        let out = env.step(&action)?;
        trace.time.push((k + 1) as f64 * dt);
        trace.tensions.push(out.info.tensions);
        trace.tension_refs.push(t_ref);
        trace.velocities.push(out.info.velocities);
        trace.velocity_refs.push(v_ref);
        trace.applied_torques.push(out.info.applied_torques);
        trace.commanded.push(out.info.commanded);
        trace.rewards.push(out.reward);
        trace.success.push(out.info.success);
        if out.truncated || out.terminated {
            return Ok(trace);
        }
        obs = out.observation;
    }
}
