use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use super::{ReplayBuffer, SacAgent, Transition, UpdateStats};
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::RunConfig;
use crate::curriculum::{select_phase, CurriculumPhase};
use crate::env::{EnvConfig, EnvError, Observation, R2rEnv};
use crate::evalbench::{run_scenario, Controller, EpisodeTrace, Scenario};
use crate::nnet::Mlp;
use crate::plant::PlantParams;
use crate::rng::{derive_seed, seeded};

pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BEST_CHECKPOINT_FILE: &str = "best.ckpt";

/// Deterministic policy `tanh(mu(s))` extracted from an actor network.
#[derive(Debug, Clone)]
pub struct SacPolicy {
    pub actor: Mlp,
    act_dim: usize,
}

impl SacPolicy {
    pub fn from_actor(actor: Mlp) -> Self {
        let act_dim = actor.output_dim() / 2;
        Self { actor, act_dim }
    }

    pub fn from_agent(agent: &SacAgent) -> Self {
        Self::from_actor(agent.actor.clone())
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Self {
        Self::from_actor(ck.actor.clone())
    }

    pub fn action(&self, obs: &[f64]) -> Vec<f64> {
        self.actor.predict(obs)[..self.act_dim]
            .iter()
            .map(|&m| super::squash(m))
            .collect()
    }
}

impl Controller for SacPolicy {
    fn name(&self) -> String {
        "sac".into()
    }

    fn act(&mut self, _env: &R2rEnv, obs: &Observation) -> Vec<f64> {
        self.action(obs)
    }
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub returns: Vec<f64>,
    pub traces: Vec<EpisodeTrace>,
}

impl EvalSummary {
    pub fn mean_return(&self) -> f64 {
        self.returns.iter().sum::<f64>() / self.returns.len().max(1) as f64
    }
}

/// Deterministic-action episodes; process noise stays on.
pub fn evaluate_policy(
    policy: &mut SacPolicy,
    params: &PlantParams,
    env_cfg: &EnvConfig,
    scenario: Scenario,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalSummary, EnvError> {
    let traces = run_scenario(scenario, policy, params, env_cfg, n_episodes, seed)?;
    Ok(EvalSummary {
        returns: traces.iter().map(EpisodeTrace::episode_return).collect(),
        traces,
    })
}

/// One row per finished training episode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub step: u64,
    pub phase: u8,
    pub episode_return: f64,
    /// Present on rows where an evaluation ran.
    pub eval_return: Option<f64>,
    pub alpha: f64,
    /// Episode means; absent while no update has run.
    pub critic1_loss: Option<f64>,
    pub critic2_loss: Option<f64>,
    pub actor_loss: Option<f64>,
    pub alpha_loss: Option<f64>,
    pub entropy: Option<f64>,
}

pub const LOG_HEADER: &str =
    "step,phase,episode_return,eval_return,alpha,critic1_loss,critic2_loss,actor_loss,alpha_loss,entropy\n";

impl LogRow {
    pub fn csv_line(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            self.step,
            self.phase,
            self.episode_return,
            opt(self.eval_return),
            self.alpha,
            opt(self.critic1_loss),
            opt(self.critic2_loss),
            opt(self.actor_loss),
            opt(self.alpha_loss),
            opt(self.entropy)
        )
    }
}

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut out = String::from(LOG_HEADER);
    for r in rows {
        out.push_str(&r.csv_line());
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointRecord {
    pub step: u64,
    pub phase: u8,
    pub eval_return: f64,
    /// Set when this evaluation produced a new best and was written out.
    pub path: Option<PathBuf>,
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub agent: SacAgent,
    pub best: Option<(CheckpointRecord, Checkpoint)>,
    pub records: Vec<CheckpointRecord>,
    pub log: Vec<LogRow>,
    pub steps: u64,
}

impl TrainingOutcome {
    /// Best checkpoint if any evaluation ran, otherwise the final agent.
    pub fn best_policy(&self) -> SacPolicy {
        match &self.best {
            Some((_, ck)) => SacPolicy::from_checkpoint(ck),
            None => SacPolicy::from_agent(&self.agent),
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("writing {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("training diverged at step {step}: {what} (last good checkpoint: {})",
        last_good.as_ref().map(|c| format!("step {}", c.step)).unwrap_or_else(|| "none".into()))]
    Diverged {
        step: u64,
        what: String,
        last_good: Option<Box<Checkpoint>>,
        log: Vec<LogRow>,
    },
}

#[derive(Default)]
struct EpisodeAcc {
    ret: f64,
    sums: [f64; 5],
    updates: usize,
}

impl EpisodeAcc {
    fn add(&mut self, s: &UpdateStats) {
        for (acc, v) in self.sums.iter_mut().zip([
            s.critic1_loss,
            s.critic2_loss,
            s.actor_loss,
            s.alpha_loss,
            s.entropy,
        ]) {
            *acc += v;
        }
        self.updates += 1;
    }

    fn mean(&self, i: usize) -> Option<f64> {
        (self.updates > 0).then(|| self.sums[i] / self.updates as f64)
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), TrainingError> {
    std::fs::write(path, text).map_err(|e| TrainingError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    seed: u64,
    config_hash: String,
    total_steps: u64,
    best_step: Option<u64>,
    best_eval_return: Option<f64>,
    checkpoints: &'a [CheckpointRecord],
    created_unix_s: u64,
}

fn write_outputs(
    dir: &Path,
    cfg: &RunConfig,
    seed: u64,
    steps: u64,
    records: &[CheckpointRecord],
    log: &[LogRow],
) -> Result<(), TrainingError> {
    write_file(&dir.join(TRAIN_LOG_FILE), &log_csv(log))?;
    let best = records.iter().filter(|r| r.improved).last();
    let manifest = Manifest {
        seed,
        config_hash: cfg.hash_hex(),
        total_steps: steps,
        best_step: best.map(|r| r.step),
        best_eval_return: best.map(|r| r.eval_return),
        checkpoints: records,
        created_unix_s: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let mut text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    write_file(&dir.join(MANIFEST_FILE), &text)
}

/// Train one seed. With `out_dir` set, every improving checkpoint, the training
/// log and a manifest are written there. `progress` sees each log row.
pub fn run_training(
    cfg: &RunConfig,
    seed: u64,
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(&LogRow),
) -> Result<TrainingOutcome, TrainingError> {
    cfg.validate().map_err(|e| TrainingError::Config(e.to_string()))?;
    let sac = &cfg.sac;
    let total = sac.total_steps as u64;
    let hash = cfg.hash();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| TrainingError::Io {
            path: dir.to_path_buf(),
            message: e.to_string(),
        })?;
    }

    let mut env = R2rEnv::new(cfg.plant.clone(), cfg.env.clone(), derive_seed(seed, &[0]))?;
    let mut rng = seeded(derive_seed(seed, &[1]));
    let obs_dim = env.observation_len();
    let act_dim = env.n_sections();
    let mut agent = SacAgent::new(obs_dim, act_dim, sac.clone(), &mut seeded(derive_seed(seed, &[2])));
    let mut buffer = ReplayBuffer::new(sac.buffer_capacity.min(sac.total_steps), obs_dim, act_dim);

    let phase_at = |step: u64| -> CurriculumPhase { select_phase(step as f64 / total as f64, &sac.schedule) };
    let mut phase = phase_at(0);
    let mut obs = env.reset(&phase)?;
    let mut acc = EpisodeAcc::default();
    let mut log: Vec<LogRow> = Vec::new();
    let mut records: Vec<CheckpointRecord> = Vec::new();
    let mut best: Option<(CheckpointRecord, Checkpoint)> = None;
    let mut pending_eval: Option<f64> = None;

    for step in 0..total {
        let action: Vec<f64> = if step < sac.warmup_steps as u64 {
            (0..act_dim).map(|_| rng.gen_range(-1.0..=1.0)).collect()
        } else {
            agent.sample_action(&obs, false, &mut rng).0
        };
        let out = env.step(&action)?;
        acc.ret += out.reward;
        buffer.push(&Transition {
            obs: obs.0,
            action,
            reward: out.reward,
            next_obs: out.observation.0.clone(),
            done: out.terminated,
        });

        if step >= sac.warmup_steps as u64 && buffer.len() >= sac.batch_size {
            let stats = agent
                .update(&buffer, &mut rng)
                .expect("buffer holds a full batch");
            if !stats.is_finite() || !agent.is_finite() {
                let log_snapshot = log.clone();
                if let Some(dir) = out_dir {
                    write_outputs(dir, cfg, seed, step + 1, &records, &log)?;
                }
                return Err(TrainingError::Diverged {
                    step: step + 1,
                    what: format!("non-finite update {stats:?}"),
                    last_good: best.map(|(_, ck)| Box::new(ck)),
                    log: log_snapshot,
                });
            }
            acc.add(&stats);
        }

        let done_steps = step + 1;
        if done_steps % sac.eval_interval as u64 == 0 {
            let mut policy = SacPolicy::from_agent(&agent);
            let summary = evaluate_policy(
                &mut policy,
                &cfg.plant,
                &cfg.env,
                Scenario::Phase(phase),
                sac.eval_episodes,
                derive_seed(seed, &[3, done_steps]),
            )?;
            let mean = summary.mean_return();
            // ties go to the later step
            let improved = best.as_ref().map_or(true, |(r, _)| mean >= r.eval_return);
            let mut record = CheckpointRecord {
                step: done_steps,
                phase: phase.index,
                eval_return: mean,
                path: None,
                improved,
            };
            if improved {
                let ck = Checkpoint::from_agent(&agent, done_steps, seed, hash);
                if let Some(dir) = out_dir {
                    let path = dir.join(format!("step_{done_steps:07}.ckpt"));
                    ck.save(&path, cfg, Some(mean))?;
                    ck.save(&dir.join(BEST_CHECKPOINT_FILE), cfg, Some(mean))?;
                    record.path = Some(path);
                }
                best = Some((record.clone(), ck));
            }
            records.push(record);
            pending_eval = Some(mean);
        }

        if out.truncated || out.terminated {
            let row = LogRow {
                step: done_steps,
                phase: phase.index,
                episode_return: acc.ret,
                eval_return: pending_eval.take(),
                alpha: agent.alpha(),
                critic1_loss: acc.mean(0),
                critic2_loss: acc.mean(1),
                actor_loss: acc.mean(2),
                alpha_loss: acc.mean(3),
                entropy: acc.mean(4),
            };
            progress(&row);
            log.push(row);
            acc = EpisodeAcc::default();
            phase = phase_at(done_steps);
            obs = env.reset(&phase)?;
        } else {
            obs = out.observation;
        }
    }

    if let Some(dir) = out_dir {
        write_outputs(dir, cfg, seed, total, &records, &log)?;
    }
    Ok(TrainingOutcome {
        agent,
        best,
        records,
        log,
        steps: total,
    })
}

/// Human-readable one-line summary of a log row.
pub fn describe_row(row: &LogRow) -> String {
    let mut s = format!(
        "step {:>7} phase {} return {:>9.4} alpha {:.4}",
        row.step, row.phase, row.episode_return, row.alpha
    );
    if let Some(e) = row.eval_return {
        let _ = write!(s, " eval {e:.4}");
    }
    if let (Some(c), Some(a)) = (row.critic1_loss, row.actor_loss) {
        let _ = write!(s, " q_loss {c:.4e} pi_loss {a:.4}");
    }
    s
}
