use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::cases::{case_report, run_scenario, Scenario, TestCase};
use super::metrics::MetricsReport;
use super::trace::EpisodeTrace;
use crate::config::RunConfig;
use crate::curriculum::TrainingMode;
use crate::sac::{run_training, LogRow, TrainingError};

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub mode: TrainingMode,
    pub seeds: Vec<u64>,
    /// Best-checkpoint step per seed.
    pub best_steps: Vec<Option<u64>>,
    /// Pooled over every seed's evaluation episodes.
    pub nominal: MetricsReport,
    pub step: MetricsReport,
}

impl AblationRow {
    pub fn step_mae(&self) -> f64 {
        self.step.step.map_or(f64::NAN, |s| s.tension_mae)
    }

    pub fn rise_time(&self) -> Option<f64> {
        self.step.step.and_then(|s| s.rise_time)
    }

    pub fn settling_time(&self) -> Option<f64> {
        self.step.step.and_then(|s| s.settling_time)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, mode: TrainingMode) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.mode == mode)
    }

    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map_or_else(|| "---".to_string(), |v| v.to_string());
        let mut out = String::from(
            "training_strategy,nominal_mae_n,nominal_rmse_n,step_mae_n,rise_time_s,settling_time_s\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.mode.name(),
                r.nominal.tension_mae,
                r.nominal.tension_rmse,
                r.step_mae(),
                opt(r.rise_time()),
                opt(r.settling_time())
            );
        }
        out
    }
}

/// Train every mode with the same hyperparameters on each seed, then evaluate
/// the best checkpoint on both benchmark cases.
pub fn run_ablation(
    cfg: &RunConfig,
    seeds: &[u64],
    out_dir: Option<&Path>,
    progress: &mut dyn FnMut(TrainingMode, u64, &LogRow),
) -> Result<AblationTable, TrainingError> {
    let mut rows = Vec::new();
    for mode in TrainingMode::ALL {
        let mut run_cfg = cfg.clone();
        run_cfg.sac.schedule.mode = mode;
        let mut nominal: Vec<EpisodeTrace> = Vec::new();
        let mut stepped: Vec<EpisodeTrace> = Vec::new();
        let mut best_steps = Vec::new();
        for &seed in seeds {
            let dir = out_dir.map(|d| d.join(mode.name()).join(format!("seed_{seed}")));
            let outcome = run_training(&run_cfg, seed, dir.as_deref(), &mut |row| {
                progress(mode, seed, row)
            })?;
            best_steps.push(outcome.best.as_ref().map(|(r, _)| r.step));
            let mut policy = outcome.best_policy();
            for (case, sink) in [
                (TestCase::NominalTracking, &mut nominal),
                (TestCase::StepResponse, &mut stepped),
            ] {
                sink.extend(run_scenario(
                    Scenario::Case(case),
                    &mut policy,
                    &cfg.plant,
                    &cfg.env,
                    cfg.eval.episodes,
                    cfg.eval.master_seed,
                )?);
            }
        }
        let dt = cfg.plant.dt;
        rows.push(AblationRow {
            mode,
            seeds: seeds.to_vec(),
            best_steps,
            nominal: case_report(TestCase::NominalTracking, &nominal, dt, &cfg.eval.step_metrics),
            step: case_report(TestCase::StepResponse, &stepped, dt, &cfg.eval.step_metrics),
        });
    }
    Ok(AblationTable { rows })
}
