use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::Serialize;

use super::{Baseline, BaselineConfig, BaselineError, ControlWeights, ControllerKind};
use crate::env::EnvConfig;
use crate::evalbench::{run_scenario, tracking_metrics, Scenario, TestCase};
use crate::plant::PlantParams;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuningRow {
    pub weights: ControlWeights,
    pub tension_mae: f64,
    pub tension_rmse: f64,
    pub smoothness: f64,
    pub mean_return: f64,
    pub spectral_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuningReport {
    pub controller: ControllerKind,
    /// Ascending tension MAE, ties by smoothness.
    pub rows: Vec<TuningRow>,
}

impl TuningReport {
    pub fn best(&self) -> &TuningRow {
        &self.rows[0]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "rank,tension_weight,velocity_weight,control_weight,tension_mae,tension_rmse,smoothness,mean_return,spectral_radius\n",
        );
        for (i, r) in self.rows.iter().enumerate() {
            let rho = r.spectral_radius.map(|x| x.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                i + 1,
                r.weights.tension,
                r.weights.velocity,
                r.weights.control,
                r.tension_mae,
                r.tension_rmse,
                r.smoothness,
                r.mean_return,
                rho
            );
        }
        out
    }
}

fn rank(a: &TuningRow, b: &TuningRow) -> Ordering {
    a.tension_mae
        .total_cmp(&b.tension_mae)
        .then(a.smoothness.total_cmp(&b.smoothness))
}

/// Grid search over `cfg.grid` on the nominal tracking case.
pub fn tune_weights(
    kind: ControllerKind,
    params: &PlantParams,
    env_cfg: &EnvConfig,
    cfg: &BaselineConfig,
    master_seed: u64,
) -> Result<TuningReport, BaselineError> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for weights in cfg.grid.points() {
        let mut ctrl = Baseline::design(kind, params, weights, cfg)?;
        let traces = run_scenario(
            Scenario::Case(TestCase::NominalTracking),
            &mut ctrl,
            params,
            env_cfg,
            cfg.tune_episodes,
            master_seed,
        )?;
        let m = tracking_metrics(&traces);
        rows.push(TuningRow {
            weights,
            tension_mae: m.tension_mae,
            tension_rmse: m.tension_rmse,
            smoothness: m.smoothness,
            mean_return: m.mean_return,
            spectral_radius: ctrl.definition().spectral_radius,
        });
    }
    rows.sort_by(rank);
    Ok(TuningReport {
        controller: kind,
        rows,
    })
}
