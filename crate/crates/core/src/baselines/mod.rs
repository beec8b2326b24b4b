//! Model-based comparators: Euler-discretized linearization, infinite-horizon
//! LQR and a condensed finite-horizon MPC, both with equilibrium feedforward.

mod dare;
mod linear;
mod lqr;
mod mpc;
mod tune;

pub use dare::{solve_dare, spectral_radius, DareSolution, DARE_MAX_ITER, DARE_TOL};
pub use linear::{finite_difference_jacobians, linearize, state_vector, LinearModel, LinearModelSummary};
pub use lqr::LqrController;
pub use mpc::MpcController;
pub use tune::{tune_weights, TuningReport, TuningRow};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EnvError;
use crate::plant::{operating_point, PlantError, PlantParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BaselineError {
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("Riccati iteration did not converge after {iterations} iterations (last change {residual:e})")]
    DareNotConverged { iterations: usize, residual: f64 },
    #[error("singular system: {0}")]
    Singular(&'static str),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid baseline configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Lqr,
    Mpc,
}

impl ControllerKind {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerKind::Lqr => "lqr",
            ControllerKind::Mpc => "mpc",
        }
    }
}

/// Diagonal quadratic weights: per-section tension and velocity penalties and
/// a per-roller torque penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlWeights {
    pub tension: f64,
    pub velocity: f64,
    pub control: f64,
}

impl Default for ControlWeights {
    fn default() -> Self {
        Self {
            tension: 100.0,
            velocity: 1000.0,
            control: 0.1,
        }
    }
}

impl ControlWeights {
    pub fn validate(&self) -> Result<(), BaselineError> {
        let ok = |x: f64| x.is_finite() && x >= 0.0;
        if !(ok(self.tension) && ok(self.velocity) && self.control.is_finite() && self.control > 0.0) {
            return Err(BaselineError::InvalidConfig(format!(
                "weights must be finite, state weights >= 0 and control > 0: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn q(&self, n: usize) -> DMatrix<f64> {
        DMatrix::from_fn(2 * n, 2 * n, |i, j| match (i == j, i < n) {
            (true, true) => self.tension,
            (true, false) => self.velocity,
            _ => 0.0,
        })
    }

    pub fn r(&self, n: usize) -> DMatrix<f64> {
        DMatrix::identity(n, n) * self.control
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningGrid {
    pub tension: Vec<f64>,
    pub velocity: Vec<f64>,
    pub control: Vec<f64>,
}

impl Default for TuningGrid {
    fn default() -> Self {
        Self {
            tension: vec![10.0, 100.0, 1000.0],
            velocity: vec![1e2, 1e3, 1e4],
            control: vec![0.01, 0.1, 1.0],
        }
    }
}

impl TuningGrid {
    pub fn points(&self) -> Vec<ControlWeights> {
        let mut out = Vec::new();
        for &tension in &self.tension {
            for &velocity in &self.velocity {
                for &control in &self.control {
                    out.push(ControlWeights {
                        tension,
                        velocity,
                        control,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub lqr: ControlWeights,
    pub mpc: ControlWeights,
    pub mpc_horizon: usize,
    /// Tension profile the model is linearized around, N.
    pub nominal_tension: f64,
    pub grid: TuningGrid,
    pub tune_episodes: usize,
    /// Grid-search the weights before every comparison instead of using `lqr` / `mpc` as given.
    pub auto_tune: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            lqr: ControlWeights::default(),
            mpc: ControlWeights::default(),
            mpc_horizon: 10,
            nominal_tension: 30.0,
            grid: TuningGrid::default(),
            tune_episodes: 10,
            auto_tune: true,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        self.lqr.validate()?;
        self.mpc.validate()?;
        if self.mpc_horizon == 0 {
            return Err(BaselineError::InvalidConfig("mpc_horizon must be >= 1".into()));
        }
        if self.tune_episodes == 0 {
            return Err(BaselineError::InvalidConfig("tune_episodes must be >= 1".into()));
        }
        let g = &self.grid;
        if g.tension.is_empty() || g.velocity.is_empty() || g.control.is_empty() {
            return Err(BaselineError::InvalidConfig("tuning grid axes must be non-empty".into()));
        }
        for w in g.points() {
            w.validate()?;
        }
        Ok(())
    }

    pub fn weights(&self, kind: ControllerKind) -> ControlWeights {
        match kind {
            ControllerKind::Lqr => self.lqr,
            ControllerKind::Mpc => self.mpc,
        }
    }
}

/// Linear model at uniform `nominal_tension` with continuity velocities.
pub fn nominal_model(params: &PlantParams, nominal_tension: f64) -> Result<LinearModel, BaselineError> {
    let (x, u) = operating_point(params, &vec![nominal_tension; params.n_sections])?;
    Ok(linearize(params, &x, &u)?)
}

/// JSON-friendly description of a designed controller.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControllerDefinition {
    pub kind: ControllerKind,
    pub weights: ControlWeights,
    pub horizon: Option<usize>,
    pub torque_limit: f64,
    /// Feedback gain on the state deviation, row per roller.
    pub gain: Vec<Vec<f64>>,
    pub spectral_radius: Option<f64>,
    pub operating_point: LinearModelSummary,
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Either baseline behind one type.
#[derive(Debug, Clone)]
pub enum Baseline {
    Lqr(LqrController),
    Mpc(MpcController),
}

impl Baseline {
    pub fn design(
        kind: ControllerKind,
        params: &PlantParams,
        weights: ControlWeights,
        cfg: &BaselineConfig,
    ) -> Result<Self, BaselineError> {
        let model = nominal_model(params, cfg.nominal_tension)?;
        Ok(match kind {
            ControllerKind::Lqr => Baseline::Lqr(LqrController::design(model, weights, params.torque_limit)?),
            ControllerKind::Mpc => Baseline::Mpc(MpcController::design(
                model,
                weights,
                cfg.mpc_horizon,
                params.torque_limit,
            )?),
        })
    }

    pub fn definition(&self) -> ControllerDefinition {
        match self {
            Baseline::Lqr(c) => c.definition(),
            Baseline::Mpc(c) => c.definition(),
        }
    }
}

impl crate::evalbench::Controller for Baseline {
    fn name(&self) -> String {
        match self {
            Baseline::Lqr(c) => c.name(),
            Baseline::Mpc(c) => c.name(),
        }
    }

    fn act(&mut self, env: &crate::env::R2rEnv, obs: &crate::env::Observation) -> Vec<f64> {
        match self {
            Baseline::Lqr(c) => c.act(env, obs),
            Baseline::Mpc(c) => c.act(env, obs),
        }
    }
}

/// Torques to a normalized raw action in `[-1, 1]`.
pub(crate) fn normalized(torques: &[f64], torque_limit: f64) -> Vec<f64> {
    torques
        .iter()
        .map(|u| (u / torque_limit).clamp(-1.0, 1.0))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_27_points() {
        let pts = TuningGrid::default().points();
        assert_eq!(pts.len(), 27);
        assert!(pts.contains(&ControlWeights::default()));
    }

    #[test]
    fn weight_matrices() {
        let w = ControlWeights::default();
        let q = w.q(3);
        assert_eq!(q[(0, 0)], 100.0);
        assert_eq!(q[(4, 4)], 1000.0);
        assert_eq!(q[(0, 1)], 0.0);
        assert_eq!(w.r(3)[(2, 2)], 0.1);
    }

    #[test]
    fn rejects_bad_config() {
        let mut c = BaselineConfig::default();
        c.mpc_horizon = 0;
        assert!(c.validate().is_err());
        let mut c = BaselineConfig::default();
        c.lqr.control = 0.0;
        assert!(c.validate().is_err());
        assert!(BaselineConfig::default().validate().is_ok());
    }
}
