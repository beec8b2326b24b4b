use nalgebra::{DMatrix, DVector};

use super::{
    matrix_rows, normalized, solve_dare, spectral_radius, state_vector, BaselineError, ControlWeights,
    ControllerDefinition, ControllerKind, LinearModel,
};
use crate::env::{Observation, R2rEnv};
use crate::evalbench::Controller;
use crate::plant::{equilibrium_torques, PlantError, PlantParams, PlantState};

/// `u = u_eq(ref) - K (x - x_ref)`, clamped to the torque limit.
#[derive(Debug, Clone)]
pub struct LqrController {
    pub model: LinearModel,
    pub weights: ControlWeights,
    pub k: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub spectral_radius: f64,
    pub torque_limit: f64,
}

impl LqrController {
    pub fn design(model: LinearModel, weights: ControlWeights, torque_limit: f64) -> Result<Self, BaselineError> {
        weights.validate()?;
        let n = model.n_sections();
        let sol = solve_dare(&model.a_d, &model.b_d, &weights.q(n), &weights.r(n))?;
        let closed = &model.a_d - &model.b_d * &sol.k;
        Ok(Self {
            spectral_radius: spectral_radius(&closed),
            k: sol.k,
            p: sol.p,
            model,
            weights,
            torque_limit,
        })
    }

    /// Clamped torques for `state` tracking the reference `(t_ref, v_ref)`.
    pub fn control(
        &self,
        params: &PlantParams,
        state: &PlantState,
        t_ref: &[f64],
        v_ref: &[f64],
    ) -> Result<Vec<f64>, PlantError> {
        let u_eq = equilibrium_torques(params, t_ref, v_ref)?;
        let e = state_vector(state) - state_vector(&PlantState::new(t_ref.to_vec(), v_ref.to_vec()));
        let du: DVector<f64> = &self.k * e;
        Ok(u_eq
            .iter()
            .zip(du.iter())
            .map(|(u, d)| (u - d).clamp(-self.torque_limit, self.torque_limit))
            .collect())
    }

    pub fn definition(&self) -> ControllerDefinition {
        ControllerDefinition {
            kind: ControllerKind::Lqr,
            weights: self.weights,
            horizon: None,
            torque_limit: self.torque_limit,
            gain: matrix_rows(&self.k),
            spectral_radius: Some(self.spectral_radius),
            operating_point: (&self.model).into(),
        }
    }
}

impl Controller for LqrController {
    fn name(&self) -> String {
        "lqr".into()
    }

    fn act(&mut self, env: &R2rEnv, _obs: &Observation) -> Vec<f64> {
        let k = env.step_index();
        let prof = env.profile();
        let u = self
            .control(env.params(), env.state(), prof.tensions_at(k), prof.velocities_at(k))
            .expect("environment state and profile share the section count");
        normalized(&u, self.torque_limit)
    }
}
