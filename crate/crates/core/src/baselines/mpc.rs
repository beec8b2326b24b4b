use nalgebra::{DMatrix, DVector};

use super::{
    matrix_rows, normalized, state_vector, BaselineError, ControlWeights, ControllerDefinition,
    ControllerKind, LinearModel,
};
use crate::env::{Observation, R2rEnv};
use crate::evalbench::Controller;
use crate::plant::{equilibrium_torques, PlantError, PlantParams, PlantState};

/// Receding-horizon controller on reference-relative deviations.
///
/// With `e_k = x_k - r_k` and `du_k = u_k - u_eq(r_{k+1})` the linear model gives
/// `e_{k+1} = A e_k + B du_k + A (r_k - r_{k+1})`, where `r_1..r_H` is the
/// reference preview and `r_0 := r_1`. Minimizing
/// `sum_{k=1..H} e_k' Q e_k + sum_{k=0..H-1} du_k' R du_k` without constraints is a
/// linear solve; only its first move is kept, then clamped.
#[derive(Debug, Clone)]
pub struct MpcController {
    pub model: LinearModel,
    pub weights: ControlWeights,
    pub horizon: usize,
    pub torque_limit: f64,
    /// First-move gain on `e_0`.
    pub gain_state: DMatrix<f64>,
    /// First-move gain on the stacked reference increments.
    pub gain_preview: DMatrix<f64>,
}

fn block_powers(a: &DMatrix<f64>, upto: usize) -> Vec<DMatrix<f64>> {
    let mut out = vec![DMatrix::identity(a.nrows(), a.ncols())];
    for k in 1..=upto {
        let next = a * &out[k - 1];
        out.push(next);
    }
    out
}

impl MpcController {
    pub fn design(
        model: LinearModel,
        weights: ControlWeights,
        horizon: usize,
        torque_limit: f64,
    ) -> Result<Self, BaselineError> {
        weights.validate()?;
        if horizon == 0 {
            return Err(BaselineError::InvalidConfig("horizon must be >= 1".into()));
        }
        let n = model.n_sections();
        let nx = 2 * n;
        let h = horizon;
        let (a, b) = (&model.a_d, &model.b_d);
        let pw = block_powers(a, h);
        let q = weights.q(n);

        let mut phi = DMatrix::zeros(h * nx, nx);
        let mut gamma = DMatrix::zeros(h * nx, h * n);
        let mut gamma_d = DMatrix::zeros(h * nx, h * nx);
        for k in 1..=h {
            let row = (k - 1) * nx;
            phi.view_mut((row, 0), (nx, nx)).copy_from(&pw[k]);
            for j in 0..k {
                gamma
                    .view_mut((row, j * n), (nx, n))
                    .copy_from(&(&pw[k - 1 - j] * b));
                gamma_d
                    .view_mut((row, j * nx), (nx, nx))
                    .copy_from(&pw[k - j]);
            }
        }
        // Q-bar Gamma, block by block
        let mut q_gamma = gamma.clone();
        for k in 0..h {
            let blk = &q * gamma.rows(k * nx, nx);
            q_gamma.rows_mut(k * nx, nx).copy_from(&blk);
        }
        let mut hess = gamma.transpose() * &q_gamma;
        for i in 0..h * n {
            hess[(i, i)] += weights.control;
        }
        let chol = hess
            .cholesky()
            .ok_or(BaselineError::Singular("MPC normal matrix is not positive definite"))?;
        // first n rows of H^{-1} Gamma' Q-bar
        let full = chol.solve(&q_gamma.transpose());
        let first = full.rows(0, n).into_owned();
        Ok(Self {
            gain_state: &first * &phi,
            gain_preview: &first * &gamma_d,
            model,
            weights,
            horizon,
            torque_limit,
        })
    }

    /// First move for the current state and the reference states of the next
    /// `horizon` steps (shorter previews repeat their last entry).
    pub fn control(
        &self,
        params: &PlantParams,
        state: &PlantState,
        preview: &[PlantState],
    ) -> Result<Vec<f64>, PlantError> {
        let n = self.model.n_sections();
        let nx = 2 * n;
        let first = preview.first().ok_or(PlantError::Dimension {
            what: "reference preview",
            expected: self.horizon,
            got: 0,
        })?;
        let at = |k: usize| &preview[k.min(preview.len() - 1)];
        let u_eq = equilibrium_torques(params, &first.tensions, &first.velocities)?;
        let e0 = state_vector(state) - state_vector(first);
        let mut d = DVector::zeros(self.horizon * nx);
        // r_0 := r_1, so the j = 0 increment stays zero
        for j in 1..self.horizon {
            let inc = state_vector(at(j - 1)) - state_vector(at(j));
            d.rows_mut(j * nx, nx).copy_from(&inc);
        }
        let du = -(&self.gain_state * e0) - &self.gain_preview * d;
        Ok(u_eq
            .iter()
            .zip(du.iter())
            .map(|(u, d)| (u + d).clamp(-self.torque_limit, self.torque_limit))
            .collect())
    }

    pub fn definition(&self) -> ControllerDefinition {
        ControllerDefinition {
            kind: ControllerKind::Mpc,
            weights: self.weights,
            horizon: Some(self.horizon),
            torque_limit: self.torque_limit,
            gain: matrix_rows(&self.gain_state),
            spectral_radius: Some(super::spectral_radius(
                &(&self.model.a_d - &self.model.b_d * &self.gain_state),
            )),
            operating_point: (&self.model).into(),
        }
    }
}

impl Controller for MpcController {
    fn name(&self) -> String {
        "mpc".into()
    }

    fn act(&mut self, env: &R2rEnv, _obs: &Observation) -> Vec<f64> {
        let k = env.step_index();
        let preview: Vec<PlantState> = (k..k + self.horizon)
            .map(|i| env.profile().state_at(i))
            .collect();
        let u = self
            .control(env.params(), env.state(), &preview)
            .expect("environment state and profile share the section count");
        normalized(&u, self.torque_limit)
    }
}
