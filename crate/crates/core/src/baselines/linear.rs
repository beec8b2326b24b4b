use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::plant::{derivatives, PlantError, PlantParams, PlantState};

/// Continuous and forward-Euler Jacobians of the plant at one operating point.
/// States are ordered `[T_1..T_N, v_1..v_N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub a_d: DMatrix<f64>,
    pub b_d: DMatrix<f64>,
    pub x_op: PlantState,
    pub u_op: Vec<f64>,
    pub dt: f64,
}

impl LinearModel {
    pub fn n_sections(&self) -> usize {
        self.b.ncols()
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
}

/// Summary for JSON export.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearModelSummary {
    pub tensions_op: Vec<f64>,
    pub velocities_op: Vec<f64>,
    pub torques_op: Vec<f64>,
}

impl From<&LinearModel> for LinearModelSummary {
    fn from(m: &LinearModel) -> Self {
        Self {
            tensions_op: m.x_op.tensions.clone(),
            velocities_op: m.x_op.velocities.clone(),
            torques_op: m.u_op.clone(),
        }
    }
}

pub fn state_vector(s: &PlantState) -> DVector<f64> {
    DVector::from_iterator(
        2 * s.n_sections(),
        s.tensions.iter().chain(&s.velocities).copied(),
    )
}

/// Analytic Jacobians of the tension and velocity equations.
pub fn linearize(
    params: &PlantParams,
    x_op: &PlantState,
    u_op: &[f64],
) -> Result<LinearModel, PlantError> {
    let n = params.n_sections;
    x_op.check(n)?;
    // validates the torque vector as well
    derivatives(params, x_op, u_op)?;

    let ea = params.stiffness();
    let l = params.span_length;
    let (r, j) = (params.radius, params.inertia);
    let t = &x_op.tensions;
    let v = &x_op.velocities;

    let mut a = DMatrix::zeros(2 * n, 2 * n);
    let mut b = DMatrix::zeros(2 * n, n);
    for i in 0..n {
        let (ti, vi) = (i, n + i);
        a[(ti, ti)] = -v[i] / l;
        a[(ti, vi)] = (ea - t[i]) / l;
        if i > 0 {
            a[(ti, i - 1)] = v[i - 1] / l;
            a[(ti, n + i - 1)] = (t[i - 1] - ea) / l;
        }
        a[(vi, ti)] = -r * r / j;
        if i + 1 < n {
            a[(vi, i + 1)] = r * r / j;
        }
        a[(vi, vi)] = -params.friction_gain();
        b[(vi, i)] = r / j;
    }
    let dt = params.dt;
    let a_d = DMatrix::identity(2 * n, 2 * n) + &a * dt;
    let b_d = &b * dt;
    Ok(LinearModel {
        a,
        b,
        a_d,
        b_d,
        x_op: x_op.clone(),
        u_op: u_op.to_vec(),
        dt,
    })
}

/// Central finite-difference Jacobians of [`derivatives`], used as a test oracle.
pub fn finite_difference_jacobians(
    params: &PlantParams,
    x: &PlantState,
    u: &[f64],
) -> Result<(DMatrix<f64>, DMatrix<f64>), PlantError> {
    let n = params.n_sections;
    let x0 = x.to_vector();
    let f = |xv: &[f64], uv: &[f64]| -> Result<Vec<f64>, PlantError> {
        Ok(derivatives(params, &PlantState::from_vector(xv), uv)?.to_vector())
    };
    let mut a = DMatrix::zeros(2 * n, 2 * n);
    for c in 0..2 * n {
        let h = 1e-6 * x0[c].abs().max(1e-3);
        let (mut xp, mut xm) = (x0.clone(), x0.clone());
        xp[c] += h;
        xm[c] -= h;
        let (fp, fm) = (f(&xp, u)?, f(&xm, u)?);
        for row in 0..2 * n {
            a[(row, c)] = (fp[row] - fm[row]) / (2.0 * h);
        }
    }
    let mut b = DMatrix::zeros(2 * n, n);
    for c in 0..n {
        let h = 1e-6 * u[c].abs().max(1.0);
        let (mut up, mut um) = (u.to_vec(), u.to_vec());
        up[c] += h;
        um[c] -= h;
        let (fp, fm) = (f(&x0, &up)?, f(&x0, &um)?);
        for row in 0..2 * n {
            b[(row, c)] = (fp[row] - fm[row]) / (2.0 * h);
        }
    }
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::operating_point;
    use crate::rng::seeded;
    use rand::Rng;

    #[test]
    fn input_gain_and_sparsity() {
        let p = PlantParams::default();
        let (x, u) = operating_point(&p, &[30.0; 3]).unwrap();
        let m = linearize(&p, &x, &u).unwrap();
        for i in 0..3 {
            assert!((m.b[(3 + i, i)] - 0.04 / 0.95).abs() < 1e-15);
        }
        assert!((m.b[(3, 0)] - 0.042105).abs() < 1e-6);
        assert_eq!(m.a[(0, 2)], 0.0);
        assert!((m.a[(0, 3)] - (2400.0 - 30.0)).abs() < 1e-12);
        assert!((m.a[(3, 1)] - 0.04 * 0.04 / 0.95).abs() < 1e-15);
        assert_eq!(m.a_d[(0, 0)], 1.0 + 0.01 * m.a[(0, 0)]);
    }

    #[test]
    fn matches_finite_differences() {
        let p = PlantParams::default();
        let mut rng = seeded(11);
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let t: Vec<f64> = (0..3).map(|_| rng.gen_range(20.0..40.0)).collect();
            let v: Vec<f64> = (0..3).map(|_| rng.gen_range(0.008..0.012)).collect();
            let u: Vec<f64> = (0..3).map(|_| rng.gen_range(-6.0..6.0)).collect();
            let x = PlantState::new(t, v);
            let m = linearize(&p, &x, &u).unwrap();
            let (fa, fb) = finite_difference_jacobians(&p, &x, &u).unwrap();
            for (an, fd) in m.a.iter().zip(fa.iter()).chain(m.b.iter().zip(fb.iter())) {
                let scale = an.abs().max(1e-3);
                worst = worst.max((an - fd).abs() / scale);
            }
        }
        assert!(worst < 1e-6, "worst relative error {worst:e}");
    }
}
