//! Continuous-time multi-span web dynamics and their forward-Euler discretization.
//!
//! Each span `i` carries a tension `T_i` and the roller at its exit end moves the
//! web at linear velocity `v_i`:
//!
//! ```text
//! dT_i/dt = (EA/L)(v_i - v_{i-1}) + (1/L)(v_{i-1} T_{i-1} - v_i T_i)
//! dv_i/dt = (R^2/J)(T_{i+1} - T_i) - (f_b/J) v_i + (R/J) u_i
//! ```
//!
//! with `v_0` the unwind velocity, `T_0` the tension entering the first span and
//! `T_{N+1}` the tension pulling on the last roller.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("non-finite {quantity} at section {section}: {value}")]
    InvalidState {
        quantity: &'static str,
        section: usize,
        value: f64,
    },
    #[error("expected {expected} entries for {what}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("web stiffness {stiffness} N does not exceed tension {tension} N at section {section}")]
    SingularReference {
        section: usize,
        tension: f64,
        stiffness: f64,
    },
    #[error("invalid plant parameter {name}: {reason}")]
    InvalidParams { name: &'static str, reason: String },
}

/// How the bearing friction enters the velocity equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FrictionModel {
    /// `-(f_b/J) v_i`, the equation as written.
    #[default]
    Literal,
    /// `-(f_b/J) (v_i / R)`: friction coefficient applied to the roller angular rate.
    AngularRate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    /// Young's modulus, Pa.
    pub modulus: f64,
    /// Web cross-section, m^2.
    pub area: f64,
    /// Roller radius, m.
    pub radius: f64,
    /// Roller inertia, kg m^2.
    pub inertia: f64,
    /// Motor friction, N m s / rad.
    pub friction: f64,
    /// Span length (uniform), m.
    pub span_length: f64,
    pub n_sections: usize,
    /// Unwind (inlet) velocity `v_0`, m/s.
    pub unwind_velocity: f64,
    /// Tension `T_0` entering the first span, N.
    pub boundary_tension_in: f64,
    /// Tension `T_{N+1}` acting on the last roller, N.
    pub boundary_tension_out: f64,
    /// Integration step, s.
    pub dt: f64,
    /// Torque corresponding to a normalized action of 1, N m.
    pub torque_limit: f64,
    pub friction_model: FrictionModel,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            modulus: 200e6,
            area: 1.2e-5,
            radius: 0.04,
            inertia: 0.95,
            friction: 10.0,
            span_length: 1.0,
            n_sections: 3,
            unwind_velocity: 0.01,
            boundary_tension_in: 0.0,
            boundary_tension_out: 0.0,
            dt: 0.01,
            torque_limit: 6.0,
            friction_model: FrictionModel::Literal,
        }
    }
}

impl PlantParams {
    /// Web stiffness `EA` in newtons.
    pub fn stiffness(&self) -> f64 {
        self.modulus * self.area
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let positive = [
            ("modulus", self.modulus),
            ("area", self.area),
            ("radius", self.radius),
            ("inertia", self.inertia),
            ("friction", self.friction),
            ("span_length", self.span_length),
            ("dt", self.dt),
            ("torque_limit", self.torque_limit),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(PlantError::InvalidParams {
                    name,
                    reason: format!("must be finite and > 0, got {value}"),
                });
            }
        }
        if self.n_sections == 0 {
            return Err(PlantError::InvalidParams {
                name: "n_sections",
                reason: "must be at least 1".into(),
            });
        }
        for (name, value) in [
            ("unwind_velocity", self.unwind_velocity),
            ("boundary_tension_in", self.boundary_tension_in),
            ("boundary_tension_out", self.boundary_tension_out),
        ] {
            if !value.is_finite() {
                return Err(PlantError::InvalidParams {
                    name,
                    reason: format!("must be finite, got {value}"),
                });
            }
        }
        Ok(())
    }

    /// Coefficient on `v_i` in the velocity equation, 1/s.
    pub fn friction_gain(&self) -> f64 {
        match self.friction_model {
            FrictionModel::Literal => self.friction / self.inertia,
            FrictionModel::AngularRate => self.friction / (self.inertia * self.radius),
        }
    }
}

/// Tensions (N) and roller velocities (m/s), one entry per section.
///
/// The same type doubles as the time derivative returned by [`derivatives`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub tensions: Vec<f64>,
    pub velocities: Vec<f64>,
}

impl PlantState {
    pub fn zeros(n: usize) -> Self {
        Self {
            tensions: vec![0.0; n],
            velocities: vec![0.0; n],
        }
    }

    pub fn new(tensions: Vec<f64>, velocities: Vec<f64>) -> Self {
        Self {
            tensions,
            velocities,
        }
    }

    pub fn n_sections(&self) -> usize {
        self.tensions.len()
    }

    /// Stacked `[T_1..T_N, v_1..v_N]`.
    pub fn to_vector(&self) -> Vec<f64> {
        let mut x = self.tensions.clone();
        x.extend_from_slice(&self.velocities);
        x
    }

    pub fn from_vector(x: &[f64]) -> Self {
        let n = x.len() / 2;
        Self {
            tensions: x[..n].to_vec(),
            velocities: x[n..2 * n].to_vec(),
        }
    }

    pub fn check(&self, n: usize) -> Result<(), PlantError> {
        if self.tensions.len() != n {
            return Err(PlantError::Dimension {
                what: "tensions",
                expected: n,
                got: self.tensions.len(),
            });
        }
        if self.velocities.len() != n {
            return Err(PlantError::Dimension {
                what: "velocities",
                expected: n,
                got: self.velocities.len(),
            });
        }
        check_finite("tension", &self.tensions)?;
        check_finite("velocity", &self.velocities)
    }
}

fn check_finite(quantity: &'static str, values: &[f64]) -> Result<(), PlantError> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(section) => Err(PlantError::InvalidState {
            quantity,
            section,
            value: values[section],
        }),
        None => Ok(()),
    }
}

fn check_len(what: &'static str, values: &[f64], n: usize) -> Result<(), PlantError> {
    if values.len() != n {
        return Err(PlantError::Dimension {
            what,
            expected: n,
            got: values.len(),
        });
    }
    Ok(())
}

/// Time derivative of the plant state under the given roller torques.
pub fn derivatives(
    params: &PlantParams,
    state: &PlantState,
    torques: &[f64],
) -> Result<PlantState, PlantError> {
    let n = params.n_sections;
    state.check(n)?;
    check_len("torques", torques, n)?;
    check_finite("torque", torques)?;

    let ea = params.stiffness();
    let inv_l = 1.0 / params.span_length;
    let r = params.radius;
    let j = params.inertia;
    let fric = params.friction_gain();
    let t = &state.tensions;
    let v = &state.velocities;

    let mut rates = PlantState::zeros(n);
    for i in 0..n {
        let (t_prev, v_prev) = if i == 0 {
            (params.boundary_tension_in, params.unwind_velocity)
        } else {
            (t[i - 1], v[i - 1])
        };
        let t_next = if i + 1 == n {
            params.boundary_tension_out
        } else {
            t[i + 1]
        };
        rates.tensions[i] = ea * inv_l * (v[i] - v_prev) + inv_l * (v_prev * t_prev - v[i] * t[i]);
        rates.velocities[i] = r * r / j * (t_next - t[i]) - fric * v[i] + r / j * torques[i];
    }
    Ok(rates)
}

/// One forward-Euler step of length `params.dt`.
pub fn euler_step(
    params: &PlantParams,
    state: &PlantState,
    torques: &[f64],
) -> Result<PlantState, PlantError> {
    let rates = derivatives(params, state, torques)?;
    let dt = params.dt;
    let next = PlantState {
        tensions: state
            .tensions
            .iter()
            .zip(&rates.tensions)
            .map(|(x, dx)| x + dt * dx)
            .collect(),
        velocities: state
            .velocities
            .iter()
            .zip(&rates.velocities)
            .map(|(x, dx)| x + dt * dx)
            .collect(),
    };
    next.check(params.n_sections)?;
    Ok(next)
}

/// Steady velocity profile that makes every tension derivative vanish for the
/// given tension profile.
pub fn continuity_velocities(
    params: &PlantParams,
    tensions_ref: &[f64],
) -> Result<Vec<f64>, PlantError> {
    check_len("reference tensions", tensions_ref, params.n_sections)?;
    check_finite("reference tension", tensions_ref)?;
    let ea = params.stiffness();
    let mut v_prev = params.unwind_velocity;
    let mut t_prev = params.boundary_tension_in;
    if ea <= t_prev {
        return Err(PlantError::SingularReference {
            section: 0,
            tension: t_prev,
            stiffness: ea,
        });
    }
    let mut out = Vec::with_capacity(tensions_ref.len());
    for (i, &t) in tensions_ref.iter().enumerate() {
        if ea <= t {
            return Err(PlantError::SingularReference {
                section: i + 1,
                tension: t,
                stiffness: ea,
            });
        }
        let v = v_prev * (ea - t_prev) / (ea - t);
        out.push(v);
        v_prev = v;
        t_prev = t;
    }
    Ok(out)
}

/// Torques that hold the plant stationary at `(tensions_ref, velocities_ref)`.
pub fn equilibrium_torques(
    params: &PlantParams,
    tensions_ref: &[f64],
    velocities_ref: &[f64],
) -> Result<Vec<f64>, PlantError> {
    let n = params.n_sections;
    check_len("reference tensions", tensions_ref, n)?;
    check_len("reference velocities", velocities_ref, n)?;
    let r = params.radius;
    // fric * J == f_b (literal) or f_b / R (angular rate)
    let fric_torque = params.friction_gain() * params.inertia;
    Ok((0..n)
        .map(|i| {
            let t_next = if i + 1 == n {
                params.boundary_tension_out
            } else {
                tensions_ref[i + 1]
            };
            (fric_torque * velocities_ref[i] - r * r * (t_next - tensions_ref[i])) / r
        })
        .collect())
}

/// Reference state (tensions plus continuity velocities) and its holding torques.
pub fn operating_point(
    params: &PlantParams,
    tensions_ref: &[f64],
) -> Result<(PlantState, Vec<f64>), PlantError> {
    let v = continuity_velocities(params, tensions_ref)?;
    let u = equilibrium_torques(params, tensions_ref, &v)?;
    Ok((PlantState::new(tensions_ref.to_vec(), v), u))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table1() -> PlantParams {
        PlantParams::default()
    }

    #[test]
    fn zero_state_is_a_fixed_point() {
        let mut p = table1();
        p.unwind_velocity = 0.0;
        let s = PlantState::zeros(3);
        let d = derivatives(&p, &s, &[0.0; 3]).unwrap();
        assert!(d.tensions.iter().chain(&d.velocities).all(|&x| x == 0.0));
        let next = euler_step(&p, &s, &[0.0; 3]).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn single_span_tension_rate_by_hand() {
        let p = PlantParams {
            n_sections: 1,
            ..table1()
        };
        let s = PlantState::new(vec![30.0], vec![0.02]);
        let d = derivatives(&p, &s, &[0.0]).unwrap();
        assert!((d.tensions[0] - 23.4).abs() < 1e-12);
    }

    #[test]
    fn uniform_profile_cancels_interior_tension_rates() {
        let p = table1();
        let s = PlantState::new(vec![27.0; 3], vec![p.unwind_velocity; 3]);
        let d = derivatives(&p, &s, &[1.0, -0.5, 2.0]).unwrap();
        for i in 1..3 {
            assert!(d.tensions[i].abs() < 1e-12, "span {i}: {}", d.tensions[i]);
        }
    }

    #[test]
    fn euler_adds_dt_times_rate() {
        // A single span with v = v0 and T = T0 has no tension rate; pick torque so dv = 1.
        let p = PlantParams {
            n_sections: 1,
            boundary_tension_in: 0.0,
            ..table1()
        };
        let s = PlantState::new(vec![0.0], vec![p.unwind_velocity]);
        let fric = p.friction / p.inertia * s.velocities[0];
        let u = (1.0 + fric) * p.inertia / p.radius;
        let next = euler_step(&p, &s, &[u]).unwrap();
        assert!((next.velocities[0] - s.velocities[0] - 0.01).abs() < 1e-15);
        assert!((next.tensions[0]).abs() < 1e-15);
    }

    #[test]
    fn continuity_matches_plotted_reference() {
        let p = table1();
        let v = continuity_velocities(&p, &[30.0, 30.0, 30.0]).unwrap();
        assert!((v[0] - 0.01 * 2400.0 / 2370.0).abs() < 1e-15);
        assert!((v[0] - 0.010127).abs() < 1e-6);
        assert_eq!(v[1], v[0]);
        assert_eq!(v[2], v[0]);

        let v = continuity_velocities(&p, &[30.0, 40.0, 30.0]).unwrap();
        for (got, want) in v.iter().zip([0.010127, 0.010170, 0.010127]) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn uniform_reference_equal_to_inlet_keeps_unwind_velocity() {
        let p = PlantParams {
            boundary_tension_in: 25.0,
            ..table1()
        };
        let v = continuity_velocities(&p, &[25.0; 3]).unwrap();
        assert!(v.iter().all(|&x| x == p.unwind_velocity));
    }

    #[test]
    fn continuity_rejects_tension_above_stiffness() {
        let p = table1();
        let err = continuity_velocities(&p, &[30.0, 2400.0, 30.0]).unwrap_err();
        assert!(matches!(err, PlantError::SingularReference { section: 2, .. }));
    }

    #[test]
    fn equilibrium_torque_last_roller() {
        let p = table1();
        let (x, u) = operating_point(&p, &[30.0; 3]).unwrap();
        let want = (10.0 * x.velocities[2] + 0.0016 * 30.0) / 0.04;
        assert!((u[2] - want).abs() < 1e-12);
        assert!((u[2] - 3.73).abs() < 0.01);
        // the last roller needs more than the nominal 2 N m limit
        assert!(u[2] > 2.0);
    }

    #[test]
    fn equilibrium_closure_zero_and_nominal() {
        let mut p = table1();
        p.unwind_velocity = 0.0;
        let u = equilibrium_torques(&p, &[0.0; 3], &[0.0; 3]).unwrap();
        assert!(u.iter().all(|&x| x == 0.0));

        for fm in [FrictionModel::Literal, FrictionModel::AngularRate] {
            let p = PlantParams {
                friction_model: fm,
                ..table1()
            };
            let (x, u) = operating_point(&p, &[22.0, 38.0, 31.0]).unwrap();
            let d = derivatives(&p, &x, &u).unwrap();
            assert!(d.tensions.iter().chain(&d.velocities).all(|r| r.abs() < 1e-9));
        }
    }

    #[test]
    fn tension_coupling_direction() {
        let p = table1();
        let s = PlantState::new(vec![30.0; 3], vec![0.01; 3]);
        let mut bumped = s.clone();
        let delta = 0.7;
        bumped.tensions[1] += delta;
        let u = [1.0; 3];
        let a = derivatives(&p, &s, &u).unwrap();
        let b = derivatives(&p, &bumped, &u).unwrap();
        let k = p.radius * p.radius / p.inertia;
        assert!((b.velocities[0] - a.velocities[0] - k * delta).abs() < 1e-12);
        assert!((b.velocities[1] - a.velocities[1] + k * delta).abs() < 1e-12);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let p = table1();
        let s = PlantState::new(vec![30.0, f64::NAN, 30.0], vec![0.01; 3]);
        assert!(matches!(
            derivatives(&p, &s, &[0.0; 3]),
            Err(PlantError::InvalidState { section: 1, .. })
        ));
        let s = PlantState::new(vec![30.0; 3], vec![0.01; 3]);
        assert!(matches!(
            euler_step(&p, &s, &[0.0, f64::INFINITY, 0.0]),
            Err(PlantError::InvalidState { .. })
        ));
        assert!(matches!(
            derivatives(&p, &s, &[0.0; 2]),
            Err(PlantError::Dimension { .. })
        ));
    }

    #[test]
    fn parameter_validation() {
        assert!(table1().validate().is_ok());
        let bad = PlantParams {
            inertia: 0.0,
            ..table1()
        };
        assert!(bad.validate().is_err());
        let bad = PlantParams {
            n_sections: 0,
            ..table1()
        };
        assert!(bad.validate().is_err());
        assert!(table1().stiffness() > 40.0);
    }
}
