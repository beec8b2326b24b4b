use nalgebra::DMatrix;

use super::BaselineError;

pub const DARE_TOL: f64 = 1e-10;
pub const DARE_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone, PartialEq)]
pub struct DareSolution {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub iterations: usize,
    /// Max-norm of the Riccati equation residual at `p`.
    pub residual: f64,
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// `(R + B'PB)^{-1} B'PA`
fn riccati_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>, BaselineError> {
    let bt_p = b.transpose() * p;
    let s = r + &bt_p * b;
    let chol = s
        .cholesky()
        .ok_or(BaselineError::Singular("R + B'PB is not positive definite"))?;
    Ok(chol.solve(&(bt_p * a)))
}

fn riccati_map(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>, BaselineError> {
    let k = riccati_gain(a, b, r, p)?;
    let at_p = a.transpose() * p;
    let next = q + &at_p * a - &at_p * b * k;
    Ok((&next + next.transpose()) * 0.5)
}

/// Discrete algebraic Riccati equation by value iteration from `P = Q`.
///
/// Convergence is declared once `max|P_{k+1} - P_k| < 1e-10 * max(1, max|P|)`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DareSolution, BaselineError> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (b.ncols(), b.ncols())
    {
        return Err(BaselineError::Shape(format!(
            "A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    let mut p = q.clone();
    let mut delta = f64::INFINITY;
    for it in 1..=DARE_MAX_ITER {
        let next = riccati_map(a, b, q, r, &p)?;
        delta = max_abs(&(&next - &p));
        let scale = max_abs(&next).max(1.0);
        p = next;
        if !delta.is_finite() {
            break;
        }
        if delta < DARE_TOL * scale {
            let k = riccati_gain(a, b, r, &p)?;
            let residual = max_abs(&(riccati_map(a, b, q, r, &p)? - &p));
            return Ok(DareSolution {
                p,
                k,
                iterations: it,
                residual,
            });
        }
    }
    Err(BaselineError::DareNotConverged {
        iterations: DARE_MAX_ITER,
        residual: delta,
    })
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .fold(0.0, |acc, z| acc.max(z.norm()))
}
