//! Continuous-time algebraic Riccati equation
//! `A'P + PA - P B N^-1 B' P + M = 0`.
//!
//! Hamiltonian matrix sign function for the initial solution, then a few
//! Newton-Kleinman steps to polish the residual.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiccatiError {
    #[error("matrix dimensions disagree: {0}")]
    Dimension(String),
    #[error("input weight N is not positive-definite")]
    WeightNotPd,
    #[error("Hamiltonian has eigenvalues on the imaginary axis (pair not stabilizable/detectable)")]
    ImaginaryAxis,
    #[error("sign iteration did not converge")]
    NoConvergence,
    #[error("closed loop is not stable (max real part {0:.3e}); pair not stabilizable")]
    NotStabilizing(f64),
}

#[derive(Debug, Clone)]
pub struct CareSolution {
    pub p: DMatrix<f64>,
    /// Standard gain `N^-1 B' P`; the stabilizing input is `u = -K x`.
    pub k: DMatrix<f64>,
    pub residual: f64,
    pub max_real_eig: f64,
}

/// Relative Frobenius residual of the Riccati equation.
pub fn care_residual(a: &DMatrix<f64>, g: &DMatrix<f64>, m: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    let atp = a.transpose() * p;
    let pgp = p * g * p;
    let r = &atp + atp.transpose() - &pgp + m;
    let scale = m.norm() + pgp.norm() + 2.0 * atp.norm();
    r.norm() / scale.max(f64::MIN_POSITIVE)
}

fn log_abs_det(m: &DMatrix<f64>) -> Option<f64> {
    let lu = m.clone().lu();
    let u = lu.u();
    let mut s = 0.0;
    for i in 0..u.nrows() {
        let d = u[(i, i)].abs();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        s += d.ln();
    }
    Some(s)
}

/// Solve the Lyapunov equation `F' X + X F = -Q` by Kronecker vectorization.
fn lyapunov(f: &DMatrix<f64>, q: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = f.nrows();
    let ft = f.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let big = eye.kronecker(&ft) + ft.kronecker(&eye);
    let rhs = DMatrix::from_iterator(n * n, 1, q.iter().map(|v| -v));
    let x = big.lu().solve(&rhs)?;
    let x = DMatrix::from_iterator(n, n, x.iter().copied());
    Some(0.5 * (&x + x.transpose()))
}

fn max_real_eig(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues().iter().map(|c| c.re).fold(f64::NEG_INFINITY, f64::max)
}

pub fn solve_care(a: &DMatrix<f64>, b: &DMatrix<f64>, m: &DMatrix<f64>, n: &DMatrix<f64>) -> Result<CareSolution, RiccatiError> {
    let nx = a.nrows();
    let nu = b.ncols();
    if a.ncols() != nx || b.nrows() != nx || m.shape() != (nx, nx) || n.shape() != (nu, nu) {
        return Err(RiccatiError::Dimension(format!(
            "A {:?}, B {:?}, M {:?}, N {:?}",
            a.shape(),
            b.shape(),
            m.shape(),
            n.shape()
        )));
    }
    let n_inv = n.clone().cholesky().ok_or(RiccatiError::WeightNotPd)?.inverse();
    let g = b * &n_inv * b.transpose();
    let g = 0.5 * (&g + g.transpose());

    let mut h = DMatrix::zeros(2 * nx, 2 * nx);
    h.view_mut((0, 0), (nx, nx)).copy_from(a);
    h.view_mut((0, nx), (nx, nx)).copy_from(&(-&g));
    h.view_mut((nx, 0), (nx, nx)).copy_from(&(-m));
    h.view_mut((nx, nx), (nx, nx)).copy_from(&(-a.transpose()));

    let mut z = h;
    let mut converged = false;
    for _ in 0..200 {
        let zi = z.clone().try_inverse().ok_or(RiccatiError::ImaginaryAxis)?;
        let c = log_abs_det(&z).map(|l| (l / (2 * nx) as f64).exp()).ok_or(RiccatiError::ImaginaryAxis)?;
        let next = 0.5 * (&z / c + zi * c);
        let delta = (&next - &z).norm();
        let size = next.norm();
        z = next;
        if !z.iter().all(|v| v.is_finite()) {
            return Err(RiccatiError::ImaginaryAxis);
        }
        if delta <= 1e-12 * size {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(RiccatiError::NoConvergence);
    }

    // [W12; W22 + I] P = -[W11 + I; W21]
    let eye = DMatrix::<f64>::identity(nx, nx);
    let w11 = z.view((0, 0), (nx, nx)).into_owned();
    let w12 = z.view((0, nx), (nx, nx)).into_owned();
    let w21 = z.view((nx, 0), (nx, nx)).into_owned();
    let w22 = z.view((nx, nx), (nx, nx)).into_owned();
    let mut lhs = DMatrix::zeros(2 * nx, nx);
    lhs.view_mut((0, 0), (nx, nx)).copy_from(&w12);
    lhs.view_mut((nx, 0), (nx, nx)).copy_from(&(w22 + &eye));
    let mut rhs = DMatrix::zeros(2 * nx, nx);
    rhs.view_mut((0, 0), (nx, nx)).copy_from(&(-(w11 + &eye)));
    rhs.view_mut((nx, 0), (nx, nx)).copy_from(&(-w21));
    let p = lhs.svd(true, true).solve(&rhs, 1e-14).map_err(|_| RiccatiError::ImaginaryAxis)?;
    let mut p = 0.5 * (&p + p.transpose());

    // Newton-Kleinman refinement.
    let mut res = care_residual(a, &g, m, &p);
    for _ in 0..8 {
        if res < 1e-14 {
            break;
        }
        let f = a - &g * &p;
        let q = m + &p * &g * &p;
        let Some(next) = lyapunov(&f, &q) else { break };
        let r = care_residual(a, &g, m, &next);
        if !(r < res) {
            break;
        }
        p = next;
        res = r;
    }

    let closed = a - &g * &p;
    let max_re = max_real_eig(&closed);
    if !(max_re < 0.0) {
        return Err(RiccatiError::NotStabilizing(max_re));
    }
    let k = &n_inv * b.transpose() * &p;
    Ok(CareSolution { p, k, residual: res, max_real_eig: max_re })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_closed_form() {
        let one = DMatrix::from_element(1, 1, 1.0);
        let s = solve_care(&DMatrix::zeros(1, 1), &one, &one, &one).unwrap();
        assert_relative_eq!(s.p[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.k[(0, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn double_integrator() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let s = solve_care(&a, &b, &DMatrix::identity(2, 2), &DMatrix::identity(1, 1)).unwrap();
        assert_relative_eq!(s.k[(0, 0)], 1.0, epsilon = 1e-10);
        assert_relative_eq!(s.k[(0, 1)], 3f64.sqrt(), epsilon = 1e-10);
        assert!(s.residual < 1e-12);
    }

    #[test]
    fn unstable_uncontrollable_mode_rejected() {
        let a = DMatrix::from_element(1, 1, 1.0);
        let b = DMatrix::zeros(1, 1);
        let one = DMatrix::from_element(1, 1, 1.0);
        assert!(solve_care(&a, &b, &one, &one).is_err());
    }

    #[test]
    fn marginal_uncontrollable_mode_rejected() {
        let z = DMatrix::zeros(1, 1);
        let one = DMatrix::from_element(1, 1, 1.0);
        assert!(solve_care(&z, &z, &one, &one).is_err());
    }

    #[test]
    fn non_pd_weight_rejected() {
        let one = DMatrix::from_element(1, 1, 1.0);
        assert_eq!(solve_care(&one, &one, &one, &DMatrix::zeros(1, 1)).unwrap_err(), RiccatiError::WeightNotPd);
    }
}
