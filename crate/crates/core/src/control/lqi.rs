//! LQI attitude regulator for a four-rotor unit in its tilted frame {C}.
//!
//! State `x = [e_r, de_r, e_p, de_p, e_y, de_y, int e_r, int e_p, int e_y]`
//! with `e = target - actual` Euler angles of {C}.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::riccati::{solve_care, RiccatiError};
use super::ControlError;
use crate::allocation::{pseudo_inverse, TiltedFrame};
use crate::model::{AirframeModel, Mat3, Vec3};

pub const LQI_STATES: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LqiWeights {
    /// Diagonal of the state weight M.
    pub m: [f64; 9],
    /// Diagonal of the thrust weight W1.
    pub w1: [f64; 4],
    /// Diagonal of the translational-force weight W2.
    pub w2: [f64; 3],
}

impl Default for LqiWeights {
    fn default() -> Self {
        Self { m: [10.0, 1.0, 10.0, 1.0, 10.0, 1.0, 5.0, 5.0, 5.0], w1: [1.0; 4], w2: [1.0; 3] }
    }
}

#[derive(Debug, Clone)]
pub struct LqiSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct LqiDesign {
    pub system: LqiSystem,
    pub m: DMatrix<f64>,
    pub n: DMatrix<f64>,
    /// Applied gain: `lambda_rot = k x + ...` (the negated standard LQR gain).
    pub k: DMatrix<f64>,
    pub riccati_residual: f64,
    pub max_real_eig: f64,
    /// Inertia expressed in {C}.
    pub inertia_c: Mat3,
    /// Pseudoinverse of `Q_rot'` (4x3).
    pub q_rot_pinv: DMatrix<f64>,
}

pub fn inertia_in_c(model: &AirframeModel, frame: &TiltedFrame) -> Mat3 {
    let r = frame.r_c.matrix();
    r * model.inertia * r.transpose()
}

pub fn build_lqi_system(model: &AirframeModel, frame: &TiltedFrame) -> LqiSystem {
    let i_inv = inertia_in_c(model, frame).try_inverse().expect("validated inertia is invertible");
    let i_inv = DMatrix::from_iterator(3, 3, i_inv.iter().copied());
    let gain = &i_inv * &frame.q_rot_c;
    let mut a = DMatrix::zeros(LQI_STATES, LQI_STATES);
    let mut b = DMatrix::zeros(LQI_STATES, 4);
    let mut d = DMatrix::zeros(LQI_STATES, 3);
    for axis in 0..3 {
        a[(2 * axis, 2 * axis + 1)] = 1.0;
        a[(6 + axis, 2 * axis)] = 1.0;
        for j in 0..4 {
            b[(2 * axis + 1, j)] = -gain[(axis, j)];
        }
        for j in 0..3 {
            d[(2 * axis + 1, j)] = i_inv[(axis, j)];
        }
    }
    LqiSystem { a, b, c: DMatrix::identity(LQI_STATES, LQI_STATES), d }
}

/// `N = W1 + Q_tran'^T W2 Q_tran'`.
pub fn lqi_weight_n(w1: &[f64; 4], w2: &[f64; 3], q_tran_c: &DMatrix<f64>) -> Result<DMatrix<f64>, ControlError> {
    if w1.iter().any(|v| !(*v > 0.0)) || w2.iter().any(|v| !(*v >= 0.0)) {
        return Err(ControlError::Weight("W1 must be positive and W2 non-negative".into()));
    }
    let w1 = DMatrix::from_diagonal(&DVector::from_column_slice(w1));
    let w2 = DMatrix::from_diagonal(&DVector::from_column_slice(w2));
    let n = w1 + q_tran_c.transpose() * w2 * q_tran_c;
    let n = 0.5 * (&n + n.transpose());
    if n.clone().cholesky().is_none() {
        return Err(ControlError::Weight("N is not positive-definite".into()));
    }
    Ok(n)
}

/// Standard LQR gain `K = N^-1 B' P` (input `u = -K x`).
pub fn solve_lqi_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, m: &DMatrix<f64>, n: &DMatrix<f64>) -> Result<DMatrix<f64>, RiccatiError> {
    Ok(solve_care(a, b, m, n)?.k)
}

pub fn design_lqi(model: &AirframeModel, frame: &TiltedFrame, weights: &LqiWeights) -> Result<LqiDesign, ControlError> {
    if weights.m.iter().any(|v| !(*v >= 0.0)) {
        return Err(ControlError::Weight("M must be non-negative".into()));
    }
    let system = build_lqi_system(model, frame);
    let m = DMatrix::from_diagonal(&DVector::from_column_slice(&weights.m));
    let n = lqi_weight_n(&weights.w1, &weights.w2, &frame.q_tran_c)?;
    let sol = solve_care(&system.a, &system.b, &m, &n)?;
    let (q_rot_pinv, _) = pseudo_inverse(&frame.q_rot_c);
    Ok(LqiDesign {
        system,
        m,
        n,
        k: -sol.k,
        riccati_residual: sol.residual,
        max_real_eig: sol.max_real_eig,
        inertia_c: inertia_in_c(model, frame),
        q_rot_pinv,
    })
}

/// `lambda_rot = K x + pinv(Q_rot') (w x I w)`, everything in {C}.
pub fn lqi_attitude_output(x: &[f64; 9], design: &LqiDesign, omega_c: &Vec3) -> [f64; 4] {
    let xv = DVector::from_column_slice(x);
    let gyro = omega_c.cross(&(design.inertia_c * omega_c));
    let out = &design.k * xv + &design.q_rot_pinv * DVector::from_column_slice(gyro.as_slice());
    [out[0], out[1], out[2], out[3]]
}

/// `int |Q_tran' lambda_rot| dt` along the linear closed-loop response from
/// `x0`, sampled with the exact discretisation at `dt`.
pub fn translational_force_integral(design: &LqiDesign, q_tran_c: &DMatrix<f64>, x0: &[f64; 9], horizon: f64, dt: f64) -> f64 {
    let closed = &design.system.a + &design.system.b * &design.k;
    let phi = (closed * dt).exp();
    let force = q_tran_c * &design.k;
    let mut x = DVector::from_column_slice(x0);
    let steps = (horizon / dt).round() as usize;
    let mut acc = 0.0;
    let mut prev = (&force * &x).norm();
    for _ in 0..steps {
        x = &phi * x;
        let cur = (&force * &x).norm();
        acc += 0.5 * (prev + cur) * dt;
        prev = cur;
    }
    acc
}

/// Rank of `[B, AB, ..., A^(n-1) B]`.
pub fn controllability_rank(a: &DMatrix<f64>, b: &DMatrix<f64>) -> usize {
    let n = a.nrows();
    let mut blocks = Vec::with_capacity(n);
    let mut cur = b.clone();
    for _ in 0..n {
        blocks.push(cur.clone());
        cur = a * cur;
    }
    let mut c = DMatrix::zeros(n, n * b.ncols());
    for (k, blk) in blocks.iter().enumerate() {
        c.view_mut((0, k * b.ncols()), (n, b.ncols())).copy_from(blk);
    }
    c.rank(1e-9 * c.norm())
}
