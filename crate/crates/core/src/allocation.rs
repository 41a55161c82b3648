//! Thrust allocation: pseudoinverse for fully actuated bodies and the tilted
//! frame {C} for a four-rotor unit.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use thiserror::Error;

use crate::model::{AirframeModel, AllocationMatrices, RotationMatrix, Vec3, WrenchVector};

/// Default uniform-hover tolerance on `|Q_rot 1|` (N m per N of rotor thrust).
pub const HOVER_TOLERANCE: f64 = 1e-3;
pub const MAX_CONDITION: f64 = 1e6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AllocationError {
    #[error("allocation matrix has rank {rank} < 6; unreachable wrench directions: {deficient:?}")]
    RankDeficient { rank: usize, deficient: Vec<[f64; 6]> },
    #[error("uniform thrust leaves residual torque {residual:.3e} N m per N (tolerance {tolerance:.1e})")]
    NoStaticHover { residual: f64, tolerance: f64 },
    #[error("thrust resultant points within 1 degree of -z; tilted frame undefined")]
    SingularFrame,
    #[error("four-rotor allocation is ill-conditioned (condition number {0:.3e})")]
    SingularAllocation(f64),
    #[error("static thrust frame needs exactly 4 rotors, got {0}")]
    NotAQuad(usize),
}

/// Moore-Penrose pseudoinverse with singular-value cutoff `1e-10 sigma_max`.
/// Returns the pseudoinverse and the numerical rank.
pub fn pseudo_inverse(m: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cut = 1e-10 * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > cut).count();
    if smax == 0.0 {
        return (DMatrix::zeros(m.ncols(), m.nrows()), 0);
    }
    let pinv = svd.pseudo_inverse(cut).expect("svd computed with u and v");
    (pinv, rank)
}

/// Precomputed minimum-norm allocator for a rank-6 body.
#[derive(Debug, Clone)]
pub struct FullAllocator {
    pub pinv: DMatrix<f64>,
}

impl FullAllocator {
    pub fn new(alloc: &AllocationMatrices) -> Result<Self, AllocationError> {
        let (pinv, rank) = pseudo_inverse(&alloc.q);
        if rank < 6 {
            return Err(AllocationError::RankDeficient { rank, deficient: deficient_directions(&alloc.q) });
        }
        Ok(Self { pinv })
    }

    pub fn allocate(&self, w: &WrenchVector) -> Vec<f64> {
        (&self.pinv * w.to_dvector()).iter().copied().collect()
    }
}

/// Wrench directions orthogonal to the column space of `q`. Uses `Q Q^T`, whose
/// singular values are the squares of those of `Q`.
fn deficient_directions(q: &DMatrix<f64>) -> Vec<[f64; 6]> {
    let svd = (q * q.transpose()).svd(true, false);
    let u = svd.u.expect("requested u");
    let cut = 1e-20 * svd.singular_values.max();
    svd.singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= cut)
        .map(|(k, _)| {
            let c = u.column(k);
            [c[0], c[1], c[2], c[3], c[4], c[5]]
        })
        .collect()
}

/// Minimum-norm thrusts reproducing `w`. Not clamped.
pub fn allocate_fully_actuated(alloc: &AllocationMatrices, w: &WrenchVector) -> Result<Vec<f64>, AllocationError> {
    Ok(FullAllocator::new(alloc)?.allocate(w))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TiltedFrame {
    /// Uniform static thrust, one entry per rotor.
    pub lambda_s: Vec<f64>,
    /// Rotation taking {CoG} coordinates to {C} coordinates.
    pub r_c: RotationMatrix,
    pub q_tran_c: DMatrix<f64>,
    pub q_rot_c: DMatrix<f64>,
    /// Static thrust resultant in {CoG}.
    pub f_z: Vec3,
    /// `|Q_rot 1|` of the source geometry.
    pub hover_residual: f64,
}

impl TiltedFrame {
    pub fn lambda_s_scalar(&self) -> f64 {
        self.lambda_s[0]
    }
}

pub fn static_thrust_frame(model: &AirframeModel) -> Result<TiltedFrame, AllocationError> {
    static_thrust_frame_with(model, &crate::model::build_allocation(model), HOVER_TOLERANCE)
}

/// Tilted frame from explicit allocation matrices and hover tolerance.
pub fn static_thrust_frame_with(
    model: &AirframeModel,
    alloc: &AllocationMatrices,
    tolerance: f64,
) -> Result<TiltedFrame, AllocationError> {
    let n = alloc.rotor_count();
    if n != 4 {
        return Err(AllocationError::NotAQuad(n));
    }
    let ones = DVector::from_element(n, 1.0);
    let sum_u = &alloc.q_tran * &ones;
    let sum_v = &alloc.q_rot * &ones;
    let residual = sum_v.norm();
    if residual > tolerance {
        return Err(AllocationError::NoStaticHover { residual, tolerance });
    }
    let sum_u = Vec3::new(sum_u[0], sum_u[1], sum_u[2]);
    let norm = sum_u.norm();
    if norm == 0.0 || sum_u.angle(&-Vec3::z()) < 1f64.to_radians() {
        return Err(AllocationError::SingularFrame);
    }
    let lambda = model.weight() / norm;
    let f_z = sum_u * lambda;
    let r_c = RotationMatrix::rotation_between(&f_z, &Vec3::z()).unwrap_or_else(RotationMatrix::identity);
    let rc = DMatrix::from_iterator(3, 3, r_c.matrix().iter().copied());
    Ok(TiltedFrame {
        lambda_s: vec![lambda; n],
        r_c,
        q_tran_c: &rc * &alloc.q_tran,
        q_rot_c: &rc * &alloc.q_rot,
        f_z,
        hover_residual: residual,
    })
}

/// The 4x4 map from thrusts to `[f_z, tau]` in {C}, with its inverse.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadAllocation {
    pub matrix: Matrix4<f64>,
    pub inverse: Matrix4<f64>,
    pub condition: f64,
}

impl QuadAllocation {
    pub fn new(frame: &TiltedFrame) -> Result<Self, AllocationError> {
        let mut m = Matrix4::zeros();
        for j in 0..4 {
            m[(0, j)] = frame.q_tran_c[(2, j)];
            for r in 0..3 {
                m[(r + 1, j)] = frame.q_rot_c[(r, j)];
            }
        }
        let sv = m.singular_values();
        let smin = sv.min();
        let condition = if smin > 0.0 { sv.max() / smin } else { f64::INFINITY };
        if !(condition < MAX_CONDITION) {
            return Err(AllocationError::SingularAllocation(condition));
        }
        let inverse = m.try_inverse().ok_or(AllocationError::SingularAllocation(condition))?;
        Ok(Self { matrix: m, inverse, condition })
    }

    pub fn inverse_residual(&self) -> f64 {
        (self.matrix * self.inverse - Matrix4::identity()).amax()
    }
}

pub fn allocate_under_actuated(quad: &QuadAllocation, f_z: f64, tau: &Vec3) -> [f64; 4] {
    let l = quad.inverse * Vector4::new(f_z, tau.x, tau.y, tau.z);
    [l[0], l[1], l[2], l[3]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_allocation, presets, wrench_from_thrusts, Frame, RotorGeometry};
    use approx::assert_relative_eq;

    fn balanced_unit() -> AirframeModel {
        // Equal tilt, mirror layout that satisfies the uniform-hover torque balance.
        let a: f64 = 0.5;
        let b1: f64 = -2.5;
        let t = 1.0 / 9.8;
        let c = -2.0 * t * a.cos() / a.sin() - b1.cos();
        let b2 = c.acos();
        presets::unit_from_angles(&[(a, b1), (a, b2), (a, -b2), (a, -b1)])
    }

    #[test]
    fn flat_quad_frame() {
        let m = presets::flat_quad();
        let f = static_thrust_frame(&m).unwrap();
        assert_relative_eq!(f.lambda_s_scalar(), 1.1 * 9.8 / 4.0, epsilon = 1e-12);
        assert_relative_eq!(f.r_c.matrix(), RotationMatrix::identity().matrix(), epsilon = 1e-15);
    }

    #[test]
    fn upside_down_is_singular() {
        let mut m = presets::flat_quad();
        for r in &mut m.rotors {
            *r = RotorGeometry::from_direction(r.position, -Vec3::z(), r.sigma, r.max_thrust);
        }
        assert_eq!(static_thrust_frame(&m), Err(AllocationError::SingularFrame));
    }

    #[test]
    fn reference_angles_do_not_hover_uniformly() {
        let m = presets::reference_unit();
        match static_thrust_frame(&m) {
            Err(AllocationError::NoStaticHover { residual, .. }) => assert!(residual > 1e-3),
            other => panic!("{other:?}"),
        }
        let loose = static_thrust_frame_with(&m, &build_allocation(&m), 0.05).unwrap();
        assert!(loose.hover_residual > 0.0);
    }

    #[test]
    fn balanced_unit_frame_properties() {
        let m = balanced_unit();
        let alloc = build_allocation(&m);
        let f = static_thrust_frame(&m).unwrap();
        let l = DVector::from_vec(f.lambda_s.clone());
        assert_relative_eq!((&f.q_tran_c * &l).norm(), m.weight(), epsilon = 1e-9);
        assert!((&f.q_rot_c * &l).norm() < 1e-9);
        // {C} z axis is the thrust direction
        let fz = &f.q_tran_c * &l;
        assert_relative_eq!(fz[2], m.weight(), epsilon = 1e-9);
        let rc = DMatrix::from_iterator(3, 3, f.r_c.matrix().iter().copied());
        assert_relative_eq!(&rc * &alloc.q_tran, f.q_tran_c, epsilon = 1e-12);
        // minimal rotation has no component about the thrust axis
        let axis = f.r_c.scaled_axis();
        assert!(axis.dot(&f.f_z).abs() < 1e-12);

        let quad = QuadAllocation::new(&f).unwrap();
        assert!(quad.inverse_residual() < 1e-9);
        let hover = allocate_under_actuated(&quad, m.weight(), &Vec3::zeros());
        for h in hover {
            assert_relative_eq!(h, f.lambda_s_scalar(), epsilon = 1e-9);
        }
        let yaw = allocate_under_actuated(&quad, 0.0, &Vec3::new(0.0, 0.0, 0.1));
        let back = quad.matrix * Vector4::from_row_slice(&yaw);
        assert_relative_eq!(back, Vector4::new(0.0, 0.0, 0.0, 0.1), epsilon = 1e-12);
    }

    #[test]
    fn coincident_rotors_singular() {
        let mut m = balanced_unit();
        m.rotors[1] = m.rotors[0];
        let alloc = build_allocation(&m);
        let tol = 10.0;
        match static_thrust_frame_with(&m, &alloc, tol) {
            Ok(f) => assert!(matches!(QuadAllocation::new(&f), Err(AllocationError::SingularAllocation(_)))),
            Err(e) => panic!("{e}"),
        }
    }

    #[test]
    fn pinv_of_zero_wrench() {
        let m = presets::assembled(&presets::reference_unit(), 0.48);
        let alloc = build_allocation(&m);
        let l = allocate_fully_actuated(&alloc, &WrenchVector::zero(Frame::CoG)).unwrap();
        assert!(l.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn assembled_hover_is_minimum_norm() {
        let m = presets::assembled(&presets::reference_unit(), 0.48);
        let alloc = build_allocation(&m);
        let w = WrenchVector::new(Vec3::new(0.0, 0.0, 21.56), Vec3::zeros(), Frame::CoG);
        let l = allocate_fully_actuated(&alloc, &w).unwrap();
        let back = wrench_from_thrusts(&alloc, &l).unwrap();
        assert_relative_eq!(back.force, w.force, epsilon = 1e-9);
        assert_relative_eq!(back.torque, w.torque, epsilon = 1e-9);
        // minimum norm: l lies in the row space of Q, l = Q^T y with y from a dense solve
        let q = &alloc.q;
        let y = (q * q.transpose()).lu().solve(&w.to_dvector()).unwrap();
        let dense = q.transpose() * y;
        for (a, b) in l.iter().zip(dense.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn flat_quad_is_rank_deficient() {
        let m = presets::flat_quad();
        let alloc = build_allocation(&m);
        match allocate_fully_actuated(&alloc, &WrenchVector::zero(Frame::CoG)) {
            Err(AllocationError::RankDeficient { rank, deficient }) => {
                assert_eq!(rank, 3);
                assert_eq!(deficient.len(), 3);
                // x force, y force and yaw torque are unreachable
                for d in &deficient {
                    assert!(d[2].abs() < 1e-9 && d[3].abs() < 1e-9 && d[4].abs() < 1e-9);
                }
            }
            other => panic!("{other:?}"),
        }
    }
}
