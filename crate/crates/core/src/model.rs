//! Rigid-body and rotor geometry types, allocation matrices and assembly of
//! two airframes into one.

use nalgebra::{DMatrix, Matrix3, Rotation3, Vector3};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type RotationMatrix = Rotation3<f64>;

/// Standard gravity used throughout (m/s^2).
pub const GRAVITY: f64 = 9.8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("mass must be positive, got {0}")]
    NonPositiveMass(f64),
    #[error("inertia must be symmetric positive-definite")]
    BadInertia,
    #[error("airframe needs at least one rotor")]
    NoRotors,
    #[error("rotor {index}: {reason}")]
    BadRotor { index: usize, reason: String },
    #[error("rotors {0} and {1} overlap (closer than 1 mm)")]
    OverlappingRotors(usize, usize),
    #[error("thrust vector has {got} entries, airframe has {expected} rotors")]
    LengthMismatch { expected: usize, got: usize },
    #[error("wrench frames differ: {0:?} vs {1:?}")]
    FrameMismatch(Frame, Frame),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub rotation: RotationMatrix,
}

impl Pose {
    pub fn identity() -> Self {
        Self { position: Vec3::zeros(), rotation: RotationMatrix::identity() }
    }

    pub fn new(position: Vec3, rotation: RotationMatrix) -> Self {
        Self { position, rotation }
    }

    pub fn inverse(&self) -> Self {
        let r = self.rotation.inverse();
        Self { position: -(r * self.position), rotation: r }
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            position: self.position + self.rotation * other.position,
            rotation: self.rotation * other.rotation,
        }
    }
}

/// Thrust direction for tilt `alpha` from the body z axis and azimuth `beta`.
pub fn rotor_direction_from_angles(alpha: f64, beta: f64) -> Vec3 {
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    Vec3::new(sa * cb, sa * sb, ca)
}

/// Inverse of [`rotor_direction_from_angles`]; beta is 0 for a vertical rotor.
pub fn angles_from_direction(u: &Vec3) -> (f64, f64) {
    let u = u.normalize();
    let alpha = u.z.clamp(-1.0, 1.0).acos();
    let beta = if u.x.hypot(u.y) < 1e-15 { 0.0 } else { u.y.atan2(u.x) };
    (alpha, beta)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotorGeometry {
    pub position: Vec3,
    pub direction: Vec3,
    pub alpha: f64,
    pub beta: f64,
    /// Counter-torque coefficient; its sign encodes the spin direction.
    pub sigma: f64,
    pub max_thrust: f64,
}

impl RotorGeometry {
    pub fn from_angles(position: Vec3, alpha: f64, beta: f64, sigma: f64, max_thrust: f64) -> Self {
        Self {
            position,
            direction: rotor_direction_from_angles(alpha, beta),
            alpha,
            beta,
            sigma,
            max_thrust,
        }
    }

    pub fn from_direction(position: Vec3, direction: Vec3, sigma: f64, max_thrust: f64) -> Self {
        let direction = direction.normalize();
        let (alpha, beta) = angles_from_direction(&direction);
        Self { position, direction, alpha, beta, sigma, max_thrust }
    }

    /// Moment arm `p x u`.
    pub fn moment_arm(&self) -> Vec3 {
        self.position.cross(&self.direction)
    }

    fn check(&self, index: usize) -> Result<(), ModelError> {
        let bad = |reason: &str| ModelError::BadRotor { index, reason: reason.to_string() };
        if !(self.max_thrust > 0.0) || !self.max_thrust.is_finite() {
            return Err(bad("max thrust must be positive"));
        }
        if ((self.direction.norm() - 1.0).abs()) > 1e-12 {
            return Err(bad("direction is not a unit vector"));
        }
        if !self.position.iter().all(|v| v.is_finite()) || !self.sigma.is_finite() {
            return Err(bad("non-finite geometry"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AirframeModel {
    pub mass: f64,
    pub inertia: Mat3,
    pub rotors: Vec<RotorGeometry>,
    pub gravity: f64,
}

impl AirframeModel {
    pub fn new(mass: f64, inertia: Mat3, rotors: Vec<RotorGeometry>, gravity: f64) -> Result<Self, ModelError> {
        let m = Self { mass, inertia, rotors, gravity };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.mass > 0.0) || !self.mass.is_finite() {
            return Err(ModelError::NonPositiveMass(self.mass));
        }
        if !is_spd(&self.inertia) {
            return Err(ModelError::BadInertia);
        }
        if self.rotors.is_empty() {
            return Err(ModelError::NoRotors);
        }
        for (i, r) in self.rotors.iter().enumerate() {
            r.check(i)?;
        }
        Ok(())
    }

    pub fn rotor_count(&self) -> usize {
        self.rotors.len()
    }

    /// Weight vector `m g` pointing up, i.e. the thrust needed to hover.
    pub fn weight(&self) -> f64 {
        self.mass * self.gravity
    }

    pub fn max_thrusts(&self) -> Vec<f64> {
        self.rotors.iter().map(|r| r.max_thrust).collect()
    }
}

pub(crate) fn is_spd(m: &Mat3) -> bool {
    if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return false;
    }
    m.iter().all(|v| v.is_finite()) && m.cholesky().is_some()
}

/// Inertia of a solid box with the given edge lengths.
pub fn cuboid_inertia(mass: f64, size: [f64; 3]) -> Mat3 {
    let [a, b, c] = size;
    Mat3::from_diagonal(&Vec3::new(
        mass / 12.0 * (b * b + c * c),
        mass / 12.0 * (a * a + c * c),
        mass / 12.0 * (a * a + b * b),
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationMatrices {
    pub q_tran: DMatrix<f64>,
    pub q_rot: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

impl AllocationMatrices {
    pub fn rotor_count(&self) -> usize {
        self.q.ncols()
    }
}

pub fn build_allocation(model: &AirframeModel) -> AllocationMatrices {
    build_allocation_with(model, false)
}

/// Allocation matrices; `counter_torque` adds the `sigma_i u_i` drag-moment term.
pub fn build_allocation_with(model: &AirframeModel, counter_torque: bool) -> AllocationMatrices {
    let n = model.rotor_count();
    let mut q_tran = DMatrix::zeros(3, n);
    let mut q_rot = DMatrix::zeros(3, n);
    for (i, r) in model.rotors.iter().enumerate() {
        let mut v = r.moment_arm();
        if counter_torque {
            v += r.sigma * r.direction;
        }
        q_tran.fixed_view_mut::<3, 1>(0, i).copy_from(&r.direction);
        q_rot.fixed_view_mut::<3, 1>(0, i).copy_from(&v);
    }
    let mut q = DMatrix::zeros(6, n);
    q.view_mut((0, 0), (3, n)).copy_from(&q_tran);
    q.view_mut((3, 0), (3, n)).copy_from(&q_rot);
    AllocationMatrices { q_tran, q_rot, q }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Frame {
    CoG,
    C,
    World,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WrenchVector {
    pub force: Vec3,
    pub torque: Vec3,
    pub frame: Frame,
}

impl WrenchVector {
    pub fn new(force: Vec3, torque: Vec3, frame: Frame) -> Self {
        Self { force, torque, frame }
    }

    pub fn zero(frame: Frame) -> Self {
        Self::new(Vec3::zeros(), Vec3::zeros(), frame)
    }

    pub fn try_add(&self, other: &WrenchVector) -> Result<WrenchVector, ModelError> {
        if self.frame != other.frame {
            return Err(ModelError::FrameMismatch(self.frame, other.frame));
        }
        Ok(WrenchVector::new(self.force + other.force, self.torque + other.torque, self.frame))
    }

    pub fn to_dvector(&self) -> nalgebra::DVector<f64> {
        nalgebra::DVector::from_iterator(6, self.force.iter().chain(self.torque.iter()).copied())
    }
}

pub fn wrench_from_thrusts(alloc: &AllocationMatrices, thrusts: &[f64]) -> Result<WrenchVector, ModelError> {
    let n = alloc.rotor_count();
    if thrusts.len() != n {
        return Err(ModelError::LengthMismatch { expected: n, got: thrusts.len() });
    }
    let mut f = Vec3::zeros();
    let mut t = Vec3::zeros();
    for (i, &l) in thrusts.iter().enumerate() {
        f += alloc.q_tran.fixed_view::<3, 1>(0, i) * l;
        t += alloc.q_rot.fixed_view::<3, 1>(0, i) * l;
    }
    Ok(WrenchVector::new(f, t, Frame::CoG))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BodyState {
    pub position: Vec3,
    /// World from body rotation.
    pub rotation: RotationMatrix,
    pub velocity: Vec3,
    /// Body-frame angular velocity.
    pub angular_velocity: Vec3,
}

impl BodyState {
    pub fn at_rest(position: Vec3, rotation: RotationMatrix) -> Self {
        Self { position, rotation, velocity: Vec3::zeros(), angular_velocity: Vec3::zeros() }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.position, self.rotation)
    }
}

/// Rigidly joins `unit_b`, placed at `relative` in unit A's body frame, onto
/// `unit_a`. The combined frame keeps A's axes with origin at the joint CoG.
pub fn combined_model(unit_a: &AirframeModel, unit_b: &AirframeModel, relative: &Pose) -> Result<AirframeModel, ModelError> {
    unit_a.validate()?;
    unit_b.validate()?;
    let (model, _) = combine_inner(unit_a, unit_b, relative)?;
    Ok(model)
}

/// Same as [`combined_model`] but also returns the offset of the combined CoG
/// in unit A's frame.
pub fn combined_model_with_offset(
    unit_a: &AirframeModel,
    unit_b: &AirframeModel,
    relative: &Pose,
) -> Result<(AirframeModel, Vec3), ModelError> {
    unit_a.validate()?;
    unit_b.validate()?;
    combine_inner(unit_a, unit_b, relative)
}

fn combine_inner(a: &AirframeModel, b: &AirframeModel, rel: &Pose) -> Result<(AirframeModel, Vec3), ModelError> {
    let mass = a.mass + b.mass;
    let cog = rel.position * (b.mass / mass);
    let da = -cog;
    let db = rel.position - cog;
    let rb = rel.rotation.matrix();
    let inertia = a.inertia + parallel_axis(a.mass, &da) + rb * b.inertia * rb.transpose() + parallel_axis(b.mass, &db);
    let inertia = 0.5 * (inertia + inertia.transpose());

    let mut rotors = Vec::with_capacity(a.rotor_count() + b.rotor_count());
    for r in &a.rotors {
        rotors.push(RotorGeometry { position: r.position + da, ..*r });
    }
    for r in &b.rotors {
        let dir = rel.rotation * r.direction;
        let mut g = RotorGeometry::from_direction(rel.rotation * r.position + db, dir, r.sigma, r.max_thrust);
        // keep the exact rotated direction rather than the renormalized one
        g.direction = dir;
        rotors.push(g);
    }
    for i in 0..rotors.len() {
        for j in (i + 1)..rotors.len() {
            if (rotors[i].position - rotors[j].position).norm() < 1e-3 {
                return Err(ModelError::OverlappingRotors(i, j));
            }
        }
    }
    let model = AirframeModel { mass, inertia, rotors, gravity: a.gravity };
    model.validate()?;
    Ok((model, cog))
}

/// Point-mass contribution `m (|d|^2 I - d d^T)`.
pub fn parallel_axis(mass: f64, d: &Vec3) -> Mat3 {
    mass * (Mat3::identity() * d.norm_squared() - d * d.transpose())
}

pub mod presets {
    //! Reference airframe parameters for the 1.1 kg tilted-rotor unit.
    use super::*;

    pub const UNIT_MASS: f64 = 1.1;
    pub const MAX_THRUST: f64 = 7.0;
    pub const ARM: f64 = 0.12;
    pub const SIGMA: f64 = -0.011;
    pub const DESIRED_ACCEL: f64 = 1.0;
    pub const BODY_SIZE: [f64; 3] = [0.24, 0.24, 0.10];
    /// Docked CoG separation: two half-widths plus two mechanism lengths.
    pub const DOCKED_SEPARATION: f64 = 0.48;
    pub const MECHANISM_MASS: f64 = 0.16;

    /// Published optimum tilt angles `(alpha, beta)` of rotors 1..4.
    pub const REFERENCE_ANGLES: [(f64, f64); 4] = [(0.45, 0.73), (0.52, -2.1), (0.52, 2.1), (0.45, -0.73)];

    /// Rotor corners, counter-clockwise from +x+y.
    pub fn rotor_positions() -> [Vec3; 4] {
        [
            Vec3::new(ARM, ARM, 0.0),
            Vec3::new(-ARM, ARM, 0.0),
            Vec3::new(-ARM, -ARM, 0.0),
            Vec3::new(ARM, -ARM, 0.0),
        ]
    }

    /// Alternating spin directions.
    pub fn spin_signs() -> [f64; 4] {
        [1.0, -1.0, 1.0, -1.0]
    }

    pub fn unit_from_angles(angles: &[(f64, f64); 4]) -> AirframeModel {
        let pos = rotor_positions();
        let spin = spin_signs();
        let rotors = (0..4)
            .map(|i| RotorGeometry::from_angles(pos[i], angles[i].0, angles[i].1, SIGMA * spin[i], MAX_THRUST))
            .collect();
        AirframeModel {
            mass: UNIT_MASS,
            inertia: cuboid_inertia(UNIT_MASS, BODY_SIZE),
            rotors,
            gravity: GRAVITY,
        }
    }

    pub fn reference_unit() -> AirframeModel {
        unit_from_angles(&REFERENCE_ANGLES)
    }

    /// Optimizer output (seed 0, default problem) as `(alpha, beta)` pairs.
    /// Satisfies the uniform-hover torque balance to machine precision.
    pub const BALANCED_ANGLES: [(f64, f64); 4] = [
        (0.5361213884352182, -2.5284912064292775),
        (0.5361213860789972, 1.0765212405597135),
        (0.5361213884352181, -1.076521200364413),
        (0.5361213860789971, 2.5284912226857483),
    ];

    pub fn balanced_unit() -> AirframeModel {
        unit_from_angles(&BALANCED_ANGLES)
    }

    pub fn flat_quad() -> AirframeModel {
        unit_from_angles(&[(0.0, 0.0); 4])
    }

    /// Pose of unit B in unit A's frame when docked face to face.
    pub fn docked_relative_pose(separation: f64) -> Pose {
        Pose::new(
            Vec3::new(separation, 0.0, 0.0),
            RotationMatrix::from_axis_angle(&Vec3::z_axis(), std::f64::consts::PI),
        )
    }

    pub fn assembled(unit: &AirframeModel, separation: f64) -> AirframeModel {
        combined_model(unit, unit, &docked_relative_pose(separation)).expect("valid unit geometry")
    }
}
