//! Controllers for the two flight states: a four-rotor unit (position PID
//! driving a tilted-frame attitude LQI) and the joined body (position and
//! attitude PID through the pseudoinverse allocator).

pub mod lqi;
pub mod pid;
pub mod riccati;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocation::{static_thrust_frame, AllocationError, FullAllocator, QuadAllocation, TiltedFrame};
use crate::model::{build_allocation, AirframeModel, BodyState, RotationMatrix, Vec3};
pub use lqi::{design_lqi, lqi_attitude_output, LqiDesign, LqiWeights};
pub use pid::{pid_attitude, pid_position, PidGains, PidState};
pub use riccati::RiccatiError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("weight error: {0}")]
    Weight(String),
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
    #[error(transparent)]
    Allocation(#[from] AllocationError),
    #[error("desired force {force:.3} N is below 10% of the weight; attitude target undefined")]
    ThrustTooLow { force: f64 },
    #[error("controller produced a non-finite command")]
    NonFinite,
    #[error("invalid gains: {0}")]
    Gains(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlGains {
    pub position: PidGains,
    /// Attitude PID of the joined body.
    pub attitude: PidGains,
    /// Integral clamp of the unit LQI attitude integrators (rad s).
    pub lqi_integral_limit: f64,
    pub lqi: LqiWeights,
    /// Time constant of the back-calculation that keeps the joined body's
    /// position integral consistent with a scaled output (s).
    pub tracking_time: f64,
}

impl Default for ControlGains {
    fn default() -> Self {
        Self {
            position: PidGains::position_default(),
            attitude: PidGains::attitude_default(),
            lqi_integral_limit: 0.5,
            lqi: LqiWeights::default(),
            tracking_time: 0.05,
        }
    }
}

impl ControlGains {
    pub fn validate(&self) -> Result<(), ControlError> {
        self.position.validate().map_err(ControlError::Gains)?;
        self.attitude.validate().map_err(ControlError::Gains)?;
        if !(self.lqi_integral_limit >= 0.0) || !(self.tracking_time > 0.0) {
            return Err(ControlError::Gains("lqi_integral_limit >= 0 and tracking_time > 0 required".into()));
        }
        Ok(())
    }
}

/// Reference for the tracked frame ({C} of a unit, {CoG} of the joined body).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Target {
    pub position: Vec3,
    pub velocity: Vec3,
    pub yaw: f64,
}

impl Target {
    pub fn hold(position: Vec3, yaw: f64) -> Self {
        Self { position, velocity: Vec3::zeros(), yaw }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    /// Per-rotor demand, unclamped (N).
    pub thrusts: Vec<f64>,
    /// Requested body force and torque.
    pub force: Vec3,
    pub torque: Vec3,
    pub position_error: Vec3,
    pub attitude_error: Vec3,
}

impl ControlOutput {
    fn check(self) -> Result<Self, ControlError> {
        if self.thrusts.iter().chain(self.force.iter()).chain(self.torque.iter()).all(|v| v.is_finite()) {
            Ok(self)
        } else {
            Err(ControlError::NonFinite)
        }
    }
}

/// Integrator state handed across a controller switch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CarriedIntegrals {
    pub position: Vec3,
    pub attitude: Vec3,
}

pub fn wrap_angle(a: f64) -> f64 {
    let t = std::f64::consts::TAU;
    let r = a.rem_euclid(t);
    if r > std::f64::consts::PI {
        r - t
    } else {
        r
    }
}

/// Roll/pitch targets of {C} and collective thrust for a desired world force.
/// Angles are taken in the heading frame of `r_wc` (world from {C}).
pub fn underactuated_position_pipeline(
    f_des: &Vec3,
    r_wc: &RotationMatrix,
    frame: &TiltedFrame,
    mass: f64,
    gravity: f64,
) -> Result<(f64, f64, Vec<f64>), ControlError> {
    if !(f_des.norm() > 0.1 * mass * gravity) {
        return Err(ControlError::ThrustTooLow { force: f_des.norm() });
    }
    let (_, _, yaw) = r_wc.euler_angles();
    let f = RotationMatrix::from_axis_angle(&Vec3::z_axis(), -yaw) * f_des;
    let theta = (-f.y).atan2(f.x.hypot(f.z));
    let phi = f.x.atan2(f.z);
    let f_z = (r_wc * Vec3::z()).dot(f_des);
    let scale = f_z / (mass * gravity);
    Ok((theta, phi, frame.lambda_s.iter().map(|l| l * scale).collect()))
}

#[derive(Debug, Clone)]
pub struct UnitController {
    pub model: AirframeModel,
    pub frame: TiltedFrame,
    pub quad: QuadAllocation,
    pub lqi: LqiDesign,
    pub gains: ControlGains,
    pub position: PidState,
    pub attitude_integral: Vec3,
    pub dt: f64,
}

impl UnitController {
    pub fn new(model: &AirframeModel, gains: &ControlGains, dt: f64) -> Result<Self, ControlError> {
        gains.validate()?;
        let frame = static_thrust_frame(model)?;
        let quad = QuadAllocation::new(&frame)?;
        let lqi = design_lqi(model, &frame, &gains.lqi)?;
        Ok(Self {
            model: model.clone(),
            frame,
            quad,
            lqi,
            gains: *gains,
            position: PidState::default(),
            attitude_integral: Vec3::zeros(),
            dt,
        })
    }

    /// Integral value that alone holds the weight.
    pub fn preload_hover(&mut self) {
        let ki = self.gains.position.ki[2];
        if ki > 0.0 {
            self.position.integral.z = self.model.gravity / ki;
        }
    }

    pub fn extract(&self) -> CarriedIntegrals {
        CarriedIntegrals { position: self.position.extract(), attitude: self.attitude_integral }
    }

    pub fn inject(&mut self, c: &CarriedIntegrals) {
        self.position.inject(c.position);
        self.attitude_integral = c.attitude;
    }

    /// World-from-{C} rotation of a unit whose {CoG} has world rotation `r_wb`.
    pub fn c_rotation(&self, r_wb: &RotationMatrix) -> RotationMatrix {
        r_wb * self.frame.r_c.inverse()
    }

    /// `est` is the unit's {CoG} state; the target refers to {C} (same origin).
    pub fn step(&mut self, est: &BodyState, target: &Target) -> Result<ControlOutput, ControlError> {
        let e_r = target.position - est.position;
        let e_v = target.velocity - est.velocity;
        let acc = pid::pid_position_accel(&e_r, &e_v, &mut self.position, &self.gains.position, self.dt);
        let f_world = self.model.mass * acc;
        let r_wc = self.c_rotation(&est.rotation);
        let (theta, phi, lambda_z) = underactuated_position_pipeline(&f_world, &r_wc, &self.frame, self.model.mass, self.model.gravity)?;
        let (roll, pitch, yaw) = r_wc.euler_angles();
        let e = Vec3::new(theta - roll, phi - pitch, wrap_angle(target.yaw - yaw));
        let omega_c = self.frame.r_c * est.angular_velocity;
        let lim = self.gains.lqi_integral_limit;
        self.attitude_integral = (self.attitude_integral + e * self.dt).map(|v| v.clamp(-lim, lim));
        let i = self.attitude_integral;
        let x = [e.x, -omega_c.x, e.y, -omega_c.y, e.z, -omega_c.z, i.x, i.y, i.z];
        let rot = lqi_attitude_output(&x, &self.lqi, &omega_c);
        let thrusts: Vec<f64> = lambda_z.iter().zip(rot).map(|(z, r)| z + r).collect();
        let w = self.quad.matrix * nalgebra::Vector4::from_column_slice(&thrusts);
        ControlOutput {
            thrusts,
            force: self.frame.r_c.inverse() * Vec3::new(0.0, 0.0, w[0]),
            torque: self.frame.r_c.inverse() * Vec3::new(w[1], w[2], w[3]),
            position_error: e_r,
            attitude_error: e,
        }
        .check()
    }
}

#[derive(Debug, Clone)]
pub struct AssembledController {
    pub model: AirframeModel,
    pub allocator: FullAllocator,
    /// Believed per-rotor thrust gain folded into the allocator.
    pub thrust_gain: Vec<f64>,
    pub gains: ControlGains,
    pub position: PidState,
    pub attitude: PidState,
    pub dt: f64,
    last_accel: Vec3,
}

impl AssembledController {
    pub fn new(model: &AirframeModel, gains: &ControlGains, dt: f64) -> Result<Self, ControlError> {
        Self::with_thrust_gain(model, &vec![1.0; model.rotor_count()], gains, dt)
    }

    pub fn with_thrust_gain(model: &AirframeModel, thrust_gain: &[f64], gains: &ControlGains, dt: f64) -> Result<Self, ControlError> {
        gains.validate()?;
        let mut alloc = build_allocation(model);
        let g = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(thrust_gain));
        alloc.q = &alloc.q * &g;
        alloc.q_tran = &alloc.q_tran * &g;
        alloc.q_rot = &alloc.q_rot * &g;
        Ok(Self {
            model: model.clone(),
            allocator: FullAllocator::new(&alloc)?,
            thrust_gain: thrust_gain.to_vec(),
            gains: *gains,
            position: PidState::default(),
            attitude: PidState::default(),
            dt,
            last_accel: Vec3::zeros(),
        })
    }

    pub fn preload_hover(&mut self) {
        let ki = self.gains.position.ki[2];
        if ki > 0.0 {
            self.position.integral.z = self.model.gravity / ki;
        }
    }

    pub fn extract(&self) -> CarriedIntegrals {
        CarriedIntegrals { position: self.position.extract(), attitude: self.attitude.extract() }
    }

    pub fn inject(&mut self, c: &CarriedIntegrals) {
        self.position.inject(c.position);
        self.attitude.inject(c.attitude);
    }

    /// `est` is the combined {CoG} state.
    pub fn step(&mut self, est: &BodyState, target: &Target) -> Result<ControlOutput, ControlError> {
        let e_r = target.position - est.position;
        let e_v = target.velocity - est.velocity;
        let force = pid_position(&e_r, &e_v, &mut self.position, &self.gains.position, &est.rotation, self.model.mass, self.dt);
        self.last_accel = est.rotation * force / self.model.mass;
        let (roll, pitch, yaw) = est.rotation.euler_angles();
        let e_a = Vec3::new(-roll, -pitch, wrap_angle(target.yaw - yaw));
        let w = est.angular_velocity;
        let torque = pid_attitude(&e_a, &(-w), &mut self.attitude, &self.gains.attitude, &self.model.inertia, &w, self.dt);
        let wrench = crate::model::WrenchVector::new(force, torque, crate::model::Frame::CoG);
        ControlOutput { thrusts: self.allocator.allocate(&wrench), force, torque, position_error: e_r, attitude_error: e_a }.check()
    }

    /// Back-calculation after the last output was scaled by `scale` before
    /// reaching the rotors.
    pub fn track_scaled(&mut self, scale: f64) {
        let shortfall = self.last_accel * (scale - 1.0);
        self.position.track(&shortfall, &self.gains.position, self.dt, self.gains.tracking_time);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets;
    use approx::assert_relative_eq;

    #[test]
    fn pipeline_examples() {
        let u = presets::balanced_unit();
        let f = static_thrust_frame(&u).unwrap();
        let mg = u.mass * u.gravity;
        let id = RotationMatrix::identity();
        let (t, p, lz) = underactuated_position_pipeline(&Vec3::new(0.0, 0.0, mg), &id, &f, u.mass, u.gravity).unwrap();
        assert_eq!((t, p), (0.0, 0.0));
        for (a, b) in lz.iter().zip(&f.lambda_s) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
        let (t, _, _) = underactuated_position_pipeline(&Vec3::new(0.0, -1.0, 10.0), &id, &f, u.mass, u.gravity).unwrap();
        assert_relative_eq!(t, 1f64.atan2(10.0), epsilon = 1e-15);
        let (t, p, _) = underactuated_position_pipeline(&Vec3::new(1.0, 0.0, 10.0), &id, &f, u.mass, u.gravity).unwrap();
        assert_eq!(t, 0.0);
        assert_relative_eq!(p, 0.0997, epsilon = 1e-4);
        assert!(matches!(
            underactuated_position_pipeline(&Vec3::new(0.0, 0.0, 0.5), &id, &f, u.mass, u.gravity),
            Err(ControlError::ThrustTooLow { .. })
        ));
    }

    #[test]
    fn wrap() {
        assert_relative_eq!(wrap_angle(-std::f64::consts::PI), std::f64::consts::PI);
        assert_relative_eq!(wrap_angle(3.0 * std::f64::consts::PI), std::f64::consts::PI, epsilon = 1e-12);
        assert_relative_eq!(wrap_angle(0.1 - std::f64::consts::TAU), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn unit_hover_command_is_static_thrust() {
        let u = presets::balanced_unit();
        let mut c = UnitController::new(&u, &ControlGains::default(), 0.025).unwrap();
        c.preload_hover();
        // {C} level: world-from-{CoG} equals R_C.
        let st = BodyState::at_rest(Vec3::new(0.0, 0.0, 1.0), c.frame.r_c);
        let out = c.step(&st, &Target::hold(Vec3::new(0.0, 0.0, 1.0), 0.0)).unwrap();
        for (a, b) in out.thrusts.iter().zip(&c.frame.lambda_s) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
    }

    #[test]
    fn assembled_hover_command() {
        let u = presets::balanced_unit();
        let m = presets::assembled(&u, presets::DOCKED_SEPARATION);
        let mut c = AssembledController::new(&m, &ControlGains::default(), 0.025).unwrap();
        c.preload_hover();
        let st = BodyState::at_rest(Vec3::new(0.0, 0.0, 1.0), RotationMatrix::identity());
        let out = c.step(&st, &Target::hold(Vec3::new(0.0, 0.0, 1.0), 0.0)).unwrap();
        let w = crate::model::wrench_from_thrusts(&build_allocation(&m), &out.thrusts).unwrap();
        assert_relative_eq!(w.force, Vec3::new(0.0, 0.0, m.mass * m.gravity), epsilon = 1e-9);
        assert_relative_eq!(w.torque.norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn believed_gain_scales_output() {
        let u = presets::balanced_unit();
        let m = presets::assembled(&u, presets::DOCKED_SEPARATION);
        let mut a = AssembledController::new(&m, &ControlGains::default(), 0.025).unwrap();
        let mut b = AssembledController::with_thrust_gain(&m, &[0.5; 8], &ControlGains::default(), 0.025).unwrap();
        let st = BodyState::at_rest(Vec3::new(0.1, 0.0, 1.0), RotationMatrix::identity());
        let t = Target::hold(Vec3::new(0.0, 0.0, 1.2), 0.1);
        let oa = a.step(&st, &t).unwrap();
        let ob = b.step(&st, &t).unwrap();
        for (x, y) in oa.thrusts.iter().zip(&ob.thrusts) {
            assert_relative_eq!(2.0 * x, y, epsilon = 1e-9);
        }
    }
}
