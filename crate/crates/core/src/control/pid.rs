//! Per-axis PID for position and attitude.

use serde::{Deserialize, Serialize};

use crate::model::{Mat3, RotationMatrix, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    pub kp: [f64; 3],
    pub ki: [f64; 3],
    pub kd: [f64; 3],
    /// Symmetric clamp on each integral component.
    pub integral_limit: [f64; 3],
}

impl PidGains {
    pub fn validate(&self) -> Result<(), String> {
        let all = self.kp.iter().chain(&self.ki).chain(&self.kd).chain(&self.integral_limit);
        if all.clone().any(|v| !v.is_finite() || *v < 0.0) {
            return Err("gains and integral limits must be finite and non-negative".into());
        }
        Ok(())
    }

    /// Default translational gains, in acceleration units (m/s^2 per m).
    pub fn position_default() -> Self {
        Self { kp: [4.0, 4.0, 6.0], ki: [1.0, 1.0, 2.5], kd: [3.5, 3.5, 4.5], integral_limit: [1.5, 1.5, 8.0] }
    }

    /// Default attitude gains for the fully actuated body (rad/s^2 per rad).
    pub fn attitude_default() -> Self {
        Self { kp: [36.0, 36.0, 25.0], ki: [4.0, 4.0, 3.0], kd: [12.0, 12.0, 10.0], integral_limit: [0.5, 0.5, 0.5] }
    }

    fn pid(&self, e: &Vec3, integral: &Vec3, de: &Vec3) -> Vec3 {
        Vec3::from_fn(|i, _| self.kp[i] * e[i] + self.ki[i] * integral[i] + self.kd[i] * de[i])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState {
    pub integral: Vec3,
}

impl PidState {
    pub fn extract(&self) -> Vec3 {
        self.integral
    }

    pub fn inject(&mut self, integral: Vec3) {
        self.integral = integral;
    }

    fn accumulate(&mut self, e: &Vec3, dt: f64, gains: &PidGains) {
        for i in 0..3 {
            let lim = gains.integral_limit[i];
            self.integral[i] = (self.integral[i] + e[i] * dt).clamp(-lim, lim);
        }
    }

    /// Back-calculation anti-windup: pull the integral so that the commanded
    /// acceleration moves by `shortfall` (applied minus requested) over time
    /// constant `t_track`.
    pub fn track(&mut self, shortfall: &Vec3, gains: &PidGains, dt: f64, t_track: f64) {
        for i in 0..3 {
            if gains.ki[i] > 0.0 {
                let lim = gains.integral_limit[i];
                self.integral[i] = (self.integral[i] + dt / t_track * shortfall[i] / gains.ki[i]).clamp(-lim, lim);
            }
        }
    }
}

/// Desired body-frame force. `rotation` maps the controlled frame to world;
/// `e_dot` is the velocity error. No gravity feedforward: the z integral
/// carries the weight.
pub fn pid_position(
    e_r: &Vec3,
    e_dot: &Vec3,
    state: &mut PidState,
    gains: &PidGains,
    rotation: &RotationMatrix,
    mass: f64,
    dt: f64,
) -> Vec3 {
    debug_assert!(dt > 0.0);
    state.accumulate(e_r, dt, gains);
    mass * (rotation.inverse() * gains.pid(e_r, &state.integral, e_dot))
}

/// Same law returning the world-frame acceleration request.
pub fn pid_position_accel(e_r: &Vec3, e_dot: &Vec3, state: &mut PidState, gains: &PidGains, dt: f64) -> Vec3 {
    state.accumulate(e_r, dt, gains);
    gains.pid(e_r, &state.integral, e_dot)
}

/// `tau = I (Kp e + Ki int e + Kd de) + w x I w`.
pub fn pid_attitude(
    e_a: &Vec3,
    e_dot: &Vec3,
    state: &mut PidState,
    gains: &PidGains,
    inertia: &Mat3,
    omega: &Vec3,
    dt: f64,
) -> Vec3 {
    debug_assert!(dt > 0.0);
    state.accumulate(e_a, dt, gains);
    inertia * gains.pid(e_a, &state.integral, e_dot) + omega.cross(&(inertia * omega))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn p_only(k: f64) -> PidGains {
        PidGains { kp: [k; 3], ki: [0.0; 3], kd: [0.0; 3], integral_limit: [1.0; 3] }
    }

    #[test]
    fn zero_error_zero_force() {
        let mut s = PidState::default();
        let f = pid_position(&Vec3::zeros(), &Vec3::zeros(), &mut s, &PidGains::position_default(), &RotationMatrix::identity(), 1.1, 0.025);
        assert_eq!(f, Vec3::zeros());
    }

    #[test]
    fn pure_proportional() {
        let mut s = PidState::default();
        let f = pid_position(&Vec3::new(0.1, 0.0, 0.0), &Vec3::zeros(), &mut s, &p_only(2.0), &RotationMatrix::identity(), 1.1, 0.025);
        assert_relative_eq!(f, Vec3::new(0.22, 0.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn body_frame_rotation() {
        let mut s = PidState::default();
        let r = RotationMatrix::from_axis_angle(&Vec3::z_axis(), std::f64::consts::FRAC_PI_2);
        let f = pid_position(&Vec3::new(1.0, 0.0, 0.0), &Vec3::zeros(), &mut s, &p_only(1.0), &r, 1.0, 0.025);
        assert_relative_eq!(f, Vec3::new(0.0, -1.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn integral_is_clamped() {
        let g = PidGains { ki: [1.0; 3], integral_limit: [0.3, 0.3, 0.3], ..p_only(0.0) };
        let mut s = PidState::default();
        for _ in 0..1000 {
            pid_position(&Vec3::new(1.0, -1.0, 0.5), &Vec3::zeros(), &mut s, &g, &RotationMatrix::identity(), 1.0, 0.025);
        }
        assert_relative_eq!(s.integral, Vec3::new(0.3, -0.3, 0.3));
    }

    #[test]
    fn gyroscopic_term() {
        let i = Mat3::from_diagonal(&Vec3::new(0.02, 0.03, 0.04));
        let w = Vec3::new(1.0, 1.0, 0.0);
        let mut s = PidState::default();
        let t = pid_attitude(&Vec3::zeros(), &Vec3::zeros(), &mut s, &p_only(1.0), &i, &w, 0.025);
        let brute = Vec3::new(w.y * 0.04 * w.z - w.z * 0.03 * w.y, w.z * 0.02 * w.x - w.x * 0.04 * w.z, w.x * 0.03 * w.y - w.y * 0.02 * w.x);
        assert_relative_eq!(t, brute, epsilon = 1e-15);
        assert_relative_eq!(t, Vec3::new(0.0, 0.0, 0.01), epsilon = 1e-15);
        let t = pid_attitude(&Vec3::zeros(), &Vec3::zeros(), &mut s, &p_only(1.0), &i, &Vec3::new(0.0, 2.0, 0.0), 0.025);
        assert_eq!(t, Vec3::zeros());
    }

    #[test]
    fn extract_inject_identity() {
        let mut s = PidState::default();
        let v = Vec3::new(0.1, -0.2, 3.9);
        s.inject(v);
        assert_eq!(s.extract(), v);
    }
}
