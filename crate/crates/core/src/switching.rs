//! Thrust blending across a controller switch: the new controller's output
//! is rescaled so the total starts at the pre-switch total and relaxes to
//! the new controller's own total.

use thiserror::Error;

use crate::control::CarriedIntegrals;

/// Control period that advances the blend by one tick (s).
pub const CONTROL_PERIOD: f64 = 0.025;
pub const DEFAULT_RATE: f64 = 0.9;
/// Blending ends once the weight exceeds this.
pub const FINISH_WEIGHT: f64 = 0.995;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SwitchError {
    #[error("thrust sum at switch is {0} N; need a positive finite total")]
    NoThrust(f64),
    #[error("blend rate must be positive, got {0}")]
    BadRate(f64),
}

/// `W(t) = 1 - 1 / (a t + 1)`, with `t` counted in control ticks.
pub fn transition_weight(ticks: f64, a: f64) -> f64 {
    debug_assert!(ticks >= 0.0 && a > 0.0);
    1.0 - 1.0 / (a * ticks + 1.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionState {
    pub s_unit: f64,
    pub a: f64,
    /// Elapsed control ticks since the switch.
    pub ticks: u64,
    pub active: bool,
    last_output: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendInfo {
    pub weight: f64,
    pub s_assem: f64,
    pub scale: f64,
    /// Set when the raw total was zero and the previous output was held.
    pub held: bool,
}

impl TransitionState {
    pub fn elapsed(&self) -> f64 {
        self.ticks as f64 * CONTROL_PERIOD
    }

    pub fn weight(&self) -> f64 {
        transition_weight(self.ticks as f64, self.a)
    }
}

/// Capture `S_unit` from the thrusts just before the switch and pass the
/// integrals through unchanged.
pub fn begin_switch(prev_thrusts: &[f64], integrals: CarriedIntegrals, a: f64) -> Result<(TransitionState, CarriedIntegrals), SwitchError> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(SwitchError::BadRate(a));
    }
    let s: f64 = prev_thrusts.iter().map(|l| l.abs()).sum();
    if !(s > 0.0) || !s.is_finite() {
        return Err(SwitchError::NoThrust(s));
    }
    let ts = TransitionState { s_unit: s, a, ticks: 0, active: true, last_output: prev_thrusts.to_vec() };
    Ok((ts, integrals))
}

/// Scale the new controller's demand; advances one tick per call.
pub fn transition_scale(raw: &[f64], ts: &mut TransitionState) -> (Vec<f64>, BlendInfo) {
    let s_assem: f64 = raw.iter().map(|l| l.abs()).sum();
    if !ts.active {
        return (raw.to_vec(), BlendInfo { weight: 1.0, s_assem, scale: 1.0, held: false });
    }
    let w = ts.weight();
    ts.ticks += 1;
    if ts.weight() > FINISH_WEIGHT {
        ts.active = false;
    }
    if !(s_assem > 0.0) || !s_assem.is_finite() {
        return (ts.last_output.clone(), BlendInfo { weight: w, s_assem, scale: f64::NAN, held: true });
    }
    let s_trans = w * s_assem + (1.0 - w) * ts.s_unit;
    let scale = s_trans / s_assem;
    let out: Vec<f64> = raw.iter().map(|l| l * scale).collect();
    ts.last_output.clone_from(&out);
    (out, BlendInfo { weight: w, s_assem, scale, held: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn weight_values() {
        assert_eq!(transition_weight(0.0, 0.9), 0.0);
        assert_relative_eq!(transition_weight(120.0, 0.9), 0.99083, epsilon = 1e-5);
        assert!(transition_weight(1e12, 0.9) > 1.0 - 1e-11);
        assert!(transition_weight(5.0, 0.9) < transition_weight(6.0, 0.9));
    }

    #[test]
    fn hover_totals_captured() {
        let per_unit = 1.1 * 9.8 / 4.0;
        let (ts, _) = begin_switch(&[per_unit; 8], CarriedIntegrals::default(), 0.9).unwrap();
        assert_relative_eq!(ts.s_unit, 21.56, epsilon = 1e-12);
        assert!(matches!(begin_switch(&[0.0; 4], CarriedIntegrals::default(), 0.9), Err(SwitchError::NoThrust(_))));
    }

    #[test]
    fn integrals_pass_through() {
        let c = CarriedIntegrals { position: crate::model::Vec3::new(0.1, 0.2, 3.9), attitude: crate::model::Vec3::new(-0.01, 0.0, 0.02) };
        let (_, back) = begin_switch(&[1.0; 4], c, 0.9).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn first_tick_matches_captured_total() {
        let (mut ts, _) = begin_switch(&[2.0, 3.0, 2.5, 3.5], CarriedIntegrals::default(), 0.9).unwrap();
        let (out, info) = transition_scale(&[4.0, 4.0, 3.0, 3.0], &mut ts);
        assert_eq!(info.weight, 0.0);
        assert_relative_eq!(out.iter().sum::<f64>(), 11.0, epsilon = 1e-12);
    }

    #[test]
    fn equal_totals_pass_through() {
        let (mut ts, _) = begin_switch(&[1.0, 2.0, 3.0], CarriedIntegrals::default(), 0.9).unwrap();
        for _ in 0..50 {
            let raw = [3.0, 2.0, 1.0];
            let (out, _) = transition_scale(&raw, &mut ts);
            for (a, b) in out.iter().zip(raw) {
                assert_relative_eq!(*a, b, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn converges_after_three_seconds() {
        let (mut ts, _) = begin_switch(&[2.0; 4], CarriedIntegrals::default(), 0.9).unwrap();
        let raw = [3.0; 4];
        let mut last = vec![];
        for _ in 0..=120 {
            last = transition_scale(&raw, &mut ts).0;
        }
        assert!((last[0] - 3.0).abs() / 3.0 < 0.01);
    }

    #[test]
    fn zero_demand_holds_previous() {
        let (mut ts, _) = begin_switch(&[2.0; 4], CarriedIntegrals::default(), 0.9).unwrap();
        let (a, _) = transition_scale(&[1.0; 4], &mut ts);
        let (b, info) = transition_scale(&[0.0; 4], &mut ts);
        assert!(info.held);
        assert_eq!(a, b);
    }

    #[test]
    fn deactivates_after_finish_weight() {
        let (mut ts, _) = begin_switch(&[2.0; 4], CarriedIntegrals::default(), 0.9).unwrap();
        let mut n = 0;
        while ts.active {
            transition_scale(&[1.0; 4], &mut ts);
            n += 1;
        }
        assert!(transition_weight(n as f64, 0.9) > FINISH_WEIGHT);
        assert!(transition_weight((n - 1) as f64, 0.9) <= FINISH_WEIGHT);
    }
}
