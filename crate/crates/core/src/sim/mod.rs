//! Deterministic flight simulation of two units, separately or joined.

pub mod scenario;
pub mod telemetry;
pub mod world;

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::ControlError;
use crate::model::{AirframeModel, BodyState, RotationMatrix, Vec3};
use crate::switching::SwitchError;

pub use scenario::{run_scenario, Artifacts, ScenarioKind, ScenarioSpec, Summary};
pub use world::{docking_event, step_dynamics, undock, Body, DockGeometry, WorldState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("state of body {body} became non-finite at t = {time:.3} s")]
    Diverged { time: f64, body: usize },
    #[error("docking capture missed: lateral {lateral:.4} m, axial {axial:.4} m")]
    CaptureMiss { lateral: f64, axial: f64 },
    #[error("no unit {0}")]
    UnknownUnit(usize),
    #[error("no active joint {0}")]
    UnknownJoint(usize),
    #[error("units are already joined")]
    AlreadyJoined,
    #[error(transparent)]
    Control(#[from] ControlError),
    #[error(transparent)]
    Switch(#[from] SwitchError),
}

/// Scale factors applied to a nominal model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelErrorInjection {
    pub mass_scale: f64,
    pub inertia_scale: f64,
    /// Per-rotor thrust gain; empty means 1, a single entry applies to all.
    pub thrust_gain: Vec<f64>,
}

impl Default for ModelErrorInjection {
    fn default() -> Self {
        Self { mass_scale: 1.0, inertia_scale: 1.0, thrust_gain: Vec::new() }
    }
}

impl ModelErrorInjection {
    pub fn thrust(gain: f64) -> Self {
        Self { thrust_gain: vec![gain], ..Self::default() }
    }

    pub fn mass(scale: f64) -> Self {
        Self { mass_scale: scale, ..Self::default() }
    }

    pub fn validate(&self, rotors: usize) -> Result<(), SimError> {
        let ok = |v: f64| (0.5..=1.5).contains(&v);
        if !ok(self.mass_scale) || !ok(self.inertia_scale) || !self.thrust_gain.iter().all(|g| ok(*g)) {
            return Err(SimError::Config("model-error factors must lie in [0.5, 1.5]".into()));
        }
        if self.thrust_gain.len() > 1 && self.thrust_gain.len() != rotors {
            return Err(SimError::Config(format!("thrust_gain has {} entries for {rotors} rotors", self.thrust_gain.len())));
        }
        Ok(())
    }

    pub fn apply(&self, model: &AirframeModel) -> AirframeModel {
        let mut m = model.clone();
        m.mass *= self.mass_scale;
        m.inertia *= self.inertia_scale;
        m
    }

    pub fn gains(&self, rotors: usize) -> Vec<f64> {
        match self.thrust_gain.len() {
            0 => vec![1.0; rotors],
            1 => vec![self.thrust_gain[0]; rotors],
            _ => self.thrust_gain.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorModel {
    pub position_sigma: f64,
    pub attitude_sigma: f64,
    pub velocity_sigma: f64,
    pub rate_sigma: f64,
    /// Delay in control ticks.
    pub latency: usize,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self { position_sigma: 0.002, attitude_sigma: 0.003, velocity_sigma: 0.005, rate_sigma: 0.01, latency: 0 }
    }
}

impl SensorModel {
    pub fn noiseless() -> Self {
        Self { position_sigma: 0.0, attitude_sigma: 0.0, velocity_sigma: 0.0, rate_sigma: 0.0, latency: 0 }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let s = [self.position_sigma, self.attitude_sigma, self.velocity_sigma, self.rate_sigma];
        if s.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(SimError::Config("sensor sigmas must be finite and non-negative".into()));
        }
        Ok(())
    }
}

fn gauss3(rng: &mut ChaCha8Rng, sigma: f64) -> Vec3 {
    if sigma == 0.0 {
        return Vec3::zeros();
    }
    Vec3::from_fn(|_, _| sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
}

/// Noisy, delayed state measurement for one unit.
#[derive(Debug, Clone)]
pub struct Sensor {
    pub model: SensorModel,
    rng: ChaCha8Rng,
    buffer: VecDeque<BodyState>,
}

impl Sensor {
    pub fn new(model: SensorModel, seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { model, rng, buffer: VecDeque::new() }
    }

    pub fn measure(&mut self, truth: &BodyState) -> BodyState {
        let m = self.model;
        let noisy = BodyState {
            position: truth.position + gauss3(&mut self.rng, m.position_sigma),
            rotation: truth.rotation * RotationMatrix::new(gauss3(&mut self.rng, m.attitude_sigma)),
            velocity: truth.velocity + gauss3(&mut self.rng, m.velocity_sigma),
            angular_velocity: truth.angular_velocity + gauss3(&mut self.rng, m.rate_sigma),
        };
        self.buffer.push_back(noisy);
        while self.buffer.len() > m.latency + 1 {
            self.buffer.pop_front();
        }
        self.buffer[0]
    }
}

/// Rotor-wash disturbance near contact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DisturbanceConfig {
    pub enabled: bool,
    /// Peak force magnitude scale at contact (N).
    pub max_force: f64,
    /// Mechanism gap below which the disturbance ramps in (m).
    pub range: f64,
    /// Correlation time of the first-order Gauss-Markov process (s).
    pub correlation_time: f64,
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        Self { enabled: true, max_force: 0.15, range: 0.3, correlation_time: 0.1 }
    }
}

impl DisturbanceConfig {
    /// Force scale for a given mechanism gap.
    pub fn scale(&self, gap: f64) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        self.max_force * (1.0 - gap / self.range).clamp(0.0, 1.0)
    }
}

/// Zero-mean, unit-variance correlated noise per axis.
#[derive(Debug, Clone)]
pub struct GaussMarkov {
    state: Vec3,
    rng: ChaCha8Rng,
}

impl GaussMarkov {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let state = gauss3(&mut rng, 1.0);
        Self { state, rng }
    }

    pub fn step(&mut self, dt: f64, tau: f64) -> Vec3 {
        let rho = (-dt / tau).exp();
        self.state = self.state * rho + gauss3(&mut self.rng, (1.0 - rho * rho).sqrt());
        self.state
    }
}
