//! Flight dynamics, thrust allocation, control and docking logic for two
//! tilted-rotor quadrotor units that join in flight into one fully actuated
//! body.

pub mod allocation;
pub mod control;
pub mod config_opt;
pub mod feasibility;
pub mod io;
pub mod model;
pub mod motion;
pub mod sim;
pub mod switching;

pub use allocation::{AllocationError, QuadAllocation, TiltedFrame};
pub use feasibility::{FeasibilityReport, WrenchKind};
pub use model::{AirframeModel, AllocationMatrices, BodyState, Frame, Pose, RotationMatrix, RotorGeometry, Vec3, WrenchVector};
pub use sim::{run_scenario, ScenarioKind, ScenarioSpec, Summary};
