//! Assembly/disassembly state machine over the male unit's pose in the
//! female unit's {C} frame.

use serde::{Deserialize, Serialize};

use crate::control::wrap_angle;
use crate::model::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FsmStateId {
    Standby,
    Approach,
    Assembly,
    Transition,
    Hovering,
    Disassembly,
}

impl FsmStateId {
    pub fn name(&self) -> &'static str {
        match self {
            FsmStateId::Standby => "standby",
            FsmStateId::Approach => "approach",
            FsmStateId::Assembly => "assembly",
            FsmStateId::Transition => "transition",
            FsmStateId::Hovering => "hovering",
            FsmStateId::Disassembly => "disassembly",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub e1_y: f64,
    pub e1_z: f64,
    pub e1_psi: f64,
    pub e2_x: f64,
    pub e2_y: f64,
    pub e2_z: f64,
    pub e2_psi: f64,
    /// Standby CoG distance.
    pub d_st: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { e1_y: 0.02, e1_z: 0.02, e1_psi: 0.13, e2_x: 0.005, e2_y: 0.01, e2_z: 0.01, e2_psi: 0.01, d_st: 0.6 }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<(), String> {
        let all = [self.e1_y, self.e1_z, self.e1_psi, self.e2_x, self.e2_y, self.e2_z, self.e2_psi, self.d_st];
        if all.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err("tolerances must be positive".into());
        }
        if self.e2_y > self.e1_y || self.e2_z > self.e1_z || self.e2_psi > self.e1_psi {
            return Err("condition-2 bounds must not exceed condition-1 bounds".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativePose {
    pub r: [f64; 3],
    /// Wrapped to (-pi, pi].
    pub psi: f64,
}

impl RelativePose {
    pub fn new(r: Vec3, psi: f64) -> Self {
        Self { r: [r.x, r.y, r.z], psi: wrap_angle(psi) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    One,
    Two,
}

pub const STANDBY_YAW: f64 = -std::f64::consts::PI;

/// Male target in {F}: `(d_st, 0, 0)` at yaw `-pi`.
pub fn standby_targets(tol: &Tolerances) -> (Vec3, f64) {
    (Vec3::new(tol.d_st, 0.0, 0.0), STANDBY_YAW)
}

pub fn condition_check(rel: &RelativePose, tol: &Tolerances, which: Condition, x_dock: f64) -> bool {
    let yaw_err = wrap_angle(rel.psi - STANDBY_YAW).abs();
    let [x, y, z] = rel.r;
    match which {
        Condition::One => y.abs() <= tol.e1_y && z.abs() <= tol.e1_z && yaw_err <= tol.e1_psi,
        Condition::Two => (x - x_dock).abs() <= tol.e2_x && y.abs() <= tol.e2_y && z.abs() <= tol.e2_z && yaw_err <= tol.e2_psi,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FsmConfig {
    pub tolerances: Tolerances,
    /// Docked CoG separation, the x reference of condition 2.
    pub x_dock: f64,
    pub approach_speed: f64,
    pub tick: f64,
    /// Magnet and peg actuation time before the rigid join is commanded.
    pub actuation_time: f64,
    pub actuation_timeout: f64,
}

impl Default for FsmConfig {
    fn default() -> Self {
        Self {
            tolerances: Tolerances::default(),
            x_dock: crate::model::presets::DOCKED_SEPARATION,
            approach_speed: 0.1,
            tick: 0.1,
            actuation_time: 0.2,
            actuation_timeout: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Command {
    HoldFemale,
    /// Male {C} target in {F}.
    MaleTarget { x: f64, y: f64, z: f64, yaw: f64 },
    Actuate { engage: bool },
    Join,
    SwitchToAssembled,
    SwitchToUnits,
    Release,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Observation {
    pub rel: Option<RelativePose>,
    pub joined: bool,
    pub join_failed: bool,
    /// Set by the switching layer once blending has finished.
    pub transition_done: bool,
    pub disassembly_request: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FsmEvent {
    pub t: f64,
    pub state: FsmStateId,
    pub c1: bool,
    pub c2: bool,
    pub commands: Vec<Command>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FsmStats {
    pub standby_reentries: u32,
    pub assembly_aborts: u32,
    pub joins_emitted: u32,
    /// Joins emitted while condition 2 was false; must stay 0.
    pub unsafe_joins: u32,
    /// Approach ticks with condition 1 false that did not move to Standby.
    pub missed_recoveries: u32,
}

#[derive(Debug, Clone)]
pub struct FsmContext {
    pub state: FsmStateId,
    pub config: FsmConfig,
    pub time: f64,
    approach_x: f64,
    actuation_elapsed: f64,
    join_sent: bool,
    disassembling: bool,
    pub log: Vec<FsmEvent>,
    pub stats: FsmStats,
}

impl FsmContext {
    pub fn new(config: FsmConfig) -> Self {
        Self {
            state: FsmStateId::Standby,
            config,
            time: 0.0,
            approach_x: config.tolerances.d_st,
            actuation_elapsed: 0.0,
            join_sent: false,
            disassembling: false,
            log: Vec::new(),
            stats: FsmStats::default(),
        }
    }

    /// Start in the joined, hovering state.
    pub fn hovering(config: FsmConfig) -> Self {
        Self { state: FsmStateId::Hovering, ..Self::new(config) }
    }

    pub fn event_log_jsonl(&self) -> String {
        self.log.iter().map(|e| serde_json::to_string(e).expect("event serializes") + "\n").collect()
    }

    fn male_target(&self, x: f64) -> Command {
        Command::MaleTarget { x, y: 0.0, z: 0.0, yaw: STANDBY_YAW }
    }
}

/// One FSM tick. Emits commands for this tick and returns the new state.
pub fn fsm_step(ctx: &mut FsmContext, obs: &Observation) -> (FsmStateId, Vec<Command>) {
    use FsmStateId::*;
    let cfg = ctx.config;
    let tol = &cfg.tolerances;
    let (c1, c2) = match &obs.rel {
        Some(r) => (condition_check(r, tol, Condition::One, cfg.x_dock), condition_check(r, tol, Condition::Two, cfg.x_dock)),
        None => (false, false),
    };
    let standby = ctx.male_target(tol.d_st);
    let mut cmds = Vec::new();
    let mut note = None;
    let prev = ctx.state;
    let next = match prev {
        Standby => {
            cmds.extend([Command::HoldFemale, standby]);
            if c1 {
                let x = obs.rel.map_or(tol.d_st, |r| r.r[0]);
                ctx.approach_x = x.clamp(cfg.x_dock, tol.d_st);
                Approach
            } else {
                Standby
            }
        }
        Approach => {
            if !c1 {
                ctx.stats.standby_reentries += 1;
                cmds.extend([Command::HoldFemale, standby]);
                note = Some("condition 1 lost".to_string());
                Standby
            } else {
                ctx.approach_x = (ctx.approach_x - cfg.approach_speed * cfg.tick).max(cfg.x_dock);
                cmds.extend([Command::HoldFemale, ctx.male_target(ctx.approach_x)]);
                if c2 {
                    ctx.actuation_elapsed = 0.0;
                    ctx.join_sent = false;
                    cmds.push(Command::Actuate { engage: true });
                    Assembly
                } else {
                    Approach
                }
            }
        }
        Assembly => {
            cmds.extend([Command::HoldFemale, ctx.male_target(cfg.x_dock)]);
            if obs.joined {
                cmds.push(Command::SwitchToAssembled);
                Transition
            } else if obs.join_failed || !c2 || ctx.actuation_elapsed > cfg.actuation_timeout {
                ctx.stats.assembly_aborts += 1;
                cmds.push(Command::Actuate { engage: false });
                note = Some(
                    if obs.join_failed {
                        "capture miss"
                    } else if !c2 {
                        "condition 2 lost"
                    } else {
                        "actuation timeout"
                    }
                    .to_string(),
                );
                Approach
            } else {
                ctx.actuation_elapsed += cfg.tick;
                if ctx.actuation_elapsed >= cfg.actuation_time - 1e-9 && !ctx.join_sent {
                    ctx.join_sent = true;
                    ctx.stats.joins_emitted += 1;
                    if !c2 {
                        ctx.stats.unsafe_joins += 1;
                    }
                    cmds.push(Command::Join);
                }
                Assembly
            }
        }
        Transition => {
            if ctx.disassembling {
                cmds.push(Command::Release);
                Disassembly
            } else if obs.transition_done {
                Hovering
            } else {
                Transition
            }
        }
        Hovering => {
            if obs.disassembly_request {
                ctx.disassembling = true;
                cmds.push(Command::SwitchToUnits);
                Transition
            } else {
                Hovering
            }
        }
        Disassembly => {
            cmds.extend([Command::HoldFemale, standby]);
            Disassembly
        }
    };
    if prev == Approach && !c1 && next != Standby {
        ctx.stats.missed_recoveries += 1;
    }
    ctx.state = next;
    ctx.log.push(FsmEvent { t: ctx.time, state: next, c1, c2, commands: cmds.clone(), note });
    ctx.time += cfg.tick;
    (next, cmds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn rel(x: f64, y: f64, z: f64, psi: f64) -> RelativePose {
        RelativePose::new(Vec3::new(x, y, z), psi)
    }

    #[test]
    fn standby_target_values() {
        let (p, yaw) = standby_targets(&Tolerances::default());
        assert_eq!(p, Vec3::new(0.6, 0.0, 0.0));
        assert_eq!(yaw, -PI);
        assert_eq!(wrap_angle(yaw), wrap_angle(PI));
    }

    #[test]
    fn condition_one_examples() {
        let t = Tolerances::default();
        assert!(condition_check(&rel(0.6, 0.005, 0.005, -PI + 0.05), &t, Condition::One, 0.48));
        assert!(condition_check(&rel(0.6, 0.0, 0.0, PI - 0.05), &t, Condition::One, 0.48));
        assert!(!condition_check(&rel(0.6, 0.0, 0.0, -PI + 0.2), &t, Condition::One, 0.48));
        assert!(condition_check(&rel(5.0, 0.02, -0.02, PI), &t, Condition::One, 0.48));
        assert!(!condition_check(&rel(0.6, 0.0201, 0.0, PI), &t, Condition::One, 0.48));
    }

    #[test]
    fn condition_two_needs_x() {
        let t = Tolerances::default();
        assert!(condition_check(&rel(0.484, 0.01, 0.0, PI), &t, Condition::Two, 0.48));
        assert!(!condition_check(&rel(0.49, 0.0, 0.0, PI), &t, Condition::Two, 0.48));
        assert!(!condition_check(&rel(0.48, 0.0, 0.0, PI - 0.02), &t, Condition::Two, 0.48));
    }

    #[test]
    fn approach_interruption() {
        let mut c = FsmContext::new(FsmConfig::default());
        let good = Observation { rel: Some(rel(0.6, 0.0, 0.0, PI)), ..Default::default() };
        assert_eq!(fsm_step(&mut c, &good).0, FsmStateId::Approach);
        let bad = Observation { rel: Some(rel(0.55, 0.05, 0.0, PI)), ..Default::default() };
        assert_eq!(fsm_step(&mut c, &bad).0, FsmStateId::Standby);
        assert_eq!(c.stats.standby_reentries, 1);
    }

    #[test]
    fn full_assembly_and_disassembly() {
        let mut c = FsmContext::new(FsmConfig::default());
        let at = |x| Observation { rel: Some(rel(x, 0.0, 0.0, PI)), ..Default::default() };
        fsm_step(&mut c, &at(0.6));
        let mut x = 0.6;
        let mut n = 0;
        while c.state == FsmStateId::Approach {
            x = (x - 0.01f64).max(0.48);
            fsm_step(&mut c, &at(x));
            n += 1;
            assert!(n < 100);
        }
        assert_eq!(c.state, FsmStateId::Assembly);
        let mut joined = false;
        for _ in 0..5 {
            let (_, cmds) = fsm_step(&mut c, &at(0.48));
            joined |= cmds.contains(&Command::Join);
        }
        assert!(joined);
        let (s, cmds) = fsm_step(&mut c, &Observation { joined: true, ..at(0.48) });
        assert_eq!(s, FsmStateId::Transition);
        assert!(cmds.contains(&Command::SwitchToAssembled));
        assert_eq!(fsm_step(&mut c, &Observation { transition_done: true, ..Default::default() }).0, FsmStateId::Hovering);
        // Pose is irrelevant for disassembly.
        let far = Observation { rel: Some(rel(3.0, 1.0, 1.0, 0.0)), disassembly_request: true, ..Default::default() };
        assert_eq!(fsm_step(&mut c, &far).0, FsmStateId::Transition);
        let (s, cmds) = fsm_step(&mut c, &far);
        assert_eq!(s, FsmStateId::Disassembly);
        assert_eq!(cmds, vec![Command::Release]);
        assert_eq!(c.stats.unsafe_joins, 0);
        assert!(c.event_log_jsonl().lines().count() > 5);
    }

    #[test]
    fn assembly_abort_on_condition_two() {
        let mut c = FsmContext::new(FsmConfig::default());
        c.state = FsmStateId::Assembly;
        let (s, cmds) = fsm_step(&mut c, &Observation { rel: Some(rel(0.5, 0.0, 0.0, PI)), ..Default::default() });
        assert_eq!(s, FsmStateId::Approach);
        assert!(cmds.contains(&Command::Actuate { engage: false }));
    }

    #[test]
    fn actuation_timeout_reverts() {
        let cfg = FsmConfig { actuation_timeout: 0.5, actuation_time: 10.0, ..FsmConfig::default() };
        let mut c = FsmContext::new(cfg);
        c.state = FsmStateId::Assembly;
        let at = Observation { rel: Some(rel(0.48, 0.0, 0.0, PI)), ..Default::default() };
        let mut n = 0;
        while c.state == FsmStateId::Assembly {
            fsm_step(&mut c, &at);
            n += 1;
        }
        assert_eq!(n, 7);
        assert_eq!(c.log.last().unwrap().note.as_deref(), Some("actuation timeout"));
    }
}
