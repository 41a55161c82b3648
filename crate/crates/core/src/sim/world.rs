//! Rigid bodies, Newton-Euler integration on SO(3), and docking joints.

use super::SimError;
use crate::model::{combined_model_with_offset, AirframeModel, BodyState, Mat3, Pose, RotationMatrix, Vec3};

/// One unit as flown when separate; kept so a joint can be released exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitPart {
    pub unit: usize,
    pub model: AirframeModel,
    pub thrust_gain: Vec<f64>,
}

/// A unit riding on a body: its CoG pose in the body frame and its rotor slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Member {
    pub unit: usize,
    pub pose: Pose,
    pub rotor_offset: usize,
}

#[derive(Debug, Clone)]
pub struct Body {
    /// True (possibly error-injected) model.
    pub model: AirframeModel,
    pub thrust_gain: Vec<f64>,
    pub state: BodyState,
    pub members: Vec<Member>,
    pub joint: Option<usize>,
    dirs: Vec<Vec3>,
    arms: Vec<Vec3>,
    inertia_inv: Mat3,
}

impl Body {
    pub fn new(model: AirframeModel, thrust_gain: Vec<f64>, state: BodyState, members: Vec<Member>, counter_torque: bool) -> Self {
        let dirs = model.rotors.iter().map(|r| r.direction).collect();
        let arms = model
            .rotors
            .iter()
            .map(|r| r.moment_arm() + if counter_torque { r.sigma * r.direction } else { Vec3::zeros() })
            .collect();
        let inertia_inv = model.inertia.try_inverse().expect("validated inertia");
        Self { model, thrust_gain, state, members, joint: None, dirs, arms, inertia_inv }
    }

    pub fn single(unit: usize, part: &UnitPart, state: BodyState, counter_torque: bool) -> Self {
        let m = Member { unit, pose: Pose::identity(), rotor_offset: 0 };
        Self::new(part.model.clone(), part.thrust_gain.clone(), state, vec![m], counter_torque)
    }

    pub fn member(&self, unit: usize) -> Option<&Member> {
        self.members.iter().find(|m| m.unit == unit)
    }

    /// Applied thrusts after saturation and gain.
    pub fn applied_thrusts(&self, command: &[f64]) -> Vec<f64> {
        command
            .iter()
            .zip(&self.model.rotors)
            .zip(&self.thrust_gain)
            .map(|((c, r), g)| g * c.clamp(0.0, r.max_thrust))
            .collect()
    }

    /// Body-frame force and torque from applied thrusts.
    pub fn wrench(&self, applied: &[f64]) -> (Vec3, Vec3) {
        let mut f = Vec3::zeros();
        let mut t = Vec3::zeros();
        for ((l, d), a) in applied.iter().zip(&self.dirs).zip(&self.arms) {
            f += d * *l;
            t += a * *l;
        }
        (f, t)
    }

    pub fn linear_momentum(&self) -> Vec3 {
        self.state.velocity * self.model.mass
    }

    /// World-frame angular momentum about the body CoG.
    pub fn spin_momentum(&self) -> Vec3 {
        self.state.rotation * (self.model.inertia * self.state.angular_velocity)
    }

    /// World state of a member unit's CoG under rigid motion.
    pub fn member_state(&self, m: &Member) -> BodyState {
        let s = &self.state;
        let offset = s.rotation * m.pose.position;
        let omega_w = s.rotation * s.angular_velocity;
        let rotation = s.rotation * m.pose.rotation;
        BodyState {
            position: s.position + offset,
            rotation,
            velocity: s.velocity + omega_w.cross(&offset),
            angular_velocity: rotation.inverse() * omega_w,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub parts: [UnitPart; 2],
    /// Designed pose of the second unit in the first unit's frame.
    pub relative: Pose,
    pub active: bool,
}

#[derive(Debug, Clone)]
pub struct WorldState {
    pub bodies: Vec<Body>,
    pub joints: Vec<Joint>,
    pub time: f64,
    pub steps: u64,
    pub counter_torque: bool,
}

#[derive(Debug, Clone, Copy)]
struct Deriv {
    v: Vec3,
    a: Vec3,
    wdot: Vec3,
}

/// World-frame force and torque acting on a body besides its rotors.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ExternalLoad {
    pub force: Vec3,
    pub torque: Vec3,
}

fn rates(body: &Body, v: &Vec3, r: &RotationMatrix, w: &Vec3, f: &Vec3, t: &Vec3, ext: &ExternalLoad) -> Deriv {
    let m = body.model.mass;
    let a = (r * f + ext.force) / m - Vec3::new(0.0, 0.0, body.model.gravity);
    let i = &body.model.inertia;
    let wdot = body.inertia_inv * (t + r.inverse() * ext.torque - w.cross(&(i * w)));
    Deriv { v: *v, a, wdot }
}

/// Inverse of the right-trivialized exponential differential, truncated at
/// the order needed for a fourth-order scheme.
fn dexpinv(theta: &Vec3, w: &Vec3) -> Vec3 {
    let tw = theta.cross(w);
    w + 0.5 * tw + theta.cross(&tw) / 12.0
}

/// One Runge-Kutta-Munthe-Kaas step (classical RK4 tableau) for a body under
/// a constant body-frame wrench and a world-frame external load.
pub fn integrate_body(body: &mut Body, f: &Vec3, t: &Vec3, ext: &ExternalLoad, dt: f64) {
    let s0 = body.state;
    let stage = |theta: &Vec3, dv: &Vec3, dw: &Vec3, body: &Body| {
        let r = s0.rotation * RotationMatrix::new(*theta);
        let v = s0.velocity + dv;
        let w = s0.angular_velocity + dw;
        (rates(body, &v, &r, &w, f, t, ext), dexpinv(theta, &w))
    };
    let z = Vec3::zeros();
    let (k1, q1) = stage(&z, &z, &z, body);
    let h2 = 0.5 * dt;
    let (k2, q2) = stage(&(q1 * h2), &(k1.a * h2), &(k1.wdot * h2), body);
    let (k3, q3) = stage(&(q2 * h2), &(k2.a * h2), &(k2.wdot * h2), body);
    let (k4, q4) = stage(&(q3 * dt), &(k3.a * dt), &(k3.wdot * dt), body);
    let s6 = dt / 6.0;
    let theta = (q1 + 2.0 * q2 + 2.0 * q3 + q4) * s6;
    let st = &mut body.state;
    st.position += (k1.v + 2.0 * k2.v + 2.0 * k3.v + k4.v) * s6;
    st.velocity += (k1.a + 2.0 * k2.a + 2.0 * k3.a + k4.a) * s6;
    st.angular_velocity += (k1.wdot + 2.0 * k2.wdot + 2.0 * k3.wdot + k4.wdot) * s6;
    st.rotation = s0.rotation * RotationMatrix::new(theta);
}

impl WorldState {
    pub fn new(bodies: Vec<Body>, counter_torque: bool) -> Self {
        Self { bodies, joints: Vec::new(), time: 0.0, steps: 0, counter_torque }
    }

    /// Index of the body carrying `unit` and its member record.
    pub fn locate(&self, unit: usize) -> Option<(usize, Member)> {
        self.bodies.iter().enumerate().find_map(|(i, b)| b.member(unit).map(|m| (i, *m)))
    }

    pub fn unit_state(&self, unit: usize) -> Option<BodyState> {
        let (i, m) = self.locate(unit)?;
        Some(self.bodies[i].member_state(&m))
    }

    pub fn total_linear_momentum(&self) -> Vec3 {
        self.bodies.iter().map(Body::linear_momentum).sum()
    }

    /// World angular momentum about the origin.
    pub fn total_angular_momentum(&self) -> Vec3 {
        self.bodies.iter().map(|b| b.spin_momentum() + b.state.position.cross(&b.linear_momentum())).sum()
    }
}

/// Advance every body by `dt`. `commands[i]` holds the per-rotor demand of
/// body `i` (clamped here); missing `external` entries mean no load.
pub fn step_dynamics(world: &mut WorldState, commands: &[Vec<f64>], external: &[ExternalLoad], dt: f64) -> Result<(), SimError> {
    if !(dt > 0.0 && dt <= 0.01) {
        return Err(SimError::Config(format!("physics dt {dt} outside (0, 0.01]")));
    }
    for (i, body) in world.bodies.iter_mut().enumerate() {
        let cmd = commands.get(i).ok_or_else(|| SimError::Config(format!("no command for body {i}")))?;
        if cmd.len() != body.model.rotor_count() {
            return Err(SimError::Config(format!("body {i}: {} commands for {} rotors", cmd.len(), body.model.rotor_count())));
        }
        let applied = body.applied_thrusts(cmd);
        let (f, t) = body.wrench(&applied);
        integrate_body(body, &f, &t, &external.get(i).copied().unwrap_or_default(), dt);
        let s = &body.state;
        let finite = s.position.iter().chain(s.velocity.iter()).chain(s.angular_velocity.iter()).all(|v| v.is_finite())
            && s.rotation.matrix().iter().all(|v| v.is_finite());
        if !finite {
            return Err(SimError::Diverged { time: world.time, body: i });
        }
    }
    world.steps += 1;
    world.time = world.steps as f64 * dt;
    if world.steps.is_multiple_of(1000) {
        for b in &mut world.bodies {
            b.state.rotation.renormalize();
        }
    }
    Ok(())
}

/// Mechanism tip of a unit: on its body x axis at half the docked separation.
pub fn tip_position(state: &BodyState, half_separation: f64) -> Vec3 {
    state.position + state.rotation * Vec3::new(half_separation, 0.0, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DockGeometry {
    /// Designed CoG separation along the female x axis.
    pub separation: f64,
    /// Capture radius of the drogue, lateral and axial (m).
    pub capture: f64,
}

/// Join the separate bodies carrying `female` and `male` into one.
/// Momentum of the pair is preserved; the pair snaps symmetrically to the
/// designed relative pose.
pub fn docking_event(world: &mut WorldState, female: usize, male: usize, geom: &DockGeometry) -> Result<usize, SimError> {
    let (fi, fm) = world.locate(female).ok_or(SimError::UnknownUnit(female))?;
    let (mi, mm) = world.locate(male).ok_or(SimError::UnknownUnit(male))?;
    if fi == mi || world.bodies[fi].members.len() != 1 || world.bodies[mi].members.len() != 1 {
        return Err(SimError::AlreadyJoined);
    }
    let (bf, bm) = (&world.bodies[fi], &world.bodies[mi]);
    let sf = bf.member_state(&fm);
    let sm = bm.member_state(&mm);
    let half = 0.5 * geom.separation;
    let miss = sf.rotation.inverse() * (tip_position(&sm, half) - tip_position(&sf, half));
    let lateral = miss.y.hypot(miss.z);
    if lateral > geom.capture || miss.x.abs() > geom.capture {
        return Err(SimError::CaptureMiss { lateral, axial: miss.x });
    }
    let relative = crate::model::presets::docked_relative_pose(geom.separation);
    let parts = [
        UnitPart { unit: female, model: bf.model.clone(), thrust_gain: bf.thrust_gain.clone() },
        UnitPart { unit: male, model: bm.model.clone(), thrust_gain: bm.thrust_gain.clone() },
    ];
    let (model, cog) = combined_model_with_offset(&parts[0].model, &parts[1].model, &relative).map_err(|e| SimError::Config(e.to_string()))?;

    let mass = model.mass;
    let p_lin = bf.linear_momentum() + bm.linear_momentum();
    let centroid = (sf.position * bf.model.mass + sm.position * bm.model.mass) / mass;
    let l = bf.spin_momentum() + bm.spin_momentum() + (sf.position - centroid).cross(&bf.linear_momentum()) + (sm.position - centroid).cross(&bm.linear_momentum());
    // half of the residual misalignment is taken up by each side
    let delta = sf.rotation.inverse() * sm.rotation * relative.rotation.inverse();
    let rotation = sf.rotation * RotationMatrix::new(delta.scaled_axis() * 0.5);
    let inertia_inv = model.inertia.try_inverse().ok_or_else(|| SimError::Config("singular combined inertia".into()))?;
    let state = BodyState {
        position: centroid,
        rotation,
        velocity: p_lin / mass,
        angular_velocity: inertia_inv * (rotation.inverse() * l),
    };
    let members = vec![
        Member { unit: female, pose: Pose::new(-cog, RotationMatrix::identity()), rotor_offset: 0 },
        Member { unit: male, pose: Pose::new(relative.position - cog, relative.rotation), rotor_offset: parts[0].model.rotor_count() },
    ];
    let mut gain = parts[0].thrust_gain.clone();
    gain.extend_from_slice(&parts[1].thrust_gain);
    let mut body = Body::new(model, gain, state, members, world.counter_torque);
    let jid = world.joints.len();
    body.joint = Some(jid);
    world.joints.push(Joint { parts, relative, active: true });
    let (lo, hi) = if fi < mi { (fi, mi) } else { (mi, fi) };
    world.bodies.remove(hi);
    world.bodies[lo] = body;
    Ok(jid)
}

/// Split a joined body back into its units with rigid-body velocities.
pub fn undock(world: &mut WorldState, joint: usize) -> Result<(), SimError> {
    let j = world.joints.get(joint).filter(|j| j.active).ok_or(SimError::UnknownJoint(joint))?.clone();
    let bi = world.bodies.iter().position(|b| b.joint == Some(joint)).ok_or(SimError::UnknownJoint(joint))?;
    let body = world.bodies.remove(bi);
    let ct = world.counter_torque;
    let new: Vec<Body> = j
        .parts
        .iter()
        .map(|p| {
            let m = body.member(p.unit).expect("joint member present");
            Body::single(p.unit, p, body.member_state(m), ct)
        })
        .collect();
    for (k, b) in new.into_iter().enumerate() {
        world.bodies.insert(bi + k, b);
    }
    world.joints[joint].active = false;
    Ok(())
}
