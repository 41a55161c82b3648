//! Search for the four rotor tilt pairs `(alpha_i, beta_i)` that maximise the
//! assembled body's weighted force/torque margins under the hover constraints.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::feasibility::{guaranteed_min_force, guaranteed_min_torque};
use crate::model::{combined_model, presets, AirframeModel, RotationMatrix, RotorGeometry, Vec3, GRAVITY};

pub const OPT_SCHEMA_VERSION: u32 = 1;
const MARGIN_FLOOR: f64 = 1e-6;

/// `(alpha_1, beta_1, ..., alpha_4, beta_4)`.
pub type DesignVector = [f64; 8];

pub fn design_from_angles(angles: &[(f64, f64); 4]) -> DesignVector {
    let mut d = [0.0; 8];
    for (i, (a, b)) in angles.iter().enumerate() {
        d[2 * i] = *a;
        d[2 * i + 1] = *b;
    }
    d
}

pub fn angles_of(d: &DesignVector) -> [(f64, f64); 4] {
    [(d[0], d[1]), (d[2], d[3]), (d[4], d[5]), (d[6], d[7])]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptProblem {
    pub schema_version: u32,
    pub w1: f64,
    pub w2: f64,
    pub mass: f64,
    pub gravity: f64,
    /// Half the rotor square's side; rotors sit at `(+-arm, +-arm, 0)`.
    pub arm: f64,
    pub lambda_max: f64,
    pub sigma: f64,
    pub desired_accel: f64,
    /// CoG separation of the two docked units.
    pub separation: f64,
    pub alpha_bounds: [f64; 2],
    pub beta_bounds: [f64; 2],
    pub seed: u64,
    pub population: usize,
    pub generations: usize,
    /// Hard cap on objective evaluations (excluding polishing).
    pub budget: usize,
    pub torque_tolerance: f64,
    pub tilt_tolerance: f64,
    pub polish: bool,
    /// Project every candidate onto the hover equalities before evaluating it.
    pub repair: bool,
    /// Independent searches from fresh populations; the best result wins.
    pub restarts: usize,
}

impl Default for OptProblem {
    fn default() -> Self {
        Self {
            schema_version: OPT_SCHEMA_VERSION,
            w1: 1.0,
            w2: 50.0,
            mass: presets::UNIT_MASS,
            gravity: GRAVITY,
            arm: presets::ARM,
            lambda_max: presets::MAX_THRUST,
            sigma: presets::SIGMA,
            desired_accel: presets::DESIRED_ACCEL,
            separation: presets::DOCKED_SEPARATION,
            alpha_bounds: [0.0, 0.9],
            beta_bounds: [-std::f64::consts::PI, std::f64::consts::PI],
            seed: 0,
            population: 180,
            generations: 600,
            budget: usize::MAX,
            torque_tolerance: 1e-3,
            tilt_tolerance: 1e-2,
            polish: true,
            repair: true,
            restarts: 4,
        }
    }
}

impl OptProblem {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.w1 > 0.0 && self.w2 > 0.0) {
            return Err("weights w1, w2 must be positive".into());
        }
        if !(self.mass > 0.0 && self.gravity > 0.0 && self.lambda_max > 0.0 && self.arm > 0.0 && self.separation > 0.0) {
            return Err("mass, gravity, arm, lambda_max and separation must be positive".into());
        }
        if self.alpha_bounds[0] >= self.alpha_bounds[1] || self.beta_bounds[0] >= self.beta_bounds[1] {
            return Err("bounds must be increasing".into());
        }
        if self.budget < 1 || self.population < 1 || self.restarts < 1 {
            return Err("budget, population and restarts must be at least 1".into());
        }
        if self.schema_version != OPT_SCHEMA_VERSION {
            return Err(format!("unsupported schema_version {}", self.schema_version));
        }
        Ok(())
    }

    pub fn lower(&self) -> DesignVector {
        let mut l = [0.0; 8];
        for i in 0..4 {
            l[2 * i] = self.alpha_bounds[0];
            l[2 * i + 1] = self.beta_bounds[0];
        }
        l
    }

    pub fn upper(&self) -> DesignVector {
        let mut u = [0.0; 8];
        for i in 0..4 {
            u[2 * i] = self.alpha_bounds[1];
            u[2 * i + 1] = self.beta_bounds[1];
        }
        u
    }

    pub fn unit_model(&self, d: &DesignVector) -> AirframeModel {
        let spin = presets::spin_signs();
        let a = self.arm;
        let pos = [Vec3::new(a, a, 0.0), Vec3::new(-a, a, 0.0), Vec3::new(-a, -a, 0.0), Vec3::new(a, -a, 0.0)];
        let rotors = (0..4)
            .map(|i| RotorGeometry::from_angles(pos[i], d[2 * i], d[2 * i + 1], self.sigma * spin[i], self.lambda_max))
            .collect();
        let size = [2.0 * a, 2.0 * a, presets::BODY_SIZE[2]];
        AirframeModel { mass: self.mass, inertia: crate::model::cuboid_inertia(self.mass, size), rotors, gravity: self.gravity }
    }

    pub fn assembled_model(&self, unit: &AirframeModel) -> AirframeModel {
        combined_model(unit, unit, &presets::docked_relative_pose(self.separation)).expect("docked units do not overlap")
    }

    /// Thrust direction the uniform hover resultant must take in the body frame.
    pub fn required_thrust_direction(&self) -> Vec3 {
        required_rotation(self).inverse() * Vec3::z()
    }
}

/// Largest deviation from the mirror pattern `a1 = a4, a2 = a3, b1 = -b4,
/// b2 = -b3` (rad).
pub fn symmetry_error(d: &DesignVector) -> f64 {
    let wrap = crate::control::wrap_angle;
    [(d[0] - d[6]).abs(), (d[2] - d[4]).abs(), wrap(d[1] + d[7]).abs(), wrap(d[3] + d[5]).abs()].into_iter().fold(0.0, f64::max)
}

pub fn gamma_for_acceleration(desired_accel: f64, gravity: f64) -> f64 {
    -(desired_accel / gravity).atan()
}

/// The pure pitch `R_y(-gamma)` the tilted frame must equal.
fn required_rotation(p: &OptProblem) -> RotationMatrix {
    let gamma = gamma_for_acceleration(p.desired_accel, p.gravity);
    RotationMatrix::from_axis_angle(&Vec3::y_axis(), -gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `min(f_min)` over unit and assembled.
    pub r1: f64,
    /// `min(tau_min)` over unit and assembled.
    pub r2: f64,
    /// `| |Q_tran 1| lambda_s - m g |`.
    pub r3: f64,
    /// `|Q_rot 1| lambda_s` (N m).
    pub r4: f64,
    /// Angle between the tilted frame and the required pitch (rad).
    pub r5: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub objective: f64,
    pub unit_f_min: f64,
    pub unit_tau_min: f64,
    pub assembled_f_min: f64,
    pub assembled_tau_min: f64,
    pub residuals: Residuals,
    pub penalty: f64,
    pub feasible: bool,
}

pub fn evaluate_design(d: &DesignVector, prob: &OptProblem) -> Evaluation {
    let unit = prob.unit_model(d);
    let assem = prob.assembled_model(&unit);
    let metric = |r: Result<crate::feasibility::FaceMetric, _>| r.map(|m| m.value).unwrap_or(0.0);
    let unit_f = metric(guaranteed_min_force(&unit));
    let unit_t = metric(guaranteed_min_torque(&unit));
    let f = metric(guaranteed_min_force(&assem));
    let t = metric(guaranteed_min_torque(&assem));

    let mut sum_u = Vec3::zeros();
    let mut sum_v = Vec3::zeros();
    for r in &unit.rotors {
        sum_u += r.direction;
        sum_v += r.moment_arm();
    }
    let mg = unit.weight();
    let lambda_s = mg / sum_u.norm();
    let r3 = (sum_u.norm() * lambda_s - mg).abs();
    let r4 = sum_v.norm() * lambda_s;
    let r5 = match RotationMatrix::rotation_between(&sum_u, &Vec3::z()) {
        Some(rc) => rc.angle_to(&required_rotation(prob)),
        None => std::f64::consts::PI,
    };
    let residuals = Residuals { r1: f.min(unit_f), r2: t.min(unit_t), r3, r4, r5 };
    let penalty = penalty_of(&residuals, prob);
    let objective = if f > 0.0 && t > 0.0 { prob.w1 * f + prob.w2 * t } else { 0.0 };
    Evaluation {
        objective,
        unit_f_min: unit_f,
        unit_tau_min: unit_t,
        assembled_f_min: f,
        assembled_tau_min: t,
        residuals,
        penalty,
        feasible: penalty == 0.0,
    }
}

fn penalty_of(r: &Residuals, p: &OptProblem) -> f64 {
    let v = [
        (MARGIN_FLOOR - r.r1).max(0.0) / MARGIN_FLOOR,
        (MARGIN_FLOOR - r.r2).max(0.0) / MARGIN_FLOOR,
        (r.r4 - p.torque_tolerance).max(0.0) / p.torque_tolerance,
        (r.r5 - p.tilt_tolerance).max(0.0) / p.tilt_tolerance,
    ];
    v.iter().map(|x| x * x).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub schema_version: u32,
    pub seed: u64,
    pub design: DesignVector,
    pub objective: f64,
    pub unit_f_min: f64,
    pub unit_tau_min: f64,
    pub assembled_f_min: f64,
    pub assembled_tau_min: f64,
    pub residuals: Residuals,
    pub feasible: bool,
    pub polished: bool,
    pub evaluations: usize,
    pub generations: usize,
}

impl OptResult {
    fn from_eval(prob: &OptProblem, design: DesignVector, e: &Evaluation, evaluations: usize, generations: usize, polished: bool) -> Self {
        Self {
            schema_version: OPT_SCHEMA_VERSION,
            seed: prob.seed,
            design,
            objective: e.objective,
            unit_f_min: e.unit_f_min,
            unit_tau_min: e.unit_tau_min,
            assembled_f_min: e.assembled_f_min,
            assembled_tau_min: e.assembled_tau_min,
            residuals: e.residuals,
            feasible: e.feasible,
            polished,
            evaluations,
            generations,
        }
    }

    pub fn unit_model(&self, prob: &OptProblem) -> AirframeModel {
        prob.unit_model(&self.design)
    }
}

#[derive(Clone)]
struct Individual {
    x: DesignVector,
    sigma: DesignVector,
    eval: Evaluation,
}

/// Stochastic ranking: bubble-sort passes that compare by objective when both
/// are feasible or with probability `pf`, otherwise by penalty.
fn stochastic_rank(pop: &mut [Individual], pf: f64, rng: &mut ChaCha8Rng) {
    let n = pop.len();
    for _ in 0..n {
        let mut swapped = false;
        for j in 0..n.saturating_sub(1) {
            let (a, b) = (&pop[j].eval, &pop[j + 1].eval);
            let u: f64 = rng.random();
            let swap = if (a.penalty == 0.0 && b.penalty == 0.0) || u < pf {
                a.objective < b.objective
            } else {
                a.penalty > b.penalty
            };
            if swap {
                pop.swap(j, j + 1);
                swapped = true;
            }
        }
        if !swapped {
            break;
        }
    }
}

fn candidate_rng(seed: u64, generation: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // generation 0 streams are the initial population
    rng.set_stream(((generation as u64) << 24) | index as u64);
    rng
}

fn better(a: &Evaluation, b: &Evaluation) -> bool {
    match (a.feasible, b.feasible) {
        (true, false) => true,
        (false, true) => false,
        (true, true) => a.objective > b.objective,
        (false, false) => a.penalty < b.penalty,
    }
}

/// Seeded ISRES-style search followed by optional projection of the best
/// design onto the hover equalities.
pub fn optimize(prob: &OptProblem) -> OptResult {
    let mut remaining = prob.budget;
    let mut best: Option<OptResult> = None;
    let mut evaluations = 0;
    for restart in 0..prob.restarts {
        if remaining == 0 {
            break;
        }
        let stream_seed = prob.seed.wrapping_add((restart as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let r = search(prob, stream_seed, remaining);
        remaining -= r.evaluations;
        evaluations += r.evaluations;
        let keep = match &best {
            None => true,
            Some(b) => match (r.feasible, b.feasible) {
                (true, false) => true,
                (true, true) => r.objective > b.objective,
                _ => false,
            },
        };
        if keep {
            best = Some(r);
        }
    }
    let mut best = best.expect("at least one restart ran");
    best.evaluations = evaluations;
    best
}

fn search(prob: &OptProblem, seed: u64, budget: usize) -> OptResult {
    const PF: f64 = 0.45;
    const GAMMA: f64 = 0.85;
    const SMOOTH: f64 = 0.2;
    let n = 8;
    let lo = prob.lower();
    let hi = prob.upper();
    let lam = prob.population.min(budget).max(1);
    let mu = (lam / 7).max(1);
    let tau = 1.0 / (2.0 * (n as f64).sqrt()).sqrt();
    let tau_p = 1.0 / (2.0 * n as f64).sqrt();
    let mut evals = 0usize;

    let eval_all = |xs: Vec<(DesignVector, DesignVector)>| -> Vec<Individual> {
        xs.into_par_iter()
            .map(|(x, sigma)| {
                let x = if prob.repair { project_onto_hover(&x, prob).unwrap_or(x) } else { x };
                Individual { x, sigma, eval: evaluate_design(&x, prob) }
            })
            .collect()
    };

    let init: Vec<_> = (0..lam)
        .map(|k| {
            let mut rng = candidate_rng(seed, 0, k);
            let mut x = [0.0; 8];
            let mut s = [0.0; 8];
            for i in 0..n {
                x[i] = lo[i] + rng.random::<f64>() * (hi[i] - lo[i]);
                s[i] = (hi[i] - lo[i]) / (n as f64).sqrt();
            }
            (x, s)
        })
        .collect();
    let mut pop = eval_all(init);
    evals += pop.len();
    let mut best = pop[0].clone();
    for ind in &pop {
        if better(&ind.eval, &best.eval) {
            best = ind.clone();
        }
    }

    let mut gen = 0;
    while gen < prob.generations && evals + lam <= budget {
        gen += 1;
        let mut rank_rng = candidate_rng(seed, gen, (1 << 24) - 1);
        stochastic_rank(&mut pop, PF, &mut rank_rng);
        let parents: Vec<Individual> = pop[..mu].to_vec();

        let children: Vec<(DesignVector, DesignVector)> = (0..lam)
            .into_par_iter()
            .map(|k| {
                let mut rng = candidate_rng(seed, gen, k);
                if k + 1 < mu {
                    // differential variation toward the current best
                    let mut x = parents[k].x;
                    for i in 0..n {
                        x[i] += GAMMA * (parents[0].x[i] - parents[k + 1].x[i]);
                    }
                    if (0..n).all(|i| x[i] >= lo[i] && x[i] <= hi[i]) {
                        return (x, parents[k].sigma);
                    }
                }
                let p = &parents[k % mu];
                let common: f64 = rng.sample(StandardNormal);
                let mut sigma = [0.0; 8];
                let mut x = p.x;
                for i in 0..n {
                    let ni: f64 = rng.sample(StandardNormal);
                    let s = (p.sigma[i] * (tau_p * common + tau * ni).exp()).min((hi[i] - lo[i]) / (n as f64).sqrt());
                    let mut trial = f64::NAN;
                    for _ in 0..10 {
                        let z: f64 = rng.sample(StandardNormal);
                        let c = p.x[i] + s * z;
                        if c >= lo[i] && c <= hi[i] {
                            trial = c;
                            break;
                        }
                    }
                    x[i] = if trial.is_nan() { p.x[i] } else { trial };
                    sigma[i] = p.sigma[i] + SMOOTH * (s - p.sigma[i]);
                }
                (x, sigma)
            })
            .collect();
        pop = eval_all(children);
        evals += pop.len();
        for ind in &pop {
            if better(&ind.eval, &best.eval) {
                best = ind.clone();
            }
        }
    }

    let mut result = OptResult::from_eval(prob, best.x, &best.eval, evals, gen, false);
    if prob.polish {
        if let Some(x) = project_onto_hover(&best.x, prob) {
            let e = evaluate_design(&x, prob);
            if e.feasible {
                result = OptResult::from_eval(prob, x, &e, evals, gen, true);
            }
        }
    }
    result
}

/// Hover equalities: `sum v_i = 0` and the unit thrust direction equals the
/// required one (x and y components).
fn hover_equalities(d: &DesignVector, prob: &OptProblem, target: &Vec3) -> DVector<f64> {
    let unit = prob.unit_model(d);
    let mut su = Vec3::zeros();
    let mut sv = Vec3::zeros();
    for r in &unit.rotors {
        su += r.direction;
        sv += r.moment_arm();
    }
    let dir = su.normalize();
    DVector::from_vec(vec![sv.x, sv.y, sv.z, dir.x - target.x, dir.y - target.y])
}

/// Minimum-norm Gauss-Newton projection onto the hover equalities.
pub fn project_onto_hover(d: &DesignVector, prob: &OptProblem) -> Option<DesignVector> {
    let target = prob.required_thrust_direction();
    let lo = prob.lower();
    let hi = prob.upper();
    let mut x = *d;
    for _ in 0..50 {
        let c = hover_equalities(&x, prob, &target);
        if c.norm() < 1e-14 {
            break;
        }
        let h = 1e-7;
        let mut jac = DMatrix::zeros(5, 8);
        for j in 0..8 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let dc = (hover_equalities(&xp, prob, &target) - hover_equalities(&xm, prob, &target)) / (2.0 * h);
            jac.set_column(j, &dc);
        }
        let (pinv, _) = crate::allocation::pseudo_inverse(&jac);
        let step = pinv * c;
        for j in 0..8 {
            x[j] -= step[j];
        }
    }
    let ok = hover_equalities(&x, prob, &target).norm() < 1e-12 && (0..8).all(|i| x[i] >= lo[i] && x[i] <= hi[i]);
    ok.then_some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_values() {
        assert_eq!(gamma_for_acceleration(0.0, 9.8), 0.0);
        assert!((gamma_for_acceleration(9.8, 9.8) + std::f64::consts::FRAC_PI_4).abs() < 1e-15);
        assert!((gamma_for_acceleration(1.0, 9.8) + 0.1017).abs() < 1e-4);
    }

    #[test]
    fn untilted_design_violates_torque_margin() {
        let p = OptProblem::default();
        let e = evaluate_design(&[0.0; 8], &p);
        assert_eq!(e.unit_tau_min, 0.0);
        assert!(!e.feasible);
        assert!(e.residuals.r2 <= 0.0);
    }

    #[test]
    fn mirror_relabel_preserves_objective() {
        let p = OptProblem::default();
        let d = design_from_angles(&presets::REFERENCE_ANGLES);
        let m = [d[6], -d[7], d[4], -d[5], d[2], -d[3], d[0], -d[1]];
        let a = evaluate_design(&d, &p);
        let b = evaluate_design(&m, &p);
        assert!((a.objective - b.objective).abs() < 1e-9);
        let d2 = [0.3, 0.4, 0.6, -2.0, 0.2, 2.5, 0.7, -0.1];
        let m2 = [d2[6], -d2[7], d2[4], -d2[5], d2[2], -d2[3], d2[0], -d2[1]];
        assert!((evaluate_design(&d2, &p).objective - evaluate_design(&m2, &p).objective).abs() < 1e-9);
    }

    #[test]
    fn budget_of_one() {
        let p = OptProblem { budget: 1, polish: false, ..Default::default() };
        let r = optimize(&p);
        assert_eq!(r.evaluations, 1);
        let e = evaluate_design(&r.design, &p);
        assert_eq!(r.feasible, e.feasible);
    }

    #[test]
    fn projection_reaches_equalities() {
        let p = OptProblem::default();
        let d = [0.5, -2.4, 0.5, 1.2, 0.5, -1.2, 0.5, 2.4];
        let x = project_onto_hover(&d, &p).unwrap();
        let e = evaluate_design(&x, &p);
        assert!(e.residuals.r4 < 1e-10 && e.residuals.r5 < 1e-10, "{:?}", e.residuals);
    }

    #[test]
    fn short_run_is_deterministic() {
        let p = OptProblem { generations: 5, population: 40, seed: 3, ..Default::default() };
        assert_eq!(optimize(&p), optimize(&p));
    }
}
