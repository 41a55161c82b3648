//! Guaranteed force and torque margins: inscribed-sphere radii of the
//! feasible force and torque polytopes, plus a sampling oracle.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{build_allocation, AirframeModel, AllocationMatrices, Vec3};

const PARALLEL_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeasibilityError {
    #[error("all rotor directions are parallel; the force polytope has no faces")]
    DegenerateForcePolytope,
    #[error("all moment arms are parallel; the torque polytope has no faces")]
    DegenerateTorquePolytope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WrenchKind {
    Force,
    Torque,
}

/// Inscribed radius and the face that attains it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaceMetric {
    pub value: f64,
    pub pair: (usize, usize),
    pub normal: [f64; 3],
    pub faces: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub f_min: f64,
    pub tau_min: f64,
    pub force_pair: (usize, usize),
    pub torque_pair: (usize, usize),
    pub faces_inspected: usize,
    /// Set when the torque polytope is flat (zero thickness along `torque_normal`).
    pub torque_flat: bool,
    pub torque_normal: [f64; 3],
}

/// Support of the zonotope `{sum l_k g_k : 0 <= l_k <= lmax_k}` along `h`.
pub fn support(generators: &[Vec3], lmax: &[f64], h: &Vec3) -> f64 {
    generators.iter().zip(lmax).map(|(g, &l)| (l * h.dot(g)).max(0.0)).sum()
}

/// Minimum over ordered generator pairs of `|s(h_ij) - h_ij . offset|`.
pub fn min_face_distance(generators: &[Vec3], lmax: &[f64], offset: &Vec3) -> Option<FaceMetric> {
    let n = generators.len();
    let mut best: Option<FaceMetric> = None;
    let mut faces = 0;
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let c = generators[i].cross(&generators[j]);
            let norm = c.norm();
            let scale = generators[i].norm() * generators[j].norm();
            if norm <= PARALLEL_EPS * scale.max(f64::MIN_POSITIVE) {
                continue;
            }
            let h = c / norm;
            faces += 1;
            let d = (support(generators, lmax, &h) - h.dot(offset)).abs();
            if best.is_none_or(|b| d < b.value) {
                best = Some(FaceMetric { value: d, pair: (i, j), normal: [h.x, h.y, h.z], faces: 0 });
            }
        }
    }
    best.map(|b| FaceMetric { faces, ..b })
}

fn columns(m: &nalgebra::DMatrix<f64>) -> Vec<Vec3> {
    (0..m.ncols()).map(|j| Vec3::new(m[(0, j)], m[(1, j)], m[(2, j)])).collect()
}

pub fn guaranteed_min_force(model: &AirframeModel) -> Result<FaceMetric, FeasibilityError> {
    min_force_with(model, &build_allocation(model))
}

pub fn guaranteed_min_torque(model: &AirframeModel) -> Result<FaceMetric, FeasibilityError> {
    min_torque_with(model, &build_allocation(model))
}

pub fn min_force_with(model: &AirframeModel, alloc: &AllocationMatrices) -> Result<FaceMetric, FeasibilityError> {
    let gravity = Vec3::new(0.0, 0.0, model.weight());
    min_face_distance(&columns(&alloc.q_tran), &model.max_thrusts(), &gravity).ok_or(FeasibilityError::DegenerateForcePolytope)
}

pub fn min_torque_with(model: &AirframeModel, alloc: &AllocationMatrices) -> Result<FaceMetric, FeasibilityError> {
    min_face_distance(&columns(&alloc.q_rot), &model.max_thrusts(), &Vec3::zeros()).ok_or(FeasibilityError::DegenerateTorquePolytope)
}

pub fn feasibility_report(model: &AirframeModel) -> Result<FeasibilityReport, FeasibilityError> {
    let f = guaranteed_min_force(model)?;
    let t = guaranteed_min_torque(model)?;
    let gens = columns(&build_allocation(model).q_rot);
    let n = Vec3::from(t.normal);
    let flat = t.value == 0.0 && gens.iter().all(|v| v.dot(&n).abs() < 1e-12);
    Ok(FeasibilityReport {
        f_min: f.value,
        tau_min: t.value,
        force_pair: f.pair,
        torque_pair: t.pair,
        faces_inspected: f.faces + t.faces,
        torque_flat: flat,
        torque_normal: t.normal,
    })
}

/// Points spread evenly on the unit sphere.
pub fn fibonacci_sphere(samples: usize) -> Vec<Vec3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..samples)
        .map(|k| {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / samples as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * k as f64;
            Vec3::new(r * phi.cos(), r * phi.sin(), z)
        })
        .collect()
}

/// Brute-force minimum of `|s(h) - h . offset|`: evenly spread samples, then
/// a shrinking pattern search on the sphere from the best few.
pub fn oracle_min_wrench(model: &AirframeModel, which: WrenchKind, samples: usize) -> f64 {
    let alloc = build_allocation(model);
    let (gens, offset) = match which {
        WrenchKind::Force => (columns(&alloc.q_tran), Vec3::new(0.0, 0.0, model.weight())),
        WrenchKind::Torque => (columns(&alloc.q_rot), Vec3::zeros()),
    };
    let lmax = model.max_thrusts();
    let eval = |h: &Vec3| (support(&gens, &lmax, h) - h.dot(&offset)).abs();
    let mut scored: Vec<(f64, Vec3)> = fibonacci_sphere(samples).into_par_iter().map(|h| (eval(&h), h)).collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let spacing = (4.0 * std::f64::consts::PI / samples.max(1) as f64).sqrt();
    scored
        .par_iter()
        .take(REFINE_STARTS)
        .map(|&(v, h)| refine(&eval, h, v, 2.0 * spacing))
        .reduce(|| f64::INFINITY, f64::min)
}

const REFINE_STARTS: usize = 16;
const REFINE_ITERS: usize = 5000;

fn refine(eval: &(impl Fn(&Vec3) -> f64 + Sync), mut h: Vec3, mut best: f64, mut step: f64) -> f64 {
    let mut iters = 0;
    while step > 1e-9 && iters < REFINE_ITERS {
        iters += 1;
        let a = h.cross(&if h.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() }).normalize();
        let b = h.cross(&a);
        let mut moved = false;
        for k in 0..8 {
            let phi = k as f64 * std::f64::consts::FRAC_PI_4;
            let cand = (h + step * (phi.cos() * a + phi.sin() * b)).normalize();
            let v = eval(&cand);
            if v < best {
                best = v;
                h = cand;
                moved = true;
                break;
            }
        }
        if !moved {
            step *= 0.5;
        }
    }
    best
}

/// Pure yaw torque available in both senses: `min(s(+z), s(-z))` of the torque polytope.
pub fn yaw_torque_capability(model: &AirframeModel) -> f64 {
    let alloc = build_allocation(model);
    let gens = columns(&alloc.q_rot);
    let lmax = model.max_thrusts();
    support(&gens, &lmax, &Vec3::z()).min(support(&gens, &lmax, &-Vec3::z()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::presets;

    #[test]
    fn flat_quad_has_no_force_faces() {
        assert_eq!(guaranteed_min_force(&presets::flat_quad()), Err(FeasibilityError::DegenerateForcePolytope));
    }

    #[test]
    fn flat_quad_torque_is_zero_and_flagged() {
        let m = presets::flat_quad();
        let t = guaranteed_min_torque(&m).unwrap();
        assert_eq!(t.value, 0.0);
        assert!(oracle_min_wrench(&m, WrenchKind::Torque, 100_000) < 0.05);
    }

    #[test]
    fn collinear_arms_flag_flat_torque() {
        use crate::model::RotorGeometry;
        let mut m = presets::reference_unit();
        let xs = [0.12, -0.12, 0.24, -0.24];
        for (r, x) in m.rotors.iter_mut().zip(xs) {
            *r = RotorGeometry::from_angles(Vec3::new(x, 0.0, 0.0), r.alpha, r.beta, r.sigma, r.max_thrust);
        }
        let rep = feasibility_report(&m).unwrap();
        assert!(rep.torque_flat);
        assert_eq!(rep.tau_min, 0.0);
        assert!(rep.torque_normal[0].abs() > 1.0 - 1e-12);
    }

    #[test]
    fn single_rotor_degenerate() {
        let mut m = presets::flat_quad();
        m.rotors.truncate(1);
        assert_eq!(guaranteed_min_force(&m), Err(FeasibilityError::DegenerateForcePolytope));
        assert_eq!(guaranteed_min_torque(&m), Err(FeasibilityError::DegenerateTorquePolytope));
    }

    #[test]
    fn oracle_bounds_geometric_value() {
        let m = presets::reference_unit();
        let g = guaranteed_min_force(&m).unwrap().value;
        let o = oracle_min_wrench(&m, WrenchKind::Force, 100_000);
        assert!(o >= g - 1e-9 && o <= g * 1.02, "{o} vs {g}");
    }

    #[test]
    fn torque_scales_linearly_with_limit() {
        let m = presets::reference_unit();
        let mut m2 = m.clone();
        for r in &mut m2.rotors {
            r.max_thrust *= 1.7;
        }
        let a = guaranteed_min_torque(&m).unwrap().value;
        let b = guaranteed_min_torque(&m2).unwrap().value;
        assert!((b - 1.7 * a).abs() < 1e-12);
    }

    #[test]
    fn sphere_points_are_unit() {
        for p in fibonacci_sphere(100) {
            assert!((p.norm() - 1.0).abs() < 1e-12);
        }
    }
}
