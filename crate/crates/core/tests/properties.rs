use dockflight_core::allocation::{allocate_under_actuated, pseudo_inverse, static_thrust_frame, QuadAllocation};
use dockflight_core::control::{wrap_angle, CarriedIntegrals};
use dockflight_core::model::{build_allocation, presets, Frame, Vec3, WrenchVector};
use dockflight_core::motion::{condition_check, fsm_step, Condition, FsmConfig, FsmContext, FsmStateId, Observation, RelativePose};
use dockflight_core::switching::{begin_switch, transition_scale, transition_weight};
use nalgebra::DVector;
use proptest::prelude::*;

fn angle_pair() -> impl Strategy<Value = (f64, f64)> {
    (0.2..0.9f64, -3.1..3.1f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn assembled_pinv_round_trip(a in prop::array::uniform4(angle_pair()), w in prop::array::uniform6(-10.0..10.0f64)) {
        let unit = presets::unit_from_angles(&a);
        let joined = presets::assembled(&unit, presets::DOCKED_SEPARATION);
        let q = build_allocation(&joined).q;
        let (pinv, rank) = pseudo_inverse(&q);
        prop_assume!(rank == 6);
        let w = DVector::from_column_slice(&w);
        let back = &q * (&pinv * &w);
        prop_assert!((back - &w).amax() < 1e-9 * (1.0 + w.amax()));
    }

    #[test]
    fn quad_inverse_round_trip(fz in 0.0..20.0f64, t in prop::array::uniform3(-1.0..1.0f64)) {
        let frame = static_thrust_frame(&presets::balanced_unit()).unwrap();
        let quad = QuadAllocation::new(&frame).unwrap();
        let tau = Vec3::from(t);
        let l = allocate_under_actuated(&quad, fz, &tau);
        let ones = nalgebra::Vector4::from(l);
        let back = quad.matrix * ones;
        prop_assert!((back[0] - fz).abs() < 1e-9);
        for k in 0..3 {
            prop_assert!((back[k + 1] - t[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn blend_keeps_thrust_direction(prev in prop::collection::vec(0.1..7.0f64, 4), raws in prop::collection::vec(prop::collection::vec(0.0..7.0f64, 4), 1..40)) {
        let (mut ts, _) = begin_switch(&prev, CarriedIntegrals::default(), 0.9).unwrap();
        for raw in raws {
            let total: f64 = raw.iter().sum();
            let (out, info) = transition_scale(&raw, &mut ts);
            if total > 0.0 {
                prop_assert!(!info.held);
                for (o, r) in out.iter().zip(&raw) {
                    prop_assert!((o - r * info.scale).abs() < 1e-12);
                }
                let expect = info.weight * total + (1.0 - info.weight) * ts.s_unit;
                prop_assert!((out.iter().sum::<f64>() - expect).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn weight_is_monotone_and_bounded(n in 0u32..100_000, a in 0.01..10.0f64) {
        let w0 = transition_weight(n as f64, a);
        let w1 = transition_weight(n as f64 + 1.0, a);
        prop_assert!((0.0..1.0).contains(&w0));
        prop_assert!(w1 > w0);
    }

    #[test]
    fn wrapped_angle_in_range(x in -100.0..100.0f64) {
        let w = wrap_angle(x);
        prop_assert!(w > -std::f64::consts::PI - 1e-12 && w <= std::f64::consts::PI + 1e-12);
        prop_assert!(((x - w) / std::f64::consts::TAU - ((x - w) / std::f64::consts::TAU).round()).abs() < 1e-9);
    }

    /// Random relative-pose sequences: the join is only sent under condition 2,
    /// and any condition-1 loss during Approach lands in Standby on that tick.
    #[test]
    fn fsm_safety(seq in prop::collection::vec((0.44..0.62f64, -0.03..0.03f64, -0.03..0.03f64, -0.2..0.2f64), 1..200)) {
        let cfg = FsmConfig { x_dock: 0.4775, ..FsmConfig::default() };
        let mut ctx = FsmContext::new(cfg);
        for (x, y, z, dpsi) in seq {
            let rel = RelativePose::new(Vec3::new(x, y, z), std::f64::consts::PI + dpsi);
            let before = ctx.state;
            let (state, cmds) = fsm_step(&mut ctx, &Observation { rel: Some(rel), ..Default::default() });
            let c1 = condition_check(&rel, &cfg.tolerances, Condition::One, cfg.x_dock);
            let c2 = condition_check(&rel, &cfg.tolerances, Condition::Two, cfg.x_dock);
            if cmds.iter().any(|c| matches!(c, dockflight_core::motion::Command::Join)) {
                prop_assert!(c2);
            }
            if before == FsmStateId::Approach && !c1 {
                prop_assert_eq!(state, FsmStateId::Standby);
            }
        }
        prop_assert_eq!(ctx.stats.unsafe_joins, 0);
        prop_assert_eq!(ctx.stats.missed_recoveries, 0);
    }
}

#[test]
fn hover_thrust_matches_weight() {
    let unit = presets::balanced_unit();
    let frame = static_thrust_frame(&unit).unwrap();
    let alloc = build_allocation(&unit);
    let l = DVector::from_column_slice(&frame.lambda_s);
    assert!(((&alloc.q_tran * &l).norm() - unit.weight()).abs() < 1e-9);
    assert!((&alloc.q_rot * &l).norm() < 1e-6);
    let w = WrenchVector::new(Vec3::new(0.0, 0.0, 10.0), Vec3::zeros(), Frame::CoG);
    assert_eq!(w.to_dvector().len(), 6);
}
