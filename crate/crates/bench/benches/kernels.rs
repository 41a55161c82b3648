use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use dockflight_core::allocation::{static_thrust_frame, FullAllocator};
use dockflight_core::control::{design_lqi, LqiWeights};
use dockflight_core::feasibility::feasibility_report;
use dockflight_core::model::{build_allocation, presets, BodyState, Frame, RotationMatrix, Vec3, WrenchVector};
use dockflight_core::sim::world::{integrate_body, Body, ExternalLoad};
use dockflight_core::sim::{run_scenario, ScenarioKind, ScenarioSpec};

fn feasibility(c: &mut Criterion) {
    let unit = presets::reference_unit();
    let joined = presets::assembled(&unit, presets::DOCKED_SEPARATION);
    c.bench_function("feasibility/unit", |b| b.iter(|| feasibility_report(black_box(&unit)).unwrap()));
    c.bench_function("feasibility/assembled", |b| b.iter(|| feasibility_report(black_box(&joined)).unwrap()));
}

fn allocation(c: &mut Criterion) {
    let joined = presets::assembled(&presets::reference_unit(), presets::DOCKED_SEPARATION);
    let alloc = build_allocation(&joined);
    c.bench_function("allocation/pinv_build", |b| b.iter(|| FullAllocator::new(black_box(&alloc)).unwrap()));
    let full = FullAllocator::new(&alloc).unwrap();
    let w = WrenchVector::new(Vec3::new(0.3, -0.2, 23.0), Vec3::new(0.05, 0.1, -0.02), Frame::CoG);
    c.bench_function("allocation/apply", |b| b.iter(|| full.allocate(black_box(&w))));
}

fn riccati(c: &mut Criterion) {
    let unit = presets::balanced_unit();
    let frame = static_thrust_frame(&unit).unwrap();
    let weights = LqiWeights::default();
    c.bench_function("riccati/lqi_design", |b| b.iter(|| design_lqi(black_box(&unit), &frame, &weights).unwrap()));
}

fn dynamics(c: &mut Criterion) {
    let unit = presets::balanced_unit();
    let hover = unit.weight() / 4.0;
    let state = BodyState::at_rest(Vec3::new(0.0, 0.0, 1.0), RotationMatrix::identity());
    let mut body = Body::new(unit, vec![1.0; 4], state, Vec::new(), false);
    let (f, t) = (Vec3::new(0.0, 0.0, 4.0 * hover), Vec3::zeros());
    let ext = ExternalLoad::default();
    c.bench_function("sim/rkmk4_step", |b| b.iter(|| integrate_body(black_box(&mut body), &f, &t, &ext, 1e-3)));

    let mut spec = ScenarioSpec::new(ScenarioKind::Disassembly, 0);
    spec.duration = Some(2.0);
    let mut g = c.benchmark_group("sim");
    g.sample_size(10);
    g.bench_function("disassembly_2s", |b| b.iter(|| run_scenario(black_box(&spec)).unwrap()));
    g.finish();
}

criterion_group!(benches, feasibility, allocation, riccati, dynamics);
criterion_main!(benches);
