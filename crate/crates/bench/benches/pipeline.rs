use std::f64::consts::PI;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use qdgate_core::confinement::{build_sp_basis, DotGeometry, MaterialParams};
use qdgate_core::coulomb::{build_coulomb_tensor, CoulombKind, CoulombOptions};
use qdgate_core::gatesim::{propagate, schedule, CnotLine, DynamicsModel, GateOptions, StepControl};
use qdgate_core::manybody::{identify_states, solve_spectrum, IdentifyOptions};
use qdgate_core::optics::dipole_table;
use qdgate_core::units::HBAR;
use qdgate_core::QubitState;

fn benches(c: &mut Criterion) {
    let material = MaterialParams::default();
    let geometry = DotGeometry::default();
    let options = CoulombOptions::default();

    let small = build_sp_basis(&material, &geometry, 6, 6).unwrap();
    c.bench_function("coulomb_tensor_eh_6_states", |b| {
        b.iter(|| build_coulomb_tensor(CoulombKind::Eh, black_box(&small), &material, &options, None).unwrap())
    });

    let basis = build_sp_basis(&material, &geometry, 10, 10).unwrap();
    let [ee, hh, eh] = [CoulombKind::Ee, CoulombKind::Hh, CoulombKind::Eh]
        .map(|k| build_coulomb_tensor(k, &basis, &material, &options, None).unwrap().0);
    let mut group = c.benchmark_group("slow");
    group.sample_size(10);
    group.bench_function("many_body_spectrum_10_states", |b| {
        b.iter(|| solve_spectrum(black_box(&basis), &ee, &hh, &eh).unwrap())
    });

    let raw = solve_spectrum(&basis, &ee, &hh, &eh).unwrap();
    let dipoles = dipole_table(&raw);
    let (spectrum, map) = identify_states(&raw, &dipoles, &IdentifyOptions::default()).unwrap();
    let model = DynamicsModel::new(&spectrum, &map, &dipoles);
    let gate = GateOptions::default();
    let lines = [CnotLine::X0MinusDelta, CnotLine::X0];
    let amps = lines.map(|l| PI * HBAR / (model.line_dipole(l).abs() * gate.envelope().integral()));
    let seq = schedule(&map, &lines, &amps, &gate);
    let start = model.basis_state(QubitState::Q01, 0.0);
    group.bench_function("propagate_two_pulse_not", |b| {
        b.iter(|| propagate(&model, black_box(&start), &seq, 8.0, &[], &StepControl::default()).unwrap())
    });
    group.finish();
}

criterion_group!(pipeline, benches);
criterion_main!(pipeline);
