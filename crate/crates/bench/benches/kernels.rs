use std::f64::consts::PI;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use qfp_core::circuit::{compose_auto, tunable_bs_circuit, ComposeOptions};
use qfp_core::fock::enumerate_basis;
use qfp_core::linalg::haar_unitary;
use qfp_core::rng::substream;
use qfp_core::synthesis::{template_metrics, CircuitTemplate};
use qfp_core::transfer::{fock_transfer, ryser_permanent, target_gate, GateSpec, PermanentMethod};

fn permanents(c: &mut Criterion) {
    let mut rng = substream(0, "bench-permanent", 0);
    let mut group = c.benchmark_group("ryser_permanent");
    for n in [4, 6, 8, 10] {
        let a = haar_unitary(n, &mut rng);
        group.bench_with_input(BenchmarkId::from_parameter(n), &a, |b, a| b.iter(|| ryser_permanent(black_box(a))));
    }
    group.finish();

    let mut group = c.benchmark_group("fock_transfer");
    for (photons, modes) in [(2, 4), (3, 6), (4, 6)] {
        let v = haar_unitary(modes, &mut rng);
        let basis = enumerate_basis(photons, modes).unwrap();
        group.bench_function(format!("N{photons}_M{modes}"), |b| {
            b.iter(|| fock_transfer(black_box(&v), &basis, &basis, PermanentMethod::Auto).unwrap())
        });
    }
    group.finish();
}

fn compose(c: &mut Criterion) {
    let circuit = tunable_bs_circuit(PI / 3.0, 0.83);
    c.bench_function("compose_tunable_bs", |b| {
        b.iter(|| compose_auto(black_box(&circuit), None, ComposeOptions::default()).unwrap())
    });
}

fn synthesis_objective(c: &mut Criterion) {
    let mut rng = substream(0, "bench-synthesis", 0);
    let mut group = c.benchmark_group("synthesis_objective");
    for spec in [GateSpec::Hadamard, GateSpec::Tritter, GateSpec::Cnot] {
        let template = CircuitTemplate::for_gate(spec);
        let target = target_gate(spec).unwrap();
        let params = template.random_start(&mut rng);
        group.bench_function(spec.to_string(), |b| {
            b.iter(|| template_metrics(&template, &target, black_box(&params)))
        });
    }
    group.finish();
}

criterion_group!(benches, permanents, compose, synthesis_objective);
criterion_main!(benches);
