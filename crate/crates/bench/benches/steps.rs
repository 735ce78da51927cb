use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use wgflow::reference::{barenblatt_m2, barenblatt_unit_mass_constant, gaussian_heat};
use wgflow::stepper::{bdf2_step, jko_step, run};
use wgflow::transport::w2_squared;
use wgflow::{EnergySpec, PotentialHandle, QuantileMeasure, Scheme, StepperConfig};

const TAU: f64 = 1e-3;

fn gaussian(n: usize) -> QuantileMeasure {
    gaussian_heat(0.0, 0.0, 1.0).unwrap().discretize(n).unwrap()
}

/// `(ρ^0, ρ^1)` of a heat run, the input of a representative BDF2 step.
fn heat_pair(n: usize, spec: &EnergySpec) -> (QuantileMeasure, QuantileMeasure) {
    let cfg = StepperConfig::new(TAU, spec).unwrap();
    let rho0 = gaussian(n);
    let rho1 = jko_step(&rho0, spec, &cfg).unwrap().measure;
    (rho0, rho1)
}

fn steps(c: &mut Criterion) {
    let problems = [
        ("heat", EnergySpec::with_internal(1.0).unwrap()),
        ("porous", EnergySpec::with_internal(2.0).unwrap()),
        (
            "aggregation",
            EnergySpec::with_internal(1.0)
                .unwrap()
                .interaction(PotentialHandle::quadratic(1.0))
                .unwrap(),
        ),
    ];
    for (name, spec) in &problems {
        let cfg = StepperConfig::new(TAU, spec).unwrap();
        let mut group = c.benchmark_group(format!("step/{name}"));
        for n in [100, 400, 1600] {
            if *name == "aggregation" && n > 400 {
                continue;
            }
            let (eta, nu) = heat_pair(n, spec);
            group.bench_with_input(BenchmarkId::new("jko", n), &nu, |b, nu| {
                b.iter(|| jko_step(black_box(nu), spec, &cfg).unwrap())
            });
            group.bench_with_input(BenchmarkId::new("bdf2", n), &(eta, nu), |b, (eta, nu)| {
                b.iter(|| bdf2_step(black_box(eta), black_box(nu), spec, &cfg).unwrap())
            });
        }
        group.finish();
    }
}

fn runs(c: &mut Criterion) {
    let spec = EnergySpec::with_internal(2.0).unwrap();
    let rho0 = barenblatt_m2(0.25, barenblatt_unit_mass_constant())
        .unwrap()
        .discretize(200)
        .unwrap();
    let cfg = StepperConfig::new(TAU, &spec).unwrap();
    let mut group = c.benchmark_group("run/porous-n200-t0.05");
    group.sample_size(20);
    for scheme in [Scheme::Jko, Scheme::Bdf2] {
        group.bench_function(format!("{scheme:?}").to_lowercase(), |b| {
            b.iter(|| run(black_box(&rho0), 0.05, scheme, &spec, &cfg).unwrap())
        });
    }
    group.finish();
}

fn transport(c: &mut Criterion) {
    let mut group = c.benchmark_group("w2_squared");
    for n in [100, 1600, 25600] {
        let a = gaussian(n);
        let b = a.translated(0.3).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &(a, b), |bch, (a, b)| {
            bch.iter(|| w2_squared(black_box(a), black_box(b)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, steps, runs, transport);
criterion_main!(benches);
