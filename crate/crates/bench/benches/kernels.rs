use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use micropolar::init::{microrotation_pattern, taylor_green, vacuum_plateau};
use micropolar::interp::{Band, TrigInterpolant};
use micropolar::solver::advect_density;
use micropolar::spectral::{leray_project, spectrum};
use micropolar::{step, FluidState, Params, SolverConfig, TorusGrid};

fn state(g: &TorusGrid) -> FluidState {
    let mut s = FluidState::rest(g, 1.0);
    s.rho = vacuum_plateau(g, 1.0, 0.5, 0.1);
    s.u = taylor_green(g, 1.0);
    s.omega = microrotation_pattern(g, 1.0);
    s
}

fn spectral(c: &mut Criterion) {
    let mut group = c.benchmark_group("spectral");
    for (d, n) in [(2, 64), (2, 128), (3, 32)] {
        let g = TorusGrid::new(d, n).unwrap();
        let s = state(&g);
        let id = format!("d{d}_n{n}");
        group.bench_with_input(BenchmarkId::new("forward", &id), &g, |b, g| b.iter(|| spectrum(g, black_box(&s.rho))));
        group.bench_with_input(BenchmarkId::new("leray", &id), &g, |b, g| b.iter(|| leray_project(g, black_box(&s.u))));
    }
    group.finish();
}

fn solver(c: &mut Criterion) {
    let mut group = c.benchmark_group("solver");
    group.sample_size(10);
    for (d, n) in [(2, 64), (3, 16)] {
        let g = TorusGrid::new(d, n).unwrap();
        let s = state(&g);
        let p = Params::default();
        let cfg = SolverConfig { dt: 1e-3, ..SolverConfig::default() };
        let id = format!("d{d}_n{n}");
        group.bench_function(BenchmarkId::new("step", &id), |b| b.iter(|| step(&g, black_box(&s), &p, &cfg).unwrap()));
        group.bench_function(BenchmarkId::new("advect_density", &id), |b| {
            b.iter(|| advect_density(&g, black_box(&s.rho), &s.u, 1e-3, 1.0))
        });
    }
    group.finish();
}

fn interpolation(c: &mut Criterion) {
    let g = TorusGrid::new(2, 64).unwrap();
    let s = state(&g);
    let fields = [&s.u[0], &s.u[1]];
    c.bench_function("interp/build_d2_n64", |b| b.iter(|| TrigInterpolant::new(&g, black_box(&fields), Band::Dealiased)));
    let it = TrigInterpolant::new(&g, &fields, Band::Dealiased);
    let mut out = [0.0; 2];
    c.bench_function("interp/eval_d2_n64", |b| {
        b.iter(|| {
            it.eval_into(black_box([0.123, 0.456, 0.0]), &mut out);
            out
        })
    });
}

criterion_group!(benches, spectral, solver, interpolation);
criterion_main!(benches);
