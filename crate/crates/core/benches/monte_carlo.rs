use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pamkit_core::covariance::SpectralFamily;
use pamkit_core::functional::{moment_fk_bridge, InitialDatum, InteractionSpec, McConfig, PathKernel};
use pamkit_core::paths::{PathEnsemble, PathKind, TimeGrid};
use pamkit_core::variational::{maximize, SolverConfig};
use pamkit_core::Execution;

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn fk_moment(c: &mut Criterion) {
    let fam = SpectralFamily::riesz(1, 0.5).unwrap();
    let spec = InteractionSpec::new(2, 1.0, 0.5, PathKernel::smoothed(&fam, 0.25).unwrap(), InitialDatum::ConstantOne)
        .unwrap();
    let mut group = c.benchmark_group("fk_bridge_moment");
    group.sample_size(10);
    for (name, exec) in MODES {
        let mc = McConfig {
            samples: 4000,
            shards: 16,
            exec,
            ..McConfig::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(name), &mc, |b, mc| {
            b.iter(|| black_box(moment_fk_bridge(&spec, mc, 7).unwrap().mean))
        });
    }
    group.finish();
}

fn path_ensemble(c: &mut Criterion) {
    let grid = TimeGrid::new(1.0, 64).unwrap();
    let mut group = c.benchmark_group("bridge_ensemble");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| black_box(PathEnsemble::generate(grid, 1, PathKind::Bridge, 20_000, 7, exec).paths.len()))
        });
    }
    group.finish();
}

fn variational_starts(c: &mut Criterion) {
    let fam = SpectralFamily::riesz(1, 0.5).unwrap();
    let mut group = c.benchmark_group("variational_multistart");
    group.sample_size(10);
    for (name, exec) in MODES {
        let cfg = SolverConfig {
            mx: 64,
            starts: 4,
            exec,
            ..SolverConfig::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(name), &cfg, |b, cfg| {
            b.iter(|| black_box(maximize(0.5, &fam, 0.0, cfg, 7).unwrap().e))
        });
    }
    group.finish();
}

criterion_group!(benches, fk_moment, path_ensemble, variational_starts);
criterion_main!(benches);
