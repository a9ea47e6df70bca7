use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use uvlab::counterterm::{e2_quadrature, QuadratureSpec};
use uvlab::estimates::run_explicit_batch;
use uvlab::modegrid::{CutoffSpec, DispersionParams, KernelSpec};
use uvlab::neumann::{catalog, enumerate};
use uvlab::par;
use uvlab::spectra::{renormalized_sweep, ModePolicy, SweepConfig};

fn paths(c: &mut Criterion, group: &str, f: impl Fn()) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    g.bench_function(BenchmarkId::new("path", "parallel"), |b| b.iter(&f));
    g.bench_function(BenchmarkId::new("path", "sequential"), |b| b.iter(|| par::sequential(&f)));
    g.finish();
}

fn sweep(c: &mut Criterion) {
    let cfg = SweepConfig {
        d: 1,
        kspec: KernelSpec::default(),
        cspec: CutoffSpec::new(1.0, 1).unwrap(),
        params: DispersionParams::default(),
        q_max: 4.0,
        cells: 6,
        modes: ModePolicy::Full,
        boson_cap: 1,
        tol: 1e-9,
    };
    paths(c, "sweep", || {
        renormalized_sweep(&cfg, &[1.0, 2.0, 3.0, 4.0]).unwrap();
    });
}

fn audit_batch(c: &mut Criterion) {
    paths(c, "explicit_audits", || {
        run_explicit_batch(1000, 40).unwrap();
    });
}

fn enumeration(c: &mut Criterion) {
    let cat = catalog();
    paths(c, "enumerate_k7", || {
        enumerate(&cat, 7).unwrap();
    });
}

fn quadrature(c: &mut Criterion) {
    let spec = QuadratureSpec::default();
    paths(c, "e2_quadrature_d3", || {
        e2_quadrature(&KernelSpec::default(), &CutoffSpec::new(30.0, 1).unwrap(), &DispersionParams::default(), 3, &spec).unwrap();
    });
}

criterion_group!(benches, sweep, audit_batch, enumeration, quadrature);
criterion_main!(benches);
