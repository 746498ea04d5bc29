//! Data-parallel kernels on the global rayon pool against the same kernels
//! pinned to one worker thread. Built without the `parallel` feature only the
//! sequential fallback is measured.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use radcam::harness::{generate_scene, run_sweep, splat_scene, HarnessConfig, SceneSpec, SweepSpec};
use radcam::radar_density::{build_density, DensityParams, GridSpec};

fn dense_spec() -> SceneSpec {
    SceneSpec { reflector_count: 2000, clutter_count: 2000, stride: 1, ..Default::default() }
}

fn small_sweep() -> HarnessConfig {
    let mut cfg = HarnessConfig::default();
    cfg.scene.clutter_count = 0;
    cfg.descent.max_iters = 60;
    cfg.sweep = SweepSpec {
        axes: vec![radcam::harness::Axis::Ry, radcam::harness::Axis::Tx],
        rotation_magnitudes_deg: vec![3.0],
        translation_magnitudes_m: vec![0.1],
        signed: true,
        seeds: 1,
        boxes: vec![],
    };
    cfg
}

#[cfg(feature = "parallel")]
fn modes() -> Vec<(&'static str, Option<rayon::ThreadPool>)> {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    vec![("sequential", Some(one)), ("parallel", None)]
}

#[cfg(not(feature = "parallel"))]
fn modes() -> Vec<(&'static str, Option<()>)> {
    vec![("sequential", None)]
}

#[cfg(feature = "parallel")]
fn run<R: Send>(pool: &Option<rayon::ThreadPool>, f: impl FnOnce() -> R + Send) -> R {
    match pool {
        Some(p) => p.install(f),
        None => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn run<R: Send>(_: &Option<()>, f: impl FnOnce() -> R + Send) -> R {
    f()
}

fn bench(c: &mut Criterion) {
    let scene = generate_scene(&dense_spec(), 1).unwrap();
    let params = DensityParams::default();
    let grid = GridSpec::default();
    let cfg = small_sweep();

    let mut g = c.benchmark_group("splat");
    for (name, pool) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run(&pool, || splat_scene(&scene, &scene.t_true, &params, 0.1).unwrap()))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("density");
    for (name, pool) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run(&pool, || build_density(&scene.frames, None, &grid, &params, -0.5).unwrap()))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("sweep");
    g.sample_size(10);
    for (name, pool) in modes() {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| run(&pool, || run_sweep(&cfg).unwrap())));
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
