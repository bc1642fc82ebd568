//! Rayon against the sequential fallback on the hot loops: forward render,
//! backward render and the screened Poisson solve.
//!
//! Built without the `parallel` feature both variants run sequentially.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use meshsplat::exec::Execution;
use meshsplat::extract::{reconstruct_surface, ExtractOptions, OrientedPointSet};
use meshsplat::optimize::{init_surfels, StageConfig};
use meshsplat::primitives::{icosphere, sphere_points};
use meshsplat::raster::{render, render_backward};
use meshsplat::{CameraPose, Image, RenderOptions, SurfelCloud2D};

const MODES: [(&str, Execution); 2] = [
    ("parallel", Execution::Parallel),
    ("sequential", Execution::Sequential),
];

fn scene() -> SurfelCloud2D {
    let mut s = init_surfels(&icosphere(4, 1.0, [0.6, 0.5, 0.4]), &StageConfig::default()).unwrap();
    for (i, c) in s.colors.iter_mut().enumerate() {
        let p = s.positions[i];
        *c = [0.5 + 0.4 * p[0], 0.5 + 0.4 * p[1], 0.5 + 0.4 * p[2]];
    }
    s
}

fn rasterizer(c: &mut Criterion) {
    let surfels = scene();
    let cam = CameraPose::new(4.0, 30.0, 70.0, 49.1, 256, 256)
        .camera()
        .unwrap();
    let grad = Image::filled(256, 256, [0.1, -0.2, 0.05]);
    let mut group = c.benchmark_group("render_256");
    for (name, execution) in MODES {
        let opts = RenderOptions {
            execution,
            ..Default::default()
        };
        group.bench_with_input(BenchmarkId::new("forward", name), &opts, |b, o| {
            b.iter(|| black_box(render(&surfels, &cam, o).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("backward", name), &opts, |b, o| {
            b.iter(|| black_box(render_backward(&surfels, &cam, o, &grad, None).unwrap()))
        });
    }
    group.finish();
}

fn poisson(c: &mut Criterion) {
    let (p, n) = sphere_points(4000, 1.0);
    let points = OrientedPointSet::new(p, n).unwrap();
    let mut group = c.benchmark_group("extract_64");
    group.sample_size(10);
    for (name, execution) in MODES {
        let opts = ExtractOptions {
            resolution: 64,
            execution,
            ..Default::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(name), &opts, |b, o| {
            b.iter(|| black_box(reconstruct_surface(&points, o).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, rasterizer, poisson);
criterion_main!(benches);
