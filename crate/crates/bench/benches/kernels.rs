use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use htype_core::barrier::{self, BarrierConfig, Region};
use htype_core::harnack::{self, sparse, Boundary, BoundaryData, GridSpec};
use htype_core::{gauge, operator, FieldSpec, GroupPoint, HTypeGroup};
use nalgebra::DMatrix;

fn sample_point(g: &HTypeGroup) -> GroupPoint {
    let c: Vec<f64> = (0..g.dim()).map(|i| 0.3 - 0.17 * i as f64).collect();
    GroupPoint::from_coords(g.m(), &c)
}

fn gauge_kernels(c: &mut Criterion) {
    for name in ["heisenberg:1", "quaternion:2"] {
        let g = HTypeGroup::preset(name).unwrap();
        let p = sample_point(&g);
        let a = DMatrix::identity(g.m(), g.m());
        c.bench_function(&format!("gauge_norm/{name}"), |b| b.iter(|| gauge::gauge_norm(&g, black_box(&p))));
        c.bench_function(&format!("hessian_phi/{name}"), |b| {
            b.iter(|| gauge::horizontal_hessian_phi(&g, black_box(&p)))
        });
        c.bench_function(&format!("kernel_la/{name}"), |b| {
            b.iter(|| barrier::kernel_la(&g, &a, black_box(&p), g.qf() - 2.0, 0.05).unwrap())
        });
        c.bench_function(&format!("la_fd/{name}"), |b| {
            b.iter(|| {
                operator::la_fd_with_matrix(&g, &a, &|q: &GroupPoint| gauge::phi(&g, q), black_box(&p), 1e-4).unwrap()
            })
        });
    }
}

fn barrier_kernels(c: &mut Criterion) {
    let g = HTypeGroup::preset("heisenberg:1").unwrap();
    let consts = gauge::compute_constants(&g, gauge::ConstantsBudget { quadrature: 50_000, k_samples: 10_000 }, 1)
        .unwrap()
        .constants;
    let config = BarrierConfig {
        region: Region::ball(g.origin(), 0.5).unwrap(),
        delta: 2.0,
        eps: 0.05,
        budget: 4_000,
        seed: 3,
    };
    let a = DMatrix::identity(2, 2);
    let x = GroupPoint::from_coords(2, &[0.1, -0.05, 0.02]);
    let mut group = c.benchmark_group("barrier");
    group.sample_size(20);
    group.bench_function("la_h_eps/4000", |b| {
        b.iter(|| barrier::la_h_eps(&g, &a, black_box(&x), &config, consts.k).unwrap())
    });
    group.finish();
}

fn dirichlet(c: &mut Criterion) {
    let g = HTypeGroup::preset("heisenberg:1").unwrap();
    let field = FieldSpec::diagonal(&[1.0, 1.3]).build(2).unwrap();
    let data = Boundary::new(BoundaryData::SinX1, 3).unwrap();
    let f = |p: &GroupPoint| data.eval(&g, p);
    let mut group = c.benchmark_group("dirichlet");
    group.sample_size(10);
    for res in [17, 25] {
        let grid = GridSpec::for_origin_ball(&g, 1.0, 1.0, res).unwrap();
        group.bench_function(format!("assemble/{res}"), |b| {
            b.iter(|| harnack::assemble_system(&grid, &field, &g, &f, "sin").unwrap())
        });
        let system = harnack::assemble_system(&grid, &field, &g, &f, "sin").unwrap();
        group.bench_function(format!("solve/{res}"), |b| b.iter(|| harnack::solve_dirichlet(&system).unwrap()));
        group.bench_function(format!("bicgstab/{res}"), |b| {
            b.iter_batched(
                || vec![0.0; system.rhs.len()],
                |mut x| sparse::bicgstab(&system.matrix, &system.rhs, &mut x, 1e-10, 2000).unwrap(),
                BatchSize::SmallInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, gauge_kernels, barrier_kernels, dirichlet);
criterion_main!(benches);
