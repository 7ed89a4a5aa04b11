use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use eitproj_bench::tank;
use eitproj_core::forward::assemble;
use eitproj_core::mesh::MoveDirection;
use eitproj_core::projection::build_projection;
use eitproj_core::reconstruct::{build_problem, Reconstructor};
use eitproj_core::regularization::{EpsilonMode, Regularizer};
use eitproj_core::sampling::NoiseModel;
use eitproj_core::sensitivity::Sensitivity;
use nalgebra::DVector;
use std::hint::black_box;

fn forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward");
    group.sample_size(10);
    for level in [0, 1] {
        let f = tank(level);
        group.bench_with_input(BenchmarkId::new("assemble", f.mesh.n_nodes()), &f, |b, f| {
            b.iter(|| assemble(&f.mesh, &f.layout, &f.sigma, &f.contact).unwrap())
        });
        let sys = assemble(&f.mesh, &f.layout, &f.sigma, &f.contact).unwrap();
        group.bench_with_input(BenchmarkId::new("solve", f.mesh.n_nodes()), &f, |b, f| {
            b.iter(|| sys.solve(black_box(&f.patterns)).unwrap())
        });
    }
    group.finish();
}

fn jacobians(c: &mut Criterion) {
    let f = tank(0);
    let sys = assemble(&f.mesh, &f.layout, &f.sigma, &f.contact).unwrap();
    let sol = sys.solve(&f.patterns).unwrap();
    let sens = Sensitivity::new(&sys, &sol).unwrap();
    let mut group = c.benchmark_group("jacobian");
    group.sample_size(10);
    group.bench_function("sigma", |b| b.iter(|| sens.sigma()));
    group.bench_function("zeta", |b| b.iter(|| sens.zeta()));
    group.bench_function("azimuth", |b| b.iter(|| sens.position(MoveDirection::Azimuth).unwrap()));
    group.finish();
}

fn projection_and_inversion(c: &mut Criterion) {
    let f = tank(0);
    let sys = assemble(&f.mesh, &f.layout, &f.sigma, &f.contact).unwrap();
    let sol = sys.solve(&f.patterns).unwrap();
    let sens = Sensitivity::new(&sys, &sol).unwrap();
    let (js, jz, jp) = (sens.sigma(), sens.zeta(), sens.position(MoveDirection::Azimuth).unwrap());
    c.bench_function("projection/zeta_phi", |b| b.iter(|| build_projection(&[&jz, &jp]).unwrap()));

    let p = build_projection(&[&jz, &jp]).unwrap();
    let w: Vec<f64> = f.mesh.nodes().iter().map(|x| if x.x > 0.01 { 0.5 } else { 0.0 }).collect();
    let y = &js.matrix * DVector::from_vec(w);
    let noise = NoiseModel::with_std(1e-3 * y.amax()).unwrap();
    let problem = build_problem(&js, &y, &noise, Some(&p)).unwrap();
    let reg = Regularizer::new(&f.mesh, 1e-6, EpsilonMode::Heuristic).unwrap();
    let solver = Reconstructor::new(&problem, &reg, 1e2).unwrap();
    let mut group = c.benchmark_group("reconstruct");
    group.sample_size(10);
    group.bench_function("woodbury_step", |b| b.iter(|| solver.solve_woodbury(reg.theta_zero().unwrap()).unwrap()));
    group.bench_function("lagged_diffusivity_5", |b| b.iter(|| solver.lagged_diffusivity(5).unwrap()));
    group.finish();
}

criterion_group!(benches, forward, jacobians, projection_and_inversion);
criterion_main!(benches);
