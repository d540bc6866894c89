use branchfit::model::{moment_curve, variance_count};
use branchfit::{
    forward_loglik, forward_loglik_grad, full_loglik, full_loglik_grad, project_partial, simulate,
    ModelParams,
};
use criterion::{black_box, criterion_group, criterion_main, Criterion};

fn likelihood(c: &mut Criterion) {
    let p = ModelParams::config1();
    let theta = p.theta();
    let traj = simulate(&p, 1, None);
    let partial = project_partial(&traj);
    c.bench_function("full_loglik", |b| b.iter(|| full_loglik(black_box(&theta), &traj)));
    c.bench_function("full_loglik_grad", |b| b.iter(|| full_loglik_grad(black_box(&theta), &traj)));
    c.bench_function("forward_loglik", |b| b.iter(|| forward_loglik(black_box(&theta), &partial)));
    c.bench_function("forward_loglik_grad", |b| {
        b.iter(|| forward_loglik_grad(black_box(&theta), &partial))
    });
}

fn simulation(c: &mut Criterion) {
    let p = ModelParams::config1();
    let mut seed = 0;
    c.bench_function("simulate_config1", |b| {
        b.iter(|| {
            seed += 1;
            simulate(black_box(&p), seed, None)
        })
    });
}

fn moments(c: &mut Criterion) {
    let p = ModelParams::config1();
    let grid: Vec<f64> = (0..=100).map(|i| i as f64 * 0.5).collect();
    c.bench_function("variance_count_t25", |b| b.iter(|| variance_count(black_box(&p), 25.0)));
    c.bench_function("moment_curve_101", |b| b.iter(|| moment_curve(black_box(&p), &grid)));
}

criterion_group!(benches, likelihood, simulation, moments);
criterion_main!(benches);
