use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hhmc::coupling::{Coupler, CouplingSetup, ShiftVariant};
use hhmc::potential::LogCosh;
use hhmc::rng::{stream, tag};
use hhmc::stats::{clt_sigma, CltMethod};
use hhmc::{flow, ChainState, Field, FlowConfig, Gaussian, HmcKernel, PhasePoint};
use hhmc_bench::{adr_problem, power_spectrum, prior_draw};

fn bench_flow(c: &mut Criterion) {
    let mut g = c.benchmark_group("flow_log_cosh");
    for dim in [16, 256, 4096] {
        let spec = power_spectrum(dim);
        let pot = LogCosh::new(&spec, vec![1.0; dim]).unwrap();
        let cfg = FlowConfig::new(0.5).with_substeps(32);
        let p0 = PhasePoint::new(prior_draw(&spec, 1), prior_draw(&spec, 2)).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(dim), &dim, |b, _| {
            b.iter(|| flow(&spec, &pot, black_box(&p0), &cfg).unwrap())
        });
    }
    g.finish();
}

fn bench_gaussian_step(c: &mut Criterion) {
    let mut g = c.benchmark_group("kernel_step_gaussian");
    for dim in [64, 1024, 16384] {
        let spec = power_spectrum(dim);
        let pot = Gaussian::new(dim);
        let kernel = HmcKernel::new(&spec, &pot, FlowConfig::new(1.0)).unwrap();
        let state = ChainState::new(Field::zeros(dim));
        let mut rng = stream(3, tag::CHAIN, 0);
        g.bench_with_input(BenchmarkId::from_parameter(dim), &dim, |b, _| {
            b.iter(|| kernel.step(black_box(&state), &mut rng).unwrap())
        });
    }
    g.finish();
}

fn bench_coupled_step(c: &mut Criterion) {
    let spec = power_spectrum(256);
    let pot = LogCosh::new(&spec, vec![0.5; 256]).unwrap();
    let setup = CouplingSetup::from_constants(&spec, &pot, ShiftVariant::Linear).unwrap();
    let coupler = Coupler::new(&spec, &pot, FlowConfig::new(0.4).with_substeps(16), setup).unwrap();
    let pair = (ChainState::new(prior_draw(&spec, 4)), ChainState::new(prior_draw(&spec, 5)));
    let mut rng = stream(6, tag::COUPLING, 0);
    c.bench_function("coupled_step_log_cosh_256", |b| b.iter(|| coupler.step(black_box(&pair), &mut rng).unwrap()));
}

fn bench_adr_gradient(c: &mut Criterion) {
    let (problem, spec) = adr_problem(32, 32);
    let q = prior_draw(&spec, 7);
    let mut g = c.benchmark_group("adr_gradient_32x32_d32");
    g.sample_size(10);
    g.bench_function("adjoint", |b| b.iter(|| problem.grad_adjoint(black_box(&q)).unwrap()));
    g.bench_function("tangent", |b| b.iter(|| problem.grad_tangent(black_box(&q)).unwrap()));
    g.finish();
}

fn bench_clt(c: &mut Criterion) {
    let spec = power_spectrum(1);
    let mut rng = stream(8, tag::STATS, 0);
    let xs: Vec<f64> = (0..100_000).map(|_| spec.sample_gaussian(&mut rng).coeffs()[0]).collect();
    let mut g = c.benchmark_group("clt_sigma_1e5");
    g.bench_function("batch_means", |b| b.iter(|| clt_sigma(black_box(&xs), CltMethod::BatchMeans).unwrap()));
    g.bench_function("autocov_sum", |b| b.iter(|| clt_sigma(black_box(&xs), CltMethod::AutocovSum).unwrap()));
    g.finish();
}

criterion_group!(benches, bench_flow, bench_gaussian_step, bench_coupled_step, bench_adr_gradient, bench_clt);
criterion_main!(benches);
