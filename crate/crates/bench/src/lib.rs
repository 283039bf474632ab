//! Benchmark bodies, kept in a library so they type-check with the workspace.

use std::hint::black_box;

use criterion::{BenchmarkId, Criterion};
use gvar::design::{self, DesignOptions};
use gvar::estimate::{self, Sample};
use gvar::simulate::GeneratorSpec;
use gvar::symfun::{self, CovMatrix};
use nalgebra::DMatrix;

fn random_cov(d: usize) -> CovMatrix {
    // deterministic, well-conditioned: A Aᵀ + I with A_ij = sin(i + 2j)
    let a = DMatrix::from_fn(d, d, |i, j| ((i + 2 * j) as f64).sin());
    CovMatrix::new(&a * a.transpose() + DMatrix::identity(d, d)).expect("valid covariance")
}

pub fn benchmarks(c: &mut Criterion) {
    elem_sym(c);
    estimator(c);
    designs(c);
}

fn elem_sym(c: &mut Criterion) {
    let mut group = c.benchmark_group("psi_k");
    for d in [4usize, 10, 20] {
        let v = random_cov(d);
        let k = d / 2;
        group.bench_with_input(BenchmarkId::new("spectral", d), &v, |b, v| {
            b.iter(|| symfun::psi(black_box(v), k).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("newton", d), &v, |b, v| {
            b.iter(|| symfun::elem_sym_newton(black_box(v), k).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("trace_determinant", d), &v, |b, v| {
            b.iter(|| symfun::psi_trace_determinant(black_box(v), k).unwrap())
        });
    }
    group.finish();
}

fn estimator(c: &mut Criterion) {
    let mut group = c.benchmark_group("estimate");
    let spec = GeneratorSpec::uniform_cube(3, 1).expect("valid generator");
    for n in [8usize, 12] {
        let s = Sample::new(spec.draw_points(0, n).unwrap()).unwrap();
        group.bench_with_input(BenchmarkId::new("covariance_form", n), &s, |b, s| {
            b.iter(|| estimate::estimate_psi(black_box(s), 2).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("u_statistic", n), &s, |b, s| {
            b.iter(|| estimate::u_stat_oracle(black_box(s), 2).unwrap())
        });
    }
    group.finish();
}

fn designs(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_design");
    group.sample_size(10);
    let space = design::example_space(5, 2e-3).unwrap();
    for k in 1..=3usize {
        group.bench_with_input(BenchmarkId::new("quadratic", k), &k, |b, &k| {
            b.iter(|| design::solve_design(black_box(&space), k, &DesignOptions::default()).unwrap())
        });
    }
    group.finish();
}
