use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use num_complex::Complex64;

use foldlab_core::opnorm::{
    operator_norm, Amplitude, DiffProfile, DifferenceAmplitude, GridRule, LinearMap, NormOptions, OscOperator,
    Profile, TensorAmplitude, ToeplitzOperator, TwistedConvolution, WeightedAnnulus,
};
use foldlab_core::{DiagonalB, Phase, PhaseSpec};

fn ones(n: usize) -> Vec<Complex64> {
    vec![Complex64::new(1.0, 0.0); n]
}

fn bilinear() -> (Arc<dyn Phase>, Arc<dyn Amplitude>) {
    let bump = Profile::new(0.0, 1.0, 0.5).unwrap();
    (Arc::new(PhaseSpec::bilinear(1).unwrap()), Arc::new(TensorAmplitude { x: vec![bump], y: vec![bump] }))
}

fn curve() -> (Arc<dyn Phase>, Arc<dyn Amplitude>) {
    let amp = DifferenceAmplitude {
        x: vec![Profile::new(0.0, 0.5, 0.5).unwrap()],
        diff: DiffProfile::Tensor(vec![Profile::new(1.0, 0.5, 0.5).unwrap()]),
    };
    (Arc::new(PhaseSpec::curve(1.0, 2, 1.0).unwrap()), Arc::new(amp))
}

fn apply_1d(c: &mut Criterion) {
    let rule = GridRule::default();
    let mut group = c.benchmark_group("apply_1d");
    for lambda in [256.0, 1024.0] {
        let (phase, amp) = bilinear();
        let t = ToeplitzOperator::auto(phase.clone(), amp.clone(), lambda, &rule).unwrap();
        let dense = OscOperator::auto(phase, amp, lambda, &rule).unwrap();
        let (ft, fd) = (ones(t.cols()), ones(dense.cols()));
        let (mut ot, mut od) = (ones(t.rows()), ones(dense.rows()));
        group.bench_with_input(BenchmarkId::new("toeplitz", lambda), &lambda, |b, _| {
            b.iter(|| t.apply(black_box(&ft), &mut ot))
        });
        group.bench_with_input(BenchmarkId::new("dense", lambda), &lambda, |b, _| {
            b.iter(|| LinearMap::apply(&dense, black_box(&fd), &mut od))
        });
    }
    group.finish();
}

fn norm_1d(c: &mut Criterion) {
    let rule = GridRule::default();
    let opts = NormOptions::default();
    let mut group = c.benchmark_group("norm_1d");
    group.sample_size(10);
    for lambda in [256.0, 2048.0] {
        let (phase, amp) = curve();
        let t = ToeplitzOperator::auto(phase, amp, lambda, &rule).unwrap();
        group.bench_with_input(BenchmarkId::new("curve", lambda), &lambda, |b, _| {
            b.iter(|| operator_norm(&t, &opts).unwrap().norm)
        });
    }
    group.finish();
}

fn fiber(c: &mut Criterion) {
    let rule = GridRule::default();
    let phase = PhaseSpec::heisenberg_cond_ii(1.0, DiagonalB::zeros(1), 1.0).unwrap();
    let amp = Arc::new(WeightedAnnulus { profile: Profile::new(0.89, 0.6, 0.5).unwrap(), power: 3.5 });
    let mut group = c.benchmark_group("fiber");
    group.sample_size(10);
    for lambda in [16.0, 64.0] {
        let op = TwistedConvolution::new(&phase, amp.clone(), lambda, &rule).unwrap();
        let m = op.fiber_matrix(&rule).unwrap();
        let f = ones(m.cols());
        let mut out = ones(m.rows());
        group.bench_with_input(BenchmarkId::new("apply", lambda), &lambda, |b, _| {
            b.iter(|| m.apply(black_box(&f), &mut out))
        });
        group.bench_with_input(BenchmarkId::new("assemble", lambda), &lambda, |b, _| {
            b.iter(|| op.fiber_matrix(&rule).unwrap().entries())
        });
    }
    group.finish();
}

criterion_group!(benches, apply_1d, norm_1d, fiber);
criterion_main!(benches);
