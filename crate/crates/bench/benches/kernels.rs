use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rwgd_bench::fixture;
use rwgd_core::linalg::{self, Vector};
use rwgd_core::montecarlo::{ensemble_moments, EnsembleOptions};
use rwgd_core::{moments, MomentContext, StepSchedule};

fn svd(c: &mut Criterion) {
    let mut g = c.benchmark_group("pinv");
    for (n, d) in [(40, 5), (40, 60), (200, 50)] {
        let (wp, _) = fixture(n, d, 1);
        g.bench_with_input(BenchmarkId::from_parameter(format!("{n}x{d}")), &wp, |b, wp| {
            b.iter(|| linalg::pinv(black_box(wp.x())).unwrap())
        });
    }
    g.finish();
}

fn propagate(c: &mut Criterion) {
    let mut g = c.benchmark_group("propagate_1000");
    for d in [5, 20] {
        let (wp, scheme) = fixture(40, d, 2);
        let mom = scheme.analytic_moments().unwrap();
        let ctx = MomentContext::new(&wp, &mom, StepSchedule::Constant { alpha: 0.5 / wp.norm_xx }).unwrap();
        let m1 = -wp.w_hat.clone();
        g.bench_function(BenchmarkId::from_parameter(d), |b| {
            b.iter(|| moments::propagate(&ctx, black_box(&m1), 1000).unwrap())
        });
    }
    g.finish();
}

fn ensemble(c: &mut Criterion) {
    let (wp, scheme) = fixture(40, 5, 3);
    let schedule = StepSchedule::Constant { alpha: 1.0 / wp.norm_xx };
    let w1 = Vector::zeros(5);
    let opts = EnsembleOptions {
        second_moment: false,
        ..EnsembleOptions::default()
    };
    let mut g = c.benchmark_group("ensemble");
    g.sample_size(10);
    g.bench_function("1000x1000", |b| {
        b.iter(|| ensemble_moments(&wp, &scheme, &schedule, &w1, 1000, 1000, 7, opts).unwrap())
    });
    g.finish();
}

criterion_group!(benches, svd, propagate, ensemble);
criterion_main!(benches);
