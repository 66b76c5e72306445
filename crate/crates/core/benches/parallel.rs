use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ndarray::Array2;
use splinelens::batchnorm::{sample_realizations, StatsOptions};
use splinelens::checks::template;
use splinelens::concentration::concentration_map;
use splinelens::datasets::{star2d, two_class_2d, StarProfile, TwoClassKind};
use splinelens::jitter::boundary_ensemble;
use splinelens::partition::BBox;
use splinelens::training::{initialize, InitMode};
use splinelens::{par, Activation, BNState, NetworkSpec};

fn net(widths: &[usize], data: &Array2<f64>) -> (NetworkSpec, BNState) {
    let t = template(widths, Activation::LeakyRelu(0.1)).unwrap();
    initialize(&t, InitMode::BnWarmup, data.view(), 0).unwrap()
}

fn backends(c: &mut Criterion, group: &str, mut f: impl FnMut()) {
    let mut g = c.benchmark_group(group);
    g.sample_size(10);
    for (name, sequential) in [("parallel", false), ("sequential", true)] {
        par::set_sequential(sequential);
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(&mut f));
    }
    par::set_sequential(false);
    g.finish();
}

fn bench(c: &mut Criterion) {
    let rings = two_class_2d(TwoClassKind::Rings, 1024, 0.1, 0).unwrap().inputs;
    let (jnet, jbn) = net(&[2, 8, 8, 1], &rings);
    backends(c, "sample_realizations", || {
        sample_realizations(&jnet, &jbn, rings.view(), 64, 200, 0, StatsOptions::default()).unwrap();
    });
    backends(c, "boundary_ensemble", || {
        boundary_ensemble(&jnet, &jbn, rings.view(), 16, 20, BBox::default(), 0).unwrap();
    });
    let star = star2d(50, 5, StarProfile::default(), 0).unwrap().inputs;
    let (cnet, cbn) = net(&[2, 32, 32, 32, 1], &star);
    backends(c, "concentration_map", || {
        concentration_map(&cnet, &cbn, BBox::default(), 64, 0.1, &[1, 2, 3]).unwrap();
    });
}

criterion_group!(benches, bench);
criterion_main!(benches);
