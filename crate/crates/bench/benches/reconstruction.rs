//! Per-image cost of each backend at the two desk ROI sizes.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use speckle_bench::{cs, network, roi_case, tikhonov};
use speckle_core::nn::NnScratch;
use speckle_core::recon_cs::CsScratch;
use speckle_core::Reconstructor;

fn backends(c: &mut Criterion) {
    let mut g = c.benchmark_group("reconstruct");
    for side in [5usize, 20] {
        let (m, img) = roi_case(7, side);

        let tr = tikhonov(&m);
        g.bench_with_input(BenchmarkId::new("tr", side), &img, |b, img| {
            b.iter(|| tr.reconstruct_with(black_box(img), &mut ()).unwrap())
        });

        let solver = cs(&m);
        let mut scratch = CsScratch::default();
        g.bench_with_input(BenchmarkId::new("cs", side), &img, |b, img| {
            b.iter(|| solver.reconstruct_with(black_box(img), &mut scratch).unwrap())
        });

        let dl = network(side, 3);
        let mut scratch = NnScratch::default();
        g.bench_with_input(BenchmarkId::new("dl", side), &img, |b, img| {
            b.iter(|| dl.reconstruct_with(black_box(img), &mut scratch).unwrap())
        });
    }
    g.finish();
}

fn fitting(c: &mut Criterion) {
    let (m, _) = roi_case(7, 20);
    c.bench_function("fit/tikhonov_20", |b| b.iter(|| tikhonov(black_box(&m))));
    c.bench_function("fit/lipschitz_20", |b| {
        b.iter(|| speckle_core::recon_cs::lipschitz_bound(black_box(&m)).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = backends, fitting
}
criterion_main!(benches);
