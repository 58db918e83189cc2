use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use promptrefine::aggregation::{ct_loss, FeatureBatch, Prototypes};
use promptrefine::metrics::{assd, squared_distance_transform};
use promptrefine::search::{tbs_step, PixelSet};
use promptrefine::{connected_components, keep_largest, BinaryMask, Connectivity};
use promptrefine_bench::{smooth_features, speckle};

fn kernels(c: &mut Criterion) {
    let (h, w) = (192, 192);
    let mask = speckle(h, w);
    let other = BinaryMask::from_fn(h, w, |i| mask.get_index((i + 3 * w + 2) % (h * w)));

    c.bench_function("connected_components/4", |b| {
        b.iter(|| connected_components(black_box(&mask), Connectivity::Four))
    });
    c.bench_function("keep_largest/8", |b| {
        b.iter(|| keep_largest(black_box(&mask), Connectivity::Eight))
    });
    c.bench_function("edt", |b| {
        b.iter(|| squared_distance_transform(&[h, w], black_box(mask.data())))
    });
    c.bench_function("assd", |b| {
        b.iter(|| assd(black_box(&mask), black_box(&other)).unwrap())
    });

    let feats = smooth_features(h, w, 8);
    let coords: Vec<(usize, usize)> = (80..112)
        .flat_map(|r| (80..112).map(move |c| (r, c)))
        .collect();
    let set = PixelSet::from_coords(h, w, &coords).unwrap();
    c.bench_function("tbs_step", |b| {
        b.iter(|| tbs_step(black_box(&set), &feats, 0.99, 4).unwrap())
    });

    let values: Vec<f64> = feats
        .data()
        .iter()
        .take(4096 * 8)
        .map(|&x| x as f64)
        .collect();
    let batch = FeatureBatch::new(4, 1024, 8, values, 1.0).unwrap();
    let protos = Prototypes::orthonormal(4, 8).unwrap();
    c.bench_function("ct_loss", |b| {
        b.iter(|| ct_loss(black_box(&batch), &protos).unwrap())
    });
}

criterion_group!(benches, kernels);
criterion_main!(benches);
