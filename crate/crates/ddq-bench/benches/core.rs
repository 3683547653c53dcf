use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use ddq_bench::dense_fixture;
use ddq_core::{
    build_cost_matrix, build_pyramid, center_prior_match, class_agnostic_nms, hungarian,
    pairwise_iou, roi_align, topk_by_score, BBox, CostWeights, FeatureMap,
};

fn bench_pyramid(c: &mut Criterion) {
    c.bench_function("build_pyramid_800", |b| {
        b.iter(|| build_pyramid(black_box(800), black_box(800)).unwrap())
    });
}

fn bench_selection(c: &mut Criterion) {
    let mut group = c.benchmark_group("selection");
    for &dup in &[1usize, 4] {
        let (_, _, queries) = dense_fixture(256, dup);
        group.bench_with_input(
            BenchmarkId::new("nms_keep300", queries.len()),
            &queries,
            |b, q| b.iter(|| class_agnostic_nms(black_box(q), 0.7, Some(300)).unwrap()),
        );
        group.bench_with_input(
            BenchmarkId::new("topk_300", queries.len()),
            &queries,
            |b, q| b.iter(|| topk_by_score(black_box(q), 300)),
        );
    }
    group.finish();
}

fn bench_assignment(c: &mut Criterion) {
    let (scene, pyramid, queries) = dense_fixture(256, 1);
    c.bench_function("center_prior_match_k9", |b| {
        b.iter(|| {
            center_prior_match(
                black_box(&queries),
                &pyramid,
                &scene.gts,
                9,
                CostWeights::default(),
            )
            .unwrap()
        })
    });

    // Square solve on a synthetic 64x64 cost matrix.
    let unit = BBox::new(0.0, 0.0, 1.0, 1.0).unwrap();
    let n = 64;
    let queries64 = ddq_core::QuerySet::from_parts(
        vec![unit; n],
        vec![0.5; n],
        vec![vec![]; n],
        (0..n)
            .map(|i| ddq_core::QueryOrigin { level: 3, index: i })
            .collect(),
    )
    .unwrap();
    let gts = ddq_core::BoxList::new(vec![unit; n]);
    let mut cost = build_cost_matrix(&queries64, &gts, CostWeights::default(), 4.0, 4.0).unwrap();
    for r in 0..n {
        for cix in 0..n {
            cost.values
                .set(r, cix, ((r * 31 + cix * 17) % 97) as f64 / 97.0);
        }
    }
    c.bench_function("hungarian_64x64", |b| {
        b.iter(|| hungarian(black_box(&cost)))
    });
}

fn bench_geometry(c: &mut Criterion) {
    let (scene, _, queries) = dense_fixture(256, 1);
    let boxes = queries.box_list();
    c.bench_function("pairwise_iou_dense_x_gts", |b| {
        b.iter(|| pairwise_iou(black_box(&boxes), black_box(&scene.gts)))
    });
}

fn bench_roi(c: &mut Criterion) {
    let fm = FeatureMap::from_fn(3, 256, 32, 32, |y, x, ch| {
        ((y * 7 + x * 3 + ch) % 13) as f64
    })
    .unwrap();
    let bbox = BBox::new(24.0, 24.0, 200.0, 180.0).unwrap();
    c.bench_function("roi_align_7x7x256", |b| {
        b.iter(|| roi_align(black_box(&fm), black_box(&bbox), (7, 7), 2).unwrap())
    });
}

criterion_group!(
    benches,
    bench_pyramid,
    bench_selection,
    bench_assignment,
    bench_geometry,
    bench_roi
);
criterion_main!(benches);
