use criterion::{criterion_group, criterion_main, Criterion};
use railinspect::inspect::{difference_map, inspect, prepare, preprocess, register, segment, Direction, PipelineConfig};
use railinspect_bench::{frame, geometry};
use std::hint::black_box;

fn stages(c: &mut Criterion) {
    let cfg = PipelineConfig::default();
    let control = frame(1, 3);
    let variable = frame(15, 3);
    let reference = preprocess(&control.image, 1).unwrap();
    let test = preprocess(&variable.image, 1).unwrap();

    c.bench_function("preprocess 320x240", |b| b.iter(|| preprocess(black_box(&control.image), 1).unwrap()));
    c.bench_function("register window 8", |b| b.iter(|| register(black_box(&reference), black_box(&test), 8).unwrap()));

    let pair = prepare(&control.image, &variable.image, &cfg).unwrap();
    let masks = difference_map(&pair.reference, &pair.test, pair.offset, cfg.diff_threshold);
    c.bench_function("segment missing mask", |b| {
        b.iter(|| segment(black_box(&masks.missing), cfg.min_blob_area, 1, Direction::MissingInTest))
    });

    let g = geometry();
    c.bench_function("inspect case 15", |b| b.iter(|| inspect(black_box(&control), black_box(&variable), &g, &cfg)));
}

criterion_group!(benches, stages);
criterion_main!(benches);
