use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use railinspect::cnn::layers::{conv2d_backward, conv2d_forward};
use railinspect::cnn::{Mode, Model, Tensor};
use std::hint::black_box;

fn ramp(shape: [usize; 4]) -> Tensor<f32> {
    Tensor::from_fn(shape, |i| ((i * 37) % 101) as f32 / 101.0 - 0.5)
}

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d 3x3");
    for (size, cin, filters) in [(64usize, 1usize, 8usize), (31, 8, 16), (14, 16, 32)] {
        let input = ramp([20, size, size, cin]);
        let kernels = ramp([3, 3, cin, filters]);
        let bias = vec![0.0; filters];
        let id = format!("{size}x{size}x{cin}->{filters}");
        group.bench_with_input(BenchmarkId::new("forward", &id), &input, |b, x| {
            b.iter(|| conv2d_forward(black_box(x), &kernels, &bias).unwrap())
        });
        let up = conv2d_forward(&input, &kernels, &bias).unwrap();
        group.bench_with_input(BenchmarkId::new("backward", &id), &input, |b, x| {
            b.iter(|| conv2d_backward(black_box(x), &kernels, &up).unwrap())
        });
    }
    group.finish();
}

fn model(c: &mut Criterion) {
    let m = Model::<f32>::standard(64, 0.5, 1).unwrap();
    let batch = ramp([20, 64, 64, 1]);
    let labels = Tensor::from_fn([20, 1, 1, 2], |i| if i % 2 == (i / 2) % 2 { 1.0 } else { 0.0 });
    c.bench_function("model forward 20x64x64", |b| b.iter(|| m.forward(black_box(&batch), Mode::Eval).unwrap()));
    c.bench_function("model train step 20x64x64", |b| b.iter(|| m.backward(black_box(&batch), &labels, 0).unwrap()));
}

criterion_group!(benches, conv, model);
criterion_main!(benches);
