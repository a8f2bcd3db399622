use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use d2s_bench::random_input;
use d2s_core::nn::{
    batchnorm_forward, conv2d_backward, conv2d_forward, depth_to_space, maxpool2d, space_to_depth, BnParams, ConvParams,
};
use d2s_core::{Mode, Rng};
use std::hint::black_box;

fn conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d");
    for &(cin, cout, size, k) in &[(3, 16, 64, 3), (16, 32, 32, 3), (64, 64, 16, 3), (64, 128, 8, 1)] {
        let x = random_input([4, cin, size, size], 1);
        let p = ConvParams::kaiming(cin, cout, k, 1, k / 2, &mut Rng::new(2)).unwrap();
        let id = format!("{cin}x{size}x{size}->{cout} k{k}");
        group.bench_function(BenchmarkId::new("forward", &id), |b| {
            b.iter(|| conv2d_forward(black_box(&x), &p).unwrap())
        });
        let up = conv2d_forward(&x, &p).unwrap();
        group.bench_function(BenchmarkId::new("backward", &id), |b| {
            b.iter(|| conv2d_backward(black_box(&x), &p, &up).unwrap())
        });
    }
    group.finish();
}

fn rearrange(c: &mut Criterion) {
    let x = random_input([4, 128, 8, 8], 3);
    c.bench_function("depth_to_space r8", |b| {
        b.iter(|| depth_to_space(black_box(&x), 8).unwrap())
    });
    let y = depth_to_space(&x, 8).unwrap();
    c.bench_function("space_to_depth r8", |b| {
        b.iter(|| space_to_depth(black_box(&y), 8).unwrap())
    });
}

fn elementwise(c: &mut Criterion) {
    let x = random_input([4, 32, 32, 32], 4);
    let p = BnParams::new(32);
    c.bench_function("batchnorm train 4x32x32x32", |b| {
        b.iter(|| batchnorm_forward(black_box(&x), &p, Mode::Train).unwrap())
    });
    c.bench_function("maxpool 4x32x32x32", |b| b.iter(|| maxpool2d(black_box(&x)).unwrap()));
}

criterion_group!(benches, conv, rearrange, elementwise);
criterion_main!(benches);
