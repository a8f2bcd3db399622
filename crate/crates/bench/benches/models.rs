use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use d2s_bench::random_input;
use d2s_core::model::build;
use d2s_core::nn::softmax_ce_loss;
use d2s_core::{Mode, ModelConfig, ModelGraph, ModelKind, Rng, Tensor};
use std::hint::black_box;

fn models(c: &mut Criterion) {
    let x = random_input([4, 3, 64, 64], 1);
    let target = Tensor::<f32>::zeros([4, 1, 64, 64]).unwrap();
    let mut group = c.benchmark_group("model");
    group.sample_size(10);
    for kind in ModelKind::ALL {
        let mut m: ModelGraph = build(&ModelConfig::new(kind)).unwrap();
        group.bench_function(BenchmarkId::new("predict", kind.name()), |b| {
            b.iter(|| m.predict(black_box(&x)).unwrap())
        });
        group.bench_function(BenchmarkId::new("train_step", kind.name()), |b| {
            let mut rng = Rng::new(0);
            b.iter(|| {
                let logits = m.forward(black_box(&x), Mode::Train, Some(&mut rng)).unwrap();
                let (_, g) = softmax_ce_loss(&logits, &target, [1.0, 3.0]).unwrap();
                m.zero_grad();
                m.backward(&g).unwrap();
            })
        });
    }
    group.finish();
}

criterion_group!(benches, models);
criterion_main!(benches);
