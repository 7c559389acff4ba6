use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use crossdoc::train::batch_gradients;
use crossdoc::CdaVariant;
use crossdoc_bench::fixture;

fn inference(c: &mut Criterion) {
    let mut group = c.benchmark_group("score_pair");
    for variant in [CdaVariant::None, CdaVariant::Shallow, CdaVariant::Deep] {
        let (model, pairs) = fixture(variant, 64);
        group.bench_function(variant.to_string(), |b| {
            let mut i = 0;
            b.iter(|| {
                let p = &pairs[i % pairs.len()];
                i += 1;
                model.score_pair(&p.a, &p.b).unwrap()
            })
        });
    }
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let (model, pairs) = fixture(CdaVariant::Shallow, 32);
    let batch: Vec<_> = pairs.iter().collect();
    c.bench_function("gradients/shallow/batch32", |b| {
        b.iter_batched(|| batch.clone(), |batch| batch_gradients(&model, &batch).unwrap(), BatchSize::SmallInput)
    });
}

criterion_group!(benches, inference, training_step);
criterion_main!(benches);
