use std::hint::black_box;

use chronorpc::prediction::{Algorithm, Predictor};
use chronorpc::protocol::{decode, encode};
use chronorpc_bench::{sample_stream, scheduled_rpc};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn predictors(c: &mut Criterion) {
    let stream = sample_stream(256);
    let mut group = c.benchmark_group("observe+predict");
    for algorithm in Algorithm::ALL {
        group.bench_with_input(BenchmarkId::from_parameter(algorithm.name()), &algorithm, |b, &a| {
            b.iter(|| {
                let mut p = Predictor::new(a, 8);
                for s in &stream {
                    black_box(p.predict());
                    p.observe(*s).expect("ordered stream");
                }
            })
        });
    }
    group.finish();
}

fn codec(c: &mut Criterion) {
    let msg = scheduled_rpc();
    let frame = encode(&msg);
    c.bench_function("encode rpc", |b| b.iter(|| encode(black_box(&msg))));
    c.bench_function("decode rpc", |b| {
        b.iter(|| decode(black_box(&frame)).expect("valid frame"))
    });
}

criterion_group!(benches, predictors, codec);
criterion_main!(benches);
