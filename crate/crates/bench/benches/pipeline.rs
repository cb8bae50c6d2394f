use compass_audit_bench::{reference_backends, synthetic_corpus, synthetic_scores};
use compass_audit_core::aggregate::{build_bundle, kde_curve, summarize};
use compass_audit_core::metrics::{score_corpus, Weights};
use criterion::{black_box, criterion_group, criterion_main, Criterion};

fn scoring(c: &mut Criterion) {
    let corpus = synthetic_corpus(50, 2, 1);
    let backends = reference_backends(7);
    c.bench_function("score_corpus 50x2 reference", |b| {
        b.iter(|| score_corpus(black_box(&corpus), &backends, &Weights::DEFAULT, 4).unwrap())
    });
}

fn aggregation(c: &mut Criterion) {
    let corpus = synthetic_corpus(300, 6, 2);
    let scores = synthetic_scores(&corpus, 3);
    let composites: Vec<f64> = scores.iter().filter_map(|s| s.composite).collect();
    c.bench_function("summarize 300", |b| b.iter(|| summarize(black_box(&composites[..300])).unwrap()));
    c.bench_function("kde_curve 300", |b| b.iter(|| kde_curve(black_box(&composites[..300])).unwrap()));
    c.bench_function("build_bundle 300x6", |b| {
        b.iter(|| build_bundle(black_box(&corpus), &scores, Weights::DEFAULT, None).unwrap())
    });
}

criterion_group!(benches, scoring, aggregation);
criterion_main!(benches);
