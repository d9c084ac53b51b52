use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use docfuse_bench::build;
use docfuse_core::autodiff::Tape;
use docfuse_core::graphnet::{graphsage_forward, SageParams};
use docfuse_core::metrics::{evaluate_scores, ScoreMatrix};
use docfuse_core::textprep::{document_text, encode_document, preprocess_text};
use docfuse_core::train::{evaluate_fusion, train_fusion_stage};

fn text_encode(c: &mut Criterion) {
    let set = build(4).unwrap();
    let pipe = set.cfg.pipeline();
    let doc = set.corpus.documents[0].clone();
    c.bench_function("text_encode", |b| {
        b.iter(|| {
            let text = document_text(black_box(&doc), &pipe);
            let sentences = preprocess_text(&text, &pipe);
            encode_document(&sentences, &set.table, &pipe)
        })
    });
}

fn fusion_forward(c: &mut Criterion) {
    let set = build(8).unwrap();
    c.bench_function("fusion_forward_8_docs", |b| {
        b.iter(|| evaluate_fusion(black_box(&set.model), &set.items, &set.cfg).unwrap())
    });
}

fn fusion_train_epoch(c: &mut Criterion) {
    let set = build(16).unwrap();
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("fusion_epoch_16_docs", |b| {
        b.iter(|| {
            train_fusion_stage(
                black_box(&set.items),
                None,
                &set.table,
                &set.corpus.taxonomy,
                set.cfg.image_feature_dim,
                &set.cfg,
            )
            .unwrap()
        })
    });
    group.finish();
}

fn graphsage_node(c: &mut Criterion) {
    let set = build(64).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let params = SageParams::init(
        "bench",
        set.cfg.image_feature_dim,
        set.cfg.sage_hidden,
        set.corpus.taxonomy.level_size(3),
        &mut rng,
    );
    let id = set.corpus.documents[0].id.clone();
    c.bench_function("graphsage_node_64_graph", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            graphsage_forward(
                &mut tape,
                black_box(&set.graph),
                &set.node_features,
                &id,
                &bound,
                (5, 2),
                11,
            )
            .unwrap()
        })
    });
}

fn score_metrics(c: &mut Criterion) {
    let classes = 64;
    let mut m = ScoreMatrix::new(classes);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for row in 0..512 {
        let scores: Vec<f64> = (0..classes).map(|_| rand::Rng::random(&mut rng)).collect();
        m.push_row(&scores, row % classes).unwrap();
    }
    c.bench_function("evaluate_512x64_scores", |b| {
        b.iter(|| evaluate_scores(3, black_box(&m)).unwrap())
    });
}

criterion_group!(
    benches,
    text_encode,
    fusion_forward,
    fusion_train_epoch,
    graphsage_node,
    score_metrics
);
criterion_main!(benches);
