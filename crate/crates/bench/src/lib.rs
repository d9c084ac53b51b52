//! Fixture builders shared by the benchmark targets.

use std::collections::BTreeMap;

use docfuse_core::config::TrainConfig;
use docfuse_core::corpus::{
    build_citation_graph, generate_synthetic_corpus, synthetic_vocabulary, CitationGraph,
    Corpus, SynthSpec, Taxonomy,
};
use docfuse_core::image::load_precomputed_features;
use docfuse_core::textprep::EmbeddingTable;
use docfuse_core::train::{image_dim_of, prepare_fusion_items, FusionItem, FusionModel};
use docfuse_core::Result;

pub struct BenchSet {
    pub corpus: Corpus,
    pub table: EmbeddingTable,
    pub cfg: TrainConfig,
    pub items: Vec<FusionItem>,
    pub model: FusionModel,
    pub graph: CitationGraph,
    /// Raw image vectors keyed by document id, usable as graph node features.
    pub node_features: BTreeMap<String, Vec<f64>>,
}

/// Deliberately mid-sized: big enough that per-op costs dominate fixture
/// noise, small enough that a debug-mode smoke pass stays quick.
pub fn bench_config() -> TrainConfig {
    TrainConfig {
        seed: 17,
        batch_size: 16,
        epochs_stage1: 1,
        epochs_stage2: 1,
        unsup_epochs: 0,
        gru_hidden: 16,
        projection_dim: 16,
        image_feature_dim: 64,
        sage_hidden: 32,
        max_sentences: 8,
        max_words: 12,
        max_total_words: 96,
        ..TrainConfig::default()
    }
}

pub fn build(docs: usize) -> Result<BenchSet> {
    let cfg = bench_config();
    let taxonomy = Taxonomy::synthetic(4, 8, 16)?;
    let spec = SynthSpec {
        docs,
        feature_dim: cfg.image_feature_dim,
        sentences_per_doc: 6,
        words_per_sentence: 9,
        seed: 23,
        ..SynthSpec::default()
    };
    let corpus = generate_synthetic_corpus(&spec, &taxonomy)?;
    let vocabulary = synthetic_vocabulary(&spec, &taxonomy);
    let table = EmbeddingTable::random(&vocabulary, 32, 1)?;
    let features = load_precomputed_features(&corpus, cfg.image_feature_dim)?;
    let items = prepare_fusion_items(&corpus, &table, &features, &cfg)?;
    let model = FusionModel::init(&table, &corpus.taxonomy, image_dim_of(&features, &cfg), &cfg)?;
    let graph = build_citation_graph(&corpus);
    let node_features = items
        .iter()
        .map(|i| (i.id.clone(), i.image.clone()))
        .collect();
    Ok(BenchSet {
        corpus,
        table,
        cfg,
        items,
        model,
        graph,
        node_features,
    })
}
