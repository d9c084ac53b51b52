//! `docfuse` — drive the classifier pipeline from the shell.
//!
//! A data directory holds `taxonomy.txt`, `corpus.jsonl`, and
//! `embeddings.txt` (what `synth` writes). A run directory accumulates the
//! artifacts of one training run: checkpoints, histories, extracted
//! features, evaluation reports.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use docfuse_core::checkpoint::{load_checkpoint_into, save_checkpoint, CheckpointMeta};
use docfuse_core::config::{LevelSelect, ModalityMask, TrainConfig};
use docfuse_core::corpus::{
    build_citation_graph, generate_synthetic_corpus, load_corpus, save_corpus, split_corpus,
    synthetic_vocabulary, validate_against_taxonomy, Corpus, SynthSpec, Taxonomy,
};
use docfuse_core::gradcheck::run_full_suite;
use docfuse_core::image::load_precomputed_features;
use docfuse_core::metrics::evaluate_scores;
use docfuse_core::textprep::EmbeddingTable;
use docfuse_core::train::{
    evaluate_fusion, extract_fused_features, graph_level_scores, image_dim_of,
    init_graph_models, label_map, predict_document, prepare_fusion_items, run_ablation,
    stage2_eval_seed, train_fusion_stage, train_graph_stage, FusionModel, GraphModel,
};
use docfuse_core::{Error, Result};

const SPLIT_RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

#[derive(Parser)]
#[command(name = "docfuse", version, about = "Three-branch hierarchical document classifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonOpts {
    /// Config file of `key = value` lines; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the modality mask, e.g. "text,image".
    #[arg(long)]
    mask: Option<String>,
    /// Restrict to one taxonomy level: 1, 2, 3, or all.
    #[arg(long)]
    level: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled corpus with planted signal in all three
    /// modalities.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        docs: usize,
        #[arg(long, default_value_t = 8)]
        sections: usize,
        #[arg(long, default_value_t = 16)]
        classes: usize,
        #[arg(long, default_value_t = 32)]
        subclasses: usize,
        /// Width of the per-document image feature vectors.
        #[arg(long, default_value_t = 16)]
        feature_dim: usize,
        /// Width of the word embeddings.
        #[arg(long, default_value_t = 32)]
        embedding_dim: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Validate a data directory and report corpus statistics.
    Prepare {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Stage 1: train the text/image fusion stack.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Write per-level fused feature vectors for every document.
    ExtractFeatures {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Stage 2: train the per-level citation-graph models on extracted
    /// features.
    TrainGraph {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Score a split and write evaluation reports.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run: PathBuf,
        /// Which split to score: train, val, or test.
        #[arg(long, default_value = "test")]
        split: String,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Rank labels for one document at every level.
    Predict {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        run: PathBuf,
        /// Document id from the corpus.
        #[arg(long, conflicts_with = "input")]
        id: Option<String>,
        /// File with one corpus-format JSON record.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        topk: usize,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Train and score the six-model modality-ablation grid.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the number of runs per model.
        #[arg(long)]
        runs: Option<usize>,
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run every finite-difference gradient suite.
    Gradcheck,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = run(cli.command) {
        eprintln!("error: {e}");
        std::process::exit(i32::from(e.exit_code()));
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            out,
            docs,
            sections,
            classes,
            subclasses,
            feature_dim,
            embedding_dim,
            seed,
        } => cmd_synth(&out, docs, sections, classes, subclasses, feature_dim, embedding_dim, seed),
        Command::Prepare { data, common } => cmd_prepare(&data, &resolve_config(&common)?),
        Command::Train { data, out, common } => cmd_train(&data, &out, &resolve_config(&common)?),
        Command::ExtractFeatures { data, run, common } => {
            cmd_extract(&data, &run, &resolve_config(&common)?)
        }
        Command::TrainGraph { data, run, common } => {
            cmd_train_graph(&data, &run, &resolve_config(&common)?)
        }
        Command::Eval {
            data,
            run,
            split,
            common,
        } => cmd_eval(&data, &run, &split, &resolve_config(&common)?),
        Command::Predict {
            data,
            run,
            id,
            input,
            topk,
            common,
        } => cmd_predict(&data, &run, id.as_deref(), input.as_deref(), topk, &resolve_config(&common)?),
        Command::Ablate {
            data,
            out,
            runs,
            common,
        } => {
            let mut cfg = resolve_config(&common)?;
            if let Some(r) = runs {
                cfg.ablation_runs = r;
            }
            cfg.validate()?;
            cmd_ablate(&data, &out, &cfg)
        }
        Command::Gradcheck => cmd_gradcheck(),
    }
}

fn resolve_config(common: &CommonOpts) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(mask) = &common.mask {
        cfg.mask = ModalityMask::parse(mask)?;
    }
    if let Some(level) = &common.level {
        cfg.level = LevelSelect::parse(level)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// file plumbing

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

fn write_feature_table(path: &Path, map: &BTreeMap<String, Vec<f64>>) -> Result<()> {
    let mut out = String::new();
    for (id, vec) in map {
        out.push_str(id);
        for x in vec {
            out.push('\t');
            out.push_str(&format!("{x:?}"));
        }
        out.push('\n');
    }
    write_text(path, &out)
}

fn read_feature_table(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split('\t');
        let id = parts.next().unwrap_or_default();
        if id.is_empty() {
            return Err(Error::MalformedRecord {
                line: i + 1,
                detail: "missing document id".into(),
            });
        }
        let vec: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>().map_err(|e| Error::MalformedRecord {
                    line: i + 1,
                    detail: format!("bad float `{p}`: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if map.insert(id.to_string(), vec).is_some() {
            return Err(Error::MalformedRecord {
                line: i + 1,
                detail: format!("duplicate document id `{id}`"),
            });
        }
    }
    Ok(map)
}

struct DataSet {
    corpus: Corpus,
    table: EmbeddingTable,
    features: BTreeMap<String, Vec<f32>>,
}

fn load_dataset(dir: &Path, cfg: &TrainConfig) -> Result<DataSet> {
    let taxonomy = Taxonomy::load(&dir.join("taxonomy.txt"))?;
    let corpus = load_corpus(&dir.join("corpus.jsonl"), &taxonomy)?;
    let table = EmbeddingTable::load(&dir.join("embeddings.txt"))?;
    let features = load_precomputed_features(&corpus, cfg.image_feature_dim)?;
    Ok(DataSet {
        corpus,
        table,
        features,
    })
}

fn splits(corpus: &Corpus, cfg: &TrainConfig) -> Result<(Corpus, Corpus, Corpus)> {
    split_corpus(corpus, SPLIT_RATIOS, cfg.seed)
}

fn split_by_name<'a>(
    name: &str,
    parts: &'a (Corpus, Corpus, Corpus),
) -> Result<&'a Corpus> {
    match name {
        "train" => Ok(&parts.0),
        "val" => Ok(&parts.1),
        "test" => Ok(&parts.2),
        other => Err(Error::Config(format!(
            "unknown split `{other}` (expected train, val, or test)"
        ))),
    }
}

fn load_fusion_model(run: &Path, data: &DataSet, cfg: &TrainConfig) -> Result<FusionModel> {
    let mut model = FusionModel::init(
        &data.table,
        &data.corpus.taxonomy,
        image_dim_of(&data.features, cfg),
        cfg,
    )?;
    let mut slots = model.params_mut();
    load_checkpoint_into(&run.join("stage1.ckpt"), Some(cfg.hash()), &mut slots)?;
    Ok(model)
}

fn feature_table_paths(run: &Path) -> [PathBuf; 3] {
    [1, 2, 3].map(|l| run.join(format!("features_l{l}.tsv")))
}

fn load_feature_tables(run: &Path) -> Result<[BTreeMap<String, Vec<f64>>; 3]> {
    let [p1, p2, p3] = feature_table_paths(run);
    Ok([
        read_feature_table(&p1)?,
        read_feature_table(&p2)?,
        read_feature_table(&p3)?,
    ])
}

fn load_graph_model(
    run: &Path,
    features: &[BTreeMap<String, Vec<f64>>; 3],
    tax: &Taxonomy,
    cfg: &TrainConfig,
) -> Result<GraphModel> {
    let mut model = init_graph_models(features, tax, cfg)?;
    let mut slots = model.params_mut();
    load_checkpoint_into(&run.join("stage2.ckpt"), Some(cfg.hash()), &mut slots)?;
    Ok(model)
}

// ---------------------------------------------------------------------------
// commands

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    out: &Path,
    docs: usize,
    sections: usize,
    classes: usize,
    subclasses: usize,
    feature_dim: usize,
    embedding_dim: usize,
    seed: u64,
) -> Result<()> {
    let taxonomy = Taxonomy::synthetic(sections, classes, subclasses)?;
    let spec = SynthSpec {
        docs,
        feature_dim,
        seed,
        ..SynthSpec::default()
    };
    let corpus = generate_synthetic_corpus(&spec, &taxonomy)?;
    let vocabulary = synthetic_vocabulary(&spec, &taxonomy);
    let table = EmbeddingTable::random(&vocabulary, embedding_dim, seed)?;
    ensure_dir(out)?;
    taxonomy.save(&out.join("taxonomy.txt"))?;
    save_corpus(&corpus, &out.join("corpus.jsonl"))?;
    table.save(&out.join("embeddings.txt"))?;
    println!(
        "wrote {} documents over {}/{}/{} labels, {} embedding tokens -> {}",
        corpus.len(),
        sections,
        classes,
        subclasses,
        table.vocab_size(),
        out.display()
    );
    Ok(())
}

fn cmd_prepare(data: &Path, cfg: &TrainConfig) -> Result<()> {
    let set = load_dataset(data, cfg)?;
    let report = validate_against_taxonomy(&set.corpus);
    for finding in &report.findings {
        eprintln!("{finding}");
    }
    if report.chain_violations() > 0 {
        return Err(Error::Validation(format!(
            "{} broken label chain(s)",
            report.chain_violations()
        )));
    }
    let items = prepare_fusion_items(&set.corpus, &set.table, &set.features, cfg)?;
    let words: usize = items.iter().map(|i| i.encoded.unmasked_words()).sum();
    let graph = build_citation_graph(&set.corpus);
    let (train, val, test) = splits(&set.corpus, cfg)?;
    println!("documents\t{}", set.corpus.len());
    println!("split\t{}/{}/{}", train.len(), val.len(), test.len());
    println!("vocabulary\t{}", set.table.vocab_size());
    println!("embedding_dim\t{}", set.table.dimension());
    println!("image_dim\t{}", image_dim_of(&set.features, cfg));
    println!("encoded_words\t{words}");
    println!("graph_nodes\t{}", graph.len());
    println!("dangling_citations\t{}", report.dangling_citations());
    Ok(())
}

fn cmd_train(data: &Path, out: &Path, cfg: &TrainConfig) -> Result<()> {
    let set = load_dataset(data, cfg)?;
    let parts = splits(&set.corpus, cfg)?;
    let train_items = prepare_fusion_items(&parts.0, &set.table, &set.features, cfg)?;
    let val_items = prepare_fusion_items(&parts.1, &set.table, &set.features, cfg)?;
    ensure_dir(out)?;

    let started = Instant::now();
    let (model, history) = train_fusion_stage(
        &train_items,
        Some(&val_items),
        &set.table,
        &set.corpus.taxonomy,
        image_dim_of(&set.features, cfg),
        cfg,
    )?;
    let elapsed = started.elapsed().as_secs_f64();

    let meta = CheckpointMeta {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        stage: "stage1".into(),
    };
    let params = model.params();
    save_checkpoint(&out.join("stage1.ckpt"), &meta, &params)?;
    write_text(&out.join("stage1_history.tsv"), &history.to_tsv())?;

    let mut split_lines = String::from("id\tsplit\n");
    for (corpus, name) in [(&parts.0, "train"), (&parts.1, "val"), (&parts.2, "test")] {
        for doc in &corpus.documents {
            split_lines.push_str(&format!("{}\t{name}\n", doc.id));
        }
    }
    write_text(&out.join("splits.tsv"), &split_lines)?;

    if let Some(last) = history.epochs.last() {
        println!(
            "stage 1: {} epochs in {elapsed:.1}s; train loss {:.4}, train top-1 {:.4}",
            last.epoch, last.train_loss, last.train_top1
        );
    } else {
        println!("stage 1: 0 epochs (initialization saved)");
    }
    println!("checkpoint -> {}", out.join("stage1.ckpt").display());
    Ok(())
}

fn cmd_extract(data: &Path, run: &Path, cfg: &TrainConfig) -> Result<()> {
    let set = load_dataset(data, cfg)?;
    let model = load_fusion_model(run, &set, cfg)?;
    // cover every document: stage 2 needs features for all graph nodes
    let items = prepare_fusion_items(&set.corpus, &set.table, &set.features, cfg)?;
    let paths = feature_table_paths(run);
    for level in cfg.level.levels() {
        let map = extract_fused_features(&model, &items, cfg, level)?;
        let width = map.values().next().map(Vec::len).unwrap_or(0);
        write_feature_table(&paths[level - 1], &map)?;
        println!(
            "level {level}: {} vectors of width {width} -> {}",
            map.len(),
            paths[level - 1].display()
        );
    }
    Ok(())
}

fn cmd_train_graph(data: &Path, run: &Path, cfg: &TrainConfig) -> Result<()> {
    let set = load_dataset(data, cfg)?;
    let features = load_feature_tables(run)?;
    let graph = build_citation_graph(&set.corpus);
    let labels = label_map(&set.corpus)?;
    let parts = splits(&set.corpus, cfg)?;
    let train_ids: Vec<String> = parts.0.documents.iter().map(|d| d.id.clone()).collect();
    let val_ids: Vec<String> = parts.1.documents.iter().map(|d| d.id.clone()).collect();

    let started = Instant::now();
    let (model, history) = train_graph_stage(
        &graph,
        &features,
        &labels,
        &train_ids,
        &val_ids,
        &set.corpus.taxonomy,
        cfg,
    )?;
    let elapsed = started.elapsed().as_secs_f64();

    let meta = CheckpointMeta {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        stage: "stage2".into(),
    };
    let params = model.params();
    save_checkpoint(&run.join("stage2.ckpt"), &meta, &params)?;
    write_text(&run.join("stage2_history.tsv"), &history.to_tsv())?;

    println!("stage 2: {} nodes, 3 levels in {elapsed:.1}s", graph.len());
    for (l, logs) in history.levels.iter().enumerate() {
        if let Some(last) = logs.last() {
            println!(
                "level {}: train loss {:.4}, val top-1 {}",
                l + 1,
                last.train_loss,
                last.val_top1.map_or("-".into(), |v| format!("{v:.4}")),
            );
        }
    }
    println!("checkpoint -> {}", run.join("stage2.ckpt").display());
    Ok(())
}

fn cmd_eval(data: &Path, run: &Path, split: &str, cfg: &TrainConfig) -> Result<()> {
    let set = load_dataset(data, cfg)?;
    let parts = splits(&set.corpus, cfg)?;
    let chosen = split_by_name(split, &parts)?;
    let items = prepare_fusion_items(chosen, &set.table, &set.features, cfg)?;
    let model = load_fusion_model(run, &set, cfg)?;

    let (loss, mats) = evaluate_fusion(&model, &items, cfg)?;
    println!("fusion model on {split} ({} documents), loss {loss:.4}", items.len());
    for level in cfg.level.levels() {
        let report = evaluate_scores(level, &mats[level - 1])?;
        let path = run.join(format!("eval_fusion_l{level}_{split}.tsv"));
        write_text(&path, &report.to_tsv())?;
        println!(
            "level {level}: top1 {:.4} top5 {} top10 {} rar {}",
            report.top1,
            cell(report.top5),
            cell(report.top10),
            cell(report.rar)
        );
    }

    if run.join("stage2.ckpt").is_file() {
        let features = load_feature_tables(run)?;
        let graph_model = load_graph_model(run, &features, &set.corpus.taxonomy, cfg)?;
        let graph = build_citation_graph(&set.corpus);
        let labels = label_map(&set.corpus)?;
        let ids: Vec<String> = chosen.documents.iter().map(|d| d.id.clone()).collect();
        println!("graph model on {split}");
        for level in cfg.level.levels() {
            let (gloss, mat) = graph_level_scores(
                &graph,
                &features[level - 1],
                &graph_model.levels[level - 1],
                &ids,
                &labels,
                level,
                set.corpus.taxonomy.level_size(level),
                graph_model.fanouts,
                stage2_eval_seed(cfg.seed, level),
            )?;
            let report = evaluate_scores(level, &mat)?;
            let path = run.join(format!("eval_graph_l{level}_{split}.tsv"));
            write_text(&path, &report.to_tsv())?;
            println!(
                "level {level}: loss {gloss:.4} top1 {:.4} top5 {} top10 {} rar {}",
                report.top1,
                cell(report.top5),
                cell(report.top10),
                cell(report.rar)
            );
        }
    }
    Ok(())
}

fn cell(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.4}"))
}

fn cmd_predict(
    data: &Path,
    run: &Path,
    id: Option<&str>,
    input: Option<&Path>,
    topk: usize,
    cfg: &TrainConfig,
) -> Result<()> {
    let set = load_dataset(data, cfg)?;
    let doc = match (id, input) {
        (Some(id), _) => set
            .corpus
            .documents
            .iter()
            .find(|d| d.id == id)
            .cloned()
            .ok_or_else(|| Error::UnknownDocument(id.to_string()))?,
        (None, Some(path)) => load_corpus(path, &set.corpus.taxonomy)?
            .documents
            .into_iter()
            .next()
            .ok_or(Error::EmptyCorpus)?,
        (None, None) => {
            return Err(Error::Config("pass --id or --input".into()));
        }
    };
    let model = load_fusion_model(run, &set, cfg)?;

    let use_graph = cfg.mask.network && run.join("stage2.ckpt").is_file();
    let graph_state = if use_graph {
        let features = load_feature_tables(run)?;
        let graph_model = load_graph_model(run, &features, &set.corpus.taxonomy, cfg)?;
        let graph = build_citation_graph(&set.corpus);
        Some((graph_model, graph, features))
    } else {
        None
    };

    let predictions = predict_document(
        &model,
        graph_state
            .as_ref()
            .map(|(m, g, f)| (m, g, f)),
        &doc,
        &set.table,
        set.corpus.base_dir.as_deref(),
        &set.corpus.taxonomy,
        cfg,
        topk,
    )?;

    println!("document\t{}", doc.id);
    println!("stage\t{}", if use_graph { "graph" } else { "fusion" });
    println!("level\trank\tlabel\tscore");
    for (l, list) in predictions.iter().enumerate() {
        for (rank, (code, score)) in list.iter().enumerate() {
            println!("{}\t{}\t{code}\t{score:.6}", l + 1, rank + 1);
        }
    }
    Ok(())
}

fn cmd_ablate(data: &Path, out: &Path, cfg: &TrainConfig) -> Result<()> {
    let set = load_dataset(data, cfg)?;
    let parts = splits(&set.corpus, cfg)?;
    ensure_dir(out)?;
    let started = Instant::now();
    let report = run_ablation(&parts.0, &parts.1, &parts.2, &set.table, &set.features, cfg)?;
    let elapsed = started.elapsed().as_secs_f64();
    let tsv = report.to_tsv();
    write_text(&out.join("ablation.tsv"), &tsv)?;
    print!("{tsv}");
    println!("# {:.1}s -> {}", elapsed, out.join("ablation.tsv").display());
    Ok(())
}

fn cmd_gradcheck() -> Result<()> {
    let started = Instant::now();
    let results = run_full_suite()?;
    let mut failed = 0usize;
    println!("suite\telements\tmax_rel_error\tstatus");
    for s in &results {
        let status = if s.passed() { "ok" } else { "FAIL" };
        if !s.passed() {
            failed += 1;
        }
        println!(
            "{}\t{}\t{:.3e}\t{status}",
            s.name, s.report.elements_checked, s.report.max_rel_error
        );
    }
    println!(
        "# {} suites, {} failed, {:.1}s",
        results.len(),
        failed,
        started.elapsed().as_secs_f64()
    );
    if failed > 0 {
        // numeric failure, same class as a NaN loss
        std::process::exit(3);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_table_round_trips_bit_for_bit() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.tsv");
        let mut map = BTreeMap::new();
        map.insert("a".to_string(), vec![0.1, -3.5e-9, 2.0f64.sqrt()]);
        map.insert("b".to_string(), vec![f64::MIN_POSITIVE, 1.0 / 3.0, -0.0]);
        write_feature_table(&path, &map).unwrap();
        let back = read_feature_table(&path).unwrap();
        assert_eq!(back.len(), map.len());
        for (id, v) in &map {
            let w = &back[id];
            assert_eq!(w.len(), v.len());
            for (x, y) in v.iter().zip(w) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn feature_table_rejects_duplicates_and_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.tsv");
        std::fs::write(&path, "a\t1.0\na\t2.0\n").unwrap();
        assert!(matches!(
            read_feature_table(&path),
            Err(Error::MalformedRecord { line: 2, .. })
        ));
        std::fs::write(&path, "a\tnope\n").unwrap();
        assert!(matches!(
            read_feature_table(&path),
            Err(Error::MalformedRecord { line: 1, .. })
        ));
        std::fs::write(&path, "\t1.0\n").unwrap();
        assert!(matches!(
            read_feature_table(&path),
            Err(Error::MalformedRecord { line: 1, .. })
        ));
    }

    #[test]
    fn split_lookup() {
        let tax = Taxonomy::synthetic(2, 2, 2).unwrap();
        let empty = Corpus {
            documents: vec![],
            taxonomy: tax,
            base_dir: None,
        };
        let parts = (empty.clone(), empty.clone(), empty);
        for name in ["train", "val", "test"] {
            assert!(split_by_name(name, &parts).is_ok());
        }
        assert!(matches!(
            split_by_name("holdout", &parts),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn runtime_flags_land_in_config() {
        let common = CommonOpts {
            config: None,
            seed: Some(42),
            mask: Some("text,network".to_string()),
            level: Some("2".to_string()),
        };
        let cfg = resolve_config(&common).unwrap();
        assert_eq!(cfg.seed, 42);
        assert!(cfg.mask.text && !cfg.mask.image && cfg.mask.network);
        assert_eq!(cfg.level.levels(), vec![2]);
        assert!(resolve_config(&CommonOpts {
            config: None,
            seed: None,
            mask: Some("".to_string()),
            level: None,
        })
        .is_err());
    }
}
