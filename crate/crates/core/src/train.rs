//! Two-stage training orchestration. Stage 1 fits the text/image fusion
//! stack on the weighted hierarchical loss; stage 2 freezes it, extracts
//! fused per-level vectors as node features, and fits one graph model per
//! level. Everything is deterministic in the run seed.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Parameter, Tape, Tensor, Var};
use crate::config::{ModalityMask, TrainConfig};
use crate::corpus::{CitationGraph, Corpus, DocumentRecord, Taxonomy};
use crate::error::{Error, Result};
use crate::fusion::{hierarchical_forward, overall_loss, FusionConfig, FusionParams};
use crate::graphnet::{
    graphsage_embed, graphsage_forward, random_walk_pairs, unsupervised_graph_loss, SageParams,
};
use crate::han::{encode_document_vector, HanParams};
use crate::hash::fnv1a64;
use crate::image::load_precomputed_features;
use crate::metrics::{evaluate_scores, topk_accuracy, EvalReport, ScoreMatrix};
use crate::opt::Adam;
use crate::textprep::{
    document_text, encode_document, preprocess_text, EmbeddingTable, EncodedText,
};

fn derived_seed(base: u64, tag: &str) -> u64 {
    base ^ fnv1a64(tag.as_bytes())
}

/// The neighbor-sampling seed used whenever a graph model is *evaluated*
/// (epoch monitoring, test scoring, prediction). Shared so a training
/// document's prediction is bit-identical to its evaluation row.
/// Neighbor-sampling seed used for every stage-2 evaluation at `level`, so
/// scores from different callers agree bit for bit.
pub fn stage2_eval_seed(base: u64, level: usize) -> u64 {
    derived_seed(base, &format!("stage2.l{level}.eval"))
}

// ---------------------------------------------------------------------------
// stage-1 model and data

/// Everything stage 1 trains: the text encoder and the fusion heads.
#[derive(Debug, Clone)]
pub struct FusionModel {
    pub han: HanParams<Parameter<f64>>,
    pub fusion: FusionParams<Parameter<f64>>,
    pub image_dim: usize,
    pub shape: FusionConfig,
}

impl FusionModel {
    pub fn init(
        table: &EmbeddingTable,
        tax: &Taxonomy,
        image_dim: usize,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        let shape = FusionConfig::new(
            cfg.projection_dim,
            vec![tax.level_size(1), tax.level_size(2), tax.level_size(3)],
            cfg.wiring,
        )?;
        let rows = table.total_rows();
        let dim = table.dimension();
        let embedding = Tensor::<f32>::new(vec![rows, dim], table.matrix().to_vec())?.cast::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(cfg.seed, "stage1.init"));
        let han = HanParams::init(embedding, cfg.gru_hidden, &mut rng);
        let fusion = FusionParams::init(&shape, 2 * cfg.gru_hidden, image_dim, &mut rng);
        Ok(FusionModel {
            han,
            fusion,
            image_dim,
            shape,
        })
    }

    pub fn text_dim(&self) -> usize {
        self.han.output_dim()
    }

    /// Canonical parameter order: text encoder first, then the heads.
    pub fn params(&self) -> Vec<&Parameter<f64>> {
        let mut out = self.han.flatten();
        out.extend(self.fusion.flatten());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<f64>> {
        let mut out = self.han.flatten_mut();
        out.extend(self.fusion.flatten_mut());
        out
    }
}

/// One document, fully preprocessed for stage-1 consumption.
#[derive(Debug, Clone)]
pub struct FusionItem {
    pub id: String,
    pub encoded: EncodedText,
    /// Image feature vector, zero-filled when the document has none.
    pub image: Vec<f64>,
    /// Per-level target class indices.
    pub targets: [usize; 3],
}

/// Feature width the corpus actually carries, or the configured fallback.
pub fn image_dim_of(features: &BTreeMap<String, Vec<f32>>, cfg: &TrainConfig) -> usize {
    features
        .values()
        .next()
        .map(Vec::len)
        .unwrap_or(cfg.image_feature_dim)
}

pub fn label_map(corpus: &Corpus) -> Result<BTreeMap<String, [usize; 3]>> {
    let mut out = BTreeMap::new();
    for doc in &corpus.documents {
        let (a, b, c) = corpus
            .taxonomy
            .label_indices(&doc.label)
            .ok_or_else(|| Error::Config(format!("document `{}` has a label outside the taxonomy", doc.id)))?;
        out.insert(doc.id.clone(), [a, b, c]);
    }
    Ok(out)
}

/// Run the text pipeline and feature lookup over a corpus once, up front.
pub fn prepare_fusion_items(
    corpus: &Corpus,
    table: &EmbeddingTable,
    features: &BTreeMap<String, Vec<f32>>,
    cfg: &TrainConfig,
) -> Result<Vec<FusionItem>> {
    let pipe = cfg.pipeline();
    pipe.validate()?;
    let dim = image_dim_of(features, cfg);
    let labels = label_map(corpus)?;
    let mut items = Vec::with_capacity(corpus.len());
    for doc in &corpus.documents {
        let sentences = preprocess_text(&document_text(doc, &pipe), &pipe);
        let encoded = encode_document(&sentences, table, &pipe);
        let image = match features.get(&doc.id) {
            Some(v) => v.iter().map(|&x| x as f64).collect(),
            None => vec![0.0; dim],
        };
        items.push(FusionItem {
            id: doc.id.clone(),
            encoded,
            image,
            targets: labels[&doc.id],
        });
    }
    Ok(items)
}

/// Forward one document through the fusion stack. Returns per-level
/// (probabilities, fused vectors) plus the largest input magnitude each
/// branch actually saw — the masking instrumentation.
fn forward_item(
    tape: &mut Tape<f64>,
    item: &FusionItem,
    mask: ModalityMask,
    han_b: &HanParams<Var>,
    fusion_b: &FusionParams<Var>,
    model: &FusionModel,
) -> Result<([Var; 3], [Var; 3], f64, f64)> {
    let v_txt = if mask.text && item.encoded.unmasked_sentences() > 0 {
        encode_document_vector(tape, &item.encoded, han_b)?
    } else {
        tape.constant(Tensor::zeros(&[model.text_dim()]))
    };
    let v_img = if mask.image {
        tape.constant(Tensor::new(vec![model.image_dim], item.image.clone())?)
    } else {
        tape.constant(Tensor::zeros(&[model.image_dim]))
    };
    let max_abs = |t: &Tensor<f64>| t.data().iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let txt_in = max_abs(tape.value(v_txt));
    let img_in = max_abs(tape.value(v_img));
    let (probs, fused) = hierarchical_forward(tape, v_txt, v_img, fusion_b, model.shape.wiring)?;
    Ok((probs, fused, txt_in, img_in))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// Level-3 top-1 on the training set.
    pub train_top1: f64,
    pub val_loss: Option<f64>,
    pub val_top1: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub epochs: Vec<EpochLog>,
    /// Every document id that appeared in a training batch.
    pub trained_ids: BTreeSet<String>,
    /// Largest |x| fed to each branch across all training forwards; a
    /// disabled branch must report exactly zero.
    pub text_input_max_abs: f64,
    pub image_input_max_abs: f64,
}

impl TrainHistory {
    pub fn to_tsv(&self) -> String {
        let cell = |v: Option<f64>| match v {
            Some(x) => format!("{x:.6}"),
            None => "-".into(),
        };
        let mut out = String::from("epoch\ttrain_loss\ttrain_top1\tval_loss\tval_top1\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{}\t{:.6}\t{:.6}\t{}\t{}\n",
                e.epoch,
                e.train_loss,
                e.train_top1,
                cell(e.val_loss),
                cell(e.val_top1)
            ));
        }
        out
    }
}

/// Mean loss and per-level score matrices for a fixed model. One forward
/// pass per document, no gradients.
pub fn evaluate_fusion(
    model: &FusionModel,
    items: &[FusionItem],
    cfg: &TrainConfig,
) -> Result<(f64, [ScoreMatrix; 3])> {
    if items.is_empty() {
        return Err(Error::EmptyScores);
    }
    let zeta = cfg.loss_weights();
    let sizes = &model.shape.level_sizes;
    let mut mats = [
        ScoreMatrix::new(sizes[0]),
        ScoreMatrix::new(sizes[1]),
        ScoreMatrix::new(sizes[2]),
    ];
    let mut tape = Tape::new();
    let han_b = model.han.bind(&mut tape);
    let fusion_b = model.fusion.bind(&mut tape);
    let mut loss_sum = 0.0;
    for item in items {
        let (probs, _, _, _) = forward_item(&mut tape, item, cfg.mask, &han_b, &fusion_b, model)?;
        let loss = overall_loss(&mut tape, &probs, item.targets, &zeta)?;
        loss_sum += tape.value(loss).item();
        for l in 0..3 {
            mats[l].push_row(tape.value(probs[l]).data(), item.targets[l])?;
        }
    }
    Ok((loss_sum / items.len() as f64, mats))
}

/// Mini-batch training of the fusion stack. Deterministic in `cfg.seed`;
/// per-epoch losses are measured by a full evaluation pass after the
/// epoch's updates.
pub fn train_fusion_stage(
    train_items: &[FusionItem],
    val_items: Option<&[FusionItem]>,
    table: &EmbeddingTable,
    tax: &Taxonomy,
    image_dim: usize,
    cfg: &TrainConfig,
) -> Result<(FusionModel, TrainHistory)> {
    cfg.validate()?;
    if train_items.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut model = FusionModel::init(table, tax, image_dim, cfg)?;
    let zeta = cfg.loss_weights();
    let mut adam = Adam::new(cfg.adam());
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs_stage1 {
        let mut order: Vec<usize> = (0..train_items.len()).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derived_seed(cfg.seed, &format!("stage1.shuffle.{epoch}")));
        order.shuffle(&mut rng);

        for (batch_index, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut tape = Tape::new();
            let han_b = model.han.bind(&mut tape);
            let fusion_b = model.fusion.bind(&mut tape);
            let mut losses = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let item = &train_items[i];
                let (probs, _, txt_in, img_in) =
                    forward_item(&mut tape, item, cfg.mask, &han_b, &fusion_b, &model)?;
                losses.push(overall_loss(&mut tape, &probs, item.targets, &zeta)?);
                history.text_input_max_abs = history.text_input_max_abs.max(txt_in);
                history.image_input_max_abs = history.image_input_max_abs.max(img_in);
                history.trained_ids.insert(item.id.clone());
            }
            let batch_loss = tape.mean_of(&losses)?;
            if !tape.value(batch_loss).item().is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: batch_index,
                });
            }
            tape.backward(batch_loss)?;
            let mut vars: Vec<Var> = han_b.flatten().into_iter().copied().collect();
            vars.extend(fusion_b.flatten().into_iter().copied());
            let grads: Vec<Option<Tensor<f64>>> = vars.iter().map(|&v| tape.grad(v)).collect();
            let mut slots = model.params_mut();
            adam.step(&mut slots, &grads);
        }

        let (train_loss, train_mats) = evaluate_fusion(&model, train_items, cfg)?;
        let train_top1 = topk_accuracy(&train_mats[2], 1)?;
        let (val_loss, val_top1) = match val_items {
            Some(v) if !v.is_empty() => {
                let (loss, mats) = evaluate_fusion(&model, v, cfg)?;
                (Some(loss), Some(topk_accuracy(&mats[2], 1)?))
            }
            _ => (None, None),
        };
        history.epochs.push(EpochLog {
            epoch: epoch + 1,
            train_loss,
            train_top1,
            val_loss,
            val_top1,
        });
    }
    Ok((model, history))
}

/// Fused vector of every document at one level (1-based), keyed by id.
/// Bit-identical to what `hierarchical_forward` produces for that document.
pub fn extract_fused_features(
    model: &FusionModel,
    items: &[FusionItem],
    cfg: &TrainConfig,
    level: usize,
) -> Result<BTreeMap<String, Vec<f64>>> {
    if !(1..=3).contains(&level) {
        return Err(Error::Config(format!("level must be 1..=3, got {level}")));
    }
    let mut tape = Tape::new();
    let han_b = model.han.bind(&mut tape);
    let fusion_b = model.fusion.bind(&mut tape);
    let mut out = BTreeMap::new();
    for item in items {
        let (_, fused, _, _) = forward_item(&mut tape, item, cfg.mask, &han_b, &fusion_b, model)?;
        out.insert(item.id.clone(), tape.value(fused[level - 1]).data().to_vec());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// stage 2: per-level graph models

#[derive(Debug, Clone)]
pub struct GraphModel {
    /// One model per taxonomy level, shallow to deep.
    pub levels: Vec<SageParams<Parameter<f64>>>,
    pub fanouts: (usize, usize),
}

impl GraphModel {
    pub fn params(&self) -> Vec<&Parameter<f64>> {
        self.levels.iter().flat_map(|l| l.flatten()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<f64>> {
        self.levels.iter_mut().flat_map(|l| l.flatten_mut()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphEpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_top1: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct GraphHistory {
    /// Outer index: level − 1.
    pub levels: Vec<Vec<GraphEpochLog>>,
}

impl GraphHistory {
    pub fn to_tsv(&self) -> String {
        let cell = |v: Option<f64>| match v {
            Some(x) => format!("{x:.6}"),
            None => "-".into(),
        };
        let mut out = String::from("level\tepoch\ttrain_loss\tval_loss\tval_top1\n");
        for (l, rows) in self.levels.iter().enumerate() {
            for e in rows {
                out.push_str(&format!(
                    "{}\t{}\t{:.6}\t{}\t{}\n",
                    l + 1,
                    e.epoch,
                    e.train_loss,
                    cell(e.val_loss),
                    cell(e.val_top1)
                ));
            }
        }
        out
    }
}

/// Fresh per-level graph models shaped to the feature maps; the checkpoint
/// loader needs this same skeleton to restore into.
pub fn init_graph_models(
    features: &[BTreeMap<String, Vec<f64>>; 3],
    tax: &Taxonomy,
    cfg: &TrainConfig,
) -> Result<GraphModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(cfg.seed, "stage2.init"));
    let mut levels = Vec::with_capacity(3);
    for l in 0..3 {
        let dim = features[l]
            .values()
            .next()
            .map(Vec::len)
            .ok_or(Error::EmptyTrainingSet)?;
        levels.push(SageParams::init(
            &format!("graph.l{}", l + 1),
            dim,
            cfg.sage_hidden,
            tax.level_size(l + 1),
            &mut rng,
        ));
    }
    Ok(GraphModel {
        levels,
        fanouts: cfg.fanouts(),
    })
}

/// Mean cross-entropy and the score matrix for a node list under a fixed
/// sampling seed.
pub fn graph_level_scores(
    graph: &CitationGraph,
    features: &BTreeMap<String, Vec<f64>>,
    params: &SageParams<Parameter<f64>>,
    ids: &[String],
    labels: &BTreeMap<String, [usize; 3]>,
    level: usize,
    classes: usize,
    fanouts: (usize, usize),
    seed: u64,
) -> Result<(f64, ScoreMatrix)> {
    if ids.is_empty() {
        return Err(Error::EmptyScores);
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let mut mat = ScoreMatrix::new(classes);
    let mut loss_sum = 0.0;
    for id in ids {
        let target = labels
            .get(id)
            .ok_or_else(|| Error::UnknownDocument(id.clone()))?[level - 1];
        let probs = graphsage_forward(&mut tape, graph, features, id, &bound, fanouts, seed)?;
        let ce = tape.cross_entropy(probs, target)?;
        loss_sum += tape.value(ce).item();
        mat.push_row(tape.value(probs).data(), target)?;
    }
    Ok((loss_sum / ids.len() as f64, mat))
}

/// Train the three per-level graph models on fused node features.
/// Supervision uses the training ids only; validation ids are monitored.
/// Optional unsupervised pretraining (random-walk co-visit loss) runs first
/// when `cfg.unsup_epochs > 0`.
pub fn train_graph_stage(
    graph: &CitationGraph,
    features: &[BTreeMap<String, Vec<f64>>; 3],
    labels: &BTreeMap<String, [usize; 3]>,
    train_ids: &[String],
    val_ids: &[String],
    tax: &Taxonomy,
    cfg: &TrainConfig,
) -> Result<(GraphModel, GraphHistory)> {
    cfg.validate()?;
    if train_ids.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    for node in 0..graph.len() {
        let id = graph.id(node);
        for fmap in features.iter() {
            if !fmap.contains_key(id) {
                return Err(Error::MissingFeature(id.to_string()));
            }
        }
    }
    for id in train_ids.iter().chain(val_ids) {
        if !labels.contains_key(id) {
            return Err(Error::UnknownDocument(id.clone()));
        }
    }

    let mut model = init_graph_models(features, tax, cfg)?;
    let mut history = GraphHistory::default();

    for l in 0..3 {
        let classes = tax.level_size(l + 1);
        let mut adam = Adam::new(cfg.adam());
        let mut logs = Vec::with_capacity(cfg.epochs_stage2);

        for pe in 0..cfg.unsup_epochs {
            let mut tape = Tape::new();
            let bound = model.levels[l].bind(&mut tape);
            let samp = derived_seed(cfg.seed, &format!("stage2.l{}.presample.{pe}", l + 1));
            let embeddings: Vec<Var> = (0..graph.len())
                .map(|n| {
                    graphsage_embed(
                        &mut tape,
                        graph,
                        &features[l],
                        graph.id(n),
                        &bound,
                        model.fanouts,
                        samp,
                    )
                })
                .collect::<Result<_>>()?;
            let pairs = random_walk_pairs(
                graph,
                cfg.walk_length,
                cfg.walks_per_node,
                derived_seed(cfg.seed, &format!("stage2.l{}.walks.{pe}", l + 1)),
            );
            let loss = unsupervised_graph_loss(
                &mut tape,
                &pairs,
                &embeddings,
                cfg.negatives,
                derived_seed(cfg.seed, &format!("stage2.l{}.negatives.{pe}", l + 1)),
            )?;
            if !tape.value(loss).item().is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: pe + 1,
                    batch: 0,
                });
            }
            tape.backward(loss)?;
            let vars: Vec<Var> = bound.flatten().into_iter().copied().collect();
            let grads: Vec<Option<Tensor<f64>>> = vars.iter().map(|&v| tape.grad(v)).collect();
            let mut slots = model.levels[l].flatten_mut();
            adam.step(&mut slots, &grads);
        }

        for epoch in 0..cfg.epochs_stage2 {
            let mut order: Vec<usize> = (0..train_ids.len()).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derived_seed(
                cfg.seed,
                &format!("stage2.l{}.shuffle.{epoch}", l + 1),
            ));
            order.shuffle(&mut rng);
            let samp = derived_seed(cfg.seed, &format!("stage2.l{}.sample.{epoch}", l + 1));

            for (batch_index, chunk) in order.chunks(cfg.batch_size).enumerate() {
                let mut tape = Tape::new();
                let bound = model.levels[l].bind(&mut tape);
                let mut losses = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    let id = &train_ids[i];
                    let probs = graphsage_forward(
                        &mut tape,
                        graph,
                        &features[l],
                        id,
                        &bound,
                        model.fanouts,
                        samp,
                    )?;
                    losses.push(tape.cross_entropy(probs, labels[id][l])?);
                }
                let batch_loss = tape.mean_of(&losses)?;
                if !tape.value(batch_loss).item().is_finite() {
                    return Err(Error::NonFiniteLoss {
                        epoch: epoch + 1,
                        batch: batch_index,
                    });
                }
                tape.backward(batch_loss)?;
                let vars: Vec<Var> = bound.flatten().into_iter().copied().collect();
                let grads: Vec<Option<Tensor<f64>>> = vars.iter().map(|&v| tape.grad(v)).collect();
                let mut slots = model.levels[l].flatten_mut();
                adam.step(&mut slots, &grads);
            }

            let eval_seed = stage2_eval_seed(cfg.seed, l + 1);
            let (train_loss, _) = graph_level_scores(
                graph,
                &features[l],
                &model.levels[l],
                train_ids,
                labels,
                l + 1,
                classes,
                model.fanouts,
                eval_seed,
            )?;
            let (val_loss, val_top1) = if val_ids.is_empty() {
                (None, None)
            } else {
                let (loss, mat) = graph_level_scores(
                    graph,
                    &features[l],
                    &model.levels[l],
                    val_ids,
                    labels,
                    l + 1,
                    classes,
                    model.fanouts,
                    eval_seed,
                )?;
                (Some(loss), Some(topk_accuracy(&mat, 1)?))
            };
            logs.push(GraphEpochLog {
                epoch: epoch + 1,
                train_loss,
                val_loss,
                val_top1,
            });
        }
        history.levels.push(logs);
    }
    Ok((model, history))
}

// ---------------------------------------------------------------------------
// prediction

fn ranked_top_k(scores: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.into_iter().take(k).map(|i| (i, scores[i])).collect()
}

/// Resolve one document's image features the same way corpus loading does:
/// inline vector first, then the feature file, else zeros.
fn doc_image_feature(
    doc: &DocumentRecord,
    base_dir: Option<&Path>,
    tax: &Taxonomy,
    dim: usize,
) -> Result<Vec<f64>> {
    let single = Corpus {
        documents: vec![doc.clone()],
        taxonomy: tax.clone(),
        base_dir: base_dir.map(Path::to_path_buf),
    };
    let map = load_precomputed_features(&single, dim)?;
    let v = &map[&doc.id];
    if v.len() != dim {
        return Err(Error::FeatureDimMismatch {
            id: doc.id.clone(),
            found: v.len(),
            expected: dim,
        });
    }
    Ok(v.iter().map(|&x| x as f64).collect())
}

/// Classify one document end to end: stage-1 forward, then (when a graph
/// model is supplied) node insertion and per-level stage-2 forwards. Returns
/// the top-k `(label code, probability)` lists per level, best first.
#[allow(clippy::too_many_arguments)]
pub fn predict_document(
    fusion: &FusionModel,
    graph: Option<(&GraphModel, &CitationGraph, &[BTreeMap<String, Vec<f64>>; 3])>,
    doc: &DocumentRecord,
    table: &EmbeddingTable,
    base_dir: Option<&Path>,
    tax: &Taxonomy,
    cfg: &TrainConfig,
    k: usize,
) -> Result<[Vec<(String, f64)>; 3]> {
    for level in 1..=3 {
        let classes = tax.level_size(level);
        if k == 0 || k > classes {
            return Err(Error::KOutOfRange { k, classes });
        }
    }
    let pipe = cfg.pipeline();
    let sentences = preprocess_text(&document_text(doc, &pipe), &pipe);
    let item = FusionItem {
        id: doc.id.clone(),
        encoded: encode_document(&sentences, table, &pipe),
        image: doc_image_feature(doc, base_dir, tax, fusion.image_dim)?,
        targets: [0, 0, 0], // unused: prediction never reads targets
    };

    let mut tape = Tape::new();
    let han_b = fusion.han.bind(&mut tape);
    let fusion_b = fusion.fusion.bind(&mut tape);
    let (probs, fused, _, _) = forward_item(&mut tape, &item, cfg.mask, &han_b, &fusion_b, fusion)?;
    let stage1_scores: Vec<Vec<f64>> = probs
        .iter()
        .map(|&p| tape.value(p).data().to_vec())
        .collect();
    let fused_vals: Vec<Vec<f64>> = fused
        .iter()
        .map(|&f| tape.value(f).data().to_vec())
        .collect();
    drop(tape);

    let level_scores: Vec<Vec<f64>> = match graph {
        Some((gm, base_graph, feats)) => {
            let mut g = base_graph.clone();
            if g.node_of(&doc.id).is_none() {
                g.insert_node(&doc.id, &doc.citations);
            }
            let mut out = Vec::with_capacity(3);
            for l in 0..3 {
                let mut fmap = feats[l].clone();
                fmap.entry(doc.id.clone())
                    .or_insert_with(|| fused_vals[l].clone());
                let mut t = Tape::new();
                let bound = gm.levels[l].bind(&mut t);
                let p = graphsage_forward(
                    &mut t,
                    &g,
                    &fmap,
                    &doc.id,
                    &bound,
                    gm.fanouts,
                    stage2_eval_seed(cfg.seed, l + 1),
                )?;
                out.push(t.value(p).data().to_vec());
            }
            out
        }
        None => stage1_scores,
    };

    let mut result: [Vec<(String, f64)>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for l in 0..3 {
        result[l] = ranked_top_k(&level_scores[l], k)
            .into_iter()
            .map(|(i, s)| (tax.code(l + 1, i).to_string(), s))
            .collect();
    }
    Ok(result)
}

// ---------------------------------------------------------------------------
// network-only baseline

/// Majority vote over resolvable forward citations, scored as raw vote
/// counts. Labels come from the training split only; a document with no
/// resolvable citation votes for the training set's global majority. Ties
/// break toward the smaller label index.
pub fn citation_vote_scores(
    eval: &Corpus,
    train_labels: &BTreeMap<String, [usize; 3]>,
    level: usize,
) -> Result<ScoreMatrix> {
    if train_labels.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let classes = eval.taxonomy.level_size(level);
    let mut global = vec![0usize; classes];
    for lbl in train_labels.values() {
        global[lbl[level - 1]] += 1;
    }
    let majority = (0..classes).max_by_key(|&c| (global[c], classes - c)).unwrap();

    let targets = label_map(eval)?;
    let mut mat = ScoreMatrix::new(classes);
    for doc in &eval.documents {
        let mut votes = vec![0.0f64; classes];
        let mut any = false;
        for cited in &doc.citations {
            if let Some(lbl) = train_labels.get(cited) {
                votes[lbl[level - 1]] += 1.0;
                any = true;
            }
        }
        if !any {
            votes[majority] = 1.0;
        }
        mat.push_row(&votes, targets[&doc.id][level - 1])?;
    }
    Ok(mat)
}

// ---------------------------------------------------------------------------
// ablation

pub const ABLATION_MODELS: [&str; 6] = [
    "image-only",
    "text-only",
    "network-only",
    "text+image",
    "text+network",
    "text+image+network",
];

pub const ABLATION_METRICS: [&str; 4] = ["top1", "top5", "top10", "rar"];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AblationCell {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub model: String,
    /// `cells[level - 1][metric]` in [`ABLATION_METRICS`] order; `None` when
    /// the metric is not defined for that model/level.
    pub cells: [[Option<AblationCell>; 4]; 3],
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub runs: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_tsv(&self) -> String {
        let mut out = format!("# runs per model: {}\n", self.runs);
        out.push_str("model\tlevel\ttop1\ttop5\ttop10\trar\n");
        for row in &self.rows {
            for l in 0..3 {
                out.push_str(&format!("{}\t{}", row.model, l + 1));
                for cell in &row.cells[l] {
                    match cell {
                        Some(c) => out.push_str(&format!("\t{:.4}±{:.4}", c.mean, c.std)),
                        None => out.push_str("\t-"),
                    }
                }
                out.push('\n');
            }
        }
        out
    }
}

fn report_metrics(rep: &EvalReport) -> [Option<f64>; 4] {
    [Some(rep.top1), rep.top5, rep.top10, rep.rar]
}

fn aggregate(samples: &[[[Option<f64>; 4]; 3]]) -> [[Option<AblationCell>; 4]; 3] {
    let n = samples.len();
    let mut out = [[None; 4]; 3];
    for l in 0..3 {
        for m in 0..4 {
            let vals: Vec<f64> = samples.iter().filter_map(|s| s[l][m]).collect();
            if vals.len() != n {
                continue; // absent in some run ⇒ absent in the grid
            }
            let mean = vals.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            out[l][m] = Some(AblationCell { mean, std });
        }
    }
    out
}

/// The six-model comparison grid: three unimodal rows, two dual-modal rows,
/// and the full model, each trained `cfg.ablation_runs` times on seeds
/// `seed, seed+1, …` and reported as mean±std per metric per level.
pub fn run_ablation(
    train: &Corpus,
    val: &Corpus,
    test: &Corpus,
    table: &EmbeddingTable,
    features: &BTreeMap<String, Vec<f32>>,
    cfg: &TrainConfig,
) -> Result<AblationReport> {
    cfg.validate()?;
    let tax = &train.taxonomy;
    let image_dim = image_dim_of(features, cfg);
    let items_train = prepare_fusion_items(train, table, features, cfg)?;
    let items_val = prepare_fusion_items(val, table, features, cfg)?;
    let items_test = prepare_fusion_items(test, table, features, cfg)?;
    let mut all_items = items_train.clone();
    all_items.extend(items_val.iter().cloned());
    all_items.extend(items_test.iter().cloned());

    let merged = Corpus {
        documents: train
            .documents
            .iter()
            .chain(&val.documents)
            .chain(&test.documents)
            .cloned()
            .collect(),
        taxonomy: tax.clone(),
        base_dir: train.base_dir.clone(),
    };
    let graph = crate::corpus::build_citation_graph(&merged);
    let all_labels = label_map(&merged)?;
    let train_labels = label_map(train)?;
    let train_ids: Vec<String> = train.documents.iter().map(|d| d.id.clone()).collect();
    let val_ids: Vec<String> = val.documents.iter().map(|d| d.id.clone()).collect();
    let test_ids: Vec<String> = test.documents.iter().map(|d| d.id.clone()).collect();

    struct Plan {
        name: &'static str,
        mask: ModalityMask,
        network: bool,
        baseline: bool,
    }
    let plans = [
        Plan {
            name: ABLATION_MODELS[0],
            mask: ModalityMask { text: false, image: true, network: false },
            network: false,
            baseline: false,
        },
        Plan {
            name: ABLATION_MODELS[1],
            mask: ModalityMask { text: true, image: false, network: false },
            network: false,
            baseline: false,
        },
        Plan {
            name: ABLATION_MODELS[2],
            mask: ModalityMask { text: false, image: false, network: true },
            network: true,
            baseline: true,
        },
        Plan {
            name: ABLATION_MODELS[3],
            mask: ModalityMask { text: true, image: true, network: false },
            network: false,
            baseline: false,
        },
        Plan {
            name: ABLATION_MODELS[4],
            mask: ModalityMask { text: true, image: false, network: true },
            network: true,
            baseline: false,
        },
        Plan {
            name: ABLATION_MODELS[5],
            mask: ModalityMask { text: true, image: true, network: true },
            network: true,
            baseline: false,
        },
    ];

    let mut rows = Vec::with_capacity(plans.len());
    for plan in &plans {
        let mut samples = Vec::with_capacity(cfg.ablation_runs);
        for run in 0..cfg.ablation_runs {
            let mut run_cfg = cfg.clone();
            run_cfg.seed = cfg.seed.wrapping_add(run as u64);
            run_cfg.mask = plan.mask;

            let mut metrics = [[None; 4]; 3];
            if plan.baseline {
                for level in 1..=3 {
                    let mat = citation_vote_scores(test, &train_labels, level)?;
                    let mut rep = evaluate_scores(level, &mat)?;
                    rep.rar = None; // vote counts rank a handful of classes, not all
                    metrics[level - 1] = report_metrics(&rep);
                }
            } else {
                let (model, _) = train_fusion_stage(
                    &items_train,
                    Some(&items_val),
                    table,
                    tax,
                    image_dim,
                    &run_cfg,
                )?;
                if plan.network {
                    let feats = [
                        extract_fused_features(&model, &all_items, &run_cfg, 1)?,
                        extract_fused_features(&model, &all_items, &run_cfg, 2)?,
                        extract_fused_features(&model, &all_items, &run_cfg, 3)?,
                    ];
                    let (gm, _) = train_graph_stage(
                        &graph,
                        &feats,
                        &all_labels,
                        &train_ids,
                        &val_ids,
                        tax,
                        &run_cfg,
                    )?;
                    for level in 1..=3 {
                        let (_, mat) = graph_level_scores(
                            &graph,
                            &feats[level - 1],
                            &gm.levels[level - 1],
                            &test_ids,
                            &all_labels,
                            level,
                            tax.level_size(level),
                            gm.fanouts,
                            stage2_eval_seed(run_cfg.seed, level),
                        )?;
                        metrics[level - 1] = report_metrics(&evaluate_scores(level, &mat)?);
                    }
                } else {
                    let (_, mats) = evaluate_fusion(&model, &items_test, &run_cfg)?;
                    for level in 1..=3 {
                        metrics[level - 1] =
                            report_metrics(&evaluate_scores(level, &mats[level - 1])?);
                    }
                }
            }
            samples.push(metrics);
        }
        rows.push(AblationRow {
            model: plan.name.to_string(),
            cells: aggregate(&samples),
        });
    }
    Ok(AblationReport {
        runs: cfg.ablation_runs,
        rows,
    })
}
