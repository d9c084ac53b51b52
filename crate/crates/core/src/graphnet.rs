//! Citation-network branch: two-layer mean-aggregation GraphSAGE over sampled
//! neighborhoods, a softmax head, random-walk pair extraction, and the
//! negative-sampling unsupervised loss.
//!
//! Neighbor means are summed in ascending node order so a shuffled neighbor
//! collection aggregates bit-identically.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Initializer, Parameter, Tape, Tensor, Var};
use crate::corpus::CitationGraph;
use crate::error::{Error, Result};
use crate::hash::fnv1a64;

pub const DEFAULT_FANOUTS: (usize, usize) = (5, 2);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborSample {
    pub target: usize,
    /// Hop-1 node indices, `fanouts.0` of them, sampled with replacement.
    pub hop1: Vec<usize>,
    /// Per hop-1 slot: `fanouts.1` hop-2 node indices.
    pub hop2: Vec<Vec<usize>>,
}

fn node_rng(id: &str, seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(id.as_bytes()))
}

/// Uniform with-replacement neighborhood sample, deterministic in
/// (graph, node id, seed).
pub fn sample_neighbors(
    graph: &CitationGraph,
    id: &str,
    fanouts: (usize, usize),
    seed: u64,
) -> Result<NeighborSample> {
    let target = graph
        .node_of(id)
        .ok_or_else(|| Error::UnknownNode(id.to_string()))?;
    let mut rng = node_rng(id, seed);
    let draw = |node: usize, count: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
        let nbrs = graph.neighbors(node);
        (0..count).map(|_| nbrs[rng.random_range(0..nbrs.len())]).collect()
    };
    let hop1 = draw(target, fanouts.0, &mut rng);
    let hop2 = hop1.iter().map(|&n| draw(n, fanouts.1, &mut rng)).collect();
    Ok(NeighborSample { target, hop1, hop2 })
}

#[derive(Debug, Clone)]
pub struct SageLayerParams<P> {
    pub w_self: P,
    pub w_neigh: P,
    pub b: P,
}

impl<P> SageLayerParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> SageLayerParams<Q> {
        SageLayerParams {
            w_self: f(&self.w_self),
            w_neigh: f(&self.w_neigh),
            b: f(&self.b),
        }
    }

    pub fn flatten(&self) -> Vec<&P> {
        vec![&self.w_self, &self.w_neigh, &self.b]
    }

    pub fn flatten_mut(&mut self) -> Vec<&mut P> {
        vec![&mut self.w_self, &mut self.w_neigh, &mut self.b]
    }

    pub fn from_flat(items: &mut impl Iterator<Item = P>) -> Self {
        SageLayerParams {
            w_self: items.next().expect("w_self"),
            w_neigh: items.next().expect("w_neigh"),
            b: items.next().expect("b"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SageParams<P> {
    pub layer1: SageLayerParams<P>,
    pub layer2: SageLayerParams<P>,
    pub head_w: P,
    pub head_b: P,
}

impl<P> SageParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> SageParams<Q> {
        SageParams {
            layer1: self.layer1.map(f),
            layer2: self.layer2.map(f),
            head_w: f(&self.head_w),
            head_b: f(&self.head_b),
        }
    }

    pub fn flatten(&self) -> Vec<&P> {
        let mut out = self.layer1.flatten();
        out.extend(self.layer2.flatten());
        out.extend([&self.head_w, &self.head_b]);
        out
    }

    pub fn flatten_mut(&mut self) -> Vec<&mut P> {
        let mut out = self.layer1.flatten_mut();
        out.extend(self.layer2.flatten_mut());
        out.extend([&mut self.head_w, &mut self.head_b]);
        out
    }

    pub fn from_flat(items: &mut impl Iterator<Item = P>) -> Self {
        SageParams {
            layer1: SageLayerParams::from_flat(items),
            layer2: SageLayerParams::from_flat(items),
            head_w: items.next().expect("head_w"),
            head_b: items.next().expect("head_b"),
        }
    }
}

impl SageParams<Parameter<f64>> {
    pub fn init(
        prefix: &str,
        feature_dim: usize,
        hidden_dim: usize,
        classes: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let layer = |name: &str, input: usize, rng: &mut ChaCha8Rng| SageLayerParams {
            w_self: Parameter::new(
                format!("{prefix}.{name}.w_self"),
                &[hidden_dim, input],
                Initializer::HeUniform { fan_in: input },
                rng,
            ),
            w_neigh: Parameter::new(
                format!("{prefix}.{name}.w_neigh"),
                &[hidden_dim, input],
                Initializer::HeUniform { fan_in: input },
                rng,
            ),
            b: Parameter::new(format!("{prefix}.{name}.b"), &[hidden_dim], Initializer::Zeros, rng),
        };
        SageParams {
            layer1: layer("layer1", feature_dim, rng),
            layer2: layer("layer2", hidden_dim, rng),
            head_w: Parameter::new(
                format!("{prefix}.head_w"),
                &[classes, hidden_dim],
                Initializer::HeUniform { fan_in: hidden_dim },
                rng,
            ),
            head_b: Parameter::new(format!("{prefix}.head_b"), &[classes], Initializer::Zeros, rng),
        }
    }

    pub fn bind(&self, tape: &mut Tape<f64>) -> SageParams<Var> {
        self.map(&mut |p| tape.leaf(p.tensor.clone(), true))
    }
}

/// relu(W_self · self + W_neigh · mean(neighbors) + b). Neighbors arrive as
/// (node id, vector) pairs; the mean sums in ascending id order regardless of
/// input order.
pub fn sage_aggregate(
    tape: &mut Tape<f64>,
    self_vec: Var,
    neighbors: &[(usize, Var)],
    p: &SageLayerParams<Var>,
) -> Result<Var> {
    if neighbors.is_empty() {
        return Err(Error::ShapeMismatch {
            op: "sage_aggregate",
            detail: "empty neighbor collection".into(),
        });
    }
    let mut ordered: Vec<(usize, usize, Var)> = neighbors
        .iter()
        .enumerate()
        .map(|(slot, &(id, v))| (id, slot, v))
        .collect();
    // slot index breaks id ties so equal-id entries keep a fixed order
    ordered.sort_by_key(|&(id, slot, _)| (id, slot));
    let vars: Vec<Var> = ordered.into_iter().map(|(_, _, v)| v).collect();
    let mean = tape.mean_of(&vars)?;
    let own = tape.matmul(p.w_self, self_vec)?;
    let agg = tape.matmul(p.w_neigh, mean)?;
    let s = tape.add(own, agg)?;
    let s = tape.add(s, p.b)?;
    tape.relu(s)
}

fn feature_var(
    tape: &mut Tape<f64>,
    cache: &mut BTreeMap<usize, Var>,
    features: &BTreeMap<String, Vec<f64>>,
    graph: &CitationGraph,
    node: usize,
) -> Result<Var> {
    if let Some(&v) = cache.get(&node) {
        return Ok(v);
    }
    let id = graph.id(node);
    let f = features
        .get(id)
        .ok_or_else(|| Error::MissingFeature(id.to_string()))?;
    let t = Tensor::from_f64s(&[f.len()], f)?;
    let v = tape.constant(t);
    cache.insert(node, v);
    Ok(v)
}

/// Two-hop sampled embedding for one target node: the second layer's output,
/// before any classification head. Inductive: uses only params, the sampled
/// neighborhood, and the feature map.
pub fn graphsage_embed(
    tape: &mut Tape<f64>,
    graph: &CitationGraph,
    features: &BTreeMap<String, Vec<f64>>,
    id: &str,
    params: &SageParams<Var>,
    fanouts: (usize, usize),
    seed: u64,
) -> Result<Var> {
    let sample = sample_neighbors(graph, id, fanouts, seed)?;
    let mut cache = BTreeMap::new();
    let target_f = feature_var(tape, &mut cache, features, graph, sample.target)?;

    // layer 1 over the target, fed by its hop-1 feature samples
    let hop1_feats: Vec<(usize, Var)> = sample
        .hop1
        .iter()
        .map(|&n| Ok((n, feature_var(tape, &mut cache, features, graph, n)?)))
        .collect::<Result<_>>()?;
    let h_target = sage_aggregate(tape, target_f, &hop1_feats, &params.layer1)?;

    // layer 1 over each hop-1 slot, fed by that slot's hop-2 samples
    let mut hop1_reps = Vec::with_capacity(sample.hop1.len());
    for (slot, &n) in sample.hop1.iter().enumerate() {
        let own = feature_var(tape, &mut cache, features, graph, n)?;
        let nbrs: Vec<(usize, Var)> = sample.hop2[slot]
            .iter()
            .map(|&m| Ok((m, feature_var(tape, &mut cache, features, graph, m)?)))
            .collect::<Result<_>>()?;
        hop1_reps.push((n, sage_aggregate(tape, own, &nbrs, &params.layer1)?));
    }

    sage_aggregate(tape, h_target, &hop1_reps, &params.layer2)
}

/// Embedding followed by the dense head and softmax: class probabilities for
/// one node.
pub fn graphsage_forward(
    tape: &mut Tape<f64>,
    graph: &CitationGraph,
    features: &BTreeMap<String, Vec<f64>>,
    id: &str,
    params: &SageParams<Var>,
    fanouts: (usize, usize),
    seed: u64,
) -> Result<Var> {
    let out = graphsage_embed(tape, graph, features, id, params, fanouts, seed)?;
    let logits = tape.dense(params.head_w, out, params.head_b)?;
    tape.softmax(logits)
}

/// (source, co-visited) pairs from fixed-length uniform random walks started
/// `walks_per_node` times at every node. Deterministic in the seed.
pub fn random_walk_pairs(
    graph: &CitationGraph,
    walk_length: usize,
    walks_per_node: usize,
    seed: u64,
) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for start in 0..graph.len() {
        let mut rng = node_rng(graph.id(start), seed);
        for _ in 0..walks_per_node {
            let mut here = start;
            for _ in 1..walk_length {
                let nbrs = graph.neighbors(here);
                here = nbrs[rng.random_range(0..nbrs.len())];
                pairs.push((start, here));
            }
        }
    }
    pairs
}

/// Mean over pairs of −ln σ(z_u·z_v) − Σ_negatives ln σ(−z_u·z_n), with
/// uniform negative sampling over all embeddings.
pub fn unsupervised_graph_loss(
    tape: &mut Tape<f64>,
    pairs: &[(usize, usize)],
    embeddings: &[Var],
    negative_count: usize,
    seed: u64,
) -> Result<Var> {
    if pairs.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut terms = Vec::with_capacity(pairs.len());
    for &(u, v) in pairs {
        let dot = tape.matmul(embeddings[u], embeddings[v])?;
        let sig = tape.sigmoid(dot)?;
        let ln = tape.ln(sig)?;
        let mut term = tape.scale(ln, -1.0)?;
        for _ in 0..negative_count {
            let n = rng.random_range(0..embeddings.len());
            let ndot = tape.matmul(embeddings[u], embeddings[n])?;
            let neg = tape.scale(ndot, -1.0)?;
            let nsig = tape.sigmoid(neg)?;
            let nln = tape.ln(nsig)?;
            let npen = tape.scale(nln, -1.0)?;
            term = tape.add(term, npen)?;
        }
        terms.push(term);
    }
    tape.mean_of(&terms)
}
