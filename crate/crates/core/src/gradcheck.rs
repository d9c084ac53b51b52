//! Named finite-difference suites covering every differentiable primitive
//! and every assembled model block. The CLI's `gradcheck` command and the
//! acceptance tests both run [`run_full_suite`]; a failure anywhere means
//! reverse mode and the forward math disagree.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{finite_difference_check, FdReport, Parameter, Tape, Tensor, Var};
use crate::corpus::CitationGraph;
use crate::error::Result;
use crate::fusion::{hierarchical_forward, FusionConfig, FusionParams, InterLevelInput};
use crate::graphnet::{graphsage_forward, SageParams};
use crate::han::{encode_document_vector, gru_cell, GruParams, HanParams};
use crate::image::{conv_forward, ConvEncoderConfig, ConvEncoderParams, ImageGrid};
use crate::textprep::EncodedText;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub report: FdReport,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.report.passed()
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let vals: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    Tensor::from_f64s(shape, &vals).unwrap()
}

/// Values bounded away from zero, for kinked ops (relu) and logarithms.
fn offset_tensor(rng: &mut ChaCha8Rng, shape: &[usize], floor: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let vals: Vec<f64> = (0..n)
        .map(|_| {
            let x = rng.random::<f64>() * 2.0 - 1.0;
            (x.abs() + floor) * x.signum()
        })
        .collect();
    Tensor::from_f64s(shape, &vals).unwrap()
}

/// Pairwise-distinct values in (0, 1) — the gap (1/n ≫ finite-difference
/// step) keeps every pooling argmax stable under perturbation.
fn separated_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    use rand::seq::SliceRandom;
    vals.shuffle(rng);
    Tensor::from_f64s(shape, &vals).unwrap()
}

fn check(
    name: &'static str,
    inputs: &[Tensor<f64>],
    f: impl FnMut(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<SuiteResult> {
    let report = finite_difference_check(inputs, STEP, TOLERANCE, f)?;
    Ok(SuiteResult { name, report })
}

// ---------------------------------------------------------------------------
// primitives

fn suite_matmul() -> Result<SuiteResult> {
    let mut r = rng(101);
    let a = rand_tensor(&mut r, &[3, 4]);
    let b = rand_tensor(&mut r, &[4, 2]);
    let v = rand_tensor(&mut r, &[4]);
    check("primitive.matmul", &[a, b, v], |tape, vars| {
        let mm = tape.matmul(vars[0], vars[1])?; // mat × mat
        let mv = tape.matmul(vars[0], vars[2])?; // mat × vec
        let vv = tape.matmul(vars[2], vars[2])?; // vec · vec
        let s1 = tape.tanh(mm)?;
        let s1 = tape.sum(s1)?;
        let s2 = tape.tanh(mv)?;
        let s2 = tape.sum(s2)?;
        let s3 = tape.add(s1, s2)?;
        tape.add(s3, vv)
    })
}

fn suite_add_mul() -> Result<SuiteResult> {
    let mut r = rng(102);
    let a = rand_tensor(&mut r, &[2, 5]);
    let b = rand_tensor(&mut r, &[2, 5]);
    check("primitive.add_mul", &[a, b], |tape, vars| {
        let s = tape.add(vars[0], vars[1])?;
        let p = tape.mul(s, vars[0])?;
        let t = tape.tanh(p)?;
        tape.sum(t)
    })
}

fn suite_concat() -> Result<SuiteResult> {
    let mut r = rng(103);
    let a = rand_tensor(&mut r, &[3]);
    let b = rand_tensor(&mut r, &[2]);
    let c = rand_tensor(&mut r, &[4]);
    check("primitive.concat_last", &[a, b, c], |tape, vars| {
        let cat = tape.concat_last(&[vars[0], vars[1], vars[2]])?;
        let t = tape.tanh(cat)?;
        tape.sum(t)
    })
}

fn suite_mean_axis() -> Result<SuiteResult> {
    let mut r = rng(104);
    let a = rand_tensor(&mut r, &[4, 5]);
    check("primitive.mean_axis", &[a], |tape, vars| {
        let rows = tape.mean_axis(vars[0], 0)?;
        let cols = tape.mean_axis(vars[0], 1)?;
        let tr = tape.tanh(rows)?;
        let tc = tape.tanh(cols)?;
        let sr = tape.sum(tr)?;
        let sc = tape.sum(tc)?;
        tape.add(sr, sc)
    })
}

fn suite_affine_scale() -> Result<SuiteResult> {
    let mut r = rng(105);
    let a = rand_tensor(&mut r, &[6]);
    check("primitive.affine_scale", &[a], |tape, vars| {
        let y = tape.affine(vars[0], 0.7, -0.3)?;
        let z = tape.scale(y, 1.9)?;
        let t = tape.sigmoid(z)?;
        tape.sum(t)
    })
}

fn suite_activations() -> Result<SuiteResult> {
    let mut r = rng(106);
    let a = rand_tensor(&mut r, &[7]);
    let kinked = offset_tensor(&mut r, &[7], 0.1);
    check("primitive.sigmoid_tanh_relu", &[a, kinked], |tape, vars| {
        let s = tape.sigmoid(vars[0])?;
        let t = tape.tanh(vars[0])?;
        let u = tape.relu(vars[1])?;
        let st = tape.mul(s, t)?;
        let a = tape.sum(st)?;
        let b = tape.sum(u)?;
        tape.add(a, b)
    })
}

fn suite_ln() -> Result<SuiteResult> {
    let mut r = rng(107);
    let n: usize = 6;
    let vals: Vec<f64> = (0..n).map(|_| 0.2 + r.random::<f64>()).collect();
    let a = Tensor::from_f64s(&[n], &vals).unwrap();
    check("primitive.ln", &[a], |tape, vars| {
        let l = tape.ln(vars[0])?;
        let t = tape.tanh(l)?;
        tape.sum(t)
    })
}

fn suite_softmax_xent() -> Result<SuiteResult> {
    let mut r = rng(108);
    let logits = rand_tensor(&mut r, &[6]);
    let weights = rand_tensor(&mut r, &[6]);
    check("primitive.softmax_xent", &[logits], move |tape, vars| {
        let p = tape.softmax(vars[0])?;
        let ce = tape.cross_entropy(p, 2)?;
        // weighted sum exercises the full softmax Jacobian, not just one row
        let w = tape.constant(weights.clone());
        let wp = tape.mul(p, w)?;
        let ws = tape.sum(wp)?;
        tape.add(ce, ws)
    })
}

fn suite_masked_softmax() -> Result<SuiteResult> {
    let mut r = rng(109);
    let logits = rand_tensor(&mut r, &[2, 5]);
    let mask = Tensor::from_f64s(&[2, 5], &[1., 1., 0., 1., 0., 0., 1., 1., 1., 0.]).unwrap();
    let weights = rand_tensor(&mut r, &[2, 5]);
    check("primitive.masked_softmax", &[logits], move |tape, vars| {
        let p = tape.masked_softmax(vars[0], &mask, 1)?;
        let w = tape.constant(weights.clone());
        let wp = tape.mul(p, w)?;
        tape.sum(wp)
    })
}

fn suite_row_ops() -> Result<SuiteResult> {
    let mut r = rng(110);
    let src = rand_tensor(&mut r, &[6, 3]);
    check("primitive.row_ops", &[src], |tape, vars| {
        // repeated index exercises gradient accumulation into one row
        let g = tape.gather_rows(vars[0], &[0, 2, 2, 5])?;
        let sel = tape.select_row(vars[0], 4)?;
        let st = tape.stack_rows(&[sel, sel])?;
        let tg = tape.tanh(g)?;
        let ts = tape.tanh(st)?;
        let a = tape.sum(tg)?;
        let b = tape.sum(ts)?;
        tape.add(a, b)
    })
}

fn suite_reshape() -> Result<SuiteResult> {
    let mut r = rng(111);
    let a = rand_tensor(&mut r, &[2, 6]);
    check("primitive.reshape", &[a], |tape, vars| {
        let v = tape.reshape(vars[0], &[3, 4])?;
        let t = tape.tanh(v)?;
        tape.sum(t)
    })
}

fn suite_conv2d() -> Result<SuiteResult> {
    let mut r = rng(112);
    let img = rand_tensor(&mut r, &[8, 8, 1]);
    let ker = rand_tensor(&mut r, &[3, 3, 1, 2]);
    let bias = rand_tensor(&mut r, &[2]);
    check("primitive.conv2d", &[img, ker, bias], |tape, vars| {
        let c = tape.conv2d(vars[0], vars[1], vars[2])?;
        let t = tape.tanh(c)?;
        tape.sum(t)
    })
}

fn suite_max_pool() -> Result<SuiteResult> {
    let mut r = rng(113);
    let img = separated_tensor(&mut r, &[8, 8, 2]);
    check("primitive.max_pool2", &[img], |tape, vars| {
        let p = tape.max_pool2(vars[0])?;
        let t = tape.tanh(p)?;
        tape.sum(t)
    })
}

fn suite_dense_mean() -> Result<SuiteResult> {
    let mut r = rng(114);
    let w = rand_tensor(&mut r, &[4, 5]);
    let x = rand_tensor(&mut r, &[5]);
    let b = rand_tensor(&mut r, &[4]);
    check("primitive.dense_mean_of", &[w, x, b], |tape, vars| {
        let y = tape.dense(vars[0], vars[1], vars[2])?;
        let s = tape.sigmoid(y)?;
        let a = tape.sum(s)?;
        let t = tape.tanh(y)?;
        let b = tape.sum(t)?;
        tape.mean_of(&[a, b])
    })
}

// ---------------------------------------------------------------------------
// assembled blocks

fn suite_gru_cell() -> Result<SuiteResult> {
    let mut r = rng(201);
    let params = GruParams::init("g", 3, 4, &mut r);
    let mut inputs: Vec<Tensor<f64>> =
        params.flatten().iter().map(|p| p.tensor.clone()).collect();
    inputs.push(rand_tensor(&mut r, &[3]));
    inputs.push(rand_tensor(&mut r, &[4]));
    check("model.gru_cell", &inputs, |tape, vars| {
        let mut it = vars[..9].iter().copied();
        let p = GruParams::from_flat(&mut it);
        let h = gru_cell(tape, vars[9], vars[10], &p)?;
        let t = tape.tanh(h)?;
        tape.sum(t)
    })
}

fn han_fixture() -> (EncodedText, HanParams<Parameter<f64>>) {
    let mut r = rng(202);
    // 2 sentences × 3 words over a 6-row vocabulary, one padded slot
    let encoded = EncodedText {
        max_sentences: 2,
        max_words: 3,
        indices: vec![2, 3, 4, 5, 2, 0],
        word_mask: vec![true, true, true, true, true, false],
        sentence_mask: vec![true, true],
    };
    let embedding = rand_tensor(&mut r, &[6, 3]);
    let params = HanParams::init(embedding, 4, &mut r);
    (encoded, params)
}

fn suite_han_branch() -> Result<SuiteResult> {
    let (encoded, params) = han_fixture();
    let n = params.flatten().len();
    let inputs: Vec<Tensor<f64>> = params.flatten().iter().map(|p| p.tensor.clone()).collect();
    check("model.han_branch", &inputs, move |tape, vars| {
        let mut it = vars[..n].iter().copied();
        let p = HanParams::from_flat(&mut it);
        let v = encode_document_vector(tape, &encoded, &p)?;
        let t = tape.tanh(v)?;
        tape.sum(t)
    })
}

fn conv_suite(name: &'static str, cfg: ConvEncoderConfig) -> Result<SuiteResult> {
    let mut r = rng(203);
    let params = ConvEncoderParams::init(&cfg, &mut r)?;
    let n_blocks = cfg.block_channels.len();
    let n = params.flatten().len();
    let image = ImageGrid {
        height: cfg.input_height,
        width: cfg.input_width,
        channels: cfg.input_channels,
        values: separated_tensor(
            &mut r,
            &[cfg.input_height, cfg.input_width, cfg.input_channels],
        )
        .data()
        .to_vec(),
    };
    check(name, &params_tensors(&params), move |tape, vars| {
        let mut it = vars[..n].iter().copied();
        let p = ConvEncoderParams::from_flat(n_blocks, &mut it);
        let (logits, penultimate) = conv_forward(tape, &image, &cfg, &p)?;
        // keep the softmax off its saturated plateau so the difference
        // quotient stays informative
        let logits = tape.scale(logits, 0.05)?;
        let probs = tape.softmax(logits)?;
        let ce = tape.cross_entropy(probs, 1)?;
        let feat = tape.sum(penultimate)?;
        let feat = tape.scale(feat, 0.01)?;
        tape.add(ce, feat)
    })
}

fn params_tensors(p: &ConvEncoderParams<Parameter<f64>>) -> Vec<Tensor<f64>> {
    p.flatten().iter().map(|q| q.tensor.clone()).collect()
}

fn suite_conv_stack_8x8() -> Result<SuiteResult> {
    conv_suite(
        "model.conv_stack_8x8",
        ConvEncoderConfig {
            input_height: 8,
            input_width: 8,
            input_channels: 1,
            block_channels: vec![2],
            feature_dim: 5,
            classes: 3,
        },
    )
}

fn suite_conv_stack_full() -> Result<SuiteResult> {
    conv_suite(
        "model.conv_stack_full",
        ConvEncoderConfig {
            input_height: 26,
            input_width: 26,
            input_channels: 1,
            block_channels: vec![2, 3, 4],
            feature_dim: 6,
            classes: 4,
        },
    )
}

fn fusion_suite(
    name: &'static str,
    wiring: InterLevelInput,
    level: usize,
    target: usize,
) -> Result<SuiteResult> {
    let mut r = rng(204);
    let cfg = FusionConfig::new(4, vec![2, 3, 5], wiring)?;
    let params = FusionParams::init(&cfg, 6, 5, &mut r);
    let mut inputs: Vec<Tensor<f64>> =
        params.flatten().iter().map(|p| p.tensor.clone()).collect();
    let n = inputs.len();
    inputs.push(rand_tensor(&mut r, &[6]));
    inputs.push(rand_tensor(&mut r, &[5]));
    check(name, &inputs, move |tape, vars| {
        let mut it = vars[..n].iter().copied();
        let p = FusionParams::from_flat(3, &mut it);
        let (probs, _) = hierarchical_forward(tape, vars[n], vars[n + 1], &p, wiring)?;
        tape.cross_entropy(probs[level], target)
    })
}

fn suite_fusion_heads() -> Result<Vec<SuiteResult>> {
    Ok(vec![
        fusion_suite("model.fusion_head_l1", InterLevelInput::Fused, 0, 1)?,
        fusion_suite("model.fusion_head_l2", InterLevelInput::Fused, 1, 2)?,
        fusion_suite("model.fusion_head_l3", InterLevelInput::Fused, 2, 4)?,
        fusion_suite("model.fusion_head_probs_wiring", InterLevelInput::Probs, 2, 0)?,
    ])
}

fn suite_graphsage() -> Result<SuiteResult> {
    let mut r = rng(205);
    let mut graph = CitationGraph::new();
    graph.insert_node("a", &[]);
    graph.insert_node("b", &["a".into()]);
    graph.insert_node("c", &["a".into(), "b".into()]);
    graph.insert_node("d", &["c".into()]);
    let mut features = BTreeMap::new();
    for id in ["a", "b", "c", "d"] {
        features.insert(id.to_string(), rand_tensor(&mut r, &[3]).data().to_vec());
    }
    let params = SageParams::init("s", 3, 4, 3, &mut r);
    let inputs: Vec<Tensor<f64>> = params.flatten().iter().map(|p| p.tensor.clone()).collect();
    let n = inputs.len();
    check("model.graphsage", &inputs, move |tape, vars| {
        let mut it = vars[..n].iter().copied();
        let p = SageParams::from_flat(&mut it);
        let mut losses = Vec::new();
        for (i, id) in ["a", "b", "c", "d"].iter().enumerate() {
            let probs = graphsage_forward(tape, &graph, &features, id, &p, (2, 2), 77)?;
            losses.push(tape.cross_entropy(probs, i % 3)?);
        }
        tape.mean_of(&losses)
    })
}

/// Every suite, in a stable order.
pub fn run_full_suite() -> Result<Vec<SuiteResult>> {
    let mut out = vec![
        suite_matmul()?,
        suite_add_mul()?,
        suite_concat()?,
        suite_mean_axis()?,
        suite_affine_scale()?,
        suite_activations()?,
        suite_ln()?,
        suite_softmax_xent()?,
        suite_masked_softmax()?,
        suite_row_ops()?,
        suite_reshape()?,
        suite_conv2d()?,
        suite_max_pool()?,
        suite_dense_mean()?,
        suite_gru_cell()?,
        suite_han_branch()?,
        suite_conv_stack_8x8()?,
        suite_conv_stack_full()?,
    ];
    out.extend(suite_fusion_heads()?);
    out.push(suite_graphsage()?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_suite_passes() {
        let results = run_full_suite().unwrap();
        assert!(results.len() >= 20);
        for s in &results {
            assert!(
                s.passed(),
                "{}: max rel {} at {:?} over {} elements",
                s.name,
                s.report.max_rel_error,
                s.report.worst,
                s.report.elements_checked
            );
        }
    }

    #[test]
    fn suite_names_are_unique() {
        let results = run_full_suite().unwrap();
        let names: std::collections::BTreeSet<&str> =
            results.iter().map(|s| s.name).collect();
        assert_eq!(names.len(), results.len());
    }
}
