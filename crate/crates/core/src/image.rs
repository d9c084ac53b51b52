//! Image branch: plain-text graymap/pixmap loading, nearest-neighbor resize,
//! and a small convolutional encoder whose second-to-last dense layer is the
//! per-image feature vector. Precomputed feature vectors can be supplied
//! per document instead of raw pixels.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Initializer, Parameter, Tape, Tensor, Var};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::opt::{Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Row-major (row, col, channel) intensities in [0, 1].
    pub values: Vec<f64>,
}

impl ImageGrid {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width * channels {
            return Err(Error::IncompatibleImage {
                h: height,
                w: width,
                detail: format!(
                    "{} values for {height}x{width}x{channels}",
                    values.len()
                ),
            });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::IncompatibleImage {
                h: height,
                w: width,
                detail: format!("intensity {v} outside [0, 1]"),
            });
        }
        Ok(ImageGrid { height, width, channels, values })
    }

    pub fn to_tensor(&self) -> Tensor<f64> {
        Tensor::new(
            vec![self.height, self.width, self.channels],
            self.values.clone(),
        )
        .expect("grid invariant")
    }

    /// Nearest-neighbor resample (top-left anchor) keeping channels.
    pub fn resize_nearest(&self, height: usize, width: usize) -> ImageGrid {
        assert!(height > 0 && width > 0, "target dims must be positive");
        let c = self.channels;
        let mut values = Vec::with_capacity(height * width * c);
        for i in 0..height {
            let si = (i * self.height / height).min(self.height - 1);
            for j in 0..width {
                let sj = (j * self.width / width).min(self.width - 1);
                let base = (si * self.width + sj) * c;
                values.extend_from_slice(&self.values[base..base + c]);
            }
        }
        ImageGrid { height, width, channels: c, values }
    }
}

/// Parse plain-text P2 (graymap) or P3 (pixmap) data. `origin` labels errors.
pub fn parse_pnm(text: &str, origin: &str) -> Result<ImageGrid> {
    let bad = |detail: String| Error::MalformedImage {
        path: origin.to_string(),
        detail,
    };
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(|l| l.split_whitespace())
        .map(str::to_owned)
        .collect::<Vec<_>>()
        .into_iter();
    let magic = tokens.next().ok_or_else(|| bad("empty file".into()))?;
    let channels = match magic.as_str() {
        "P2" => 1,
        "P3" => 3,
        other => return Err(bad(format!("unsupported magic {other:?}"))),
    };
    let mut next_num = |what: &str| -> Result<usize> {
        let t = tokens.next().ok_or_else(|| bad(format!("missing {what}")))?;
        t.parse::<usize>()
            .map_err(|_| bad(format!("bad {what} {t:?}")))
    };
    let width = next_num("width")?;
    let height = next_num("height")?;
    let maxval = next_num("maxval")?;
    if width == 0 || height == 0 || maxval == 0 {
        return Err(bad(format!("degenerate header {width}x{height} maxval {maxval}")));
    }
    let expected = width * height * channels;
    let mut values = Vec::with_capacity(expected);
    for _ in 0..expected {
        let v = next_num("sample")?;
        if v > maxval {
            return Err(bad(format!("sample {v} exceeds maxval {maxval}")));
        }
        values.push(v as f64 / maxval as f64);
    }
    if tokens.next().is_some() {
        return Err(bad(format!("trailing data after {expected} samples")));
    }
    ImageGrid::new(height, width, channels, values)
}

pub fn load_pnm(path: &Path) -> Result<ImageGrid> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_pnm(&text, &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvEncoderConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub input_channels: usize,
    /// Output channels of each conv(3x3) -> relu -> maxpool(2x2) block.
    pub block_channels: Vec<usize>,
    pub feature_dim: usize,
    pub classes: usize,
}

impl Default for ConvEncoderConfig {
    fn default() -> Self {
        ConvEncoderConfig {
            input_height: 32,
            input_width: 32,
            input_channels: 1,
            block_channels: vec![4, 8, 16],
            feature_dim: 1024,
            classes: 8,
        }
    }
}

impl ConvEncoderConfig {
    /// Spatial dims after each block; errors if the stack consumes the grid.
    pub fn spatial_plan(&self) -> Result<Vec<(usize, usize)>> {
        if self.block_channels.is_empty() || self.feature_dim == 0 || self.classes == 0 {
            return Err(Error::Config(
                "conv encoder needs at least one block, a feature width, and classes".into(),
            ));
        }
        let (mut h, mut w) = (self.input_height, self.input_width);
        let mut plan = Vec::new();
        for (i, _) in self.block_channels.iter().enumerate() {
            if h < 3 || w < 3 {
                return Err(Error::Config(format!(
                    "block {i} sees {h}x{w}; 3x3 valid conv needs at least 3x3"
                )));
            }
            h = (h - 2) / 2;
            w = (w - 2) / 2;
            if h == 0 || w == 0 {
                return Err(Error::Config(format!(
                    "block {i} pools the grid away ({h}x{w})"
                )));
            }
            plan.push((h, w));
        }
        Ok(plan)
    }

    pub fn flat_dim(&self) -> Result<usize> {
        let plan = self.spatial_plan()?;
        let (h, w) = *plan.last().expect("non-empty plan");
        Ok(h * w * self.block_channels.last().copied().expect("non-empty"))
    }
}

#[derive(Debug, Clone)]
pub struct ConvBlock<P> {
    pub kernel: P,
    pub bias: P,
}

#[derive(Debug, Clone)]
pub struct ConvEncoderParams<P> {
    pub blocks: Vec<ConvBlock<P>>,
    pub feat_w: P,
    pub feat_b: P,
    pub out_w: P,
    pub out_b: P,
}

impl<P> ConvEncoderParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> ConvEncoderParams<Q> {
        ConvEncoderParams {
            blocks: self
                .blocks
                .iter()
                .map(|b| ConvBlock {
                    kernel: f(&b.kernel),
                    bias: f(&b.bias),
                })
                .collect(),
            feat_w: f(&self.feat_w),
            feat_b: f(&self.feat_b),
            out_w: f(&self.out_w),
            out_b: f(&self.out_b),
        }
    }

    pub fn flatten(&self) -> Vec<&P> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(&b.kernel);
            out.push(&b.bias);
        }
        out.extend([&self.feat_w, &self.feat_b, &self.out_w, &self.out_b]);
        out
    }

    pub fn flatten_mut(&mut self) -> Vec<&mut P> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.kernel);
            out.push(&mut b.bias);
        }
        out.extend([
            &mut self.feat_w,
            &mut self.feat_b,
            &mut self.out_w,
            &mut self.out_b,
        ]);
        out
    }

    pub fn from_flat(n_blocks: usize, items: &mut impl Iterator<Item = P>) -> Self {
        let blocks = (0..n_blocks)
            .map(|_| ConvBlock {
                kernel: items.next().expect("kernel"),
                bias: items.next().expect("bias"),
            })
            .collect();
        ConvEncoderParams {
            blocks,
            feat_w: items.next().expect("feat_w"),
            feat_b: items.next().expect("feat_b"),
            out_w: items.next().expect("out_w"),
            out_b: items.next().expect("out_b"),
        }
    }
}

impl ConvEncoderParams<Parameter<f64>> {
    pub fn init(cfg: &ConvEncoderConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let flat = cfg.flat_dim()?;
        let mut blocks = Vec::new();
        let mut c_in = cfg.input_channels;
        for (i, &c_out) in cfg.block_channels.iter().enumerate() {
            blocks.push(ConvBlock {
                kernel: Parameter::new(
                    format!("conv.block{i}.kernel"),
                    &[3, 3, c_in, c_out],
                    Initializer::HeUniform { fan_in: 9 * c_in },
                    rng,
                ),
                bias: Parameter::new(
                    format!("conv.block{i}.bias"),
                    &[c_out],
                    Initializer::Zeros,
                    rng,
                ),
            });
            c_in = c_out;
        }
        Ok(ConvEncoderParams {
            blocks,
            feat_w: Parameter::new(
                "conv.feat_w",
                &[cfg.feature_dim, flat],
                Initializer::HeUniform { fan_in: flat },
                rng,
            ),
            feat_b: Parameter::new("conv.feat_b", &[cfg.feature_dim], Initializer::Zeros, rng),
            out_w: Parameter::new(
                "conv.out_w",
                &[cfg.classes, cfg.feature_dim],
                Initializer::HeUniform { fan_in: cfg.feature_dim },
                rng,
            ),
            out_b: Parameter::new("conv.out_b", &[cfg.classes], Initializer::Zeros, rng),
        })
    }

    pub fn bind(&self, tape: &mut Tape<f64>) -> ConvEncoderParams<Var> {
        self.map(&mut |p| tape.leaf(p.tensor.clone(), true))
    }
}

/// Run the stack on one image: (class logits, penultimate feature activation).
pub fn conv_forward(
    tape: &mut Tape<f64>,
    image: &ImageGrid,
    cfg: &ConvEncoderConfig,
    p: &ConvEncoderParams<Var>,
) -> Result<(Var, Var)> {
    if image.height != cfg.input_height
        || image.width != cfg.input_width
        || image.channels != cfg.input_channels
    {
        return Err(Error::IncompatibleImage {
            h: image.height,
            w: image.width,
            detail: format!(
                "encoder expects {}x{}x{}, image has {} channels",
                cfg.input_height, cfg.input_width, cfg.input_channels, image.channels
            ),
        });
    }
    let mut x = tape.constant(image.to_tensor());
    for b in &p.blocks {
        let c = tape.conv2d(x, b.kernel, b.bias)?;
        let a = tape.relu(c)?;
        x = tape.max_pool2(a)?;
    }
    let flat_dim = crate::autodiff::numel(tape.value(x).shape());
    let flat = tape.reshape(x, &[flat_dim])?;
    let pre = tape.dense(p.feat_w, flat, p.feat_b)?;
    let penultimate = tape.relu(pre)?;
    let logits = tape.dense(p.out_w, penultimate, p.out_b)?;
    Ok((logits, penultimate))
}

#[derive(Debug, Clone)]
pub struct FineTuneConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        FineTuneConfig {
            epochs: 200,
            adam: AdamConfig {
                learning_rate: 1e-2,
                ..AdamConfig::default()
            },
            seed: 1,
        }
    }
}

/// Train the encoder as a classifier over `(image, label)` pairs; one full
/// pass is one optimizer step. Returns params and per-epoch mean loss.
pub fn fine_tune_image_encoder(
    pairs: &[(ImageGrid, usize)],
    cfg: &ConvEncoderConfig,
    opts: &FineTuneConfig,
) -> Result<(ConvEncoderParams<Parameter<f64>>, Vec<f64>)> {
    if pairs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    for (_, label) in pairs {
        if *label >= cfg.classes {
            return Err(Error::TargetOutOfRange {
                index: *label,
                classes: cfg.classes,
            });
        }
    }
    let mut rng = rand::SeedableRng::seed_from_u64(opts.seed);
    let mut params = ConvEncoderParams::init(cfg, &mut rng)?;
    let mut adam = Adam::new(opts.adam);
    let mut losses = Vec::with_capacity(opts.epochs);
    for epoch in 0..opts.epochs {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let mut per_doc = Vec::with_capacity(pairs.len());
        for (image, label) in pairs {
            let (logits, _) = conv_forward(&mut tape, image, cfg, &bound)?;
            let probs = tape.softmax(logits)?;
            per_doc.push(tape.cross_entropy(probs, *label)?);
        }
        let loss = tape.mean_of(&per_doc)?;
        let loss_val = tape.value(loss).item();
        if !loss_val.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: 0 });
        }
        tape.backward(loss)?;
        let grads: Vec<Option<Tensor<f64>>> =
            bound.flatten().iter().map(|v| tape.grad(**v)).collect();
        let mut slots = params.flatten_mut();
        adam.step(&mut slots, &grads);
        losses.push(loss_val);
    }
    Ok((params, losses))
}

/// Penultimate activation for one image, detached from any tape.
pub fn extract_image_feature(
    image: &ImageGrid,
    cfg: &ConvEncoderConfig,
    params: &ConvEncoderParams<Parameter<f64>>,
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let (_, penultimate) = conv_forward(&mut tape, image, cfg, &bound)?;
    Ok(tape.value(penultimate).data().to_vec())
}

fn read_feature_file(path: &Path) -> Result<Vec<Vec<f32>>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut rows = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f32> = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f32>().map_err(|_| Error::MalformedImage {
                    path: path.display().to_string(),
                    detail: format!("bad float {t:?}"),
                })
            })
            .collect::<Result<_>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// One feature vector per document: the first image's vector, or a zero
/// vector when the document has no image. All non-empty vectors must agree
/// on dimension; `default_dim` sizes the zero vectors when nothing sets it.
pub fn load_precomputed_features(
    corpus: &Corpus,
    default_dim: usize,
) -> Result<BTreeMap<String, Vec<f32>>> {
    let mut found: Vec<(String, Option<Vec<f32>>)> = Vec::with_capacity(corpus.documents.len());
    for doc in &corpus.documents {
        let vector = if let Some(first) = doc.image_features.first() {
            Some(first.clone())
        } else if let Some(rel) = &doc.image_feature_path {
            let path: PathBuf = match &corpus.base_dir {
                Some(base) => base.join(rel),
                None => PathBuf::from(rel),
            };
            read_feature_file(&path)?.into_iter().next()
        } else {
            None
        };
        found.push((doc.id.clone(), vector));
    }
    let expected = found
        .iter()
        .find_map(|(_, v)| v.as_ref().map(Vec::len))
        .unwrap_or(default_dim);
    let mut map = BTreeMap::new();
    for (id, vector) in found {
        match vector {
            Some(v) if v.len() != expected => {
                return Err(Error::FeatureDimMismatch {
                    id,
                    found: v.len(),
                    expected,
                });
            }
            Some(v) => {
                map.insert(id, v);
            }
            None => {
                map.insert(id, vec![0.0; expected]);
            }
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_check;
    use crate::corpus::{generate_synthetic_corpus, SynthSpec, Taxonomy};
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_grid(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> ImageGrid {
        let values = (0..h * w * c).map(|_| rng.random::<f64>()).collect();
        ImageGrid::new(h, w, c, values).unwrap()
    }

    #[test]
    fn pnm_parses_comments_and_scales_by_maxval() {
        let text = "P2\n# fixture\n3 2\n4\n0 1 2\n3 4 0\n";
        let g = parse_pnm(text, "fixture").unwrap();
        assert_eq!((g.height, g.width, g.channels), (2, 3, 1));
        assert_eq!(g.values, vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.0]);
    }

    #[test]
    fn pnm_color_has_three_channels() {
        let text = "P3 1 1 255  10 20 30";
        let g = parse_pnm(text, "fixture").unwrap();
        assert_eq!(g.channels, 3);
        assert!((g.values[1] - 20.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn pnm_rejects_truncated_and_oversized() {
        assert!(matches!(
            parse_pnm("P2 2 2 255 1 2 3", "x"),
            Err(Error::MalformedImage { .. })
        ));
        assert!(matches!(
            parse_pnm("P2 1 1 10 11", "x"),
            Err(Error::MalformedImage { .. })
        ));
        assert!(matches!(
            parse_pnm("P5 1 1 255 0", "x"),
            Err(Error::MalformedImage { .. })
        ));
        assert!(matches!(
            parse_pnm("P2 1 1 255 0 9", "x"),
            Err(Error::MalformedImage { .. })
        ));
    }

    #[test]
    fn grid_validates_range_and_count() {
        assert!(ImageGrid::new(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(ImageGrid::new(1, 1, 1, vec![1.5]).is_err());
    }

    #[test]
    fn resize_doubles_by_block_replication() {
        let g = ImageGrid::new(2, 2, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let big = g.resize_nearest(4, 4);
        assert_eq!(
            big.values,
            vec![
                0.1, 0.1, 0.2, 0.2, 0.1, 0.1, 0.2, 0.2, 0.3, 0.3, 0.4, 0.4, 0.3, 0.3, 0.4, 0.4
            ]
        );
        assert_eq!(g.resize_nearest(2, 2), g);
    }

    #[test]
    fn maxpool_matches_window_max_on_random_grids() {
        for seed in 0..10 {
            let mut r = rng(seed);
            let g = random_grid(&mut r, 8, 8, 1);
            let mut tape = Tape::new();
            let x = tape.constant(g.to_tensor());
            let p = tape.max_pool2(x).unwrap();
            let out = tape.value(p);
            for i in 0..4 {
                for j in 0..4 {
                    let window = [
                        g.values[(2 * i) * 8 + 2 * j],
                        g.values[(2 * i) * 8 + 2 * j + 1],
                        g.values[(2 * i + 1) * 8 + 2 * j],
                        g.values[(2 * i + 1) * 8 + 2 * j + 1],
                    ];
                    let want = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    assert_eq!(out.data()[i * 4 + j], want);
                }
            }
        }
    }

    #[test]
    fn one_by_one_kernel_is_passthrough() {
        let mut r = rng(3);
        let g = random_grid(&mut r, 8, 8, 1);
        let mut tape = Tape::new();
        let x = tape.constant(g.to_tensor());
        let k = tape.constant(Tensor::from_f64s(&[1, 1, 1, 1], &[1.0]).unwrap());
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = tape.conv2d(x, k, b).unwrap();
        for (got, want) in tape.value(y).data().iter().zip(&g.values) {
            assert!((got - want).abs() <= 1e-12);
        }
    }

    fn tiny_cfg() -> ConvEncoderConfig {
        ConvEncoderConfig {
            input_height: 8,
            input_width: 8,
            input_channels: 1,
            block_channels: vec![2],
            feature_dim: 5,
            classes: 3,
        }
    }

    #[test]
    fn spatial_plan_rejects_consumed_grid() {
        let cfg = ConvEncoderConfig {
            input_height: 8,
            input_width: 8,
            block_channels: vec![2, 2, 2],
            ..tiny_cfg()
        };
        assert!(matches!(cfg.spatial_plan(), Err(Error::Config(_))));
        assert_eq!(ConvEncoderConfig::default().spatial_plan().unwrap(), vec![
            (15, 15),
            (6, 6),
            (2, 2)
        ]);
        assert_eq!(ConvEncoderConfig::default().flat_dim().unwrap(), 64);
    }

    #[test]
    fn zero_weights_give_bias_only_feature() {
        let cfg = tiny_cfg();
        let mut params = ConvEncoderParams::init(&cfg, &mut rng(4)).unwrap();
        for slot in params.flatten_mut() {
            for v in slot.tensor.data_mut() {
                *v = 0.0;
            }
        }
        let bias = [0.7, -0.3, 0.0, 2.0, -1.0];
        params.feat_b.tensor = Tensor::from_f64s(&[5], &bias).unwrap();
        let g = random_grid(&mut rng(5), 8, 8, 1);
        let feat = extract_image_feature(&g, &cfg, &params).unwrap();
        let want: Vec<f64> = bias.iter().map(|v| v.max(0.0)).collect();
        assert_eq!(feat, want);
    }

    #[test]
    fn wrong_input_dims_rejected() {
        let cfg = tiny_cfg();
        let params = ConvEncoderParams::init(&cfg, &mut rng(6)).unwrap();
        let g = random_grid(&mut rng(7), 9, 8, 1);
        assert!(matches!(
            extract_image_feature(&g, &cfg, &params),
            Err(Error::IncompatibleImage { .. })
        ));
    }

    #[test]
    fn feature_equals_forward_penultimate_and_is_deterministic() {
        let cfg = tiny_cfg();
        let params = ConvEncoderParams::init(&cfg, &mut rng(8)).unwrap();
        let g = random_grid(&mut rng(9), 8, 8, 1);
        let feat = extract_image_feature(&g, &cfg, &params).unwrap();
        assert_eq!(feat.len(), cfg.feature_dim);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let (_, pen) = conv_forward(&mut tape, &g, &cfg, &bound).unwrap();
        assert_eq!(tape.value(pen).data(), feat.as_slice());
        assert_eq!(extract_image_feature(&g, &cfg, &params).unwrap(), feat);
    }

    #[test]
    fn encoder_stack_gradients_check_out() {
        let cfg = tiny_cfg();
        let params = ConvEncoderParams::init(&cfg, &mut rng(10)).unwrap();
        let g = random_grid(&mut rng(11), 8, 8, 1);
        let tensors: Vec<Tensor<f64>> =
            params.flatten().iter().map(|p| p.tensor.clone()).collect();
        let report = finite_difference_check(&tensors, 1e-5, 1e-4, |tape, vars| {
            let mut it = vars.iter().copied();
            let bound = ConvEncoderParams::from_flat(1, &mut it);
            let (logits, _) = conv_forward(tape, &g, &cfg, &bound)?;
            let probs = tape.softmax(logits)?;
            tape.cross_entropy(probs, 1)
        })
        .unwrap();
        assert!(report.passed(), "max rel {}", report.max_rel_error);
    }

    fn overfit_setup() -> (Vec<(ImageGrid, usize)>, ConvEncoderConfig) {
        let cfg = ConvEncoderConfig {
            input_height: 12,
            input_width: 12,
            input_channels: 1,
            block_channels: vec![3],
            feature_dim: 16,
            classes: 8,
        };
        let mut r = rng(42);
        let pairs = (0..8)
            .map(|label| (random_grid(&mut r, 12, 12, 1), label))
            .collect();
        (pairs, cfg)
    }

    #[test]
    fn fine_tune_memorizes_eight_images() {
        let (pairs, cfg) = overfit_setup();
        let opts = FineTuneConfig::default();
        let (params, losses) = fine_tune_image_encoder(&pairs, &cfg, &opts).unwrap();
        assert_eq!(losses.len(), 200);
        assert!(losses.last().unwrap() < &losses[0]);
        let mut correct = 0;
        for (image, label) in &pairs {
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let (logits, _) = conv_forward(&mut tape, image, &cfg, &bound).unwrap();
            let scores = tape.value(logits).data();
            let pred = (0..scores.len())
                .max_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap())
                .unwrap();
            if pred == *label {
                correct += 1;
            }
        }
        assert_eq!(correct, 8, "training accuracy must reach 1.0");
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let (pairs, cfg) = overfit_setup();
        let opts = FineTuneConfig {
            epochs: 0,
            ..FineTuneConfig::default()
        };
        let (params, losses) = fine_tune_image_encoder(&pairs, &cfg, &opts).unwrap();
        assert!(losses.is_empty());
        let fresh = ConvEncoderParams::init(&cfg, &mut rng(opts.seed)).unwrap();
        for (a, b) in params.flatten().iter().zip(fresh.flatten()) {
            assert_eq!(a.tensor.data(), b.tensor.data());
        }
    }

    #[test]
    fn fine_tune_same_seed_same_losses() {
        let (pairs, cfg) = overfit_setup();
        let opts = FineTuneConfig {
            epochs: 5,
            ..FineTuneConfig::default()
        };
        let (_, a) = fine_tune_image_encoder(&pairs, &cfg, &opts).unwrap();
        let (_, b) = fine_tune_image_encoder(&pairs, &cfg, &opts).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn empty_training_set_rejected() {
        let cfg = tiny_cfg();
        assert!(matches!(
            fine_tune_image_encoder(&[], &cfg, &FineTuneConfig::default()),
            Err(Error::EmptyTrainingSet)
        ));
    }

    #[test]
    fn precomputed_features_take_first_vector_and_fill_zeros() {
        let spec = SynthSpec {
            docs: 6,
            feature_dim: 4,
            ..SynthSpec::default()
        };
        let tax = Taxonomy::synthetic(2, 4, 8).unwrap();
        let mut corpus = generate_synthetic_corpus(&spec, &tax).unwrap();
        corpus.documents[0]
            .image_features
            .push(vec![9.0, 9.0, 9.0, 9.0]);
        let kept = corpus.documents[0].image_features[0].clone();
        corpus.documents[1].image_features.clear();
        let map = load_precomputed_features(&corpus, 4).unwrap();
        assert_eq!(map[&corpus.documents[0].id], kept);
        assert_eq!(map[&corpus.documents[1].id], vec![0.0; 4]);
        assert_eq!(map.len(), 6);
    }

    #[test]
    fn precomputed_dimension_mismatch_is_error() {
        let spec = SynthSpec {
            docs: 3,
            feature_dim: 4,
            ..SynthSpec::default()
        };
        let tax = Taxonomy::synthetic(2, 4, 8).unwrap();
        let mut corpus = generate_synthetic_corpus(&spec, &tax).unwrap();
        corpus.documents[2].image_features = vec![vec![1.0, 2.0]];
        match load_precomputed_features(&corpus, 4) {
            Err(Error::FeatureDimMismatch { found, expected, .. }) => {
                assert_eq!((found, expected), (2, 4));
            }
            other => panic!("expected dimension mismatch, got {other:?}"),
        }
    }

    #[test]
    fn feature_file_first_row_wins() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("f.txt"), "1.5 2.5 3.5\n9 9 9\n").unwrap();
        let spec = SynthSpec {
            docs: 2,
            feature_dim: 3,
            ..SynthSpec::default()
        };
        let tax = Taxonomy::synthetic(2, 4, 8).unwrap();
        let mut corpus = generate_synthetic_corpus(&spec, &tax).unwrap();
        corpus.documents[0].image_features.clear();
        corpus.documents[0].image_feature_path = Some("f.txt".into());
        corpus.base_dir = Some(dir.path().to_path_buf());
        let map = load_precomputed_features(&corpus, 3).unwrap();
        assert_eq!(map[&corpus.documents[0].id], vec![1.5, 2.5, 3.5]);
    }
}
