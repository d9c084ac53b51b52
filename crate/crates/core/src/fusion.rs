//! Joint text+image heads: per-level sigmoid projections of both modality
//! vectors, stepwise concatenation down the hierarchy, softmax classification
//! heads, and the weighted three-level loss.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Initializer, Parameter, Tape, Var};
use crate::error::{Error, Result};

/// What a level ℓ > 1 head receives from the level above, alongside its own
/// modality projections.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InterLevelInput {
    /// The previous level's fused vector (default).
    Fused,
    /// The previous level's probability vector.
    Probs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub z1: f64,
    pub z2: f64,
    pub z3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { z1: 0.05, z2: 0.1, z3: 0.85 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ws = [self.z1, self.z2, self.z3];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("loss weights must be nonnegative: {ws:?}")));
        }
        let total: f64 = ws.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("loss weights sum to {total}, need 1")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FusionConfig {
    pub projection_dim: usize,
    pub level_sizes: Vec<usize>,
    pub wiring: InterLevelInput,
}

impl FusionConfig {
    pub fn new(projection_dim: usize, level_sizes: Vec<usize>, wiring: InterLevelInput) -> Result<Self> {
        if level_sizes.len() != 3 || level_sizes.iter().any(|&s| s == 0) || projection_dim == 0 {
            return Err(Error::Config(format!(
                "fusion needs three non-empty levels and a positive projection width, got {level_sizes:?} / {projection_dim}"
            )));
        }
        Ok(FusionConfig { projection_dim, level_sizes, wiring })
    }

    /// Width of each level's fused vector.
    pub fn fused_dims(&self) -> [usize; 3] {
        let p2 = 2 * self.projection_dim;
        let carry = |prev_fused: usize, prev_level: usize| match self.wiring {
            InterLevelInput::Fused => prev_fused,
            InterLevelInput::Probs => prev_level,
        };
        let d1 = p2;
        let d2 = p2 + carry(d1, self.level_sizes[0]);
        let d3 = p2 + carry(d2, self.level_sizes[1]);
        [d1, d2, d3]
    }
}

#[derive(Debug, Clone)]
pub struct LevelHeadParams<P> {
    pub w_txt: P,
    pub b_txt: P,
    pub w_img: P,
    pub b_img: P,
    pub w_pat: P,
    pub b_pat: P,
}

impl<P> LevelHeadParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> LevelHeadParams<Q> {
        LevelHeadParams {
            w_txt: f(&self.w_txt),
            b_txt: f(&self.b_txt),
            w_img: f(&self.w_img),
            b_img: f(&self.b_img),
            w_pat: f(&self.w_pat),
            b_pat: f(&self.b_pat),
        }
    }

    pub fn flatten(&self) -> Vec<&P> {
        vec![&self.w_txt, &self.b_txt, &self.w_img, &self.b_img, &self.w_pat, &self.b_pat]
    }

    pub fn flatten_mut(&mut self) -> Vec<&mut P> {
        vec![
            &mut self.w_txt, &mut self.b_txt, &mut self.w_img, &mut self.b_img, &mut self.w_pat,
            &mut self.b_pat,
        ]
    }

    pub fn from_flat(items: &mut impl Iterator<Item = P>) -> Self {
        LevelHeadParams {
            w_txt: items.next().expect("w_txt"),
            b_txt: items.next().expect("b_txt"),
            w_img: items.next().expect("w_img"),
            b_img: items.next().expect("b_img"),
            w_pat: items.next().expect("w_pat"),
            b_pat: items.next().expect("b_pat"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FusionParams<P> {
    pub levels: Vec<LevelHeadParams<P>>,
}

impl<P> FusionParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> FusionParams<Q> {
        FusionParams {
            levels: self.levels.iter().map(|l| l.map(f)).collect(),
        }
    }

    pub fn flatten(&self) -> Vec<&P> {
        self.levels.iter().flat_map(|l| l.flatten()).collect()
    }

    pub fn flatten_mut(&mut self) -> Vec<&mut P> {
        self.levels.iter_mut().flat_map(|l| l.flatten_mut()).collect()
    }

    pub fn from_flat(n_levels: usize, items: &mut impl Iterator<Item = P>) -> Self {
        FusionParams {
            levels: (0..n_levels).map(|_| LevelHeadParams::from_flat(items)).collect(),
        }
    }
}

impl FusionParams<Parameter<f64>> {
    pub fn init(
        cfg: &FusionConfig,
        txt_dim: usize,
        img_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fused = cfg.fused_dims();
        let p = cfg.projection_dim;
        let mut levels = Vec::with_capacity(3);
        for l in 0..3 {
            let head_in = fused[l];
            let out = cfg.level_sizes[l];
            let dense = |name: String, rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
                Parameter::new(name, &[rows, cols], Initializer::HeUniform { fan_in: cols }, rng)
            };
            let zeros = |name: String, rows: usize, rng: &mut ChaCha8Rng| {
                Parameter::new(name, &[rows], Initializer::Zeros, rng)
            };
            levels.push(LevelHeadParams {
                w_txt: dense(format!("fusion.l{}.w_txt", l + 1), p, txt_dim, rng),
                b_txt: zeros(format!("fusion.l{}.b_txt", l + 1), p, rng),
                w_img: dense(format!("fusion.l{}.w_img", l + 1), p, img_dim, rng),
                b_img: zeros(format!("fusion.l{}.b_img", l + 1), p, rng),
                w_pat: dense(format!("fusion.l{}.w_pat", l + 1), out, head_in, rng),
                b_pat: zeros(format!("fusion.l{}.b_pat", l + 1), out, rng),
            });
        }
        FusionParams { levels }
    }

    pub fn bind(&self, tape: &mut Tape<f64>) -> FusionParams<Var> {
        self.map(&mut |p| tape.leaf(p.tensor.clone(), true))
    }
}

/// One level's head: sigmoid projections of both modalities, concatenation
/// with whatever the previous level contributes, then the softmax head.
/// Returns (fused vector, probability vector).
pub fn level_fusion_head(
    tape: &mut Tape<f64>,
    v_txt: Var,
    v_img: Var,
    carry: Option<Var>,
    p: &LevelHeadParams<Var>,
) -> Result<(Var, Var)> {
    let t = tape.dense(p.w_txt, v_txt, p.b_txt)?;
    let t = tape.sigmoid(t)?;
    let i = tape.dense(p.w_img, v_img, p.b_img)?;
    let i = tape.sigmoid(i)?;
    let parts: Vec<Var> = match carry {
        Some(c) => vec![t, i, c],
        None => vec![t, i],
    };
    let fused = tape.concat_last(&parts)?;
    let logits = tape.dense(p.w_pat, fused, p.b_pat)?;
    let probs = tape.softmax(logits)?;
    Ok((fused, probs))
}

/// All three levels in sequence; level ℓ > 1 additionally sees the previous
/// level's fused vector (or probability vector, per the wiring choice).
pub fn hierarchical_forward(
    tape: &mut Tape<f64>,
    v_txt: Var,
    v_img: Var,
    params: &FusionParams<Var>,
    wiring: InterLevelInput,
) -> Result<([Var; 3], [Var; 3])> {
    assert_eq!(params.levels.len(), 3, "three-level hierarchy");
    let (f1, p1) = level_fusion_head(tape, v_txt, v_img, None, &params.levels[0])?;
    let carry1 = match wiring {
        InterLevelInput::Fused => f1,
        InterLevelInput::Probs => p1,
    };
    let (f2, p2) = level_fusion_head(tape, v_txt, v_img, Some(carry1), &params.levels[1])?;
    let carry2 = match wiring {
        InterLevelInput::Fused => f2,
        InterLevelInput::Probs => p2,
    };
    let (f3, p3) = level_fusion_head(tape, v_txt, v_img, Some(carry2), &params.levels[2])?;
    Ok(([p1, p2, p3], [f1, f2, f3]))
}

/// ζ-weighted sum of three scalar losses, accumulated left to right.
pub fn weighted_level_sum(
    tape: &mut Tape<f64>,
    losses: [Var; 3],
    zeta: &LossWeights,
) -> Result<Var> {
    zeta.validate()?;
    let a = tape.scale(losses[0], zeta.z1)?;
    let b = tape.scale(losses[1], zeta.z2)?;
    let c = tape.scale(losses[2], zeta.z3)?;
    let ab = tape.add(a, b)?;
    tape.add(ab, c)
}

/// Σ_ℓ ζ_ℓ · cross_entropy(p_ℓ, target_ℓ).
pub fn overall_loss(
    tape: &mut Tape<f64>,
    probs: &[Var; 3],
    targets: [usize; 3],
    zeta: &LossWeights,
) -> Result<Var> {
    let ce = [
        tape.cross_entropy(probs[0], targets[0])?,
        tape.cross_entropy(probs[1], targets[1])?,
        tape.cross_entropy(probs[2], targets[2])?,
    ];
    weighted_level_sum(tape, ce, zeta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_check, Tensor};
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn small_cfg(wiring: InterLevelInput) -> FusionConfig {
        FusionConfig::new(4, vec![2, 3, 5], wiring).unwrap()
    }

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    fn leaf(tape: &mut Tape<f64>, v: &[f64]) -> Var {
        let t = Tensor::from_f64s(&[v.len()], v).unwrap();
        tape.constant(t)
    }

    // straight-line scalar re-evaluation of one head
    fn head_oracle(
        v_txt: &[f64],
        v_img: &[f64],
        carry: &[f64],
        p: &LevelHeadParams<Parameter<f64>>,
    ) -> (Vec<f64>, Vec<f64>) {
        let matvec = |w: &Tensor<f64>, x: &[f64]| -> Vec<f64> {
            let (r, c) = (w.shape()[0], w.shape()[1]);
            (0..r)
                .map(|i| (0..c).map(|j| w.data()[i * c + j] * x[j]).sum())
            .collect::<Vec<f64>>()
        };
        let sig = |v: Vec<f64>, b: &[f64]| -> Vec<f64> {
            v.iter()
                .zip(b)
                .map(|(x, b)| 1.0 / (1.0 + (-(x + b)).exp()))
                .collect()
        };
        let t = sig(matvec(&p.w_txt.tensor, v_txt), p.b_txt.tensor.data());
        let i = sig(matvec(&p.w_img.tensor, v_img), p.b_img.tensor.data());
        let fused: Vec<f64> = t.into_iter().chain(i).chain(carry.iter().copied()).collect();
        let logits: Vec<f64> = matvec(&p.w_pat.tensor, &fused)
            .iter()
            .zip(p.b_pat.tensor.data())
            .map(|(x, b)| x + b)
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        (fused, exps.into_iter().map(|e| e / z).collect())
    }

    #[test]
    fn zero_everything_gives_half_fused_uniform_probs() {
        let cfg = small_cfg(InterLevelInput::Fused);
        let mut params = FusionParams::init(&cfg, 6, 7, &mut rng(1));
        for slot in params.flatten_mut() {
            for v in slot.tensor.data_mut() {
                *v = 0.0;
            }
        }
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let vt = leaf(&mut tape, &[0.0; 6]);
        let vi = leaf(&mut tape, &[0.0; 7]);
        let (fused, probs) =
            level_fusion_head(&mut tape, vt, vi, None, &bound.levels[0]).unwrap();
        assert!(tape.value(fused).data().iter().all(|&v| v == 0.5));
        for &p in tape.value(probs).data() {
            assert!((p - 0.5).abs() < 1e-15); // two classes at level 1
        }
    }

    #[test]
    fn head_matches_scalar_oracle() {
        for seed in 0..20 {
            let cfg = small_cfg(InterLevelInput::Fused);
            let params = FusionParams::init(&cfg, 6, 7, &mut rng(100 + seed));
            let mut r = rng(200 + seed);
            let vt = rand_vec(&mut r, 6);
            let vi = rand_vec(&mut r, 7);
            let carry = rand_vec(&mut r, 8);
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape);
            let vtv = leaf(&mut tape, &vt);
            let viv = leaf(&mut tape, &vi);
            let cv = leaf(&mut tape, &carry);
            let (fused, probs) =
                level_fusion_head(&mut tape, vtv, viv, Some(cv), &bound.levels[1]).unwrap();
            let (of, op) = head_oracle(&vt, &vi, &carry, &params.levels[1]);
            for (got, want) in tape.value(fused).data().iter().zip(&of) {
                assert!((got - want).abs() <= 1e-9);
            }
            for (got, want) in tape.value(probs).data().iter().zip(&op) {
                assert!((got - want).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn forward_widths_match_paper_taxonomy() {
        let cfg = FusionConfig::new(256, vec![8, 122, 622], InterLevelInput::Fused).unwrap();
        assert_eq!(cfg.fused_dims(), [512, 1024, 1536]);
        let params = FusionParams::init(&cfg, 16, 12, &mut rng(3));
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let vt = leaf(&mut tape, &rand_vec(&mut rng(4), 16));
        let vi = leaf(&mut tape, &rand_vec(&mut rng(5), 12));
        let (probs, fused) =
            hierarchical_forward(&mut tape, vt, vi, &bound, cfg.wiring).unwrap();
        let widths: Vec<usize> = probs.iter().map(|p| tape.value(*p).len()).collect();
        assert_eq!(widths, vec![8, 122, 622]);
        let fw: Vec<usize> = fused.iter().map(|f| tape.value(*f).len()).collect();
        assert_eq!(fw, vec![512, 1024, 1536]);
        for p in probs {
            let total: f64 = tape.value(p).data().iter().sum();
            assert!((total - 1.0).abs() <= 1e-9);
            assert!(tape.value(p).data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn probs_wiring_carries_level_sizes() {
        let cfg = small_cfg(InterLevelInput::Probs);
        assert_eq!(cfg.fused_dims(), [8, 8 + 2, 8 + 3]);
        let params = FusionParams::init(&cfg, 6, 7, &mut rng(6));
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let vt = leaf(&mut tape, &rand_vec(&mut rng(7), 6));
        let vi = leaf(&mut tape, &rand_vec(&mut rng(8), 7));
        let (probs, fused) =
            hierarchical_forward(&mut tape, vt, vi, &bound, cfg.wiring).unwrap();
        assert_eq!(tape.value(fused[1]).len(), 10);
        assert_eq!(tape.value(probs[2]).len(), 5);
    }

    #[test]
    fn level_one_weights_reach_deeper_levels() {
        // fused-vector carry: level-1 projections feed levels 2 and 3;
        // probability carry: the level-1 head matrix does too
        for (wiring, perturb_head) in
            [(InterLevelInput::Fused, false), (InterLevelInput::Probs, true)]
        {
            let cfg = small_cfg(wiring);
            let mut params = FusionParams::init(&cfg, 6, 7, &mut rng(9));
            let vt = rand_vec(&mut rng(10), 6);
            let vi = rand_vec(&mut rng(11), 7);
            let run = |params: &FusionParams<Parameter<f64>>| {
                let mut tape = Tape::new();
                let bound = params.bind(&mut tape);
                let vtv = leaf(&mut tape, &vt);
                let viv = leaf(&mut tape, &vi);
                let (probs, _) =
                    hierarchical_forward(&mut tape, vtv, viv, &bound, cfg.wiring).unwrap();
                (
                    tape.value(probs[1]).data().to_vec(),
                    tape.value(probs[2]).data().to_vec(),
                )
            };
            let (p2, p3) = run(&params);
            let slot = if perturb_head {
                &mut params.levels[0].w_pat
            } else {
                &mut params.levels[0].w_txt
            };
            slot.tensor.data_mut()[0] += 0.25;
            let (q2, q3) = run(&params);
            assert!(p2.iter().zip(&q2).any(|(a, b)| (a - b).abs() > 1e-12));
            assert!(p3.iter().zip(&q3).any(|(a, b)| (a - b).abs() > 1e-12));
        }
    }

    #[test]
    fn unit_losses_weight_to_exactly_one() {
        let mut tape = Tape::new();
        let one = tape.constant(Tensor::scalar(1.0));
        let total = weighted_level_sum(
            &mut tape,
            [one, one, one],
            &LossWeights::default(),
        )
        .unwrap();
        assert_eq!(tape.value(total).item(), 1.0);
    }

    #[test]
    fn perfect_predictions_give_zero_loss() {
        let mut tape = Tape::new();
        let p1 = leaf(&mut tape, &[1.0, 0.0]);
        let p2 = leaf(&mut tape, &[0.0, 1.0, 0.0]);
        let p3 = leaf(&mut tape, &[0.0, 0.0, 0.0, 1.0, 0.0]);
        let loss = overall_loss(
            &mut tape,
            &[p1, p2, p3],
            [0, 1, 3],
            &LossWeights::default(),
        )
        .unwrap();
        assert_eq!(tape.value(loss).item(), 0.0);
    }

    #[test]
    fn weighted_loss_matches_hand_computation() {
        for seed in 0..20 {
            let mut r = rng(700 + seed);
            let norm = |v: Vec<f64>| -> Vec<f64> {
                let e: Vec<f64> = v.iter().map(|x| x.exp()).collect();
                let z: f64 = e.iter().sum();
                e.into_iter().map(|x| x / z).collect()
            };
            let p1 = norm(rand_vec(&mut r, 2));
            let p2 = norm(rand_vec(&mut r, 3));
            let p3 = norm(rand_vec(&mut r, 5));
            let t = [
                r.random_range(0..2usize),
                r.random_range(0..3usize),
                r.random_range(0..5usize),
            ];
            let mut tape = Tape::new();
            let v1 = leaf(&mut tape, &p1);
            let v2 = leaf(&mut tape, &p2);
            let v3 = leaf(&mut tape, &p3);
            let zeta = LossWeights::default();
            let loss = overall_loss(&mut tape, &[v1, v2, v3], t, &zeta).unwrap();
            let want =
                zeta.z1 * -p1[t[0]].ln() + zeta.z2 * -p2[t[1]].ln() + zeta.z3 * -p3[t[2]].ln();
            assert!((tape.value(loss).item() - want).abs() <= 1e-9);
        }
    }

    #[test]
    fn loss_decomposes_bit_exactly() {
        let mut r = rng(77);
        let mut tape = Tape::new();
        let norm = |v: Vec<f64>| -> Vec<f64> {
            let e: Vec<f64> = v.iter().map(|x| x.exp()).collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|x| x / z).collect()
        };
        let probs = [
            leaf(&mut tape, &norm(rand_vec(&mut r, 2))),
            leaf(&mut tape, &norm(rand_vec(&mut r, 3))),
            leaf(&mut tape, &norm(rand_vec(&mut r, 5))),
        ];
        let zeta = LossWeights::default();
        let loss = overall_loss(&mut tape, &probs, [1, 2, 4], &zeta).unwrap();
        let ce: Vec<f64> = probs
            .iter()
            .zip([1usize, 2, 4])
            .map(|(&p, t)| {
                let c = tape.cross_entropy(p, t).unwrap();
                tape.value(c).item()
            })
            .collect();
        let manual = zeta.z1 * ce[0] + zeta.z2 * ce[1] + zeta.z3 * ce[2];
        assert_eq!(tape.value(loss).item().to_bits(), manual.to_bits());
    }

    #[test]
    fn level_one_gradient_alive_with_zero_weight() {
        let cfg = small_cfg(InterLevelInput::Fused);
        let params = FusionParams::init(&cfg, 6, 7, &mut rng(12));
        let vt = rand_vec(&mut rng(13), 6);
        let vi = rand_vec(&mut rng(14), 7);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let vtv = leaf(&mut tape, &vt);
        let viv = leaf(&mut tape, &vi);
        let (probs, _) = hierarchical_forward(&mut tape, vtv, viv, &bound, cfg.wiring).unwrap();
        let zeta = LossWeights { z1: 0.0, z2: 0.15, z3: 0.85 };
        let loss = overall_loss(&mut tape, &probs, [1, 0, 2], &zeta).unwrap();
        tape.backward(loss).unwrap();
        // the level-1 fused vector feeds level 2, so its projection weights
        // keep live gradients even with the level-1 loss term weighted to zero
        let g = tape.grad(bound.levels[0].w_txt).expect("level-1 projection used");
        assert!(g.data().iter().any(|&v| v.abs() > 1e-12));
    }

    #[test]
    fn zero_image_vector_detaches_image_weights() {
        let cfg = small_cfg(InterLevelInput::Fused);
        let mut params = FusionParams::init(&cfg, 6, 7, &mut rng(15));
        let vt = rand_vec(&mut rng(16), 6);
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let vtv = leaf(&mut tape, &vt);
        let viv = leaf(&mut tape, &[0.0; 7]);
        let (probs, _) = hierarchical_forward(&mut tape, vtv, viv, &bound, cfg.wiring).unwrap();
        let loss =
            overall_loss(&mut tape, &probs, [0, 1, 2], &LossWeights::default()).unwrap();
        tape.backward(loss).unwrap();
        let p_before: Vec<f64> = tape.value(probs[2]).data().to_vec();
        for l in 0..3 {
            let g = tape.grad(bound.levels[l].w_img).expect("img projection used");
            assert!(g.data().iter().all(|&v| v == 0.0), "level {l} leaked");
        }
        // and the forward really is independent of those weights
        for v in params.levels[1].w_img.tensor.data_mut() {
            *v += 1.0;
        }
        let mut tape2 = Tape::new();
        let bound2 = params.bind(&mut tape2);
        let vtv2 = leaf(&mut tape2, &vt);
        let viv2 = leaf(&mut tape2, &[0.0; 7]);
        let (probs2, _) =
            hierarchical_forward(&mut tape2, vtv2, viv2, &bound2, cfg.wiring).unwrap();
        assert_eq!(tape2.value(probs2[2]).data(), p_before.as_slice());
    }

    #[test]
    fn fusion_gradients_check_out() {
        let cfg = small_cfg(InterLevelInput::Fused);
        let params = FusionParams::init(&cfg, 5, 4, &mut rng(17));
        let vt = rand_vec(&mut rng(18), 5);
        let vi = rand_vec(&mut rng(19), 4);
        let mut tensors: Vec<Tensor<f64>> = vec![
            Tensor::from_f64s(&[5], &vt).unwrap(),
            Tensor::from_f64s(&[4], &vi).unwrap(),
        ];
        tensors.extend(params.flatten().iter().map(|p| p.tensor.clone()));
        let report = finite_difference_check(&tensors, 1e-5, 1e-4, |tape, vars| {
            let mut it = vars.iter().copied();
            let vtv = it.next().unwrap();
            let viv = it.next().unwrap();
            let bound = FusionParams::from_flat(3, &mut it);
            let (probs, _) = hierarchical_forward(tape, vtv, viv, &bound, cfg.wiring)?;
            overall_loss(tape, &probs, [1, 2, 4], &LossWeights::default())
        })
        .unwrap();
        assert!(report.passed(), "max rel {}", report.max_rel_error);
    }

    #[test]
    fn bad_weights_rejected() {
        assert!(LossWeights { z1: 0.5, z2: 0.5, z3: 0.5 }.validate().is_err());
        assert!(LossWeights { z1: -0.1, z2: 0.6, z3: 0.5 }.validate().is_err());
        assert!(LossWeights::default().validate().is_ok());
        assert!(FusionConfig::new(0, vec![1, 2, 3], InterLevelInput::Fused).is_err());
        assert!(FusionConfig::new(4, vec![1, 2], InterLevelInput::Fused).is_err());
    }
}
