//! Text branch: GRU cell, bidirectional sequence encoding with masked-step
//! state freezing, and two levels of attention pooling (words to sentence
//! vectors, sentences to the document vector).
//!
//! Parameter structs are generic over their payload so the same shape serves
//! as host-side storage (`GruParams<Parameter<T>>`) and as tape bindings
//! (`GruParams<Var>`), with `flatten`/`from_flat` fixing one canonical order.

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Initializer, Parameter, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::textprep::EncodedText;

#[derive(Debug, Clone)]
pub struct GruParams<P> {
    pub w_z: P,
    pub u_z: P,
    pub b_z: P,
    pub w_r: P,
    pub u_r: P,
    pub b_r: P,
    pub w_h: P,
    pub u_h: P,
    pub b_h: P,
}

impl<P> GruParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> GruParams<Q> {
        GruParams {
            w_z: f(&self.w_z),
            u_z: f(&self.u_z),
            b_z: f(&self.b_z),
            w_r: f(&self.w_r),
            u_r: f(&self.u_r),
            b_r: f(&self.b_r),
            w_h: f(&self.w_h),
            u_h: f(&self.u_h),
            b_h: f(&self.b_h),
        }
    }

    pub fn flatten(&self) -> Vec<&P> {
        vec![
            &self.w_z, &self.u_z, &self.b_z, &self.w_r, &self.u_r, &self.b_r, &self.w_h,
            &self.u_h, &self.b_h,
        ]
    }

    pub fn flatten_mut(&mut self) -> Vec<&mut P> {
        vec![
            &mut self.w_z, &mut self.u_z, &mut self.b_z, &mut self.w_r, &mut self.u_r,
            &mut self.b_r, &mut self.w_h, &mut self.u_h, &mut self.b_h,
        ]
    }

    pub fn from_flat(items: &mut impl Iterator<Item = P>) -> Self {
        GruParams {
            w_z: items.next().expect("w_z"),
            u_z: items.next().expect("u_z"),
            b_z: items.next().expect("b_z"),
            w_r: items.next().expect("w_r"),
            u_r: items.next().expect("u_r"),
            b_r: items.next().expect("b_r"),
            w_h: items.next().expect("w_h"),
            u_h: items.next().expect("u_h"),
            b_h: items.next().expect("b_h"),
        }
    }
}

impl<T: Scalar> GruParams<Parameter<T>> {
    /// He-uniform weights, zero biases.
    pub fn init(prefix: &str, input_dim: usize, hidden_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = |name: &str, rng: &mut ChaCha8Rng| {
            Parameter::new(
                format!("{prefix}.{name}"),
                &[hidden_dim, input_dim],
                Initializer::HeUniform { fan_in: input_dim },
                rng,
            )
        };
        let u = |name: &str, rng: &mut ChaCha8Rng| {
            Parameter::new(
                format!("{prefix}.{name}"),
                &[hidden_dim, hidden_dim],
                Initializer::HeUniform { fan_in: hidden_dim },
                rng,
            )
        };
        let b = |name: &str, rng: &mut ChaCha8Rng| {
            Parameter::new(format!("{prefix}.{name}"), &[hidden_dim], Initializer::Zeros, rng)
        };
        GruParams {
            w_z: w("w_z", rng),
            u_z: u("u_z", rng),
            b_z: b("b_z", rng),
            w_r: w("w_r", rng),
            u_r: u("u_r", rng),
            b_r: b("b_r", rng),
            w_h: w("w_h", rng),
            u_h: u("u_h", rng),
            b_h: b("b_h", rng),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.b_z.tensor.shape()[0]
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> GruParams<Var> {
        self.map(&mut |p| tape.leaf(p.tensor.clone(), true))
    }
}

#[derive(Debug, Clone)]
pub struct AttentionParams<P> {
    pub w_proj: P,
    pub b_proj: P,
    pub context: P,
}

impl<P> AttentionParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> AttentionParams<Q> {
        AttentionParams {
            w_proj: f(&self.w_proj),
            b_proj: f(&self.b_proj),
            context: f(&self.context),
        }
    }

    pub fn flatten(&self) -> Vec<&P> {
        vec![&self.w_proj, &self.b_proj, &self.context]
    }

    pub fn flatten_mut(&mut self) -> Vec<&mut P> {
        vec![&mut self.w_proj, &mut self.b_proj, &mut self.context]
    }

    pub fn from_flat(items: &mut impl Iterator<Item = P>) -> Self {
        AttentionParams {
            w_proj: items.next().expect("w_proj"),
            b_proj: items.next().expect("b_proj"),
            context: items.next().expect("context"),
        }
    }
}

impl<T: Scalar> AttentionParams<Parameter<T>> {
    /// Projection and context both sized to the state dimension.
    pub fn init(prefix: &str, state_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        AttentionParams {
            w_proj: Parameter::new(
                format!("{prefix}.w_proj"),
                &[state_dim, state_dim],
                Initializer::HeUniform { fan_in: state_dim },
                rng,
            ),
            b_proj: Parameter::new(format!("{prefix}.b_proj"), &[state_dim], Initializer::Zeros, rng),
            context: Parameter::new(
                format!("{prefix}.context"),
                &[state_dim],
                Initializer::HeUniform { fan_in: state_dim },
                rng,
            ),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> AttentionParams<Var> {
        self.map(&mut |p| tape.leaf(p.tensor.clone(), true))
    }
}

#[derive(Debug, Clone)]
pub struct HanParams<P> {
    pub embedding: P,
    pub word_fwd: GruParams<P>,
    pub word_bwd: GruParams<P>,
    pub word_attn: AttentionParams<P>,
    pub sent_fwd: GruParams<P>,
    pub sent_bwd: GruParams<P>,
    pub sent_attn: AttentionParams<P>,
}

impl<P> HanParams<P> {
    pub fn map<Q>(&self, f: &mut impl FnMut(&P) -> Q) -> HanParams<Q> {
        HanParams {
            embedding: f(&self.embedding),
            word_fwd: self.word_fwd.map(f),
            word_bwd: self.word_bwd.map(f),
            word_attn: self.word_attn.map(f),
            sent_fwd: self.sent_fwd.map(f),
            sent_bwd: self.sent_bwd.map(f),
            sent_attn: self.sent_attn.map(f),
        }
    }

    pub fn flatten(&self) -> Vec<&P> {
        let mut out = vec![&self.embedding];
        out.extend(self.word_fwd.flatten());
        out.extend(self.word_bwd.flatten());
        out.extend(self.word_attn.flatten());
        out.extend(self.sent_fwd.flatten());
        out.extend(self.sent_bwd.flatten());
        out.extend(self.sent_attn.flatten());
        out
    }

    pub fn flatten_mut(&mut self) -> Vec<&mut P> {
        let mut out = vec![&mut self.embedding];
        out.extend(self.word_fwd.flatten_mut());
        out.extend(self.word_bwd.flatten_mut());
        out.extend(self.word_attn.flatten_mut());
        out.extend(self.sent_fwd.flatten_mut());
        out.extend(self.sent_bwd.flatten_mut());
        out.extend(self.sent_attn.flatten_mut());
        out
    }

    pub fn from_flat(items: &mut impl Iterator<Item = P>) -> Self {
        HanParams {
            embedding: items.next().expect("embedding"),
            word_fwd: GruParams::from_flat(items),
            word_bwd: GruParams::from_flat(items),
            word_attn: AttentionParams::from_flat(items),
            sent_fwd: GruParams::from_flat(items),
            sent_bwd: GruParams::from_flat(items),
            sent_attn: AttentionParams::from_flat(items),
        }
    }
}

impl<T: Scalar> HanParams<Parameter<T>> {
    /// Embedding rows come from a pretrained table (row-major rows x dim) and
    /// stay trainable; the rest is seeded He-uniform.
    pub fn init(
        embedding_rows: Tensor<T>,
        hidden_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let emb_dim = embedding_rows.shape()[1];
        let state = 2 * hidden_dim;
        HanParams {
            embedding: Parameter::from_tensor("han.embedding", embedding_rows),
            word_fwd: GruParams::init("han.word_fwd", emb_dim, hidden_dim, rng),
            word_bwd: GruParams::init("han.word_bwd", emb_dim, hidden_dim, rng),
            word_attn: AttentionParams::init("han.word_attn", state, rng),
            sent_fwd: GruParams::init("han.sent_fwd", state, hidden_dim, rng),
            sent_bwd: GruParams::init("han.sent_bwd", state, hidden_dim, rng),
            sent_attn: AttentionParams::init("han.sent_attn", state, rng),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.word_fwd.hidden_dim()
    }

    /// Document vector width: forward and backward halves concatenated.
    pub fn output_dim(&self) -> usize {
        2 * self.hidden_dim()
    }

    pub fn bind(&self, tape: &mut Tape<T>) -> HanParams<Var> {
        self.map(&mut |p| tape.leaf(p.tensor.clone(), true))
    }
}

/// One GRU step, returning the gates and candidate for inspection:
/// (z, r, candidate, new state).
pub fn gru_cell_parts<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    h_prev: Var,
    p: &GruParams<Var>,
) -> Result<(Var, Var, Var, Var)> {
    let gate = |tape: &mut Tape<T>, w: Var, u: Var, b: Var| -> Result<Var> {
        let wx = tape.matmul(w, x)?;
        let uh = tape.matmul(u, h_prev)?;
        let s = tape.add(wx, uh)?;
        tape.add(s, b)
    };
    let z = {
        let s = gate(tape, p.w_z, p.u_z, p.b_z)?;
        tape.sigmoid(s)?
    };
    let r = {
        let s = gate(tape, p.w_r, p.u_r, p.b_r)?;
        tape.sigmoid(s)?
    };
    let cand = {
        let wx = tape.matmul(p.w_h, x)?;
        let uh = tape.matmul(p.u_h, h_prev)?;
        let ruh = tape.mul(r, uh)?;
        let s = tape.add(wx, ruh)?;
        let s = tape.add(s, p.b_h)?;
        tape.tanh(s)?
    };
    // h = (1 - z) * h_prev + z * cand
    let one_minus_z = tape.affine(z, -1.0, 1.0)?;
    let keep = tape.mul(one_minus_z, h_prev)?;
    let take = tape.mul(z, cand)?;
    let h = tape.add(keep, take)?;
    Ok((z, r, cand, h))
}

pub fn gru_cell<T: Scalar>(
    tape: &mut Tape<T>,
    x: Var,
    h_prev: Var,
    p: &GruParams<Var>,
) -> Result<Var> {
    gru_cell_parts(tape, x, h_prev, p).map(|(_, _, _, h)| h)
}

/// Bidirectional GRU over a masked sequence. Masked steps freeze the running
/// state (copy-through) and emit a zero output; unmasked steps emit the
/// concatenation of forward and backward states.
pub fn bigru_sequence<T: Scalar>(
    tape: &mut Tape<T>,
    inputs: &[Var],
    mask: &[bool],
    fwd: &GruParams<Var>,
    bwd: &GruParams<Var>,
) -> Result<Vec<Var>> {
    assert_eq!(inputs.len(), mask.len(), "mask length must match sequence");
    let n = inputs.len();
    let hidden = tape.value(fwd.b_z).len();
    let zero_h = tape.constant(Tensor::zeros(&[hidden]));

    let mut fwd_states = Vec::with_capacity(n);
    let mut h = zero_h;
    for t in 0..n {
        if mask[t] {
            h = gru_cell(tape, inputs[t], h, fwd)?;
        }
        fwd_states.push(h);
    }
    let mut bwd_states = vec![zero_h; n];
    let mut h = zero_h;
    for t in (0..n).rev() {
        if mask[t] {
            h = gru_cell(tape, inputs[t], h, bwd)?;
        }
        bwd_states[t] = h;
    }

    let zero_out = tape.constant(Tensor::zeros(&[2 * hidden]));
    let mut out = Vec::with_capacity(n);
    for t in 0..n {
        if mask[t] {
            out.push(tape.concat_last(&[fwd_states[t], bwd_states[t]])?);
        } else {
            out.push(zero_out);
        }
    }
    Ok(out)
}

/// Attention pooling: tanh projection, context dot-products, masked softmax,
/// weighted state sum. Returns (weights, pooled).
pub fn attention_pool<T: Scalar>(
    tape: &mut Tape<T>,
    states: &[Var],
    mask: &[bool],
    p: &AttentionParams<Var>,
) -> Result<(Var, Var)> {
    assert_eq!(states.len(), mask.len(), "mask length must match states");
    if !mask.iter().any(|&m| m) {
        return Err(Error::AllStepsMasked);
    }
    let mut scores = Vec::with_capacity(states.len());
    for (&s, &m) in states.iter().zip(mask) {
        if m {
            let proj = tape.dense(p.w_proj, s, p.b_proj)?;
            let u = tape.tanh(proj)?;
            let score = tape.matmul(u, p.context)?; // scalar
            scores.push(tape.reshape(score, &[1])?);
        } else {
            scores.push(tape.constant(Tensor::zeros(&[1])));
        }
    }
    let logits = tape.concat_last(&scores)?;
    let mask_t = Tensor::from_f64s(
        &[mask.len()],
        &mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect::<Vec<_>>(),
    )?;
    let alpha = tape.masked_softmax(logits, &mask_t, 0)?;
    let stacked = tape.stack_rows(states)?;
    let pooled = tape.matmul(alpha, stacked)?;
    Ok((alpha, pooled))
}

/// Word-level half of the document encoder: embed, BiGRU, attention-pool each
/// sentence. Fully masked sentences yield zero vectors.
pub fn encode_words_to_sentences<T: Scalar>(
    tape: &mut Tape<T>,
    encoded: &EncodedText,
    p: &HanParams<Var>,
) -> Result<Vec<Var>> {
    let state_dim = 2 * tape.value(p.word_fwd.b_z).len();
    let zero_s = tape.constant(Tensor::zeros(&[state_dim]));
    let w_cap = encoded.max_words;
    let mut sentence_vecs = Vec::with_capacity(encoded.max_sentences);
    for si in 0..encoded.max_sentences {
        if !encoded.sentence_mask[si] {
            sentence_vecs.push(zero_s);
            continue;
        }
        let indices = &encoded.indices[si * w_cap..(si + 1) * w_cap];
        let mask: Vec<bool> = (0..w_cap).map(|w| encoded.word_unmasked(si, w)).collect();
        let rows = tape.gather_rows(p.embedding, indices)?;
        let mut words = Vec::with_capacity(w_cap);
        for t in 0..w_cap {
            words.push(tape.select_row(rows, t)?);
        }
        let states = bigru_sequence(tape, &words, &mask, &p.word_fwd, &p.word_bwd)?;
        let (_, pooled) = attention_pool(tape, &states, &mask, &p.word_attn)?;
        sentence_vecs.push(pooled);
    }
    Ok(sentence_vecs)
}

/// Sentence-level half: BiGRU over sentence vectors plus attention pooling.
pub fn encode_sentences_to_document<T: Scalar>(
    tape: &mut Tape<T>,
    sentence_vecs: &[Var],
    sentence_mask: &[bool],
    p: &HanParams<Var>,
) -> Result<Var> {
    if !sentence_mask.iter().any(|&m| m) {
        return Err(Error::EmptyDocument);
    }
    let states = bigru_sequence(tape, sentence_vecs, sentence_mask, &p.sent_fwd, &p.sent_bwd)?;
    let (_, pooled) = attention_pool(tape, &states, sentence_mask, &p.sent_attn)?;
    Ok(pooled)
}

/// Full text branch: embedded words to the document vector v_txt.
pub fn encode_document_vector<T: Scalar>(
    tape: &mut Tape<T>,
    encoded: &EncodedText,
    p: &HanParams<Var>,
) -> Result<Var> {
    let sentences = encode_words_to_sentences(tape, encoded, p)?;
    encode_sentences_to_document(tape, &sentences, &encoded.sentence_mask, p)
}
