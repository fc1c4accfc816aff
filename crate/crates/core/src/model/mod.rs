//! The supervised-autoencoder summarization network.
//!
//! Two bidirectional LSTM encoders (source content and reference summary)
//! produce fixed-size representations `z_t` and `z_s` as a tanh projection
//! of their concatenated final forward/backward states. One shared
//! attentional LSTM decoder reconstructs the summary from either
//! representation, and a small feedforward discriminator scores a
//! representation as "gold" (drawn from the summary encoder) or "fake"
//! (drawn from the content encoder).
//!
//! [`ModelParams`] is generic over its payload: tensors for storage,
//! [`ValueId`]s once inserted into a graph as leaves. `visit`/`visit_mut`/
//! `map` traverse the parameters in one canonical order, which the
//! optimizer, the checkpoint format, and the partition-safety checks all
//! rely on.

pub mod checkpoint;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Batch;
use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, ValueId};
use crate::numerics::lstm::{lstm_cell, LstmCellParams};
use crate::numerics::params::GroupName;
use crate::numerics::scalar::Scalar;
use crate::numerics::tensor::Tensor;

/// Network sizes. There is no dropout anywhere in the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embed_size: usize,
    pub hidden_size: usize,
    pub layers: usize,
    /// Representation width and decoder state size.
    pub n_h: usize,
}

impl ModelConfig {
    /// Desk-scale sizes for synthetic corpora.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig { vocab_size, embed_size: 64, hidden_size: 64, layers: 1, n_h: 64 }
    }

    /// The sizes used on the full corpus: 512-wide embeddings and hidden
    /// states, two LSTM layers.
    pub fn paper(vocab_size: usize) -> Self {
        ModelConfig { vocab_size, embed_size: 512, hidden_size: 512, layers: 2, n_h: 512 }
    }

    /// Additive attention projection width.
    pub fn attention_size(&self) -> usize {
        self.n_h
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("embed_size", self.embed_size),
            ("hidden_size", self.hidden_size),
            ("layers", self.layers),
            ("n_h", self.n_h),
        ] {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// Fused LSTM weights, gate blocks `[input, forget, candidate, output]`.
#[derive(Debug, Clone)]
pub struct LstmParams<T> {
    pub w_x: T,
    pub w_h: T,
    pub b: T,
}

#[derive(Debug, Clone)]
pub struct BiLstmLayer<T> {
    pub fwd: LstmParams<T>,
    pub bwd: LstmParams<T>,
}

#[derive(Debug, Clone)]
pub struct EncoderParams<T> {
    pub embedding: T,
    pub layers: Vec<BiLstmLayer<T>>,
    pub proj_w: T,
    pub proj_b: T,
}

#[derive(Debug, Clone)]
pub struct AttentionParams<T> {
    pub w_state: T,
    pub w_ann: T,
    pub v: T,
}

#[derive(Debug, Clone)]
pub struct DecoderParams<T> {
    pub embedding: T,
    pub layers: Vec<LstmParams<T>>,
    pub attention: AttentionParams<T>,
    pub readout_w: T,
    pub readout_b: T,
    pub out_w: T,
    pub out_b: T,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorParams<T> {
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

/// Every learnable array of the model, partitioned into the four parameter
/// groups. The decoder (attention included) is a single shared set — the
/// seq2seq and autoencoder paths run through these same entries.
#[derive(Debug, Clone)]
pub struct ModelParams<T> {
    pub content_encoder: EncoderParams<T>,
    pub summary_encoder: EncoderParams<T>,
    pub decoder: DecoderParams<T>,
    pub discriminator: DiscriminatorParams<T>,
}

impl<T> LstmParams<T> {
    fn visit<'a>(&'a self, prefix: &str, group: GroupName, f: &mut dyn FnMut(GroupName, String, &'a T)) {
        f(group, format!("{prefix}.w_x"), &self.w_x);
        f(group, format!("{prefix}.w_h"), &self.w_h);
        f(group, format!("{prefix}.b"), &self.b);
    }

    fn visit_mut(&mut self, prefix: &str, group: GroupName, f: &mut dyn FnMut(GroupName, String, &mut T)) {
        f(group, format!("{prefix}.w_x"), &mut self.w_x);
        f(group, format!("{prefix}.w_h"), &mut self.w_h);
        f(group, format!("{prefix}.b"), &mut self.b);
    }

    fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> LstmParams<U> {
        LstmParams { w_x: f(&self.w_x), w_h: f(&self.w_h), b: f(&self.b) }
    }
}

impl<T> EncoderParams<T> {
    fn visit<'a>(&'a self, group: GroupName, f: &mut dyn FnMut(GroupName, String, &'a T)) {
        let p = group.as_str();
        f(group, format!("{p}.embedding"), &self.embedding);
        for (i, layer) in self.layers.iter().enumerate() {
            layer.fwd.visit(&format!("{p}.layer{i}.fwd"), group, f);
            layer.bwd.visit(&format!("{p}.layer{i}.bwd"), group, f);
        }
        f(group, format!("{p}.proj_w"), &self.proj_w);
        f(group, format!("{p}.proj_b"), &self.proj_b);
    }

    fn visit_mut(&mut self, group: GroupName, f: &mut dyn FnMut(GroupName, String, &mut T)) {
        let p = group.as_str();
        f(group, format!("{p}.embedding"), &mut self.embedding);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.fwd.visit_mut(&format!("{p}.layer{i}.fwd"), group, f);
            layer.bwd.visit_mut(&format!("{p}.layer{i}.bwd"), group, f);
        }
        f(group, format!("{p}.proj_w"), &mut self.proj_w);
        f(group, format!("{p}.proj_b"), &mut self.proj_b);
    }

    fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> EncoderParams<U> {
        EncoderParams {
            embedding: f(&self.embedding),
            layers: self
                .layers
                .iter()
                .map(|l| BiLstmLayer { fwd: l.fwd.map(f), bwd: l.bwd.map(f) })
                .collect(),
            proj_w: f(&self.proj_w),
            proj_b: f(&self.proj_b),
        }
    }
}

impl<T> ModelParams<T> {
    /// Walk every parameter as `(group, name, value)` in the canonical
    /// order. `map` and `visit_mut` traverse identically.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(GroupName, String, &'a T)) {
        self.content_encoder.visit(GroupName::ContentEncoder, f);
        self.summary_encoder.visit(GroupName::SummaryEncoder, f);

        let g = GroupName::Decoder;
        f(g, "decoder.embedding".into(), &self.decoder.embedding);
        for (i, layer) in self.decoder.layers.iter().enumerate() {
            layer.visit(&format!("decoder.layer{i}"), g, f);
        }
        f(g, "decoder.attention.w_state".into(), &self.decoder.attention.w_state);
        f(g, "decoder.attention.w_ann".into(), &self.decoder.attention.w_ann);
        f(g, "decoder.attention.v".into(), &self.decoder.attention.v);
        f(g, "decoder.readout_w".into(), &self.decoder.readout_w);
        f(g, "decoder.readout_b".into(), &self.decoder.readout_b);
        f(g, "decoder.out_w".into(), &self.decoder.out_w);
        f(g, "decoder.out_b".into(), &self.decoder.out_b);

        let g = GroupName::Discriminator;
        f(g, "discriminator.w1".into(), &self.discriminator.w1);
        f(g, "discriminator.b1".into(), &self.discriminator.b1);
        f(g, "discriminator.w2".into(), &self.discriminator.w2);
        f(g, "discriminator.b2".into(), &self.discriminator.b2);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(GroupName, String, &mut T)) {
        self.content_encoder.visit_mut(GroupName::ContentEncoder, f);
        self.summary_encoder.visit_mut(GroupName::SummaryEncoder, f);

        let g = GroupName::Decoder;
        f(g, "decoder.embedding".into(), &mut self.decoder.embedding);
        for (i, layer) in self.decoder.layers.iter_mut().enumerate() {
            layer.visit_mut(&format!("decoder.layer{i}"), g, f);
        }
        f(g, "decoder.attention.w_state".into(), &mut self.decoder.attention.w_state);
        f(g, "decoder.attention.w_ann".into(), &mut self.decoder.attention.w_ann);
        f(g, "decoder.attention.v".into(), &mut self.decoder.attention.v);
        f(g, "decoder.readout_w".into(), &mut self.decoder.readout_w);
        f(g, "decoder.readout_b".into(), &mut self.decoder.readout_b);
        f(g, "decoder.out_w".into(), &mut self.decoder.out_w);
        f(g, "decoder.out_b".into(), &mut self.decoder.out_b);

        let g = GroupName::Discriminator;
        f(g, "discriminator.w1".into(), &mut self.discriminator.w1);
        f(g, "discriminator.b1".into(), &mut self.discriminator.b1);
        f(g, "discriminator.w2".into(), &mut self.discriminator.w2);
        f(g, "discriminator.b2".into(), &mut self.discriminator.b2);
    }

    pub fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> ModelParams<U> {
        ModelParams {
            content_encoder: self.content_encoder.map(f),
            summary_encoder: self.summary_encoder.map(f),
            decoder: DecoderParams {
                embedding: f(&self.decoder.embedding),
                layers: self.decoder.layers.iter().map(|l| l.map(f)).collect(),
                attention: AttentionParams {
                    w_state: f(&self.decoder.attention.w_state),
                    w_ann: f(&self.decoder.attention.w_ann),
                    v: f(&self.decoder.attention.v),
                },
                readout_w: f(&self.decoder.readout_w),
                readout_b: f(&self.decoder.readout_b),
                out_w: f(&self.decoder.out_w),
                out_b: f(&self.decoder.out_b),
            },
            discriminator: DiscriminatorParams {
                w1: f(&self.discriminator.w1),
                b1: f(&self.discriminator.b1),
                w2: f(&self.discriminator.w2),
                b2: f(&self.discriminator.b2),
            },
        }
    }

    /// `(group, name)` pairs in canonical order.
    pub fn names(&self) -> Vec<(GroupName, String)> {
        let mut out = Vec::new();
        self.visit(&mut |g, n, _| out.push((g, n)));
        out
    }
}

impl<F: Scalar> ModelParams<Tensor<F>> {
    /// All-zero parameters with the shapes implied by `cfg`.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let enc = |_: GroupName| {
            let h = cfg.hidden_size;
            EncoderParams {
                embedding: Tensor::zeros(vec![cfg.vocab_size, cfg.embed_size]),
                layers: (0..cfg.layers)
                    .map(|l| {
                        let input = if l == 0 { cfg.embed_size } else { 2 * h };
                        let cell = || LstmParams {
                            w_x: Tensor::zeros(vec![input, 4 * h]),
                            w_h: Tensor::zeros(vec![h, 4 * h]),
                            b: Tensor::zeros(vec![4 * h]),
                        };
                        BiLstmLayer { fwd: cell(), bwd: cell() }
                    })
                    .collect(),
                proj_w: Tensor::zeros(vec![2 * h, cfg.n_h]),
                proj_b: Tensor::zeros(vec![cfg.n_h]),
            }
        };
        let nh = cfg.n_h;
        let att = cfg.attention_size();
        ModelParams {
            content_encoder: enc(GroupName::ContentEncoder),
            summary_encoder: enc(GroupName::SummaryEncoder),
            decoder: DecoderParams {
                embedding: Tensor::zeros(vec![cfg.vocab_size, cfg.embed_size]),
                layers: (0..cfg.layers)
                    .map(|l| {
                        let input = if l == 0 { cfg.embed_size } else { nh };
                        LstmParams {
                            w_x: Tensor::zeros(vec![input, 4 * nh]),
                            w_h: Tensor::zeros(vec![nh, 4 * nh]),
                            b: Tensor::zeros(vec![4 * nh]),
                        }
                    })
                    .collect(),
                attention: AttentionParams {
                    w_state: Tensor::zeros(vec![nh, att]),
                    w_ann: Tensor::zeros(vec![2 * cfg.hidden_size, att]),
                    v: Tensor::zeros(vec![att, 1]),
                },
                readout_w: Tensor::zeros(vec![nh + 2 * cfg.hidden_size, nh]),
                readout_b: Tensor::zeros(vec![nh]),
                out_w: Tensor::zeros(vec![nh, cfg.vocab_size]),
                out_b: Tensor::zeros(vec![cfg.vocab_size]),
            },
            discriminator: DiscriminatorParams {
                w1: Tensor::zeros(vec![nh, nh]),
                b1: Tensor::zeros(vec![nh]),
                w2: Tensor::zeros(vec![nh, 1]),
                b2: Tensor::zeros(vec![1]),
            },
        }
    }

    /// Uniform(-0.08, 0.08) weights, zero biases; deterministic in `seed`.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Self::zeros(cfg);
        params.visit_mut(&mut |_, name, t| {
            let is_bias = name.ends_with(".b")
                || name.ends_with("_b")
                || name.ends_with(".b1")
                || name.ends_with(".b2");
            if !is_bias {
                *t = Tensor::uniform(t.shape().to_vec(), 0.08, &mut rng);
            }
        });
        params
    }

    /// Insert every parameter into `g` as a leaf.
    pub fn leaves(&self, g: &mut Graph<F>) -> ModelParams<ValueId> {
        self.map(&mut |t| g.leaf(t.clone()))
    }

    /// Order-independent fingerprint of one group's raw bits, for the
    /// partition-safety checks.
    pub fn group_hash(&self, group: GroupName) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.visit(&mut |g, name, t| {
            if g == group {
                name.hash(&mut h);
                for x in t.data() {
                    x.as_f64().to_bits().hash(&mut h);
                }
            }
        });
        h.finish()
    }
}

/// Batched encoder result: one `[B, 2H]` annotation matrix per source
/// position plus the `[B, N_h]` representation.
#[derive(Debug, Clone)]
pub struct EncoderOutput {
    pub annotations: Vec<ValueId>,
    pub z: ValueId,
}

/// Per-layer `(h, c)` decoder state, batched.
pub type DecoderState = Vec<(ValueId, ValueId)>;

fn mask_leaves<F: Scalar>(g: &mut Graph<F>, mask: &[f32], size: usize, len: usize) -> Vec<(ValueId, ValueId)> {
    (0..len)
        .map(|t| {
            let col = Batch::mask_column(mask, size, len, t);
            let m: Vec<F> = col.iter().map(|&x| F::from_f32(x)).collect();
            let notm: Vec<F> = col.iter().map(|&x| F::from_f32(1.0 - x)).collect();
            (g.leaf(Tensor::vector(m)), g.leaf(Tensor::vector(notm)))
        })
        .collect()
}

/// Run one direction of one bidirectional layer with masked state carry:
/// padded steps keep the previous state, so the final state is the state at
/// each row's last real token.
fn run_direction<F: Scalar>(
    g: &mut Graph<F>,
    inputs: &[ValueId],
    masks: &[(ValueId, ValueId)],
    cell: &LstmParams<ValueId>,
    size: usize,
    hidden: usize,
    reverse: bool,
) -> Result<(Vec<ValueId>, ValueId)> {
    let p = LstmCellParams { w_x: cell.w_x, w_h: cell.w_h, b: cell.b };
    let mut h = g.leaf(Tensor::zeros(vec![size, hidden]));
    let mut c = g.leaf(Tensor::zeros(vec![size, hidden]));
    let mut outputs = vec![h; inputs.len()];
    let order: Vec<usize> = if reverse {
        (0..inputs.len()).rev().collect()
    } else {
        (0..inputs.len()).collect()
    };
    for t in order {
        let (h_new, c_new) = lstm_cell(g, inputs[t], h, c, &p)?;
        let (m, notm) = masks[t];
        let keep_h = g.mul_col(h, notm)?;
        let write_h = g.mul_col(h_new, m)?;
        h = g.add(write_h, keep_h)?;
        let keep_c = g.mul_col(c, notm)?;
        let write_c = g.mul_col(c_new, m)?;
        c = g.add(write_c, keep_c)?;
        outputs[t] = h;
    }
    Ok((outputs, h))
}

fn encode<F: Scalar>(
    g: &mut Graph<F>,
    enc: &EncoderParams<ValueId>,
    ids: &[u32],
    mask: &[f32],
    size: usize,
    len: usize,
    cfg: &ModelConfig,
) -> Result<EncoderOutput> {
    if len == 0 || size == 0 {
        return Err(Error::EmptySequence { op: "encode" });
    }
    let masks = mask_leaves(g, mask, size, len);

    // Layer-0 inputs are the embedded token columns.
    let mut layer_inputs: Vec<ValueId> = (0..len)
        .map(|t| {
            let col = Batch::column(ids, size, len, t);
            g.gather_rows(enc.embedding, &col)
        })
        .collect::<Result<_>>()?;

    let hidden = cfg.hidden_size;
    let mut final_fwd = None;
    let mut final_bwd = None;
    for layer in &enc.layers {
        let (fwd_states, f_last) = run_direction(g, &layer_inputs, &masks, &layer.fwd, size, hidden, false)?;
        let (bwd_states, b_last) = run_direction(g, &layer_inputs, &masks, &layer.bwd, size, hidden, true)?;
        layer_inputs = fwd_states
            .iter()
            .zip(&bwd_states)
            .map(|(&f, &b)| g.concat_cols(&[f, b]))
            .collect::<Result<_>>()?;
        final_fwd = Some(f_last);
        final_bwd = Some(b_last);
    }

    let both = g.concat_cols(&[final_fwd.unwrap(), final_bwd.unwrap()])?;
    let proj = g.matmul(both, enc.proj_w)?;
    let shifted = g.add_row(proj, enc.proj_b)?;
    let z = g.tanh(shifted);
    Ok(EncoderOutput { annotations: layer_inputs, z })
}

/// Encode the source content into per-position annotations and `z_t`.
pub fn encode_content<F: Scalar>(
    g: &mut Graph<F>,
    params: &ModelParams<ValueId>,
    ids: &[u32],
    mask: &[f32],
    size: usize,
    len: usize,
    cfg: &ModelConfig,
) -> Result<EncoderOutput> {
    encode(g, &params.content_encoder, ids, mask, size, len, cfg)
}

/// Encode the reference summary into annotations and `z_s`. Same
/// architecture and shapes as the content encoder, separate parameters.
pub fn encode_summary<F: Scalar>(
    g: &mut Graph<F>,
    params: &ModelParams<ValueId>,
    ids: &[u32],
    mask: &[f32],
    size: usize,
    len: usize,
    cfg: &ModelConfig,
) -> Result<EncoderOutput> {
    encode(g, &params.summary_encoder, ids, mask, size, len, cfg)
}

/// Additive attention with the annotation projections precomputed once per
/// encoded batch, reused across decode steps.
pub struct PreparedAttention {
    params: AttentionParams<ValueId>,
    annotations: Vec<ValueId>,
    projected: Vec<ValueId>,
    mask: Vec<bool>,
}

impl PreparedAttention {
    pub fn new<F: Scalar>(
        g: &mut Graph<F>,
        params: &AttentionParams<ValueId>,
        annotations: &[ValueId],
        mask: &[f32],
        size: usize,
    ) -> Result<Self> {
        if annotations.is_empty() {
            return Err(Error::EmptySequence { op: "attention" });
        }
        let projected = annotations
            .iter()
            .map(|&a| g.matmul(a, params.w_ann))
            .collect::<Result<Vec<_>>>()?;
        // Row-major [B, T] mask over positions.
        let len = annotations.len();
        let mut bools = vec![false; size * len];
        for b in 0..size {
            for t in 0..len {
                bools[b * len + t] = mask[b * len + t] > 0.5;
            }
        }
        Ok(PreparedAttention {
            params: params.clone(),
            annotations: annotations.to_vec(),
            projected,
            mask: bools,
        })
    }

    /// Masked-softmax attention read for the given decoder state; returns
    /// `(context [B, 2H], weights [B, T])`.
    pub fn context<F: Scalar>(&self, g: &mut Graph<F>, state: ValueId) -> Result<(ValueId, ValueId)> {
        let proj_state = g.matmul(state, self.params.w_state)?;
        let mut scores = Vec::with_capacity(self.projected.len());
        for &p in &self.projected {
            let combined = g.add(proj_state, p)?;
            let u = g.tanh(combined);
            scores.push(g.matmul(u, self.params.v)?);
        }
        let score_mat = g.concat_cols(&scores)?;
        let weights = g.masked_softmax(score_mat, &self.mask)?;

        let mut context: Option<ValueId> = None;
        for (t, &ann) in self.annotations.iter().enumerate() {
            let w_t = g.slice_cols(weights, t, 1)?;
            let part = g.mul_col(ann, w_t)?;
            context = Some(match context {
                None => part,
                Some(acc) => g.add(acc, part)?,
            });
        }
        Ok((context.unwrap(), weights))
    }
}

/// Decoder start state from a representation: layer 0 hidden is `z`, every
/// other slot is zero.
pub fn init_decoder<F: Scalar>(g: &mut Graph<F>, z: ValueId, cfg: &ModelConfig) -> Result<DecoderState> {
    let shape = g.shape(z);
    let (rows, cols) = if shape.len() == 2 { (shape[0], shape[1]) } else { (1, shape[0]) };
    if cols != cfg.n_h {
        return Err(Error::Shape {
            op: "init_decoder",
            detail: format!("z has {cols} features, expected {}", cfg.n_h),
        });
    }
    let mut state = Vec::with_capacity(cfg.layers);
    let c0 = g.leaf(Tensor::zeros(vec![rows, cfg.n_h]));
    state.push((z, c0));
    for _ in 1..cfg.layers {
        let h = g.leaf(Tensor::zeros(vec![rows, cfg.n_h]));
        let c = g.leaf(Tensor::zeros(vec![rows, cfg.n_h]));
        state.push((h, c));
    }
    Ok(state)
}

/// One teacher-forcing/inference step: embed the previous tokens, advance
/// the stacked LSTM, attend, and project to a vocabulary distribution.
/// Returns the `[B, V]` distribution and mutates `state` in place.
pub fn decode_step<F: Scalar>(
    g: &mut Graph<F>,
    dec: &DecoderParams<ValueId>,
    prev_ids: &[usize],
    state: &mut DecoderState,
    attention: &PreparedAttention,
    cfg: &ModelConfig,
) -> Result<ValueId> {
    for &id in prev_ids {
        if id >= cfg.vocab_size {
            return Err(Error::TokenOutOfRange { id: id as u32, vocab: cfg.vocab_size });
        }
    }
    let mut x = g.gather_rows(dec.embedding, prev_ids)?;
    for (layer, cell) in dec.layers.iter().enumerate() {
        let p = LstmCellParams { w_x: cell.w_x, w_h: cell.w_h, b: cell.b };
        let (h, c) = lstm_cell(g, x, state[layer].0, state[layer].1, &p)?;
        state[layer] = (h, c);
        x = h;
    }
    let top = state.last().unwrap().0;
    let (context, _) = attention.context(g, top)?;
    let cat = g.concat_cols(&[top, context])?;
    let pre = g.matmul(cat, dec.readout_w)?;
    let pre = g.add_row(pre, dec.readout_b)?;
    let readout = g.tanh(pre);
    let logits = g.matmul(readout, dec.out_w)?;
    let logits = g.add_row(logits, dec.out_b)?;
    g.softmax(logits)
}

/// Probability that each row of `z` is the "gold" representation:
/// a tanh hidden layer and a sigmoid output, `[B, 1]`.
pub fn discriminate<F: Scalar>(
    g: &mut Graph<F>,
    disc: &DiscriminatorParams<ValueId>,
    z: ValueId,
) -> Result<ValueId> {
    let h = g.matmul(z, disc.w1)?;
    let h = g.add_row(h, disc.b1)?;
    let h = g.tanh(h);
    let logit = g.matmul(h, disc.w2)?;
    let logit = g.add_row(logit, disc.b2)?;
    Ok(g.sigmoid(logit))
}
