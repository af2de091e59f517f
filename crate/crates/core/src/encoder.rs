//! Small post-norm transformer encoder producing contextual token states,
//! plus the masked-token pretraining objective.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize_subword, Sentence, Vocab, MASK, RESERVED_COUNT};
use crate::error::{contract, Error, Result};
use crate::rng;
use crate::tensor::{Module, Tape, Tensor, Var};

const LN_EPS: f64 = 1e-5;
const MASK_BIAS: f64 = -1e9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout: f64,
}

impl EncoderConfig {
    /// Desk-scale defaults: width 32, two heads, two layers.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 32,
            heads: 2,
            layers: 2,
            d_ff: 64,
            max_len: 64,
            dropout: 0.1,
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Error::Config {
            key: format!("encoder.{key}"),
            msg: msg.to_string(),
        };
        if self.vocab_size <= RESERVED_COUNT {
            return Err(bad("vocab_size", "must exceed the reserved entries"));
        }
        if self.heads == 0 || self.d_model == 0 || !self.d_model.is_multiple_of(self.heads) {
            return Err(bad("heads", "d_model must be a positive multiple of heads"));
        }
        if self.layers == 0 || self.d_ff == 0 || self.max_len == 0 {
            return Err(bad("layers", "layers, d_ff and max_len must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(bad("dropout", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub ff_w1: Tensor,
    pub ff_b1: Tensor,
    pub ff_w2: Tensor,
    pub ff_b2: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

impl LayerParams {
    fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 12] {
        [
            ("w_q", &mut self.w_q),
            ("w_k", &mut self.w_k),
            ("w_v", &mut self.w_v),
            ("w_o", &mut self.w_o),
            ("ff_w1", &mut self.ff_w1),
            ("ff_b1", &mut self.ff_b1),
            ("ff_w2", &mut self.ff_w2),
            ("ff_b2", &mut self.ff_b2),
            ("ln1_gain", &mut self.ln1_gain),
            ("ln1_bias", &mut self.ln1_bias),
            ("ln2_gain", &mut self.ln2_gain),
            ("ln2_bias", &mut self.ln2_bias),
        ]
    }

    fn tensors(&self) -> [(&'static str, &Tensor); 12] {
        [
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("w_o", &self.w_o),
            ("ff_w1", &self.ff_w1),
            ("ff_b1", &self.ff_b1),
            ("ff_w2", &self.ff_w2),
            ("ff_b2", &self.ff_b2),
            ("ln1_gain", &self.ln1_gain),
            ("ln1_bias", &self.ln1_bias),
            ("ln2_gain", &self.ln2_gain),
            ("ln2_bias", &self.ln2_bias),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub tok_emb: Tensor,
    pub pos_emb: Tensor,
    pub layers: Vec<LayerParams>,
    pub mlm_out: Tensor,
}

impl Module for EncoderParams {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("tok_emb".to_string(), &self.tok_emb), ("pos_emb".to_string(), &self.pos_emb)];
        for (i, l) in self.layers.iter().enumerate() {
            out.extend(l.tensors().into_iter().map(|(n, t)| (format!("layers.{i}.{n}"), t)));
        }
        out.push(("mlm_out".to_string(), &self.mlm_out));
        out
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("tok_emb".to_string(), &mut self.tok_emb),
            ("pos_emb".to_string(), &mut self.pos_emb),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.extend(l.tensors_mut().into_iter().map(|(n, t)| (format!("layers.{i}.{n}"), t)));
        }
        out.push(("mlm_out".to_string(), &mut self.mlm_out));
        out
    }
}

/// Glorot-uniform matrix with bound `sqrt(6 / (rows + cols))`.
pub(crate) fn xavier(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(vec![rows, cols], values).expect("xavier shape").with_grad()
}

pub(crate) fn zeros_param(shape: &[usize]) -> Tensor {
    Tensor::zeros(shape).with_grad()
}

pub(crate) fn ones_param(shape: &[usize]) -> Tensor {
    Tensor::filled(shape, 1.0).with_grad()
}

/// Seeded initialization: Glorot-uniform weights, zero biases, unit gains.
pub fn init_params(config: &EncoderConfig, seed: u64) -> Result<EncoderParams> {
    config.validate()?;
    let mut rng = rng::seeded(seed);
    let (v, d, f) = (config.vocab_size, config.d_model, config.d_ff);
    let tok_emb = xavier(&mut rng, v, d);
    let pos_emb = xavier(&mut rng, config.max_len, d);
    let layers = (0..config.layers)
        .map(|_| LayerParams {
            w_q: xavier(&mut rng, d, d),
            w_k: xavier(&mut rng, d, d),
            w_v: xavier(&mut rng, d, d),
            w_o: xavier(&mut rng, d, d),
            ff_w1: xavier(&mut rng, d, f),
            ff_b1: zeros_param(&[f]),
            ff_w2: xavier(&mut rng, f, d),
            ff_b2: zeros_param(&[d]),
            ln1_gain: ones_param(&[d]),
            ln1_bias: zeros_param(&[d]),
            ln2_gain: ones_param(&[d]),
            ln2_bias: zeros_param(&[d]),
        })
        .collect();
    let mlm_out = xavier(&mut rng, d, v);
    Ok(EncoderParams {
        config: config.clone(),
        tok_emb,
        pos_emb,
        layers,
        mlm_out,
    })
}

/// Whether dropout is active, and the seed of its masks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Eval,
    Train { seed: u64 },
}

/// Scaled dot-product attention; returns `(output, weights)`.
///
/// `masked[j]` excludes key position `j` via a large negative bias.
pub fn attention_with_weights(tape: &mut Tape, q: Var, k: Var, v: Var, masked: &[bool]) -> Result<(Var, Var)> {
    let (n, d_k) = tape.dims(q);
    if tape.dims(k) != (n, d_k) {
        return Err(Error::Shape {
            op: "attention keys",
            left: vec![n, d_k],
            right: vec![tape.dims(k).0, tape.dims(k).1],
        });
    }
    if tape.dims(v).0 != n || masked.len() != n {
        return Err(contract(format!(
            "attention over {n} queries got {} values and {} mask entries",
            tape.dims(v).0,
            masked.len()
        )));
    }
    if masked.iter().all(|&m| m) {
        return Err(contract("attention with every position masked"));
    }
    let kt = tape.transpose(k);
    let raw = tape.matmul(q, kt)?;
    let mut scores = tape.scale(raw, 1.0 / (d_k as f64).sqrt());
    if masked.iter().any(|&m| m) {
        let bias: Vec<f64> = (0..n)
            .flat_map(|_| masked.iter().map(|&m| if m { MASK_BIAS } else { 0.0 }))
            .collect();
        let bias = tape.constant(n, n, bias)?;
        scores = tape.add(scores, bias)?;
    }
    let weights = tape.softmax_rows(scores);
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

pub fn attention(tape: &mut Tape, q: Var, k: Var, v: Var, masked: &[bool]) -> Result<Var> {
    attention_with_weights(tape, q, k, v, masked).map(|(o, _)| o)
}

struct Dropout {
    rate: f64,
    rng: Option<rand_chacha::ChaCha8Rng>,
}

impl Dropout {
    fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        let Some(rng) = self.rng.as_mut().filter(|_| self.rate > 0.0) else {
            return Ok(x);
        };
        let (r, c) = tape.dims(x);
        let keep = 1.0 / (1.0 - self.rate);
        let mask = (0..r * c)
            .map(|_| if rng.gen::<f64>() < self.rate { 0.0 } else { keep })
            .collect();
        let mask = tape.constant(r, c, mask)?;
        tape.mul(x, mask)
    }
}

/// Contextual states `[n x d_model]` for a subword id sequence.
pub fn encode(tape: &mut Tape, params: &EncoderParams, ids: &[u32], mode: Mode) -> Result<Var> {
    let cfg = &params.config;
    let n = ids.len();
    if n == 0 {
        return Err(contract("cannot encode an empty sequence"));
    }
    if n > cfg.max_len {
        return Err(Error::Length { len: n, max_len: cfg.max_len });
    }
    if let Some(&bad) = ids.iter().find(|&&i| i as usize >= cfg.vocab_size) {
        return Err(contract(format!("token id {bad} outside vocabulary of {}", cfg.vocab_size)));
    }
    let mut dropout = Dropout {
        rate: cfg.dropout,
        rng: match mode {
            Mode::Eval => None,
            Mode::Train { seed } => Some(rng::seeded(seed)),
        },
    };
    let masked = vec![false; n];
    let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    let positions: Vec<usize> = (0..n).collect();

    let tok_table = tape.param(&params.tok_emb);
    let pos_table = tape.param(&params.pos_emb);
    let tok = tape.gather_rows(tok_table, &idx)?;
    let pos = tape.gather_rows(pos_table, &positions)?;
    let mut x = tape.add(tok, pos)?;
    x = dropout.apply(tape, x)?;

    let d_k = cfg.d_k();
    for layer in &params.layers {
        let w_q = tape.param(&layer.w_q);
        let w_k = tape.param(&layer.w_k);
        let w_v = tape.param(&layer.w_v);
        let w_o = tape.param(&layer.w_o);
        let q = tape.matmul(x, w_q)?;
        let k = tape.matmul(x, w_k)?;
        let v = tape.matmul(x, w_v)?;
        let mut heads = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let (lo, hi) = (h * d_k, (h + 1) * d_k);
            let qh = tape.slice_cols(q, lo, hi)?;
            let kh = tape.slice_cols(k, lo, hi)?;
            let vh = tape.slice_cols(v, lo, hi)?;
            heads.push(attention(tape, qh, kh, vh, &masked)?);
        }
        let joined = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
        let attended = tape.matmul(joined, w_o)?;
        let attended = dropout.apply(tape, attended)?;
        let res = tape.add(x, attended)?;
        let g1 = tape.param(&layer.ln1_gain);
        let b1 = tape.param(&layer.ln1_bias);
        x = tape.layer_norm(res, g1, b1, LN_EPS)?;

        let w1 = tape.param(&layer.ff_w1);
        let fb1 = tape.param(&layer.ff_b1);
        let w2 = tape.param(&layer.ff_w2);
        let fb2 = tape.param(&layer.ff_b2);
        let hidden = tape.matmul(x, w1)?;
        let hidden = tape.add_row(hidden, fb1)?;
        let hidden = tape.relu(hidden);
        let ff = tape.matmul(hidden, w2)?;
        let ff = tape.add_row(ff, fb2)?;
        let ff = dropout.apply(tape, ff)?;
        let res = tape.add(x, ff)?;
        let g2 = tape.param(&layer.ln2_gain);
        let b2 = tape.param(&layer.ln2_bias);
        x = tape.layer_norm(res, g2, b2, LN_EPS)?;
    }
    Ok(x)
}

/// Subword ids of a sentence and the index of each token's first piece.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubwordInput {
    pub ids: Vec<u32>,
    pub first_piece: Vec<usize>,
}

impl SubwordInput {
    pub fn from_sentence(sentence: &Sentence, vocab: &Vocab) -> Self {
        let surfaces = sentence.surfaces();
        Self::from_words(&surfaces, vocab)
    }

    pub fn from_words(words: &[&str], vocab: &Vocab) -> Self {
        let mut ids = Vec::new();
        let mut first_piece = Vec::with_capacity(words.len());
        for w in words {
            first_piece.push(ids.len());
            ids.extend(tokenize_subword(w, vocab));
        }
        Self { ids, first_piece }
    }
}

/// Token-level states: the encoder row of each token's first subword.
pub fn encode_tokens(tape: &mut Tape, params: &EncoderParams, input: &SubwordInput, mode: Mode) -> Result<Var> {
    let h = encode(tape, params, &input.ids, mode)?;
    if input.first_piece.len() == input.ids.len() {
        return Ok(h);
    }
    tape.gather_rows(h, &input.first_piece)
}

/// Which positions of one sequence the masked-token objective corrupts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskPlan {
    /// Selected positions, in selection order.
    pub positions: Vec<usize>,
    /// Input ids after corruption.
    pub corrupted: Vec<u32>,
}

/// Selects `max(1, floor(mask_prob * n))` positions; the first
/// `floor(0.8 k)` become `[MASK]`, the next `floor(0.1 k)` a random
/// non-reserved id, and the rest stay unchanged.
pub fn plan_masking(ids: &[u32], vocab_size: usize, mask_prob: f64, seed: u64) -> Result<MaskPlan> {
    if !(mask_prob > 0.0 && mask_prob < 1.0) {
        return Err(contract(format!("mask_prob must lie in (0, 1), got {mask_prob}")));
    }
    if ids.is_empty() {
        return Err(contract("cannot mask an empty sequence"));
    }
    let n = ids.len();
    let k = ((mask_prob * n as f64).floor() as usize).max(1);
    let mut rng = rng::seeded(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order.truncate(k);
    let n_mask = (0.8 * k as f64).floor() as usize;
    let n_random = (0.1 * k as f64).floor() as usize;
    let mut corrupted = ids.to_vec();
    for (rank, &pos) in order.iter().enumerate() {
        if rank < n_mask {
            corrupted[pos] = MASK;
        } else if rank < n_mask + n_random {
            corrupted[pos] = if vocab_size > RESERVED_COUNT {
                rng.gen_range(RESERVED_COUNT..vocab_size) as u32
            } else {
                MASK
            };
        }
    }
    Ok(MaskPlan {
        positions: order,
        corrupted,
    })
}

/// Mean cross-entropy of the output projection at every masked position of
/// the batch.
pub fn mlm_step(tape: &mut Tape, params: &EncoderParams, batch: &[Vec<u32>], mask_prob: f64, seed: u64) -> Result<Var> {
    if batch.is_empty() {
        return Err(contract("mlm_step needs a nonempty batch"));
    }
    let mut rows = Vec::with_capacity(batch.len());
    let mut targets = Vec::new();
    for (j, ids) in batch.iter().enumerate() {
        let plan = plan_masking(ids, params.config.vocab_size, mask_prob, rng::derive_seed(seed, 2 * j as u64))?;
        let mode = Mode::Train {
            seed: rng::derive_seed(seed, 2 * j as u64 + 1),
        };
        let h = encode(tape, params, &plan.corrupted, mode)?;
        rows.push(tape.gather_rows(h, &plan.positions)?);
        targets.extend(plan.positions.iter().map(|&p| ids[p] as usize));
    }
    let stacked = if rows.len() == 1 { rows[0] } else { tape.concat_rows(&rows)? };
    let out = tape.param(&params.mlm_out);
    let logits = tape.matmul(stacked, out)?;
    tape.cross_entropy(logits, &targets)
}
