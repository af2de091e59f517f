//! Autoregressive tagger: each step sees the token state and the embedding of
//! the previous tag (or a begin marker) and emits the next tag greedily.

use rand::Rng;

use crate::corpus::TagScheme;
use crate::encoder::{xavier, zeros_param};
use crate::error::{contract, Error, Result};
use crate::tensor::{argmax, Module, Tape, Tensor, Var};

pub const DEFAULT_TAG_DIM: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Seq2SeqParams {
    /// `[(K+1) x d_t]`; row `K` is the begin marker.
    pub tag_emb: Tensor,
    pub w: Tensor,
    pub b: Tensor,
}

impl Seq2SeqParams {
    pub fn init(d_model: usize, num_tags: usize, tag_dim: usize, rng: &mut impl Rng) -> Self {
        Self {
            tag_emb: xavier(rng, num_tags + 1, tag_dim),
            w: xavier(rng, d_model + tag_dim, num_tags),
            b: zeros_param(&[num_tags]),
        }
    }

    pub fn num_tags(&self) -> usize {
        self.b.len()
    }

    fn bos(&self) -> usize {
        self.num_tags()
    }
}

impl Module for Seq2SeqParams {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("tag_emb".into(), &self.tag_emb), ("w".into(), &self.w), ("b".into(), &self.b)]
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("tag_emb".into(), &mut self.tag_emb),
            ("w".into(), &mut self.w),
            ("b".into(), &mut self.b),
        ]
    }
}

fn step_logits(tape: &mut Tape, h: Var, prev: &[usize], params: &Seq2SeqParams) -> Result<Var> {
    let table = tape.param(&params.tag_emb);
    let emb = tape.gather_rows(table, prev)?;
    let x = tape.concat_cols(&[h, emb])?;
    let w = tape.param(&params.w);
    let b = tape.param(&params.b);
    let logits = tape.matmul(x, w)?;
    tape.add_row(logits, b)
}

/// Mean cross-entropy with gold previous tags fed at every step.
pub fn teacher_forced_loss(tape: &mut Tape, h: Var, tags: &[usize], params: &Seq2SeqParams) -> Result<Var> {
    let (n, _) = tape.dims(h);
    if tags.len() != n {
        return Err(contract(format!("{} tags for {n} token states", tags.len())));
    }
    let prev: Vec<usize> = std::iter::once(params.bos()).chain(tags[..n - 1].iter().copied()).collect();
    let logits = step_logits(tape, h, &prev, params)?;
    tape.cross_entropy(logits, tags)
}

/// Left-to-right argmax decode without any BIO constraint.
pub fn greedy_decode(tape: &mut Tape, h: Var, params: &Seq2SeqParams) -> Result<Vec<usize>> {
    let (n, _) = tape.dims(h);
    let mut out = Vec::with_capacity(n);
    let mut prev = params.bos();
    for i in 0..n {
        let hi = tape.gather_rows(h, &[i])?;
        let logits = step_logits(tape, hi, &[prev], params)?;
        prev = argmax(tape.value(logits));
        out.push(prev);
    }
    Ok(out)
}

/// Fraction of checked transitions, counting the virtual start before each
/// sequence, that break BIO rules.
pub fn invalid_transition_rate(batch: &[Vec<usize>], scheme: &TagScheme) -> Result<f64> {
    if batch.is_empty() {
        return Err(contract("invalid_transition_rate needs a nonempty batch"));
    }
    let (mut checked, mut bad) = (0usize, 0usize);
    for tags in batch {
        let mut prev = None;
        for (i, &t) in tags.iter().enumerate() {
            if t >= scheme.num_tags() {
                return Err(Error::Bio {
                    index: i,
                    msg: format!("tag index {t} out of range"),
                });
            }
            checked += 1;
            if !scheme.is_valid_transition(prev, t) {
                bad += 1;
            }
            prev = Some(t);
        }
    }
    Ok(if checked == 0 { 0.0 } else { bad as f64 / checked as f64 })
}
