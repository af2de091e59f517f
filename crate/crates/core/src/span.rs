//! Span classification head: every candidate span up to `max_width` tokens
//! is scored as null (index 0) or one of the entity classes.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::EntitySpan;
use crate::encoder::{xavier, zeros_param};
use crate::error::{contract, Result};
use crate::rng;
use crate::tensor::{argmax, Module, Tape, Tensor, Var};

pub const DEFAULT_MAX_WIDTH: usize = 8;
pub const DEFAULT_WIDTH_DIM: usize = 8;
pub const DEFAULT_NEG_RATIO: f64 = 3.0;

#[derive(Clone, Debug, PartialEq)]
pub struct SpanHeadParams {
    pub width_emb: Tensor,
    pub w: Tensor,
    pub b: Tensor,
}

impl SpanHeadParams {
    pub fn init(d_model: usize, num_classes: usize, max_width: usize, width_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        if max_width == 0 || width_dim == 0 {
            return Err(contract("span head needs max_width >= 1 and width_dim >= 1"));
        }
        Ok(Self {
            width_emb: xavier(rng, max_width, width_dim),
            w: xavier(rng, 3 * d_model + width_dim, num_classes + 1),
            b: zeros_param(&[num_classes + 1]),
        })
    }

    pub fn max_width(&self) -> usize {
        self.width_emb.dims2().0
    }

    pub fn num_classes(&self) -> usize {
        self.b.len() - 1
    }
}

impl Module for SpanHeadParams {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("width_emb".into(), &self.width_emb), ("w".into(), &self.w), ("b".into(), &self.b)]
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("width_emb".into(), &mut self.width_emb),
            ("w".into(), &mut self.w),
            ("b".into(), &mut self.b),
        ]
    }
}

/// A candidate span with its class logits (null first).
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSpan {
    pub start: usize,
    pub end: usize,
    pub logits: Vec<f64>,
}

/// Candidate bounds plus their logits `[m x (C+1)]` on the tape.
#[derive(Clone, Debug)]
pub struct SpanScores {
    pub bounds: Vec<(usize, usize)>,
    pub logits: Var,
}

impl SpanScores {
    pub fn scored(&self, tape: &Tape) -> Vec<ScoredSpan> {
        self.bounds
            .iter()
            .enumerate()
            .map(|(r, &(start, end))| ScoredSpan {
                start,
                end,
                logits: tape.row(self.logits, r).to_vec(),
            })
            .collect()
    }
}

/// Number of spans of width at most `max_width` in `n` tokens.
pub fn candidate_count(n: usize, max_width: usize) -> usize {
    (1..=max_width).map(|w| (n + 1).saturating_sub(w)).sum()
}

/// Candidates ordered by start, then end.
pub fn candidate_bounds(n: usize, max_width: usize) -> Vec<(usize, usize)> {
    (0..n)
        .flat_map(|i| (i..n.min(i + max_width)).map(move |j| (i, j)))
        .collect()
}

/// Scores `concat(H[i], H[j], mean(H[i..=j]), width[j-i])` for every
/// candidate `(i, j)`.
pub fn score_all_spans(tape: &mut Tape, h: Var, params: &SpanHeadParams) -> Result<SpanScores> {
    let (n, _) = tape.dims(h);
    let bounds = candidate_bounds(n, params.max_width());
    let m = bounds.len();
    let starts: Vec<usize> = bounds.iter().map(|b| b.0).collect();
    let ends: Vec<usize> = bounds.iter().map(|b| b.1).collect();
    let widths: Vec<usize> = bounds.iter().map(|b| b.1 - b.0).collect();
    let mut avg = vec![0.0; m * n];
    for (r, &(i, j)) in bounds.iter().enumerate() {
        let share = 1.0 / (j - i + 1) as f64;
        avg[r * n + i..=r * n + j].fill(share);
    }

    let hs = tape.gather_rows(h, &starts)?;
    let he = tape.gather_rows(h, &ends)?;
    let avg = tape.constant(m, n, avg)?;
    let hm = tape.matmul(avg, h)?;
    let table = tape.param(&params.width_emb);
    let wd = tape.gather_rows(table, &widths)?;
    let rep = tape.concat_cols(&[hs, he, hm, wd])?;
    let w = tape.param(&params.w);
    let b = tape.param(&params.b);
    let logits = tape.matmul(rep, w)?;
    let logits = tape.add_row(logits, b)?;
    Ok(SpanScores { bounds, logits })
}

/// Mean cross-entropy over gold-labeled candidates and a seeded subsample of
/// at most `floor(neg_ratio * max(positives, 1))` null candidates.
pub fn span_loss(tape: &mut Tape, scores: &SpanScores, gold: &[EntitySpan], neg_ratio: f64, seed: u64) -> Result<Var> {
    if !(neg_ratio >= 0.0 && neg_ratio.is_finite()) {
        return Err(contract(format!("neg_ratio must be finite and nonnegative, got {neg_ratio}")));
    }
    let mut labels = vec![0usize; scores.bounds.len()];
    for g in gold {
        match scores.bounds.iter().position(|&b| b == (g.start, g.end)) {
            Some(r) => labels[r] = g.cls + 1,
            None => log::warn!(
                "gold span ({}, {}) is not a candidate (wider than max width or out of range); dropped",
                g.start,
                g.end
            ),
        }
    }
    let positives: Vec<usize> = (0..labels.len()).filter(|&r| labels[r] != 0).collect();
    let mut negatives: Vec<usize> = (0..labels.len()).filter(|&r| labels[r] == 0).collect();
    let cap = (neg_ratio * positives.len().max(1) as f64).floor() as usize;
    negatives.shuffle(&mut rng::seeded(seed));
    negatives.truncate(cap);
    let mut keep: Vec<usize> = positives.into_iter().chain(negatives).collect();
    keep.sort_unstable();
    if keep.is_empty() {
        return Err(contract("span loss has no retained candidates"));
    }
    let targets: Vec<usize> = keep.iter().map(|&r| labels[r]).collect();
    let picked = tape.gather_rows(scores.logits, &keep)?;
    tape.cross_entropy(picked, &targets)
}

/// Greedy non-overlapping decode: non-null candidates by descending winning
/// logit, then start, then end; result sorted by start.
pub fn decode_spans(candidates: &[ScoredSpan]) -> Vec<EntitySpan> {
    let mut live: Vec<(f64, usize, usize, usize)> = candidates
        .iter()
        .filter_map(|c| {
            let best = argmax(&c.logits);
            (best != 0).then(|| (c.logits[best], c.start, c.end, best - 1))
        })
        .collect();
    live.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut accepted: Vec<EntitySpan> = Vec::new();
    for (_, start, end, cls) in live {
        let cand = EntitySpan::new(start, end, cls);
        if !accepted.iter().any(|a| a.overlaps(&cand)) {
            accepted.push(cand);
        }
    }
    accepted.sort();
    accepted
}
