//! Linear-chain CRF over BIO tags.
//!
//! Differentiable scoring lives on the tape; decoding and the exhaustive
//! oracle work on plain value matrices ([`CrfScores`]).

use rand::Rng;

use crate::encoder::{xavier, zeros_param};
use crate::error::{contract, Error, Result};
use crate::tensor::{logsumexp, Module, Tape, Tensor, Var};

/// Largest `K^n` the brute-force oracle will enumerate.
pub const ORACLE_LIMIT: usize = 100_000;

#[derive(Clone, Debug, PartialEq)]
pub struct CrfParams {
    pub w_emit: Tensor,
    pub bias: Tensor,
    /// `trans[a][b]`: score of tag `b` following tag `a`.
    pub trans: Tensor,
    pub start: Tensor,
    pub stop: Tensor,
}

impl CrfParams {
    pub fn init(d_model: usize, num_tags: usize, rng: &mut impl Rng) -> Self {
        Self {
            w_emit: xavier(rng, d_model, num_tags),
            bias: zeros_param(&[num_tags]),
            trans: zeros_param(&[num_tags, num_tags]),
            start: zeros_param(&[num_tags]),
            stop: zeros_param(&[num_tags]),
        }
    }

    pub fn num_tags(&self) -> usize {
        self.bias.len()
    }

    /// Binds the transition, start and stop tensors.
    pub fn bind(&self, tape: &mut Tape) -> CrfVars {
        CrfVars {
            trans: tape.param(&self.trans),
            start: tape.param(&self.start),
            stop: tape.param(&self.stop),
        }
    }

    /// Value-level scores for decoding, given emission values `[n x K]`.
    pub fn scores(&self, emissions: Vec<f64>) -> Result<CrfScores> {
        CrfScores::new(
            emissions,
            self.trans.values().to_vec(),
            self.start.values().to_vec(),
            self.stop.values().to_vec(),
        )
    }
}

impl Module for CrfParams {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("w_emit".into(), &self.w_emit),
            ("bias".into(), &self.bias),
            ("trans".into(), &self.trans),
            ("start".into(), &self.start),
            ("stop".into(), &self.stop),
        ]
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("w_emit".into(), &mut self.w_emit),
            ("bias".into(), &mut self.bias),
            ("trans".into(), &mut self.trans),
            ("start".into(), &mut self.start),
            ("stop".into(), &mut self.stop),
        ]
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CrfVars {
    pub trans: Var,
    pub start: Var,
    pub stop: Var,
}

/// `E = H W_emit + bias`, shape `[n x K]`.
pub fn emissions(tape: &mut Tape, h: Var, params: &CrfParams) -> Result<Var> {
    let w = tape.param(&params.w_emit);
    let b = tape.param(&params.bias);
    let e = tape.matmul(h, w)?;
    tape.add_row(e, b)
}

fn check_dims(tape: &Tape, e: Var, v: &CrfVars) -> Result<(usize, usize)> {
    let (n, k) = tape.dims(e);
    let want = [(v.trans, (k, k)), (v.start, (1, k)), (v.stop, (1, k))];
    for (var, dims) in want {
        if tape.dims(var) != dims {
            let got = tape.dims(var);
            return Err(Error::Shape {
                op: "crf",
                left: vec![n, k],
                right: vec![got.0, got.1],
            });
        }
    }
    Ok((n, k))
}

/// `start[y0] + sum E[i][yi] + sum T[y(i-1)][yi] + stop[y(n-1)]`.
pub fn sequence_score(tape: &mut Tape, e: Var, v: &CrfVars, tags: &[usize]) -> Result<Var> {
    let (n, k) = check_dims(tape, e, v)?;
    if tags.len() != n {
        return Err(contract(format!("{} tags for {n} emission rows", tags.len())));
    }
    if let Some(&bad) = tags.iter().find(|&&y| y >= k) {
        return Err(contract(format!("tag {bad} out of range for {k} tags")));
    }
    let flat: Vec<usize> = tags.iter().enumerate().map(|(i, &y)| i * k + y).collect();
    let picked = tape.gather(e, &flat)?;
    let mut total = tape.sum(picked);
    if n > 1 {
        let pairs: Vec<usize> = tags.windows(2).map(|w| w[0] * k + w[1]).collect();
        let t = tape.gather(v.trans, &pairs)?;
        let t = tape.sum(t);
        total = tape.add(total, t)?;
    }
    let s = tape.gather(v.start, &[tags[0]])?;
    let f = tape.gather(v.stop, &[tags[n - 1]])?;
    total = tape.add(total, s)?;
    tape.add(total, f)
}

/// Log of the sum of `exp(sequence_score)` over all `K^n` tag sequences,
/// by the forward recursion.
pub fn log_partition(tape: &mut Tape, e: Var, v: &CrfVars) -> Result<Var> {
    let (n, _) = check_dims(tape, e, v)?;
    let first = tape.gather_rows(e, &[0])?;
    let mut alpha = tape.add(first, v.start)?;
    let trans_t = tape.transpose(v.trans);
    for i in 1..n {
        // scores[b][a] = T[a][b] + alpha[a]
        let scores = tape.add_row(trans_t, alpha)?;
        let col = tape.logsumexp_rows(scores);
        let row = tape.transpose(col);
        let emit = tape.gather_rows(e, &[i])?;
        alpha = tape.add(row, emit)?;
    }
    let last = tape.add(alpha, v.stop)?;
    Ok(tape.logsumexp_rows(last))
}

/// Negative log-likelihood of `tags`: `log Z - score(tags)`.
pub fn crf_nll(tape: &mut Tape, e: Var, v: &CrfVars, tags: &[usize]) -> Result<Var> {
    let z = log_partition(tape, e, v)?;
    let s = sequence_score(tape, e, v, tags)?;
    tape.sub(z, s)
}

/// Plain-value CRF scores: emissions `[n x K]`, transitions `[K x K]`,
/// start and stop `[K]`, all row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CrfScores {
    n: usize,
    k: usize,
    emissions: Vec<f64>,
    trans: Vec<f64>,
    start: Vec<f64>,
    stop: Vec<f64>,
}

impl CrfScores {
    pub fn new(emissions: Vec<f64>, trans: Vec<f64>, start: Vec<f64>, stop: Vec<f64>) -> Result<Self> {
        let k = start.len();
        if k == 0 || stop.len() != k || trans.len() != k * k {
            return Err(Error::Shape {
                op: "crf scores",
                left: vec![k, k],
                right: vec![trans.len(), stop.len()],
            });
        }
        if emissions.is_empty() || !emissions.len().is_multiple_of(k) {
            return Err(Error::Shape {
                op: "crf emissions",
                left: vec![emissions.len()],
                right: vec![k],
            });
        }
        let all = emissions.iter().chain(&trans).chain(&start).chain(&stop);
        if all.clone().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("crf scores must be finite".into()));
        }
        Ok(Self {
            n: emissions.len() / k,
            k,
            emissions,
            trans,
            start,
            stop,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn num_tags(&self) -> usize {
        self.k
    }

    pub fn emission(&self, i: usize, y: usize) -> f64 {
        self.emissions[i * self.k + y]
    }

    pub fn transition(&self, a: usize, b: usize) -> f64 {
        self.trans[a * self.k + b]
    }

    pub fn emissions(&self) -> &[f64] {
        &self.emissions
    }

    pub fn transitions(&self) -> &[f64] {
        &self.trans
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    pub fn stop(&self) -> &[f64] {
        &self.stop
    }

    /// Unnormalized score of one tag sequence.
    pub fn sequence_score(&self, tags: &[usize]) -> Result<f64> {
        if tags.len() != self.n {
            return Err(contract(format!("{} tags for {} positions", tags.len(), self.n)));
        }
        if let Some(&bad) = tags.iter().find(|&&y| y >= self.k) {
            return Err(contract(format!("tag {bad} out of range for {} tags", self.k)));
        }
        let mut s = self.start[tags[0]] + self.emission(0, tags[0]);
        for i in 1..self.n {
            s += self.transition(tags[i - 1], tags[i]) + self.emission(i, tags[i]);
        }
        Ok(s + self.stop[tags[self.n - 1]])
    }

    /// Forward recursion on values.
    pub fn log_partition(&self) -> f64 {
        let k = self.k;
        let mut alpha: Vec<f64> = (0..k).map(|y| self.start[y] + self.emission(0, y)).collect();
        let mut buf = vec![0.0; k];
        for i in 1..self.n {
            let next: Vec<f64> = (0..k)
                .map(|b| {
                    for a in 0..k {
                        buf[a] = alpha[a] + self.transition(a, b);
                    }
                    self.emission(i, b) + logsumexp(&buf).expect("k > 0")
                })
                .collect();
            alpha = next;
        }
        let last: Vec<f64> = alpha.iter().zip(&self.stop).map(|(a, s)| a + s).collect();
        logsumexp(&last).expect("k > 0")
    }
}

fn first_max(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Highest-scoring tag sequence and its score. Among equally scored
/// sequences the lexicographically smallest wins, i.e. ties go to the lower
/// tag index at the earliest differing position.
pub fn viterbi(scores: &CrfScores) -> (Vec<usize>, f64) {
    let (n, k) = (scores.n, scores.k);
    // beta[i][a]: best score of positions i.. given tag a at i
    let mut beta = vec![0.0; n * k];
    for a in 0..k {
        beta[(n - 1) * k + a] = scores.emission(n - 1, a) + scores.stop[a];
    }
    for i in (0..n - 1).rev() {
        for a in 0..k {
            let (_, best) = first_max((0..k).map(|b| scores.transition(a, b) + beta[(i + 1) * k + b]));
            beta[i * k + a] = scores.emission(i, a) + best;
        }
    }
    let mut tags = Vec::with_capacity(n);
    tags.push(first_max((0..k).map(|a| scores.start[a] + beta[a])).0);
    for i in 1..n {
        let prev = tags[i - 1];
        tags.push(first_max((0..k).map(|b| scores.transition(prev, b) + beta[i * k + b])).0);
    }
    let score = scores.sequence_score(&tags).expect("decoded tags are in range");
    (tags, score)
}

/// Exhaustive enumeration result.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult {
    pub log_partition: f64,
    pub best: Vec<usize>,
    pub best_score: f64,
}

/// Enumerates every tag sequence in lexicographic order, keeping the first
/// maximum. Refuses instances with more than [`ORACLE_LIMIT`] sequences.
pub fn brute_force_oracle(scores: &CrfScores) -> Result<OracleResult> {
    let (n, k) = (scores.n, scores.k);
    let total = (0..n).try_fold(1usize, |acc, _| acc.checked_mul(k).filter(|&t| t <= ORACLE_LIMIT));
    let Some(total) = total else {
        return Err(contract(format!(
            "brute force over {k}^{n} sequences exceeds {ORACLE_LIMIT}"
        )));
    };
    let mut all = Vec::with_capacity(total);
    let mut tags = vec![0usize; n];
    let mut best = (Vec::new(), f64::NEG_INFINITY);
    for _ in 0..total {
        let s = scores.sequence_score(&tags)?;
        if s > best.1 {
            best = (tags.clone(), s);
        }
        all.push(s);
        // odometer increment, last position fastest
        for pos in (0..n).rev() {
            tags[pos] += 1;
            if tags[pos] < k {
                break;
            }
            tags[pos] = 0;
        }
    }
    Ok(OracleResult {
        log_partition: logsumexp(&all)?,
        best: best.0,
        best_score: best.1,
    })
}
