//! Optimizer, joint training loop, checkpoints and model-level evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{spans_to_tags, tags_to_spans, Corpus, DecodeMode, EntitySpan, RelationInstance, Sentence, TagScheme, Vocab, NO_RELATION};
use crate::crf::{self, CrfParams};
use crate::encoder::{encode_tokens, init_params, mlm_step, EncoderConfig, EncoderParams, Mode, SubwordInput};
use crate::error::{contract, Error, Result};
use crate::eval::{entity_prf, relation_prf, token_accuracy, EvalReport, RelationTriple};
use crate::relation::{predict_relations, sentence_relation_loss, RelationHeadParams};
use crate::rng;
use crate::seq2seq::{greedy_decode, invalid_transition_rate, teacher_forced_loss, Seq2SeqParams};
use crate::span::{decode_spans, score_all_spans, span_loss, SpanHeadParams};
use crate::tensor::{prefixed, prefixed_mut, Module, Tape, Tensor, Var};

pub const CHECKPOINT_FORMAT: &str = "medner-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

fn config_err(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        msg: msg.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Crf,
    Span,
    Seq2seq,
}

impl HeadKind {
    pub const ALL: [HeadKind; 3] = [HeadKind::Crf, HeadKind::Span, HeadKind::Seq2seq];

    pub fn as_str(self) -> &'static str {
        match self {
            HeadKind::Crf => "crf",
            HeadKind::Span => "span",
            HeadKind::Seq2seq => "seq2seq",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HeadKind::ALL
            .into_iter()
            .find(|h| h.as_str() == s)
            .ok_or_else(|| config_err("train.head", format!("unknown head {s:?}; expected crf, span or seq2seq")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub lambda_re: f64,
    pub seed: u64,
    pub head: HeadKind,
    pub class_balanced: bool,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            steps: 1000,
            batch_size: 8,
            lambda_re: 1.0,
            seed: 0,
            head: HeadKind::Crf,
            class_balanced: false,
            clip_norm: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err("train.learning_rate", "must be positive and finite"));
        }
        if self.batch_size == 0 {
            return Err(config_err("train.batch_size", "must be positive"));
        }
        if !(self.lambda_re >= 0.0 && self.lambda_re.is_finite()) {
            return Err(config_err("train.lambda_re", "must be nonnegative and finite"));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(config_err("train.clip_norm", "must be positive"));
        }
        Ok(())
    }
}

/// Head hyperparameters that fix parameter shapes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HeadConfig {
    pub max_width: usize,
    pub width_dim: usize,
    pub tag_dim: usize,
    pub neg_ratio: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            max_width: crate::span::DEFAULT_MAX_WIDTH,
            width_dim: crate::span::DEFAULT_WIDTH_DIM,
            tag_dim: crate::seq2seq::DEFAULT_TAG_DIM,
            neg_ratio: crate::span::DEFAULT_NEG_RATIO,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_width == 0 {
            return Err(config_err("head.max_width", "must be positive"));
        }
        if self.width_dim == 0 {
            return Err(config_err("head.width_dim", "must be positive"));
        }
        if self.tag_dim == 0 {
            return Err(config_err("head.tag_dim", "must be positive"));
        }
        if !(self.neg_ratio >= 0.0 && self.neg_ratio.is_finite()) {
            return Err(config_err("head.neg_ratio", "must be nonnegative and finite"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mask_prob: f64,
    pub seed: u64,
    pub clip_norm: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 16,
            learning_rate: 2e-3,
            mask_prob: 0.15,
            seed: 0,
            clip_norm: 1.0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err("pretrain.learning_rate", "must be positive and finite"));
        }
        if self.batch_size == 0 {
            return Err(config_err("pretrain.batch_size", "must be positive"));
        }
        if !(self.mask_prob > 0.0 && self.mask_prob < 1.0) {
            return Err(config_err("pretrain.mask_prob", "must lie in (0, 1)"));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(config_err("pretrain.clip_norm", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    Crf(CrfParams),
    Span(SpanHeadParams),
    Seq2seq(Seq2SeqParams),
}

impl Head {
    pub fn kind(&self) -> HeadKind {
        match self {
            Head::Crf(_) => HeadKind::Crf,
            Head::Span(_) => HeadKind::Span,
            Head::Seq2seq(_) => HeadKind::Seq2seq,
        }
    }

    fn module(&self) -> &dyn Module {
        match self {
            Head::Crf(p) => p,
            Head::Span(p) => p,
            Head::Seq2seq(p) => p,
        }
    }

    fn module_mut(&mut self) -> &mut dyn Module {
        match self {
            Head::Crf(p) => p,
            Head::Span(p) => p,
            Head::Seq2seq(p) => p,
        }
    }
}

/// Extraction head plus relation head for one tag scheme.
#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub scheme: TagScheme,
    pub head_config: HeadConfig,
    pub head: Head,
    pub relation: RelationHeadParams,
}

impl Task {
    pub fn init(
        d_model: usize,
        scheme: TagScheme,
        relation_labels: Vec<String>,
        kind: HeadKind,
        head_config: HeadConfig,
        seed: u64,
    ) -> Result<Self> {
        head_config.validate()?;
        let mut r = rng::seeded(seed);
        let head = match kind {
            HeadKind::Crf => Head::Crf(CrfParams::init(d_model, scheme.num_tags(), &mut r)),
            HeadKind::Span => Head::Span(SpanHeadParams::init(
                d_model,
                scheme.num_classes(),
                head_config.max_width,
                head_config.width_dim,
                &mut r,
            )?),
            HeadKind::Seq2seq => Head::Seq2seq(Seq2SeqParams::init(d_model, scheme.num_tags(), head_config.tag_dim, &mut r)),
        };
        let relation = RelationHeadParams::init(d_model, relation_labels, &mut r)?;
        Ok(Self {
            scheme,
            head_config,
            head,
            relation,
        })
    }
}

/// Encoder with its vocabulary and, once fine-tuned, a task.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub vocab: Vocab,
    pub encoder: EncoderParams,
    pub task: Option<Task>,
}

impl Model {
    pub fn fresh(vocab: Vocab, config: &EncoderConfig, seed: u64) -> Result<Self> {
        if config.vocab_size != vocab.len() {
            return Err(config_err(
                "encoder.vocab_size",
                format!("{} does not match vocabulary of {}", config.vocab_size, vocab.len()),
            ));
        }
        Ok(Self {
            vocab,
            encoder: init_params(config, seed)?,
            task: None,
        })
    }

    pub fn task(&self) -> Result<&Task> {
        self.task
            .as_ref()
            .ok_or_else(|| contract("model has no trained head; it is an encoder-only checkpoint"))
    }

    pub fn featurize(&self, words: &[&str]) -> Result<SubwordInput> {
        let input = SubwordInput::from_words(words, &self.vocab);
        if input.ids.len() > self.encoder.config.max_len {
            return Err(Error::Length {
                len: input.ids.len(),
                max_len: self.encoder.config.max_len,
            });
        }
        if input.ids.is_empty() {
            return Err(contract("cannot featurize an empty sentence"));
        }
        Ok(input)
    }
}

impl Module for Model {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<_> = prefixed("encoder", self.encoder.named_tensors()).collect();
        if let Some(task) = &self.task {
            let head = format!("head.{}", task.head.kind());
            out.extend(prefixed(&head, task.head.module().named_tensors()));
            out.extend(prefixed("relation", task.relation.named_tensors()));
        }
        out
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<_> = prefixed_mut("encoder", self.encoder.named_tensors_mut()).collect();
        if let Some(task) = &mut self.task {
            let head = format!("head.{}", task.head.kind());
            out.extend(prefixed_mut(&head, task.head.module_mut().named_tensors_mut()));
            out.extend(prefixed_mut("relation", task.relation.named_tensors_mut()));
        }
        out
    }
}

/// Adam with bias correction and global-norm gradient clipping.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Applies one update from the gradients stored on `module`'s tensors and
    /// returns the pre-clipping global gradient norm.
    pub fn update(&mut self, module: &mut (impl Module + ?Sized), clip_norm: f64) -> Result<f64> {
        let mut params = module.named_tensors_mut();
        let sq: f64 = params
            .iter()
            .filter_map(|(_, t)| t.grad())
            .flat_map(|g| g.iter())
            .map(|g| g * g)
            .sum();
        let norm = sq.sqrt();
        if !norm.is_finite() {
            return Err(Error::Numeric(format!("gradient norm {norm} at optimizer step {}", self.step + 1)));
        }
        let scale = if norm > clip_norm { clip_norm / norm } else { 1.0 };
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, tensor) in params.iter_mut() {
            if !tensor.requires_grad() {
                continue;
            }
            let Some(grad) = tensor.grad().map(|g| g.iter().map(|x| x * scale).collect::<Vec<_>>()) else {
                continue;
            };
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
            for (((w, g), m), v) in tensor.values_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *w -= self.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
        }
        Ok(norm)
    }
}

/// `ner + lambda_re * re`.
pub fn joint_loss(tape: &mut Tape, ner: Var, re: Var, lambda_re: f64) -> Result<Var> {
    for v in [ner, re] {
        let x = tape.scalar(v);
        if !x.is_finite() {
            return Err(Error::Numeric(format!("joint loss component is {x}")));
        }
    }
    let weighted = tape.scale(re, lambda_re);
    tape.add(ner, weighted)
}

/// Extraction loss of one sentence under the model's head.
pub fn ner_loss(tape: &mut Tape, h: Var, sentence: &Sentence, task: &Task, seed: u64) -> Result<Var> {
    match &task.head {
        Head::Crf(p) => {
            let e = crf::emissions(tape, h, p)?;
            let v = p.bind(tape);
            crf::crf_nll(tape, e, &v, &sentence.tags)
        }
        Head::Span(p) => {
            let scores = score_all_spans(tape, h, p)?;
            span_loss(tape, &scores, &sentence.spans, task.head_config.neg_ratio, seed)
        }
        Head::Seq2seq(p) => teacher_forced_loss(tape, h, &sentence.tags, p),
    }
}

fn mean_of(tape: &mut Tape, parts: &[Var]) -> Result<Var> {
    match parts {
        [] => Err(contract("mean of no losses")),
        [one] => Ok(*one),
        many => {
            let row = tape.concat_cols(many)?;
            Ok(tape.mean(row))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub loss: f64,
    pub ner_loss: f64,
    pub re_loss: f64,
}

pub fn loss_log_csv(rows: &[LossRow]) -> String {
    let mut out = String::from("step,loss,ner_loss,re_loss\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.step, r.loss, r.ner_loss, r.re_loss));
    }
    out
}

/// Deterministic batch source over a fixed pool of sentence indices.
struct Sampler {
    pool: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
    by_class: Option<Vec<Vec<usize>>>,
    rng: ChaCha8Rng,
}

impl Sampler {
    fn new(corpus: &Corpus, pool: &[usize], balanced: bool, seed: u64) -> Self {
        let by_class = balanced
            .then(|| {
                let pools: Vec<Vec<usize>> = (0..corpus.scheme.num_classes())
                    .map(|c| pool.iter().copied().filter(|&i| corpus.sentences[i].contains_class(c)).collect())
                    .filter(|p: &Vec<usize>| !p.is_empty())
                    .collect();
                pools
            })
            .filter(|p| !p.is_empty());
        Self {
            pool: pool.to_vec(),
            order: Vec::new(),
            cursor: 0,
            by_class,
            rng: rng::seeded(seed),
        }
    }

    fn next_batch(&mut self, size: usize) -> Vec<usize> {
        if let Some(pools) = &self.by_class {
            // a uniformly chosen class, then a sentence containing it
            return (0..size)
                .map(|_| {
                    let p = &pools[self.rng.gen_range(0..pools.len())];
                    p[self.rng.gen_range(0..p.len())]
                })
                .collect();
        }
        let size = size.min(self.pool.len());
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size {
            if self.cursor == self.order.len() {
                self.order = self.pool.clone();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }
}

/// Everything needed to resume or deploy a model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<Adam>,
    pub step: u64,
    /// Seeds of every stage that produced these parameters, oldest first.
    pub seeds: Vec<u64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LossRow>,
}

/// Fine-tunes a head (created from `config.head` when `init` has none) on
/// the sentences `indices` of `corpus`.
pub fn train(
    init: Checkpoint,
    corpus: &Corpus,
    indices: &[usize],
    config: &TrainConfig,
    head_config: &HeadConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if indices.is_empty() {
        return Err(contract("cannot train on an empty sentence set"));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= corpus.len()) {
        return Err(contract(format!("sentence index {bad} outside corpus of {}", corpus.len())));
    }
    let Checkpoint {
        mut model,
        optimizer,
        step: start_step,
        mut seeds,
    } = init;
    seeds.push(config.seed);
    // moments from masked-token pretraining do not carry over to a new head
    let optimizer = if model.task.is_some() { optimizer } else { None };
    match &model.task {
        None => {
            model.task = Some(Task::init(
                model.encoder.config.d_model,
                corpus.scheme.clone(),
                corpus.relation_labels.clone(),
                config.head,
                head_config.clone(),
                rng::derive_seed(config.seed, 1),
            )?)
        }
        Some(task) if task.head.kind() != config.head => {
            return Err(config_err(
                "train.head",
                format!("checkpoint carries a {} head but {} was requested", task.head.kind(), config.head),
            ))
        }
        Some(task) if task.scheme != corpus.scheme => {
            return Err(contract("checkpoint tag scheme differs from the corpus"));
        }
        Some(_) => {}
    }
    let inputs: BTreeMap<usize, SubwordInput> = indices
        .iter()
        .map(|&i| Ok((i, model.featurize(&corpus.sentences[i].surfaces())?)))
        .collect::<Result<_>>()?;
    let mut adam = optimizer.unwrap_or_else(|| Adam::new(config.learning_rate));
    adam.learning_rate = config.learning_rate;
    let mut sampler = Sampler::new(corpus, indices, config.class_balanced, rng::derive_seed(config.seed, 2));
    let mut log = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let batch = sampler.next_batch(config.batch_size);
        let step_seed = rng::derive_seed(config.seed, 1000 + step as u64);
        let mut tape = Tape::new();
        let task = model.task.as_ref().expect("task initialized above");
        let mut ner = Vec::with_capacity(batch.len());
        let mut re = Vec::new();
        for (j, &idx) in batch.iter().enumerate() {
            let s = &corpus.sentences[idx];
            let seed = rng::derive_seed(step_seed, j as u64);
            let h = encode_tokens(&mut tape, &model.encoder, &inputs[&idx], Mode::Train { seed })?;
            ner.push(ner_loss(&mut tape, h, s, task, rng::derive_seed(seed, 1))?);
            if config.lambda_re > 0.0 {
                if let Some(l) = sentence_relation_loss(&mut tape, h, &s.spans, &s.relations, &task.relation)? {
                    re.push(l);
                }
            }
        }
        let ner = mean_of(&mut tape, &ner)?;
        let (total, re_value) = if re.is_empty() {
            (ner, 0.0)
        } else {
            let re = mean_of(&mut tape, &re)?;
            (joint_loss(&mut tape, ner, re, config.lambda_re)?, tape.scalar(re))
        };
        let loss = tape.scalar(total);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {loss} at training step {}", step + 1)));
        }
        tape.backward(total)?;
        model.zero_grads();
        model.absorb_grads(&tape);
        adam.update(&mut model, config.clip_norm)?;
        log.push(LossRow {
            step: step + 1,
            loss,
            ner_loss: tape.scalar(ner),
            re_loss: re_value,
        });
    }
    model.zero_grads();
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            model,
            optimizer: Some(adam),
            step: start_step + config.steps as u64,
            seeds,
        },
        log,
    })
}

/// Masked-token pretraining of the encoder over subword sequences.
pub fn pretrain(init: Checkpoint, sequences: &[Vec<u32>], config: &PretrainConfig) -> Result<(Checkpoint, Vec<(usize, f64)>)> {
    config.validate()?;
    if sequences.is_empty() {
        return Err(contract("cannot pretrain on no sequences"));
    }
    let Checkpoint {
        mut model,
        optimizer,
        step: start_step,
        mut seeds,
    } = init;
    if model.task.is_some() {
        return Err(contract("pretraining expects an encoder-only checkpoint"));
    }
    seeds.push(config.seed);
    let mut adam = optimizer.unwrap_or_else(|| Adam::new(config.learning_rate));
    adam.learning_rate = config.learning_rate;
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let mut shuffle = rng::stream(config.seed, 2);
    let size = config.batch_size.min(sequences.len());
    let mut log = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut batch = Vec::with_capacity(size);
        while batch.len() < size {
            if cursor == order.len() {
                order = (0..sequences.len()).collect();
                order.shuffle(&mut shuffle);
                cursor = 0;
            }
            batch.push(sequences[order[cursor]].clone());
            cursor += 1;
        }
        let mut tape = Tape::new();
        let loss = mlm_step(
            &mut tape,
            &model.encoder,
            &batch,
            config.mask_prob,
            rng::derive_seed(config.seed, 1000 + step as u64),
        )?;
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {value} at pretraining step {}", step + 1)));
        }
        tape.backward(loss)?;
        model.zero_grads();
        model.absorb_grads(&tape);
        adam.update(&mut model, config.clip_norm)?;
        log.push((step + 1, value));
    }
    model.zero_grads();
    Ok((
        Checkpoint {
            model,
            optimizer: Some(adam),
            step: start_step + config.steps as u64,
            seeds,
        },
        log,
    ))
}

/// Output of the model on one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Tags as produced by the head, before any BIO repair.
    pub tags: Vec<usize>,
    pub spans: Vec<EntitySpan>,
    pub relations: Vec<RelationInstance>,
}

fn head_decode(tape: &mut Tape, h: Var, task: &Task, n: usize) -> Result<(Vec<usize>, Vec<EntitySpan>)> {
    match &task.head {
        Head::Crf(p) => {
            let e = crf::emissions(tape, h, p)?;
            let (tags, _) = crf::viterbi(&p.scores(tape.value(e).to_vec())?);
            let spans = tags_to_spans(&tags, &task.scheme, DecodeMode::Repair)?;
            Ok((tags, spans))
        }
        Head::Span(p) => {
            let scores = score_all_spans(tape, h, p)?;
            let spans = decode_spans(&scores.scored(tape));
            Ok((spans_to_tags(&spans, n, &task.scheme)?, spans))
        }
        Head::Seq2seq(p) => {
            let tags = greedy_decode(tape, h, p)?;
            let spans = tags_to_spans(&tags, &task.scheme, DecodeMode::Repair)?;
            Ok((tags, spans))
        }
    }
}

/// Tags, spans and relations for a tokenized sentence.
pub fn predict_words(model: &Model, words: &[&str]) -> Result<Prediction> {
    let task = model.task()?;
    let input = model.featurize(words)?;
    let mut tape = Tape::new();
    let h = encode_tokens(&mut tape, &model.encoder, &input, Mode::Eval)?;
    let (tags, spans) = head_decode(&mut tape, h, task, words.len())?;
    let relations = predict_relations(&mut tape, h, &spans, &task.relation)?;
    Ok(Prediction { tags, spans, relations })
}

/// Relations predicted over the given (gold) spans.
pub fn predict_relations_on(model: &Model, words: &[&str], spans: &[EntitySpan]) -> Result<Vec<RelationInstance>> {
    let task = model.task()?;
    let input = model.featurize(words)?;
    let mut tape = Tape::new();
    let h = encode_tokens(&mut tape, &model.encoder, &input, Mode::Eval)?;
    predict_relations(&mut tape, h, spans, &task.relation)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub head: HeadKind,
    pub sentences: usize,
    pub entity: EvalReport,
    pub relation_gold_spans: EvalReport,
    pub relation_pipeline: EvalReport,
}

fn triples(spans: &[EntitySpan], rels: &[RelationInstance]) -> Vec<RelationTriple> {
    rels.iter()
        .map(|r| RelationTriple {
            head: spans[r.head],
            tail: spans[r.tail],
            label: r.label.clone(),
        })
        .collect()
}

/// Scores the model on `indices`; inference fans out across threads and is
/// merged in input order.
pub fn evaluate(model: &Model, corpus: &Corpus, indices: &[usize]) -> Result<ModelReport> {
    let task = model.task()?;
    let results: Vec<(Prediction, Vec<RelationInstance>)> = indices
        .par_iter()
        .map(|&i| {
            let s = &corpus.sentences[i];
            let words = s.surfaces();
            Ok((predict_words(model, &words)?, predict_relations_on(model, &words, &s.spans)?))
        })
        .collect::<Result<_>>()?;
    let gold: Vec<&Sentence> = indices.iter().map(|&i| &corpus.sentences[i]).collect();
    let gold_spans: Vec<Vec<EntitySpan>> = gold.iter().map(|s| s.spans.clone()).collect();
    let pred_spans: Vec<Vec<EntitySpan>> = results.iter().map(|(p, _)| p.spans.clone()).collect();
    let mut entity = entity_prf(&gold_spans, &pred_spans, task.scheme.classes())?;
    let gold_tags: Vec<Vec<usize>> = gold.iter().map(|s| s.tags.clone()).collect();
    let pred_tags: Vec<Vec<usize>> = results.iter().map(|(p, _)| p.tags.clone()).collect();
    entity.token_accuracy = Some(token_accuracy(&gold_tags, &pred_tags)?);
    if task.head.kind() != HeadKind::Span && !pred_tags.is_empty() {
        entity.invalid_transition_rate = Some(invalid_transition_rate(&pred_tags, &task.scheme)?);
    }

    let labels: Vec<String> = task.relation.labels.iter().filter(|l| *l != NO_RELATION).cloned().collect();
    let gold_rel: Vec<Vec<RelationTriple>> = gold.iter().map(|s| triples(&s.spans, &s.relations)).collect();
    let on_gold: Vec<Vec<RelationTriple>> = gold
        .iter()
        .zip(&results)
        .map(|(s, (_, r))| triples(&s.spans, r))
        .collect();
    let pipeline: Vec<Vec<RelationTriple>> = results.iter().map(|(p, _)| triples(&p.spans, &p.relations)).collect();
    Ok(ModelReport {
        head: task.head.kind(),
        sentences: indices.len(),
        entity,
        relation_gold_spans: relation_prf(&gold_rel, &on_gold, &labels)?,
        relation_pipeline: relation_prf(&gold_rel, &pipeline, &labels)?,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorRecord {
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskRecord {
    head: HeadKind,
    head_config: HeadConfig,
    classes: Vec<String>,
    relation_labels: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AdamRecord {
    learning_rate: f64,
    step: u64,
    first_moment: BTreeMap<String, Vec<f64>>,
    second_moment: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    encoder: EncoderConfig,
    vocab: Vocab,
    task: Option<TaskRecord>,
    tensors: BTreeMap<String, TensorRecord>,
    optimizer: Option<AdamRecord>,
    step: u64,
    seeds: Vec<u64>,
}

fn ckpt_err(key: impl Into<String>, msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        key: key.into(),
        msg: msg.into(),
    }
}

impl Checkpoint {
    pub fn new(model: Model) -> Self {
        Self {
            model,
            optimizer: None,
            step: 0,
            seeds: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let model = &self.model;
        let tensors = model
            .named_tensors()
            .into_iter()
            .map(|(name, t)| {
                (
                    name,
                    TensorRecord {
                        shape: t.shape().to_vec(),
                        values: t.values().to_vec(),
                    },
                )
            })
            .collect();
        let task = model.task.as_ref().map(|t| TaskRecord {
            head: t.head.kind(),
            head_config: t.head_config.clone(),
            classes: t.scheme.classes().to_vec(),
            relation_labels: t.relation.labels.clone(),
        });
        let optimizer = self.optimizer.as_ref().map(|a| AdamRecord {
            learning_rate: a.learning_rate,
            step: a.step,
            first_moment: a.moments.iter().map(|(k, (m, _))| (k.clone(), m.clone())).collect(),
            second_moment: a.moments.iter().map(|(k, (_, v))| (k.clone(), v.clone())).collect(),
        });
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            encoder: model.encoder.config.clone(),
            vocab: model.vocab.clone(),
            task,
            tensors,
            optimizer,
            step: self.step,
            seeds: self.seeds.clone(),
        };
        let mut text = serde_json::to_string(&file)?;
        text.push('\n');
        Ok(text)
    }

    /// Parses and validates a checkpoint; errors name the offending key.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| ckpt_err("<file>", format!("corrupt checkpoint: {e}")))?;
        match value.get("format").and_then(|f| f.as_str()) {
            Some(CHECKPOINT_FORMAT) => {}
            other => return Err(ckpt_err("format", format!("expected {CHECKPOINT_FORMAT:?}, found {other:?}"))),
        }
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(CHECKPOINT_VERSION) => {}
            other => return Err(ckpt_err("version", format!("unsupported version {other:?}"))),
        }
        let file: CheckpointFile = serde_json::from_value(value).map_err(|e| ckpt_err("<file>", e.to_string()))?;
        file.encoder
            .validate()
            .map_err(|e| ckpt_err("encoder", e.to_string()))?;
        if file.encoder.vocab_size != file.vocab.len() {
            return Err(ckpt_err(
                "encoder.vocab_size",
                format!("{} does not match vocabulary of {}", file.encoder.vocab_size, file.vocab.len()),
            ));
        }

        let mut model = Model::fresh(file.vocab, &file.encoder, 0)?;
        if let Some(t) = &file.task {
            let scheme = TagScheme::new(t.classes.clone()).map_err(|e| ckpt_err("task.classes", e.to_string()))?;
            model.task = Some(
                Task::init(file.encoder.d_model, scheme, t.relation_labels.clone(), t.head, t.head_config.clone(), 0)
                    .map_err(|e| ckpt_err("task", e.to_string()))?,
            );
        }
        let mut records = file.tensors;
        for (name, tensor) in model.named_tensors_mut() {
            let rec = records.remove(&name).ok_or_else(|| ckpt_err(&name, "missing tensor"))?;
            if rec.shape != tensor.shape() {
                return Err(ckpt_err(
                    &name,
                    format!("shape mismatch: stored {:?}, expected {:?}", rec.shape, tensor.shape()),
                ));
            }
            if rec.values.len() != tensor.len() {
                return Err(ckpt_err(&name, format!("{} values for shape {:?}", rec.values.len(), rec.shape)));
            }
            if rec.values.iter().any(|v| !v.is_finite()) {
                return Err(ckpt_err(&name, "non-finite value"));
            }
            tensor.values_mut().copy_from_slice(&rec.values);
        }
        if let Some(extra) = records.keys().next() {
            return Err(ckpt_err(extra, "unexpected tensor"));
        }

        let optimizer = match file.optimizer {
            None => None,
            Some(rec) => {
                let shapes: BTreeMap<String, usize> = model.named_tensors().into_iter().map(|(n, t)| (n, t.len())).collect();
                let mut adam = Adam::new(rec.learning_rate);
                adam.step = rec.step;
                let mut second = rec.second_moment;
                for (name, m) in rec.first_moment {
                    let v = second
                        .remove(&name)
                        .ok_or_else(|| ckpt_err(format!("optimizer.{name}"), "missing second moment"))?;
                    if shapes.get(&name) != Some(&m.len()) || v.len() != m.len() {
                        return Err(ckpt_err(format!("optimizer.{name}"), "moment length does not match parameter"));
                    }
                    adam.moments.insert(name, (m, v));
                }
                if let Some(extra) = second.keys().next() {
                    return Err(ckpt_err(format!("optimizer.{extra}"), "unexpected second moment"));
                }
                Some(adam)
            }
        };
        Ok(Self {
            model,
            optimizer,
            step: file.step,
            seeds: file.seeds,
        })
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.to_json()?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_json(&std::fs::read_to_string(path)?)
}
