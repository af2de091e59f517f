//! Experiment driver behind the `medner` binary.
//!
//! Every subcommand resolves an [`ExperimentConfig`] (TOML file, then flags),
//! validates it, echoes it into the output directory and writes its artifacts
//! there. Exit status: 0 on success, 1 for invalid input, 2 for runtime
//! failures.

use std::io::{BufRead, Write as _};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::corpus::{
    augment, build_vocab, default_lexicon, generate_synthetic_corpus, load_corpus, save_annotations, save_conll,
    AugmentMode, Corpus, Split, TagScheme,
};
use crate::encoder::{EncoderConfig, SubwordInput};
use crate::error::{Error, Result};
use crate::eval::markdown_table;
use crate::fewshot::{run_curve, CurveConfig};
use crate::rng;
use crate::training::{
    evaluate, load_checkpoint, loss_log_csv, predict_words, pretrain, save_checkpoint, train, Checkpoint, HeadConfig,
    HeadKind, Model, PretrainConfig, TrainConfig,
};

pub const BUNDLED_SIZE: usize = 1000;
pub const BUNDLED_SEED: u64 = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentKind {
    None,
    Synonym,
    EntityMask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    /// Tag file; when absent the synthetic generator is used.
    pub path: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub size: usize,
    pub seed: u64,
    pub classes: Vec<String>,
    /// Adds one augmented copy of every train sentence.
    pub augment: AugmentKind,
}

impl Default for CorpusSection {
    fn default() -> Self {
        Self {
            path: None,
            annotations: None,
            size: BUNDLED_SIZE,
            seed: BUNDLED_SEED,
            classes: TagScheme::default().classes().to_vec(),
            augment: AugmentKind::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VocabSection {
    pub min_freq: usize,
}

impl Default for VocabSection {
    fn default() -> Self {
        Self { min_freq: 1 }
    }
}

/// Encoder shape; the vocabulary size comes from the built vocabulary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderSection {
    pub d_model: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for EncoderSection {
    fn default() -> Self {
        let d = EncoderConfig::desk(0);
        Self {
            d_model: d.d_model,
            heads: d.heads,
            layers: d.layers,
            d_ff: d.d_ff,
            max_len: d.max_len,
            dropout: d.dropout,
            seed: 0,
        }
    }
}

impl EncoderSection {
    pub fn config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            d_model: self.d_model,
            heads: self.heads,
            layers: self.layers,
            d_ff: self.d_ff,
            max_len: self.max_len,
            dropout: self.dropout,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub corpus: CorpusSection,
    pub vocab: VocabSection,
    pub encoder: EncoderSection,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub head: HeadConfig,
    pub curve: CurveConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("medner-out"),
            corpus: CorpusSection::default(),
            vocab: VocabSection::default(),
            encoder: EncoderSection::default(),
            pretrain: PretrainConfig::default(),
            train: TrainConfig::default(),
            head: HeadConfig::default(),
            curve: CurveConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let key = e
                .message()
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "<config>".into());
            Error::Config {
                key,
                msg: e.to_string().trim().replace('\n', " "),
            }
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config {
            key: "<config>".into(),
            msg: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        TagScheme::new(self.corpus.classes.clone()).map_err(|e| Error::Config {
            key: "corpus.classes".into(),
            msg: e.to_string(),
        })?;
        if self.corpus.annotations.is_some() && self.corpus.path.is_none() {
            return Err(Error::Config {
                key: "corpus.annotations".into(),
                msg: "needs corpus.path".into(),
            });
        }
        if self.vocab.min_freq == 0 {
            return Err(Error::Config {
                key: "vocab.min_freq".into(),
                msg: "must be at least 1".into(),
            });
        }
        // a placeholder vocabulary size checks everything else about the shape
        self.encoder.config(usize::MAX).validate()?;
        self.pretrain.validate()?;
        self.train.validate()?;
        self.head.validate()?;
        self.curve.validate()
    }
}

#[derive(Parser, Debug)]
#[command(name = "medner", version, about = "Desk-scale medical entity and relation extraction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML experiment config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    /// Tag file to use instead of the synthetic generator.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Annotation file paired with --corpus.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
    /// Seed for the stage this subcommand runs.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Validation,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Validation => Split::Validation,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic corpus as a tag file plus annotations.
    GenCorpus {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        size: Option<usize>,
    },
    /// Masked-token pretraining of a fresh encoder.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Fine-tune an extraction head and the relation head.
    Train {
        #[command(flatten)]
        common: Common,
        /// Starting checkpoint; a fresh encoder is used when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        head: Option<HeadKind>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lambda_re: Option<f64>,
        #[arg(long)]
        class_balanced: bool,
    },
    /// Score a checkpoint on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
    /// k-shot learning curve from a pretrained encoder.
    FewshotCurve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated shot counts.
        #[arg(long, value_delimiter = ',')]
        k: Option<Vec<usize>>,
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Train every head from one encoder and tabulate test scores.
    CompareHeads {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Tag whitespace-tokenized text, one sentence per line, as JSON lines.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Input text; standard input when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Output file; standard output when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Maps an error to the process exit status.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Parse { .. } | Error::Bio { .. } | Error::Checkpoint { .. } | Error::Length { .. } => 1,
        Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 1,
        _ => 2,
    }
}

fn require_file(path: &Path, key: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config {
            key: key.into(),
            msg: format!("file not found: {}", path.display()),
        })
    }
}

/// Resolved configuration plus the files this run reads.
struct Run {
    config: ExperimentConfig,
    inputs: Vec<PathBuf>,
    name: &'static str,
}

impl Run {
    fn resolve(name: &'static str, common: &Common, apply: impl FnOnce(&mut ExperimentConfig, Option<u64>)) -> Result<Self> {
        let mut inputs = Vec::new();
        let mut config = match &common.config {
            Some(path) => {
                require_file(path, "--config")?;
                inputs.push(path.clone());
                ExperimentConfig::from_toml(&std::fs::read_to_string(path)?)?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(out) = &common.out {
            config.output_dir = out.clone();
        }
        if let Some(p) = &common.corpus {
            config.corpus.path = Some(p.clone());
            config.corpus.annotations = common.annotations.clone();
        } else if common.annotations.is_some() {
            config.corpus.annotations = common.annotations.clone();
        }
        apply(&mut config, common.seed);
        config.validate()?;
        if let Some(p) = &config.corpus.path {
            require_file(p, "corpus.path")?;
            inputs.push(p.clone());
        }
        if let Some(p) = &config.corpus.annotations {
            require_file(p, "corpus.annotations")?;
            inputs.push(p.clone());
        }
        Ok(Self { config, inputs, name })
    }

    fn input(&mut self, path: &Path, key: &str) -> Result<()> {
        require_file(path, key)?;
        self.inputs.push(path.to_path_buf());
        Ok(())
    }

    fn out_path(&self, file: &str) -> PathBuf {
        self.config.output_dir.join(file)
    }

    fn write(&self, file: &str, contents: &str) -> Result<PathBuf> {
        let path = self.out_path(file);
        std::fs::create_dir_all(&self.config.output_dir)?;
        guard_inputs(&path, &self.inputs)?;
        std::fs::write(&path, contents)?;
        Ok(path)
    }

    fn save(&self, file: &str, ckpt: &Checkpoint) -> Result<()> {
        let path = self.out_path(file);
        std::fs::create_dir_all(&self.config.output_dir)?;
        guard_inputs(&path, &self.inputs)?;
        save_checkpoint(ckpt, &path)
    }

    fn echo_config(&self) -> Result<()> {
        self.write(&format!("{}.config.toml", self.name), &self.config.to_toml()?)?;
        Ok(())
    }

    fn corpus(&self) -> Result<Corpus> {
        let c = &self.config.corpus;
        let scheme = TagScheme::new(c.classes.clone())?;
        let mut corpus = match &c.path {
            Some(p) => load_corpus(p, c.annotations.as_deref(), &scheme)?,
            None => {
                if scheme != TagScheme::default() {
                    return Err(Error::Config {
                        key: "corpus.classes".into(),
                        msg: "the synthetic generator only emits the default classes".into(),
                    });
                }
                generate_synthetic_corpus(c.size, c.seed)
            }
        };
        let mode = match c.augment {
            AugmentKind::None => return Ok(corpus),
            AugmentKind::Synonym => AugmentMode::Synonym,
            AugmentKind::EntityMask => AugmentMode::EntityMask,
        };
        let lexicon = default_lexicon();
        let extra: Vec<_> = corpus
            .split_indices(Split::Train)
            .into_iter()
            .map(|i| augment(&corpus.sentences[i], mode, &lexicon, &corpus.scheme, rng::derive_seed(c.seed, i as u64)))
            .collect();
        corpus.splits.extend(std::iter::repeat_n(Split::Train, extra.len()));
        corpus.sentences.extend(extra);
        Ok(corpus)
    }
}

fn guard_inputs(path: &Path, inputs: &[PathBuf]) -> Result<()> {
    let target = path.canonicalize().ok();
    for input in inputs {
        if target.is_some() && input.canonicalize().ok() == target {
            return Err(Error::Config {
                key: "output_dir".into(),
                msg: format!("refusing to overwrite input file {}", input.display()),
            });
        }
    }
    Ok(())
}

fn train_only(corpus: &Corpus) -> Corpus {
    let idx = corpus.split_indices(Split::Train);
    Corpus {
        scheme: corpus.scheme.clone(),
        relation_labels: corpus.relation_labels.clone(),
        sentences: idx.iter().map(|&i| corpus.sentences[i].clone()).collect(),
        splits: vec![Split::Train; idx.len()],
    }
}

/// Fresh encoder over a vocabulary built from the train split.
fn fresh_model(config: &ExperimentConfig, corpus: &Corpus) -> Result<Model> {
    let vocab = build_vocab(&train_only(corpus), config.vocab.min_freq)?;
    Model::fresh(vocab.clone(), &config.encoder.config(vocab.len()), config.encoder.seed)
}

fn gen_corpus(common: &Common, size: Option<usize>) -> Result<()> {
    let run = Run::resolve("gen-corpus", common, |c, seed| {
        c.corpus.path = None;
        c.corpus.annotations = None;
        if let Some(s) = size {
            c.corpus.size = s;
        }
        if let Some(s) = seed {
            c.corpus.seed = s;
        }
    })?;
    let corpus = run.corpus()?;
    std::fs::create_dir_all(&run.config.output_dir)?;
    save_conll(&corpus, &run.out_path("corpus.conll"))?;
    save_annotations(&corpus, &run.out_path("corpus.annotations.jsonl"))?;
    run.echo_config()?;
    println!("wrote {} sentences to {}", corpus.len(), run.config.output_dir.display());
    Ok(())
}

fn pretrain_cmd(common: &Common, steps: Option<usize>) -> Result<()> {
    let run = Run::resolve("pretrain", common, |c, seed| {
        if let Some(s) = steps {
            c.pretrain.steps = s;
        }
        if let Some(s) = seed {
            c.pretrain.seed = s;
        }
    })?;
    let corpus = run.corpus()?;
    let model = fresh_model(&run.config, &corpus)?;
    let seqs: Vec<Vec<u32>> = corpus
        .split_indices(Split::Train)
        .into_iter()
        .map(|i| SubwordInput::from_sentence(&corpus.sentences[i], &model.vocab).ids)
        .collect();
    let init = Checkpoint {
        seeds: vec![run.config.encoder.seed],
        ..Checkpoint::new(model)
    };
    let (ckpt, log) = pretrain(init, &seqs, &run.config.pretrain)?;
    let mut csv = String::from("step,mlm_loss\n");
    for (step, loss) in &log {
        csv.push_str(&format!("{step},{loss}\n"));
    }
    run.write("pretrain_loss.csv", &csv)?;
    run.save("encoder.json", &ckpt)?;
    run.echo_config()?;
    if let (Some(first), Some(last)) = (log.first(), log.last()) {
        println!("mlm loss {:.4} -> {:.4} over {} steps", first.1, last.1, log.len());
    }
    Ok(())
}

fn train_cmd(
    common: &Common,
    checkpoint: Option<&Path>,
    head: Option<HeadKind>,
    steps: Option<usize>,
    lambda_re: Option<f64>,
    class_balanced: bool,
) -> Result<()> {
    let mut run = Run::resolve("train", common, |c, seed| {
        if let Some(h) = head {
            c.train.head = h;
        }
        if let Some(s) = steps {
            c.train.steps = s;
        }
        if let Some(l) = lambda_re {
            c.train.lambda_re = l;
        }
        if class_balanced {
            c.train.class_balanced = true;
        }
        if let Some(s) = seed {
            c.train.seed = s;
        }
    })?;
    if let Some(p) = checkpoint {
        run.input(p, "--checkpoint")?;
    }
    let corpus = run.corpus()?;
    let init = match checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => Checkpoint::new(fresh_model(&run.config, &corpus)?),
    };
    let out = train(init, &corpus, &corpus.split_indices(Split::Train), &run.config.train, &run.config.head)?;
    run.write("train_loss.csv", &loss_log_csv(&out.log))?;
    run.save("model.json", &out.checkpoint)?;
    let val = corpus.split_indices(Split::Validation);
    if !val.is_empty() {
        let report = evaluate(&out.checkpoint.model, &corpus, &val)?;
        run.write("report_validation.json", &format!("{}\n", serde_json::to_string_pretty(&report)?))?;
        println!("validation entity F1 {:.4}", report.entity.micro.f1);
    }
    run.echo_config()?;
    Ok(())
}

fn split_name(s: Split) -> &'static str {
    match s {
        Split::Train => "train",
        Split::Validation => "validation",
        Split::Test => "test",
    }
}

fn eval_cmd(common: &Common, checkpoint: &Path, split: Split) -> Result<()> {
    let mut run = Run::resolve("eval", common, |_, _| {})?;
    run.input(checkpoint, "--checkpoint")?;
    let corpus = run.corpus()?;
    let ckpt = load_checkpoint(checkpoint)?;
    let idx = corpus.split_indices(split);
    if idx.is_empty() {
        return Err(Error::Config {
            key: "--split".into(),
            msg: format!("the {} split is empty", split_name(split)),
        });
    }
    let report = evaluate(&ckpt.model, &corpus, &idx)?;
    let name = split_name(split);
    run.write(&format!("report_{name}.json"), &format!("{}\n", serde_json::to_string_pretty(&report)?))?;
    let label = |what: &str| format!("{} ({what})", report.head);
    let table = markdown_table(&[
        (label("entities"), &report.entity.micro),
        (label("relations, gold spans"), &report.relation_gold_spans.micro),
        (label("relations, pipeline"), &report.relation_pipeline.micro),
    ]);
    run.write(&format!("report_{name}.md"), &table)?;
    run.echo_config()?;
    print!("{table}");
    Ok(())
}

fn fewshot_cmd(common: &Common, checkpoint: &Path, k: Option<Vec<usize>>, seeds: Option<usize>) -> Result<()> {
    let mut run = Run::resolve("fewshot-curve", common, |c, seed| {
        if let Some(k) = k {
            c.curve.k = k;
        }
        if let Some(s) = seeds {
            c.curve.seeds = s;
        }
        if let Some(s) = seed {
            c.curve.seed = s;
        }
    })?;
    run.input(checkpoint, "--checkpoint")?;
    let corpus = run.corpus()?;
    let ckpt = load_checkpoint(checkpoint)?;
    let curve = run_curve(&corpus, &ckpt, &run.config.curve, &run.config.train, &run.config.head)?;
    run.write("curve.csv", &curve.rows_csv())?;
    let summary = curve.summary_csv();
    run.write("curve_summary.csv", &summary)?;
    run.echo_config()?;
    print!("{summary}");
    Ok(())
}

fn compare_cmd(common: &Common, checkpoint: &Path, steps: Option<usize>) -> Result<()> {
    let mut run = Run::resolve("compare-heads", common, |c, seed| {
        if let Some(s) = steps {
            c.train.steps = s;
        }
        if let Some(s) = seed {
            c.train.seed = s;
        }
    })?;
    run.input(checkpoint, "--checkpoint")?;
    let corpus = run.corpus()?;
    let mut init = load_checkpoint(checkpoint)?;
    init.model.task = None;
    init.optimizer = None;
    let train_idx = corpus.split_indices(Split::Train);
    let test_idx = corpus.split_indices(Split::Test);
    if test_idx.is_empty() {
        return Err(Error::Config {
            key: "corpus.size".into(),
            msg: "the test split is empty".into(),
        });
    }
    let mut reports = Vec::new();
    for head in HeadKind::ALL {
        let cfg = TrainConfig {
            head,
            ..run.config.train.clone()
        };
        let out = train(init.clone(), &corpus, &train_idx, &cfg, &run.config.head)?;
        run.write(&format!("train_loss_{head}.csv"), &loss_log_csv(&out.log))?;
        run.save(&format!("model_{head}.json"), &out.checkpoint)?;
        reports.push(evaluate(&out.checkpoint.model, &corpus, &test_idx)?);
    }
    let label = |h: HeadKind| match h {
        HeadKind::Crf => "Encoder + CRF",
        HeadKind::Span => "Encoder + span classifier",
        HeadKind::Seq2seq => "Encoder + seq2seq decoder",
    };
    let rows: Vec<(String, &crate::eval::Scores)> =
        reports.iter().map(|r| (label(r.head).to_string(), &r.entity.micro)).collect();
    let table = markdown_table(&rows);
    run.write("compare_heads.md", &table)?;
    run.write("compare_heads.json", &format!("{}\n", serde_json::to_string_pretty(&reports)?))?;
    run.echo_config()?;
    print!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct SpanOut<'a> {
    start: usize,
    end: usize,
    class: &'a str,
    text: String,
}

#[derive(Serialize)]
struct RelationOut<'a> {
    head: usize,
    tail: usize,
    label: &'a str,
}

#[derive(Serialize)]
struct PredictionOut<'a> {
    tokens: Vec<&'a str>,
    tags: Vec<String>,
    spans: Vec<SpanOut<'a>>,
    relations: Vec<RelationOut<'a>>,
}

/// Tags one line of whitespace-tokenized text and renders it as a JSON
/// object (without trailing newline). Blank lines give empty arrays.
pub fn predict_line(model: &Model, line: &str) -> Result<String> {
    let task = model.task()?;
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if tokens.is_empty() {
        let empty = PredictionOut {
            tokens,
            tags: vec![],
            spans: vec![],
            relations: vec![],
        };
        return Ok(serde_json::to_string(&empty)?);
    }
    let p = predict_words(model, &tokens)?;
    let record = PredictionOut {
        tags: p.tags.iter().map(|&t| task.scheme.tag_name(t)).collect(),
        spans: p
            .spans
            .iter()
            .map(|s| SpanOut {
                start: s.start,
                end: s.end,
                class: &task.scheme.classes()[s.cls],
                text: tokens[s.start..=s.end].join(" "),
            })
            .collect(),
        relations: p
            .relations
            .iter()
            .map(|r| RelationOut {
                head: r.head,
                tail: r.tail,
                label: &r.label,
            })
            .collect(),
        tokens,
    };
    Ok(serde_json::to_string(&record)?)
}

fn predict_cmd(checkpoint: &Path, input: Option<&Path>, output: Option<&Path>) -> Result<()> {
    require_file(checkpoint, "--checkpoint")?;
    if let Some(p) = input {
        require_file(p, "--input")?;
    }
    let model = load_checkpoint(checkpoint)?.model;
    model.task()?;
    let text = match input {
        Some(p) => std::fs::read_to_string(p)?,
        None => {
            let mut buf = String::new();
            for line in std::io::stdin().lock().lines() {
                buf.push_str(&line?);
                buf.push('\n');
            }
            buf
        }
    };
    let mut out = String::new();
    for line in text.lines() {
        out.push_str(&predict_line(&model, line)?);
        out.push('\n');
    }
    match output {
        Some(p) => {
            let inputs: Vec<PathBuf> = std::iter::once(checkpoint).chain(input).map(Path::to_path_buf).collect();
            guard_inputs(p, &inputs)?;
            std::fs::write(p, out)?;
        }
        None => std::io::stdout().lock().write_all(out.as_bytes())?,
    }
    Ok(())
}

/// Runs one parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenCorpus { common, size } => gen_corpus(&common, size),
        Command::Pretrain { common, steps } => pretrain_cmd(&common, steps),
        Command::Train {
            common,
            checkpoint,
            head,
            steps,
            lambda_re,
            class_balanced,
        } => train_cmd(&common, checkpoint.as_deref(), head, steps, lambda_re, class_balanced),
        Command::Eval {
            common,
            checkpoint,
            split,
        } => eval_cmd(&common, &checkpoint, split.into()),
        Command::FewshotCurve {
            common,
            checkpoint,
            k,
            seeds,
        } => fewshot_cmd(&common, &checkpoint, k, seeds),
        Command::CompareHeads {
            common,
            checkpoint,
            steps,
        } => compare_cmd(&common, &checkpoint, steps),
        Command::Predict {
            checkpoint,
            input,
            output,
        } => predict_cmd(&checkpoint, input.as_deref(), output.as_deref()),
    }
}
