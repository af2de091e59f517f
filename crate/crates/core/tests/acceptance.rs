//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. Tolerances and budgets are fixed here.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use medner::cli::{BUNDLED_SEED, BUNDLED_SIZE};
use medner::corpus::{
    build_vocab, generate_synthetic_corpus, spans_to_tags, tags_to_spans, Corpus, DecodeMode, EntitySpan, Split,
    TagScheme,
};
use medner::crf::{self, brute_force_oracle, viterbi, CrfScores};
use medner::encoder::{encode_tokens, EncoderConfig, Mode, SubwordInput};
use medner::eval::f1_from_pr;
use medner::fewshot::{run_curve, CurveConfig};
use medner::relation::sentence_relation_loss;
use medner::seq2seq::teacher_forced_loss;
use medner::span::{score_all_spans, span_loss};
use medner::tensor::finite_diff_check;
use medner::training::{
    evaluate, pretrain, train, Checkpoint, Head, HeadConfig, HeadKind, Model, PretrainConfig, Task, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ORACLE_INSTANCES: usize = 120;
const ORACLE_TIED: usize = 40;
const PARTITION_TOL: f64 = 1e-10;
const ORACLE_BUDGET: Duration = Duration::from_secs(10);
const GRAD_H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const GRAD_BUDGET: Duration = Duration::from_secs(30);
const F1_TOL: f64 = 0.0005;
const BIO_CASES: usize = 10_000;
const OVERFIT_SENTENCES: usize = 10;
const OVERFIT_MAX_STEPS: usize = 1000;
const OVERFIT_CHUNK: usize = 100;
const DIRECTION_SEEDS: u64 = 5;
const DIRECTION_MIN_WINS: usize = 4;
const CURVE_K: [usize; 3] = [1, 10, 50];
const NORMALIZATION_TOL: f64 = 1e-10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

struct Instance {
    n: usize,
    k: usize,
    e: Vec<f64>,
    t: Vec<f64>,
    start: Vec<f64>,
    stop: Vec<f64>,
}

impl Instance {
    fn random(rng: &mut ChaCha8Rng, tied: bool) -> Self {
        let n = rng.gen_range(1..=6);
        let k = rng.gen_range(1..=4);
        // small integers make exact ties common and exactly representable
        let mut draw = |len: usize| -> Vec<f64> {
            (0..len)
                .map(|_| {
                    if tied {
                        rng.gen_range(-1i32..=1) as f64
                    } else {
                        rng.gen_range(-3.0..3.0)
                    }
                })
                .collect()
        };
        Self {
            n,
            k,
            e: draw(n * k),
            t: draw(k * k),
            start: draw(k),
            stop: draw(k),
        }
    }

    fn scores(&self) -> CrfScores {
        CrfScores::new(self.e.clone(), self.t.clone(), self.start.clone(), self.stop.clone()).unwrap()
    }

    /// Direct sum over one label sequence, independent of the library.
    fn score(&self, y: &[usize]) -> f64 {
        let mut s = self.start[y[0]] + self.stop[y[self.n - 1]];
        for i in 0..self.n {
            s += self.e[i * self.k + y[i]];
            if i > 0 {
                s += self.t[y[i - 1] * self.k + y[i]];
            }
        }
        s
    }

    fn sequences(&self) -> Vec<Vec<usize>> {
        let total = self.k.pow(self.n as u32);
        (0..total)
            .map(|code| {
                (0..self.n)
                    .map(|i| code / self.k.pow((self.n - 1 - i) as u32) % self.k)
                    .collect()
            })
            .collect()
    }
}

fn oracle_instances() -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(20_241_101);
    (0..ORACLE_INSTANCES)
        .map(|i| Instance::random(&mut rng, i < ORACLE_TIED))
        .collect()
}

fn crf_oracle_equivalence() -> Outcome {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    let mut mismatches = 0;
    for inst in oracle_instances() {
        let scores = inst.scores();
        let oracle = brute_force_oracle(&scores).unwrap();
        worst = worst.max((scores.log_partition() - oracle.log_partition).abs());
        let (best, _) = viterbi(&scores);
        if best != oracle.best {
            mismatches += 1;
        }
    }
    let elapsed = t0.elapsed();
    outcome(
        worst <= PARTITION_TOL && mismatches == 0 && elapsed < ORACLE_BUDGET,
        format!(
            "{ORACLE_INSTANCES} instances ({ORACLE_TIED} tie-heavy), max |logZ - oracle| = {worst:.2e} (tol {PARTITION_TOL:.0e}), argmax mismatches {mismatches}, {:.2?} (budget {ORACLE_BUDGET:?})",
            elapsed
        ),
    )
}

fn tiny_model(kind: HeadKind) -> (Model, Corpus) {
    let corpus = generate_synthetic_corpus(3, 11);
    let vocab = build_vocab(&corpus, 1).unwrap();
    let cfg = EncoderConfig {
        vocab_size: vocab.len(),
        d_model: 8,
        heads: 2,
        layers: 1,
        d_ff: 16,
        max_len: 24,
        dropout: 0.0,
    };
    let mut model = Model::fresh(vocab, &cfg, 5).unwrap();
    let head = HeadConfig {
        max_width: 4,
        width_dim: 3,
        tag_dim: 3,
        neg_ratio: 3.0,
    };
    model.task = Some(Task::init(8, corpus.scheme.clone(), corpus.relation_labels.clone(), kind, head, 6).unwrap());
    (model, corpus)
}

fn gradient_suite() -> Outcome {
    let t0 = Instant::now();
    let mut parts = Vec::new();
    let mut pass = true;
    let cases: [(&str, HeadKind); 4] = [
        ("crf-nll", HeadKind::Crf),
        ("span", HeadKind::Span),
        ("seq2seq", HeadKind::Seq2seq),
        ("relation", HeadKind::Crf),
    ];
    for (name, kind) in cases {
        let (mut model, corpus) = tiny_model(kind);
        let sentence = corpus
            .sentences
            .iter()
            .find(|s| s.spans.len() >= 2 && !s.relations.is_empty() && s.len() <= 12)
            .or_else(|| corpus.sentences.iter().find(|s| s.spans.len() >= 2))
            .expect("a multi-entity sentence")
            .clone();
        let input = SubwordInput::from_sentence(&sentence, &model.vocab);
        let result = finite_diff_check(&mut model, GRAD_H, |m, tape| {
            let h = encode_tokens(tape, &m.encoder, &input, Mode::Eval)?;
            let task = m.task.as_ref().expect("task");
            match (name, &task.head) {
                ("relation", _) => {
                    Ok(sentence_relation_loss(tape, h, &sentence.spans, &sentence.relations, &task.relation)?
                        .expect("two spans give a relation loss"))
                }
                (_, Head::Crf(p)) => {
                    let e = crf::emissions(tape, h, p)?;
                    let v = p.bind(tape);
                    crf::crf_nll(tape, e, &v, &sentence.tags)
                }
                (_, Head::Span(p)) => {
                    let s = score_all_spans(tape, h, p)?;
                    span_loss(tape, &s, &sentence.spans, task.head_config.neg_ratio, 9)
                }
                (_, Head::Seq2seq(p)) => teacher_forced_loss(tape, h, &sentence.tags, p),
            }
        });
        match result {
            Ok(err) => {
                pass &= err < GRAD_TOL;
                parts.push(format!("{name} {err:.1e}"));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{name} error: {e}"));
            }
        }
    }
    let elapsed = t0.elapsed();
    outcome(
        pass && elapsed < GRAD_BUDGET,
        format!(
            "encoder(d_model=8, L=1) + head, h={GRAD_H:.0e}: {} (tol {GRAD_TOL:.0e}), {:.2?} (budget {GRAD_BUDGET:?})",
            parts.join(", "),
            elapsed
        ),
    )
}

fn published_arithmetic() -> Outcome {
    let rows = [
        ("encoder Bert", 0.852, 0.827, 0.839),
        ("encoder BioBert", 0.884, 0.861, 0.872),
        ("encoder PubmedBert", 0.897, 0.879, 0.888),
        ("encoder ClinicalBert", 0.879, 0.856, 0.867),
        ("head CRF", 0.881, 0.863, 0.872),
        ("head Span-based", 0.894, 0.878, 0.886),
        ("head Seq2Seq", 0.867, 0.852, 0.859),
    ];
    let mut worst = 0.0f64;
    let mut bad = Vec::new();
    for (name, p, r, f1) in rows {
        let got = f1_from_pr(p, r).unwrap();
        let d = (got - f1).abs();
        worst = worst.max(d);
        if d > F1_TOL {
            bad.push(format!("{name}: {got:.4} vs {f1}"));
        }
    }
    outcome(
        bad.is_empty(),
        format!(
            "{} published P/R pairs, max |F1 - published| = {worst:.5} (tol {F1_TOL}){}",
            rows.len(),
            if bad.is_empty() { String::new() } else { format!("; off: {}", bad.join(", ")) }
        ),
    )
}

fn random_spans(rng: &mut ChaCha8Rng, classes: usize) -> (usize, Vec<EntitySpan>) {
    let n = rng.gen_range(1..=20);
    let mut spans = Vec::new();
    let mut i = 0;
    while i < n {
        if rng.gen_bool(0.35) {
            let len = rng.gen_range(1..=4.min(n - i));
            spans.push(EntitySpan::new(i, i + len - 1, rng.gen_range(0..classes)));
            i += len;
        } else {
            i += 1;
        }
    }
    (n, spans)
}

fn bio_algebra() -> Outcome {
    let scheme = TagScheme::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = 0;
    let mut total_spans = 0;
    for _ in 0..BIO_CASES {
        let (n, spans) = random_spans(&mut rng, scheme.num_classes());
        total_spans += spans.len();
        let tags = spans_to_tags(&spans, n, &scheme).unwrap();
        let back = tags_to_spans(&tags, &scheme, DecodeMode::Strict).unwrap();
        if back != spans {
            failures += 1;
        }
    }
    let d = scheme.class_index("Undetermined").unwrap();
    let tags = [0, scheme.inside(d)];
    let repaired = tags_to_spans(&tags, &scheme, DecodeMode::Repair).unwrap();
    let repair_ok = repaired == vec![EntitySpan::new(1, 1, d)];
    let strict_ok = matches!(
        tags_to_spans(&tags, &scheme, DecodeMode::Strict),
        Err(medner::Error::Bio { index: 1, .. })
    );
    outcome(
        failures == 0 && repair_ok && strict_ok,
        format!(
            "{BIO_CASES} random span sets ({total_spans} spans), round-trip failures {failures}; [O, I-D] repair -> {repaired:?}, strict error at index 1: {strict_ok}"
        ),
    )
}

fn overfit_run() -> (Option<usize>, String) {
    let corpus = generate_synthetic_corpus(OVERFIT_SENTENCES, 1);
    let vocab = build_vocab(&corpus, 1).unwrap();
    let cfg = EncoderConfig::desk(vocab.len());
    let mut ckpt = Checkpoint::new(Model::fresh(vocab, &cfg, 0).unwrap());
    let idx: Vec<usize> = (0..corpus.len()).collect();
    let chunk = TrainConfig {
        steps: OVERFIT_CHUNK,
        head: HeadKind::Crf,
        ..TrainConfig::default()
    };
    let mut done = 0;
    while done < OVERFIT_MAX_STEPS {
        ckpt = train(ckpt, &corpus, &idx, &chunk, &HeadConfig::default()).unwrap().checkpoint;
        done += OVERFIT_CHUNK;
        if evaluate(&ckpt.model, &corpus, &idx).unwrap().entity.micro.f1 == 1.0 {
            return (Some(done), ckpt.to_json().unwrap());
        }
    }
    (None, ckpt.to_json().unwrap())
}

fn overfit_contract() -> Outcome {
    let (a, ja) = overfit_run();
    let (b, jb) = overfit_run();
    let same = a == b && ja == jb;
    outcome(
        a.is_some() && same,
        format!(
            "{OVERFIT_SENTENCES}-sentence corpus, CRF head: train F1 = 1.0 reached at step {} (limit {OVERFIT_MAX_STEPS}); rerun identical: {same}",
            a.map_or("never".to_string(), |s| s.to_string())
        ),
    )
}

struct Bundled {
    corpus: Corpus,
    vocab_corpus: Corpus,
}

fn bundled() -> Bundled {
    let corpus = generate_synthetic_corpus(BUNDLED_SIZE, BUNDLED_SEED);
    let idx = corpus.split_indices(Split::Train);
    let vocab_corpus = Corpus {
        scheme: corpus.scheme.clone(),
        relation_labels: corpus.relation_labels.clone(),
        sentences: idx.iter().map(|&i| corpus.sentences[i].clone()).collect(),
        splits: vec![Split::Train; idx.len()],
    };
    Bundled { corpus, vocab_corpus }
}

/// Random-init and MLM-pretrained starting points for encoder seed `seed`.
fn starting_points(b: &Bundled, seed: u64) -> (Checkpoint, Checkpoint) {
    let vocab = build_vocab(&b.vocab_corpus, 1).unwrap();
    let cfg = EncoderConfig::desk(vocab.len());
    let fresh = Checkpoint::new(Model::fresh(vocab, &cfg, seed).unwrap());
    let seqs: Vec<Vec<u32>> = b
        .vocab_corpus
        .sentences
        .iter()
        .map(|s| SubwordInput::from_sentence(s, &fresh.model.vocab).ids)
        .collect();
    let pc = PretrainConfig {
        seed,
        ..PretrainConfig::default()
    };
    let (pre, _) = pretrain(fresh.clone(), &seqs, &pc).unwrap();
    (fresh, pre)
}

fn pretraining_direction(b: &Bundled, pretrained: &mut BTreeMap<u64, Checkpoint>) -> Outcome {
    let train_idx = b.corpus.split_indices(Split::Train);
    let test_idx = b.corpus.split_indices(Split::Test);
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 0..DIRECTION_SEEDS {
        let (fresh, pre) = starting_points(b, seed);
        pretrained.insert(seed, pre.clone());
        let tc = TrainConfig {
            seed,
            head: HeadKind::Crf,
            ..TrainConfig::default()
        };
        let f1 = |start: Checkpoint| {
            let out = train(start, &b.corpus, &train_idx, &tc, &HeadConfig::default()).unwrap();
            evaluate(&out.checkpoint.model, &b.corpus, &test_idx).unwrap().entity.micro.f1
        };
        let (p, r) = (f1(pre), f1(fresh));
        if p >= r {
            wins += 1;
        }
        pairs.push(format!("{p:.3}/{r:.3}"));
    }
    outcome(
        wins >= DIRECTION_MIN_WINS,
        format!(
            "test F1 pretrained/random per seed [{}]: pretrained >= random in {wins}/{DIRECTION_SEEDS} (need {DIRECTION_MIN_WINS})",
            pairs.join(", ")
        ),
    )
}

fn learning_curve(b: &Bundled, pretrained: &BTreeMap<u64, Checkpoint>) -> Outcome {
    let pre = match pretrained.get(&0) {
        Some(p) => p.clone(),
        None => starting_points(b, 0).1,
    };
    let cc = CurveConfig {
        k: CURVE_K.to_vec(),
        ..CurveConfig::default()
    };
    let curve = run_curve(&b.corpus, &pre, &cc, &TrainConfig::default(), &HeadConfig::default()).unwrap();
    let summary = curve.summary();
    let med: Vec<f64> = summary.iter().map(|s| s.median_f1).collect();
    let monotone = med.windows(2).all(|w| w[1] >= w[0]);
    outcome(
        monotone && curve.rows.len() == CURVE_K.len() * cc.seeds,
        format!(
            "median test F1 over {} seeds: {}",
            cc.seeds,
            summary
                .iter()
                .map(|s| format!("k={} {:.3}", s.k, s.median_f1))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

const CLI_CONFIG: &str = r#"output_dir = "out"

[corpus]
size = 150
seed = 3

[encoder]
d_model = 16
heads = 2
layers = 1
d_ff = 32

[pretrain]
steps = 20
batch_size = 8

[train]
steps = 20
batch_size = 4

[curve]
k = [1, 2]
seeds = 2
"#;

fn run_cli(dir: &Path, args: &[&str], stdin: Option<&Path>) -> Result<Vec<u8>, String> {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_medner"));
    cmd.current_dir(dir).args(args);
    if let Some(p) = stdin {
        cmd.stdin(std::fs::File::open(p).map_err(|e| e.to_string())?);
    }
    let out = cmd.output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{args:?} exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn cli_session(dir: &Path) -> Result<(BTreeMap<PathBuf, Vec<u8>>, bool), String> {
    std::fs::write(dir.join("exp.toml"), CLI_CONFIG).unwrap();
    let base = ["--config", "exp.toml"];
    let mut stdout = Vec::new();
    stdout.extend(run_cli(dir, &["gen-corpus", "--config", "exp.toml"], None)?);
    let corpus = ["--corpus", "out/corpus.conll", "--annotations", "out/corpus.annotations.jsonl"];
    let frozen = tree(&dir.join("out"));
    for (cmd, extra) in [
        ("pretrain", vec![]),
        ("train", vec!["--checkpoint", "out/encoder.json", "--head", "span"]),
        ("eval", vec!["--checkpoint", "out/model.json", "--split", "test"]),
        ("fewshot-curve", vec!["--checkpoint", "out/encoder.json"]),
        ("compare-heads", vec!["--checkpoint", "out/encoder.json", "--steps", "10"]),
    ] {
        let mut args = vec![cmd];
        args.extend(base);
        args.extend(corpus);
        args.extend(extra);
        stdout.extend(run_cli(dir, &args, None)?);
    }
    std::fs::write(dir.join("in.txt"), "the patient has chronic asthma\n\nmetformin treats diabetes\n").unwrap();
    stdout.extend(run_cli(
        dir,
        &["predict", "--checkpoint", "out/model.json", "--input", "in.txt", "--output", "out/pred.jsonl"],
        None,
    )?);
    stdout.extend(run_cli(dir, &["predict", "--checkpoint", "out/model.json"], Some(&dir.join("in.txt")))?);
    std::fs::write(dir.join("out/stdout.txt"), &stdout).unwrap();
    let after = tree(&dir.join("out"));
    let inputs_untouched = frozen.iter().all(|(k, v)| after.get(k) == Some(v));
    Ok((after, inputs_untouched))
}

fn cli_determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ra, rb) = match (cli_session(a.path()), cli_session(b.path())) {
        (Ok(x), Ok(y)) => (x, y),
        (Err(e), _) | (_, Err(e)) => return outcome(false, format!("subcommand failed: {e}")),
    };
    let differing: Vec<String> = ra
        .0
        .keys()
        .chain(rb.0.keys())
        .filter(|k| ra.0.get(*k) != rb.0.get(*k))
        .map(|k| k.display().to_string())
        .collect();
    outcome(
        differing.is_empty() && ra.1 && rb.1,
        format!(
            "7 subcommands run twice in separate directories: {} output files, differing {:?}, inputs untouched: {}",
            ra.0.len(),
            differing,
            ra.1 && rb.1
        ),
    )
}

fn normalization_identity() -> Outcome {
    let mut worst = 0.0f64;
    let instances = oracle_instances();
    for inst in &instances {
        let log_z = inst.scores().log_partition();
        let total: f64 = inst.sequences().iter().map(|y| (inst.score(y) - log_z).exp()).sum();
        worst = worst.max((total - 1.0).abs());
    }
    outcome(
        worst <= NORMALIZATION_TOL,
        format!(
            "{} oracle instances, max |sum exp(score - logZ) - 1| = {worst:.2e} (tol {NORMALIZATION_TOL:.0e})",
            instances.len()
        ),
    )
}

fn main() {
    let t0 = Instant::now();
    let b = bundled();
    let mut pretrained = BTreeMap::new();
    let mut results: Vec<(&str, Outcome)> = vec![
        ("crf-oracle-equivalence", crf_oracle_equivalence()),
        ("gradient-suite", gradient_suite()),
        ("published-f1-arithmetic", published_arithmetic()),
        ("bio-algebra", bio_algebra()),
        ("overfit-contract", overfit_contract()),
    ];
    results.push(("pretraining-direction", pretraining_direction(&b, &mut pretrained)));
    results.push(("learning-curve-shape", learning_curve(&b, &pretrained)));
    results.push(("cli-determinism", cli_determinism()));
    results.push(("normalization-identity", normalization_identity()));

    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!("{} [{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    println!(
        "acceptance: {}/{} criteria passed in {:.1?}",
        results.len() - failed,
        results.len(),
        t0.elapsed()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
