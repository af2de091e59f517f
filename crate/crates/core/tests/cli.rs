use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"output_dir = "out"

[corpus]
size = 60
seed = 2

[encoder]
d_model = 16
heads = 2
layers = 1
d_ff = 32

[pretrain]
steps = 5
batch_size = 4

[train]
steps = 5
batch_size = 4
"#;

fn medner(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_medner"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn empty_corpus_is_not_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = medner(dir.path(), &["gen-corpus", "--size", "0", "-o", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(dir.path().join("out/corpus.conll")).unwrap(), "");
    assert_eq!(std::fs::read_to_string(dir.path().join("out/corpus.annotations.jsonl")).unwrap(), "");
}

#[test]
fn unknown_flag_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = medner(dir.path(), &["train", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--bogus"));
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = medner(dir.path(), &["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("fewshot-curve"));
}

#[test]
fn bad_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), "[train]\nlearning_rat = 0.1\n").unwrap();
    let o = medner(dir.path(), &["gen-corpus", "--config", "c.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learning_rat"), "{}", stderr(&o));

    std::fs::write(dir.path().join("c.toml"), "[train]\nlearning_rate = -1.0\n").unwrap();
    let o = medner(dir.path(), &["gen-corpus", "--config", "c.toml"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("train.learning_rate"), "{}", stderr(&o));
}

#[test]
fn missing_inputs_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let o = medner(dir.path(), &["eval", "--checkpoint", "nope.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nope.json"));
    let o = medner(dir.path(), &["train", "--corpus", "missing.conll"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn corrupt_checkpoint_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.json"), "{\"format\": 3").unwrap();
    let o = medner(dir.path(), &["predict", "--checkpoint", "bad.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("corrupt"), "{}", stderr(&o));
}

#[test]
fn train_then_predict() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.toml"), SMALL).unwrap();
    let o = medner(d, &["gen-corpus", "--config", "c.toml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let corpus = std::fs::read(d.join("out/corpus.conll")).unwrap();
    let args = [
        "train",
        "--config",
        "c.toml",
        "--corpus",
        "out/corpus.conll",
        "--annotations",
        "out/corpus.annotations.jsonl",
    ];
    let o = medner(d, &args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(std::fs::read(d.join("out/corpus.conll")).unwrap(), corpus);
    let log = std::fs::read_to_string(d.join("out/train_loss.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("step,loss,ner_loss,re_loss"));
    assert_eq!(log.lines().count(), 6);
    assert!(d.join("out/train.config.toml").is_file());

    std::fs::write(d.join("in.txt"), "patient with chronic asthma\n").unwrap();
    let o = medner(d, &["predict", "--checkpoint", "out/model.json", "--input", "in.txt"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(line["tokens"].as_array().unwrap().len(), 4);
    assert_eq!(line["tags"].as_array().unwrap().len(), 4);
}

#[test]
fn refuses_to_overwrite_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("c.toml"), SMALL).unwrap();
    assert!(medner(d, &["gen-corpus", "--config", "c.toml"]).status.success());
    let corpus = ["--corpus", "out/corpus.conll", "--annotations", "out/corpus.annotations.jsonl"];
    let mut args = vec!["train", "--config", "c.toml"];
    args.extend(corpus);
    assert!(medner(d, &args).status.success());
    let before = std::fs::read(d.join("out/model.json")).unwrap();
    // continuing from out/model.json would write the result over it
    args.extend(["--checkpoint", "out/model.json"]);
    let o = medner(d, &args);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("refusing to overwrite"));
    assert_eq!(std::fs::read(d.join("out/model.json")).unwrap(), before);
}
