//! Exact-match precision, recall and F1 for entities and relations.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::EntitySpan;
use crate::error::{contract, Result};

/// `2pr / (p + r)`, zero when both are zero.
pub fn f1_from_pr(p: f64, r: f64) -> Result<f64> {
    for (name, v) in [("precision", p), ("recall", r)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(contract(format!("{name} {v} outside [0, 1]")));
        }
    }
    Ok(if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) })
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Scores {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        Self {
            tp,
            fp,
            fn_,
            precision,
            recall,
            f1: f1_from_pr(precision, recall).expect("ratios lie in [0, 1]"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub name: String,
    #[serde(flatten)]
    pub scores: Scores,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_class: Vec<ClassScores>,
    pub micro: Scores,
    pub macro_f1: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub token_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub invalid_transition_rate: Option<f64>,
}

impl EvalReport {
    fn from_class_counts(names: &[String], counts: &[[usize; 3]]) -> Self {
        let per_class: Vec<ClassScores> = names
            .iter()
            .zip(counts)
            .map(|(name, &[tp, fp, fn_])| ClassScores {
                name: name.clone(),
                scores: Scores::from_counts(tp, fp, fn_),
            })
            .collect();
        let sum = |i: usize| counts.iter().map(|c| c[i]).sum::<usize>();
        let macro_f1 = if per_class.is_empty() {
            0.0
        } else {
            per_class.iter().map(|c| c.scores.f1).sum::<f64>() / per_class.len() as f64
        };
        Self {
            per_class,
            micro: Scores::from_counts(sum(0), sum(1), sum(2)),
            macro_f1,
            token_accuracy: None,
            invalid_transition_rate: None,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Counts matches of hashable items, keyed to a class by `class_of`.
fn score_sets<T: Ord + Clone>(
    gold: &[Vec<T>],
    pred: &[Vec<T>],
    names: &[String],
    class_of: impl Fn(&T) -> Result<usize>,
) -> Result<EvalReport> {
    if gold.len() != pred.len() {
        return Err(contract(format!(
            "{} gold sentences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut counts = vec![[0usize; 3]; names.len()];
    for (g, p) in gold.iter().zip(pred) {
        let g: BTreeSet<T> = g.iter().cloned().collect();
        let p: BTreeSet<T> = p.iter().cloned().collect();
        for item in &p {
            counts[class_of(item)?][if g.contains(item) { 0 } else { 1 }] += 1;
        }
        for item in g.difference(&p) {
            counts[class_of(item)?][2] += 1;
        }
    }
    Ok(EvalReport::from_class_counts(names, &counts))
}

/// Micro-averaged exact-match entity scores. Duplicate predictions within a
/// sentence count once.
pub fn entity_prf(gold: &[Vec<EntitySpan>], pred: &[Vec<EntitySpan>], classes: &[String]) -> Result<EvalReport> {
    score_sets(gold, pred, classes, |s| {
        if s.cls < classes.len() {
            Ok(s.cls)
        } else {
            Err(contract(format!("span class {} outside {} classes", s.cls, classes.len())))
        }
    })
}

/// A relation identified by its argument spans rather than span indices.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RelationTriple {
    pub head: EntitySpan,
    pub tail: EntitySpan,
    pub label: String,
}

/// Micro-averaged exact-match relation scores, per label. `labels` should
/// omit `no-relation`.
pub fn relation_prf(gold: &[Vec<RelationTriple>], pred: &[Vec<RelationTriple>], labels: &[String]) -> Result<EvalReport> {
    score_sets(gold, pred, labels, |t| {
        labels
            .iter()
            .position(|l| *l == t.label)
            .ok_or_else(|| contract(format!("unknown relation label {:?}", t.label)))
    })
}

/// Fraction of positions where the two tag sequences agree.
pub fn token_accuracy(gold: &[Vec<usize>], pred: &[Vec<usize>]) -> Result<f64> {
    if gold.len() != pred.len() {
        return Err(contract("token_accuracy over misaligned batches"));
    }
    let (mut right, mut total) = (0usize, 0usize);
    for (g, p) in gold.iter().zip(pred) {
        if g.len() != p.len() {
            return Err(contract(format!("{} gold tags but {} predicted", g.len(), p.len())));
        }
        right += g.iter().zip(p).filter(|(a, b)| a == b).count();
        total += g.len();
    }
    Ok(ratio(right, total))
}

fn pct(x: f64) -> String {
    format!("{:.1}%", 100.0 * x)
}

/// Markdown comparison table with one row per method.
pub fn markdown_table(rows: &[(String, &Scores)]) -> String {
    let mut out = String::from("| Method | Precision | Recall | F1-Score |\n|---|---|---|---|\n");
    for (method, s) in rows {
        out.push_str(&format!(
            "| {method} | {} | {} | {} |\n",
            pct(s.precision),
            pct(s.recall),
            pct(s.f1)
        ));
    }
    out
}
