//! k-shot support sets and learning curves.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Split};
use crate::error::{Error, Result};
use crate::rng;
use crate::training::{evaluate, train, Checkpoint, HeadConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    /// Sentence indices in selection order.
    pub support: Vec<usize>,
    pub k: usize,
    pub seed: u64,
    /// Classes that could not reach `k` crediting sentences, with the count reached.
    pub shortfall: BTreeMap<usize, usize>,
}

/// Greedy class-covering draw from the train split.
///
/// Selection proceeds in levels: at level `l` every class (in index order)
/// still credited fewer than `l` times takes the next unused sentence from its
/// own seeded permutation, and the sentence credits every class it contains.
/// Levels do not depend on `k`, so a larger `k` extends a smaller one.
pub fn sample_k_shot(corpus: &Corpus, k: usize, seed: u64) -> Episode {
    let classes = corpus.scheme.num_classes();
    let train = corpus.split_indices(Split::Train);
    let mut queues: Vec<Vec<usize>> = (0..classes)
        .map(|c| {
            let mut q: Vec<usize> = train.iter().copied().filter(|&i| corpus.sentences[i].contains_class(c)).collect();
            q.shuffle(&mut rng::stream(seed, c as u64));
            q.reverse();
            q
        })
        .collect();
    let mut used = vec![false; corpus.len()];
    let mut credit = vec![0usize; classes];
    let mut support = Vec::new();
    for level in 1..=k {
        for c in 0..classes {
            if credit[c] >= level {
                continue;
            }
            let next = loop {
                match queues[c].pop() {
                    Some(i) if used[i] => continue,
                    other => break other,
                }
            };
            let Some(i) = next else { continue };
            used[i] = true;
            support.push(i);
            for (c2, n) in credit.iter_mut().enumerate() {
                if corpus.sentences[i].contains_class(c2) {
                    *n += 1;
                }
            }
        }
    }
    let shortfall = credit
        .iter()
        .enumerate()
        .filter(|&(_, &n)| n < k)
        .map(|(c, &n)| (c, n))
        .collect();
    Episode { support, k, seed, shortfall }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurveConfig {
    pub k: Vec<usize>,
    pub seeds: usize,
    /// Root of the per-run seeds; run `j` uses `derive_seed(seed, j)`.
    pub seed: u64,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self {
            k: vec![1, 5, 10, 20, 50, 100],
            seeds: 5,
            seed: 0,
        }
    }
}

impl CurveConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Error::Config {
            key: "curve.k".into(),
            msg: msg.into(),
        };
        if self.k.is_empty() {
            return Err(bad("needs at least one value"));
        }
        if self.k[0] == 0 {
            return Err(bad("values must be positive"));
        }
        if self.k.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("values must be strictly ascending"));
        }
        if self.seeds == 0 {
            return Err(Error::Config {
                key: "curve.seeds".into(),
                msg: "must be positive".into(),
            });
        }
        Ok(())
    }

    pub fn run_seed(&self, j: usize) -> u64 {
        rng::derive_seed(self.seed, j as u64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub k: usize,
    pub seed: u64,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub k: usize,
    pub median_f1: f64,
    pub min_f1: f64,
    pub max_f1: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub rows: Vec<CurveRow>,
    /// Episodes whose train split could not cover every class `k` times.
    pub shortfalls: Vec<(usize, u64, BTreeMap<usize, usize>)>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

impl Curve {
    pub fn summary(&self) -> Vec<CurveSummary> {
        let mut by_k: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            by_k.entry(r.k).or_default().push(r.f1);
        }
        by_k.into_iter()
            .map(|(k, mut f)| {
                f.sort_by(f64::total_cmp);
                CurveSummary {
                    k,
                    median_f1: median(&f),
                    min_f1: f[0],
                    max_f1: f[f.len() - 1],
                }
            })
            .collect()
    }

    pub fn rows_csv(&self) -> String {
        let mut out = String::from("k,seed,precision,recall,f1\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{},{}\n", r.k, r.seed, r.precision, r.recall, r.f1));
        }
        out
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("k,median_f1,min_f1,max_f1\n");
        for s in self.summary() {
            out.push_str(&format!("{},{},{},{}\n", s.k, s.median_f1, s.min_f1, s.max_f1));
        }
        out
    }
}

/// Trains one model per (k, seed) from `pretrained` and scores it on the test
/// split. Runs are independent and merged in (k, seed) order.
pub fn run_curve(
    corpus: &Corpus,
    pretrained: &Checkpoint,
    config: &CurveConfig,
    train_config: &TrainConfig,
    head_config: &HeadConfig,
) -> Result<Curve> {
    config.validate()?;
    train_config.validate()?;
    let test = corpus.split_indices(Split::Test);
    if test.is_empty() {
        return Err(crate::error::contract("the test split is empty"));
    }
    let mut init = pretrained.clone();
    init.model.task = None;
    init.optimizer = None;
    let jobs: Vec<(usize, usize)> = config
        .k
        .iter()
        .flat_map(|&k| (0..config.seeds).map(move |j| (k, j)))
        .collect();
    let runs: Vec<(CurveRow, Episode)> = jobs
        .par_iter()
        .map(|&(k, j)| {
            let seed = config.run_seed(j);
            let episode = sample_k_shot(corpus, k, seed);
            if episode.support.is_empty() {
                return Err(crate::error::contract(format!("no train sentence carries an entity (k={k})")));
            }
            let cfg = TrainConfig {
                seed,
                ..train_config.clone()
            };
            let out = train(init.clone(), corpus, &episode.support, &cfg, head_config)?;
            let report = evaluate(&out.checkpoint.model, corpus, &test)?;
            let row = CurveRow {
                k,
                seed,
                support: episode.support.len(),
                precision: report.entity.micro.precision,
                recall: report.entity.micro.recall,
                f1: report.entity.micro.f1,
            };
            Ok((row, episode))
        })
        .collect::<Result<_>>()?;
    let mut curve = Curve {
        rows: Vec::with_capacity(runs.len()),
        shortfalls: Vec::new(),
    };
    for (row, ep) in runs {
        if !ep.shortfall.is_empty() {
            log::warn!("k={} seed={}: class coverage short {:?}", ep.k, ep.seed, ep.shortfall);
            curve.shortfalls.push((ep.k, ep.seed, ep.shortfall));
        }
        curve.rows.push(row);
    }
    Ok(curve)
}
