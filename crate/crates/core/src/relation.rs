//! Relation classification over ordered entity pairs: mean-pooled entity
//! states, concatenated and mapped affinely to relation logits.

use rand::Rng;

use crate::corpus::{EntitySpan, RelationInstance, NO_RELATION};
use crate::encoder::{xavier, zeros_param};
use crate::error::{contract, Result};
use crate::tensor::{argmax, Module, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct RelationHeadParams {
    pub w: Tensor,
    pub b: Tensor,
    /// Output labels; index 0 is `no-relation`.
    pub labels: Vec<String>,
}

impl RelationHeadParams {
    pub fn init(d_model: usize, labels: Vec<String>, rng: &mut impl Rng) -> Result<Self> {
        if labels.len() < 2 || labels[0] != NO_RELATION {
            return Err(contract(format!(
                "relation labels must start with {NO_RELATION:?} and have at least 2 entries"
            )));
        }
        let r = labels.len();
        Ok(Self {
            w: xavier(rng, 2 * d_model, r),
            b: zeros_param(&[r]),
            labels,
        })
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

impl Module for RelationHeadParams {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("w".into(), &self.w), ("b".into(), &self.b)]
    }

    fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![("w".into(), &mut self.w), ("b".into(), &mut self.b)]
    }
}

/// Mean of rows `start..=end` of `h`, as a `1 x d` row.
pub fn entity_pool(tape: &mut Tape, h: Var, span: &EntitySpan) -> Result<Var> {
    let (n, _) = tape.dims(h);
    if span.start > span.end || span.end >= n {
        return Err(contract(format!("span ({}, {}) outside {n} tokens", span.start, span.end)));
    }
    let len = span.end - span.start + 1;
    let rows = tape.gather_rows(h, &(span.start..=span.end).collect::<Vec<_>>())?;
    let avg = tape.constant(1, len, vec![1.0 / len as f64; len])?;
    tape.matmul(avg, rows)
}

/// Logits `[1 x R]` for the ordered pair `(e1, e2)`.
pub fn relation_logits(tape: &mut Tape, e1: Var, e2: Var, params: &RelationHeadParams) -> Result<Var> {
    let x = tape.concat_cols(&[e1, e2])?;
    let w = tape.param(&params.w);
    let b = tape.param(&params.b);
    let logits = tape.matmul(x, w)?;
    tape.add_row(logits, b)
}

/// Mean cross-entropy over `(head, tail, gold label)` triples.
pub fn relation_loss(tape: &mut Tape, pairs: &[(Var, Var, &str)], params: &RelationHeadParams) -> Result<Var> {
    if pairs.is_empty() {
        return Err(contract("relation_loss needs at least one pair"));
    }
    let mut rows = Vec::with_capacity(pairs.len());
    let mut targets = Vec::with_capacity(pairs.len());
    for &(e1, e2, label) in pairs {
        let t = params
            .label_index(label)
            .ok_or_else(|| contract(format!("unknown relation label {label:?}")))?;
        rows.push(relation_logits(tape, e1, e2, params)?);
        targets.push(t);
    }
    let logits = if rows.len() == 1 { rows[0] } else { tape.concat_rows(&rows)? };
    tape.cross_entropy(logits, &targets)
}

/// Training pairs for one sentence: every ordered pair of distinct spans,
/// labeled with its annotated relation or `no-relation`.
pub fn gold_pairs(spans: &[EntitySpan], relations: &[RelationInstance]) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    for head in 0..spans.len() {
        for tail in 0..spans.len() {
            if head == tail {
                continue;
            }
            let label = relations
                .iter()
                .find(|r| r.head == head && r.tail == tail)
                .map_or(NO_RELATION, |r| r.label.as_str());
            out.push((head, tail, label.to_string()));
        }
    }
    out
}

/// Loss over [`gold_pairs`]; `None` when the sentence has fewer than two spans.
pub fn sentence_relation_loss(
    tape: &mut Tape,
    h: Var,
    spans: &[EntitySpan],
    relations: &[RelationInstance],
    params: &RelationHeadParams,
) -> Result<Option<Var>> {
    let pairs = gold_pairs(spans, relations);
    if pairs.is_empty() {
        return Ok(None);
    }
    let pooled = spans.iter().map(|s| entity_pool(tape, h, s)).collect::<Result<Vec<_>>>()?;
    let triples: Vec<(Var, Var, &str)> = pairs
        .iter()
        .map(|(a, b, l)| (pooled[*a], pooled[*b], l.as_str()))
        .collect();
    relation_loss(tape, &triples, params).map(Some)
}

/// Argmax relation for every ordered pair of distinct spans, omitting
/// `no-relation`.
pub fn predict_relations(tape: &mut Tape, h: Var, spans: &[EntitySpan], params: &RelationHeadParams) -> Result<Vec<RelationInstance>> {
    let pooled = spans.iter().map(|s| entity_pool(tape, h, s)).collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for head in 0..spans.len() {
        for tail in 0..spans.len() {
            if head == tail {
                continue;
            }
            let logits = relation_logits(tape, pooled[head], pooled[tail], params)?;
            let best = argmax(tape.value(logits));
            if best != 0 {
                out.push(RelationInstance {
                    head,
                    tail,
                    label: params.labels[best].clone(),
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::RELATION_LABELS;
    use crate::encoder::{encode, init_params, EncoderConfig, EncoderParams, Mode};
    use crate::rng;
    use crate::tensor::finite_diff_check;

    fn labels() -> Vec<String> {
        RELATION_LABELS.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn pooling_examples() {
        let mut tape = Tape::new();
        let h = tape.constant(3, 2, vec![1.0, 3.0, 3.0, 5.0, -9.0, 0.5]).unwrap();
        let single = entity_pool(&mut tape, h, &EntitySpan::new(2, 2, 0)).unwrap();
        assert_eq!(tape.value(single), &[-9.0, 0.5]);
        let pair = entity_pool(&mut tape, h, &EntitySpan::new(0, 1, 0)).unwrap();
        assert_eq!(tape.value(pair), &[2.0, 4.0]);
        assert!(entity_pool(&mut tape, h, &EntitySpan::new(1, 3, 0)).is_err());

        let c = tape.constant(4, 2, [0.25, -1.5].repeat(4)).unwrap();
        let all = entity_pool(&mut tape, c, &EntitySpan::new(0, 3, 1)).unwrap();
        assert_eq!(tape.value(all), &[0.25, -1.5]);
    }

    #[test]
    fn pooling_ignores_row_order() {
        let mut tape = Tape::new();
        let a = tape.constant(3, 1, vec![0.1, 0.7, 0.2]).unwrap();
        let b = tape.constant(3, 1, vec![0.7, 0.2, 0.1]).unwrap();
        let span = EntitySpan::new(0, 2, 0);
        let pa = entity_pool(&mut tape, a, &span).unwrap();
        let pb = entity_pool(&mut tape, b, &span).unwrap();
        assert!((tape.value(pa)[0] - tape.value(pb)[0]).abs() < 1e-15);
    }

    #[test]
    fn logits_examples() {
        let mut p = RelationHeadParams::init(1, labels(), &mut rng::seeded(0)).unwrap();
        p.w.values_mut().fill(0.0);
        p.b.values_mut().copy_from_slice(&[0.1, 0.2, 0.3]);
        let mut tape = Tape::new();
        let e1 = tape.constant(1, 1, vec![2.0]).unwrap();
        let e2 = tape.constant(1, 1, vec![-1.0]).unwrap();
        let l = relation_logits(&mut tape, e1, e2, &p).unwrap();
        assert_eq!(tape.value(l), &[0.1, 0.2, 0.3]);

        // rows: [1, 0, 2] for e1, [0, 3, -1] for e2
        p.w.values_mut().copy_from_slice(&[1.0, 0.0, 2.0, 0.0, 3.0, -1.0]);
        p.b.values_mut().fill(0.0);
        let mut tape = Tape::new();
        let e1 = tape.constant(1, 1, vec![2.0]).unwrap();
        let e2 = tape.constant(1, 1, vec![-1.0]).unwrap();
        let fwd = relation_logits(&mut tape, e1, e2, &p).unwrap();
        assert_eq!(tape.value(fwd), &[2.0, -3.0, 5.0]);
        let rev = relation_logits(&mut tape, e2, e1, &p).unwrap();
        assert_eq!(tape.value(rev), &[-1.0, 6.0, -4.0]);
    }

    #[test]
    fn loss_examples() {
        let mut p = RelationHeadParams::init(2, labels(), &mut rng::seeded(0)).unwrap();
        p.w.values_mut().fill(0.0);
        let mut tape = Tape::new();
        let e = tape.constant(1, 2, vec![1.0, 2.0]).unwrap();
        let l = relation_loss(&mut tape, &[(e, e, "treats"), (e, e, NO_RELATION)], &p).unwrap();
        assert_eq!(tape.scalar(l), 3f64.ln());
        assert!(relation_loss(&mut tape, &[(e, e, "prevents")], &p).is_err());
        assert!(relation_loss(&mut tape, &[], &p).is_err());

        p.b.values_mut().copy_from_slice(&[0.0, 50.0, 0.0]);
        let mut tape = Tape::new();
        let e = tape.constant(1, 2, vec![1.0, 2.0]).unwrap();
        let l = relation_loss(&mut tape, &[(e, e, "treats")], &p).unwrap();
        assert!(tape.scalar(l) < 1e-20);
    }

    #[test]
    fn prediction_counts() {
        let mut p = RelationHeadParams::init(2, labels(), &mut rng::seeded(1)).unwrap();
        p.w.values_mut().fill(0.0);
        p.b.values_mut().copy_from_slice(&[0.0, 1.0, 0.0]);
        let mut tape = Tape::new();
        let h = tape.constant(6, 2, vec![0.3; 12]).unwrap();
        let spans: Vec<EntitySpan> = (0..3).map(|i| EntitySpan::new(2 * i, 2 * i, 0)).collect();
        assert!(predict_relations(&mut tape, h, &spans[..1], &p).unwrap().is_empty());
        assert!(predict_relations(&mut tape, h, &[], &p).unwrap().is_empty());
        let two = predict_relations(&mut tape, h, &spans[..2], &p).unwrap();
        assert_eq!(two.len(), 2);
        let three = predict_relations(&mut tape, h, &spans, &p).unwrap();
        assert_eq!(three.len(), 6);
        assert!(three.iter().all(|r| r.head != r.tail && r.label == "treats"));

        p.b.values_mut().copy_from_slice(&[1.0, 0.0, 0.0]);
        let mut tape = Tape::new();
        let h = tape.constant(6, 2, vec![0.3; 12]).unwrap();
        assert!(predict_relations(&mut tape, h, &spans, &p).unwrap().is_empty());
    }

    #[test]
    fn gold_pair_labels() {
        let spans = [EntitySpan::new(0, 0, 0), EntitySpan::new(2, 3, 1)];
        let rels = [RelationInstance {
            head: 1,
            tail: 0,
            label: "causes".into(),
        }];
        let pairs = gold_pairs(&spans, &rels);
        assert_eq!(pairs, vec![(0, 1, NO_RELATION.to_string()), (1, 0, "causes".to_string())]);
    }

    struct Joint {
        enc: EncoderParams,
        rel: RelationHeadParams,
    }

    impl Module for Joint {
        fn named_tensors(&self) -> Vec<(String, &Tensor)> {
            let mut v = self.enc.named_tensors();
            v.extend(self.rel.named_tensors());
            v
        }
        fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
            let mut v = self.enc.named_tensors_mut();
            v.extend(self.rel.named_tensors_mut());
            v
        }
    }

    #[test]
    fn end_to_end_gradient() {
        let cfg = EncoderConfig {
            vocab_size: 10,
            d_model: 8,
            heads: 2,
            layers: 1,
            d_ff: 8,
            max_len: 4,
            dropout: 0.0,
        };
        let mut m = Joint {
            enc: init_params(&cfg, 4).unwrap(),
            rel: RelationHeadParams::init(8, labels(), &mut rng::seeded(4)).unwrap(),
        };
        let spans = [EntitySpan::new(0, 1, 0), EntitySpan::new(3, 3, 2)];
        let rels = [RelationInstance {
            head: 0,
            tail: 1,
            label: "treats".into(),
        }];
        let err = finite_diff_check(&mut m, 1e-5, |m, tape| {
            let h = encode(tape, &m.enc, &[4, 7, 5, 9], Mode::Eval)?;
            Ok(sentence_relation_loss(tape, h, &spans, &rels, &m.rel)?.expect("two spans"))
        })
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
