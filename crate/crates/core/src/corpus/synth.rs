//! Template grammar producing pseudo-clinical sentences with gold entities of
//! the four default disease classes and directed relations between them.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Corpus, EntitySpan, RelationInstance, Sentence, SynonymLexicon, TagScheme};

pub const RELATION_LABELS: [&str; 3] = ["no-relation", "treats", "causes"];

const SPECIFIC: &[&str] = &[
    "lung cancer",
    "breast cancer",
    "cystic fibrosis",
    "asthma",
    "diabetes mellitus",
    "huntington disease",
    "tuberculosis",
    "influenza",
    "colorectal carcinoma",
    "multiple sclerosis",
    "rheumatoid arthritis",
    "parkinson disease",
    "sickle cell anemia",
    "myocardial infarction",
    "hemophilia a",
    "acute myeloid leukemia",
];

const COMPOSITE: &[&str] = &[
    "breast and ovarian cancer",
    "kidney and liver disease",
    "colon and rectal tumors",
    "heart and lung disease",
    "skin and bone infections",
    "ovarian and uterine cancers",
    "brain and spinal tumors",
];

const MODIFIER: &[&str] = &[
    "cancer",
    "diabetic",
    "tumor",
    "asthmatic",
    "hemophilia",
    "leukemia",
    "arthritis",
    "tuberculosis",
];
const MODIFIER_HEADS: &[&str] = &["patients", "cells", "carriers", "families", "cohorts", "mice"];

const UNDETERMINED: &[&str] = &["disease", "disorder", "syndrome", "illness", "condition", "deficiency"];
const UNDETERMINED_LEADS: &[&str] = &["the", "this", "a rare", "an inherited", "a chronic"];

const SINGLE: &[&str] = &[
    "patients with {X} were enrolled in the study .",
    "{X} was observed in {N} cases .",
    "the prevalence of {X} increased over time .",
    "we report a case of {X} .",
    "mutations in this gene are linked to {X} .",
    "early diagnosis of {X} improves survival .",
    "screening for {X} was performed in {N} adults .",
];

const CAUSES: &[&str] = &[
    "{X} is a major cause of {Y} .",
    "{X} frequently leads to {Y} in adults .",
    "{Y} develops as a complication of {X} .",
];

const TREATS: &[&str] = &[
    "therapy for {X} also relieves {Y} .",
    "drugs against {X} were effective for {Y} .",
    "{Y} improved after treatment of {X} .",
];

const UNRELATED: &[&str] = &[
    "{X} and {Y} were both reported in {N} patients .",
    "{X} was more common than {Y} .",
    "neither {X} nor {Y} was detected .",
];

const EMPTY: &[&str] = &[
    "the study enrolled {N} healthy volunteers .",
    "no adverse events were recorded .",
    "follow up lasted {N} months .",
];

struct Builder<'a> {
    tokens: Vec<String>,
    spans: Vec<EntitySpan>,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn pick<'s>(&mut self, options: &[&'s str]) -> &'s str {
        options.choose(self.rng).expect("nonempty option list")
    }

    fn words(&mut self, text: &str) {
        self.tokens.extend(text.split_whitespace().map(str::to_string));
    }

    fn entity(&mut self, text: &str, cls: usize) -> usize {
        let start = self.tokens.len();
        self.words(text);
        self.spans.push(EntitySpan::new(start, self.tokens.len() - 1, cls));
        self.spans.len() - 1
    }

    /// Realizes a noun phrase of a uniformly drawn class; returns its span index.
    fn mention(&mut self) -> usize {
        let cls = self.rng.gen_range(0..4);
        match cls {
            0 => {
                let e = self.pick(SPECIFIC);
                self.entity(e, 0)
            }
            1 => {
                let e = self.pick(COMPOSITE);
                self.entity(e, 1)
            }
            2 => {
                let e = self.pick(MODIFIER);
                let head = self.pick(MODIFIER_HEADS);
                let idx = self.entity(e, 2);
                self.words(head);
                idx
            }
            _ => {
                let lead = self.pick(UNDETERMINED_LEADS);
                let e = self.pick(UNDETERMINED);
                self.words(lead);
                self.entity(e, 3)
            }
        }
    }

    /// Expands a template; returns span indices bound to `{X}` and `{Y}`.
    fn expand(&mut self, template: &str) -> (Option<usize>, Option<usize>) {
        let (mut x, mut y) = (None, None);
        for piece in template.split_whitespace() {
            match piece {
                "{X}" => x = Some(self.mention()),
                "{Y}" => y = Some(self.mention()),
                "{N}" => {
                    let n = self.rng.gen_range(2..100);
                    self.tokens.push(n.to_string());
                }
                w => self.tokens.push(w.to_string()),
            }
        }
        (x, y)
    }
}

fn sentence(rng: &mut ChaCha8Rng, scheme: &TagScheme) -> Sentence {
    let roll: f64 = rng.gen();
    let (templates, label) = match roll {
        r if r < 0.45 => (SINGLE, None),
        r if r < 0.60 => (CAUSES, Some("causes")),
        r if r < 0.75 => (TREATS, Some("treats")),
        r if r < 0.90 => (UNRELATED, None),
        _ => (EMPTY, None),
    };
    let template = *templates.choose(rng).expect("templates");
    let mut b = Builder {
        tokens: Vec::new(),
        spans: Vec::new(),
        rng,
    };
    let (x, y) = b.expand(template);
    let relations = match (label, x, y) {
        (Some(label), Some(head), Some(tail)) => vec![RelationInstance {
            head,
            tail,
            label: label.to_string(),
        }],
        _ => Vec::new(),
    };

    // Span indices follow sentence order.
    let mut order: Vec<usize> = (0..b.spans.len()).collect();
    order.sort_by_key(|&i| b.spans[i].start);
    let remap = |old: usize| order.iter().position(|&o| o == old).expect("span index");
    let spans: Vec<EntitySpan> = order.iter().map(|&i| b.spans[i]).collect();
    let relations = relations
        .into_iter()
        .map(|r| RelationInstance {
            head: remap(r.head),
            tail: remap(r.tail),
            label: r.label,
        })
        .collect();

    let words: Vec<&str> = b.tokens.iter().map(String::as_str).collect();
    Sentence::from_spans(&words, spans, relations, scheme).expect("grammar emits valid sentences")
}

/// Generates `size` sentences deterministically from `seed`, split 72/11/17.
pub fn generate_synthetic_corpus(size: usize, seed: u64) -> Corpus {
    let scheme = TagScheme::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sentences = (0..size).map(|_| sentence(&mut rng, &scheme)).collect();
    Corpus::new(
        scheme,
        RELATION_LABELS.iter().map(|s| s.to_string()).collect(),
        sentences,
    )
    .expect("generated corpus is valid")
}

/// Synonyms for surfaces the generator emits.
pub fn default_lexicon() -> SynonymLexicon {
    let pairs: &[(&str, &[&str])] = &[
        ("lung cancer", &["pulmonary carcinoma", "lung carcinoma"]),
        ("breast cancer", &["mammary carcinoma"]),
        ("asthma", &["bronchial asthma"]),
        ("diabetes mellitus", &["diabetes"]),
        ("influenza", &["flu", "seasonal influenza"]),
        ("myocardial infarction", &["heart attack"]),
        ("tuberculosis", &["tb"]),
        ("colorectal carcinoma", &["colorectal cancer", "bowel cancer"]),
        ("kidney and liver disease", &["renal and hepatic disease"]),
        ("cancer", &["carcinoma"]),
        ("tumor", &["neoplasm"]),
        ("disorder", &["disease"]),
        ("illness", &["sickness"]),
    ];
    SynonymLexicon::new(
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect())),
    )
    .expect("nonempty alternates")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_size() {
        let c = generate_synthetic_corpus(0, 1);
        assert!(c.is_empty());
        assert!(c.splits.is_empty());
    }

    #[test]
    fn deterministic_by_seed() {
        assert_eq!(generate_synthetic_corpus(50, 9), generate_synthetic_corpus(50, 9));
        assert_ne!(generate_synthetic_corpus(50, 9), generate_synthetic_corpus(50, 10));
    }

    #[test]
    fn classes_balanced_at_scale() {
        let c = generate_synthetic_corpus(1000, 7);
        let counts = c.class_counts();
        let total: usize = counts.iter().sum();
        for (cls, &n) in counts.iter().enumerate() {
            assert!(n >= 150, "class {cls} has {n}");
            assert!(n as f64 >= 0.15 * total as f64);
        }
    }

    #[test]
    fn entities_are_short_and_relations_present() {
        let c = generate_synthetic_corpus(300, 2);
        assert!(c.sentences.iter().flat_map(|s| &s.spans).all(|sp| sp.len() <= 4));
        let rels: usize = c.sentences.iter().map(|s| s.relations.len()).sum();
        assert!(rels > 30);
        for s in &c.sentences {
            for r in &s.relations {
                assert!(r.label == "treats" || r.label == "causes");
            }
        }
    }
}
