//! Sentences, BIO tag algebra, file formats, tokenization, synthetic data and
//! augmentation.

mod augment;
mod io;
mod synth;
mod vocab;

pub use augment::{augment, AugmentMode, SynonymLexicon};
pub use io::{
    load_annotations, load_conll, load_corpus, parse_conll, save_annotations, save_conll,
    write_annotations, write_conll,
};
pub use synth::{default_lexicon, generate_synthetic_corpus, RELATION_LABELS};
pub use vocab::{build_vocab, tokenize_subword, Vocab, RESERVED_COUNT, ENT_MASK, MASK, PAD, UNK};

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};

/// Label of the implicit "no relation" class, always at index 0.
pub const NO_RELATION: &str = "no-relation";

/// Entity classes and the derived BIO tag set.
///
/// Tag indices: `O` is 0, `B-c` is `1 + 2i` and `I-c` is `2 + 2i` for class `i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagScheme {
    classes: Vec<String>,
}

impl Default for TagScheme {
    fn default() -> Self {
        Self::new(["Specific", "Composite", "Modifier", "Undetermined"]).expect("default classes")
    }
}

/// Decoded meaning of a tag index.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Tag {
    Outside,
    Begin(usize),
    Inside(usize),
}

impl TagScheme {
    pub fn new<S: Into<String>>(classes: impl IntoIterator<Item = S>) -> Result<Self> {
        let classes: Vec<String> = classes.into_iter().map(Into::into).collect();
        for (i, c) in classes.iter().enumerate() {
            if c.is_empty() || c.chars().any(char::is_whitespace) {
                return Err(contract(format!("invalid class name {c:?}")));
            }
            if classes[..i].contains(c) {
                return Err(contract(format!("duplicate class {c:?}")));
            }
        }
        Ok(Self { classes })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn num_tags(&self) -> usize {
        2 * self.classes.len() + 1
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn begin(&self, cls: usize) -> usize {
        1 + 2 * cls
    }

    pub fn inside(&self, cls: usize) -> usize {
        2 + 2 * cls
    }

    pub fn decode(&self, tag: usize) -> Tag {
        match tag {
            0 => Tag::Outside,
            t if t % 2 == 1 => Tag::Begin((t - 1) / 2),
            t => Tag::Inside((t - 2) / 2),
        }
    }

    pub fn tag_name(&self, tag: usize) -> String {
        match self.decode(tag) {
            Tag::Outside => "O".to_string(),
            Tag::Begin(c) => format!("B-{}", self.classes[c]),
            Tag::Inside(c) => format!("I-{}", self.classes[c]),
        }
    }

    pub fn parse_tag(&self, name: &str) -> Option<usize> {
        if name == "O" {
            return Some(0);
        }
        let (prefix, cls) = name.split_once('-')?;
        let cls = self.class_index(cls)?;
        match prefix {
            "B" => Some(self.begin(cls)),
            "I" => Some(self.inside(cls)),
            _ => None,
        }
    }

    /// True when `tag` may follow `prev` (`None` is the sequence start).
    pub fn is_valid_transition(&self, prev: Option<usize>, tag: usize) -> bool {
        match self.decode(tag) {
            Tag::Inside(c) => matches!(
                prev.map(|p| self.decode(p)),
                Some(Tag::Begin(p) | Tag::Inside(p)) if p == c
            ),
            _ => true,
        }
    }
}

/// Inclusive token range with an entity class index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub cls: usize,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, cls: usize) -> Self {
        Self { start, end, cls }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start <= other.end && other.start <= self.end
    }
}

/// Directed relation between two spans of the same sentence, by span index.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RelationInstance {
    pub head: usize,
    pub tail: usize,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub surface: String,
    /// Filled in by tokenization; empty until then.
    #[serde(default)]
    pub subword_ids: Vec<u32>,
}

impl Token {
    pub fn new(surface: impl Into<String>) -> Self {
        Self {
            surface: surface.into(),
            subword_ids: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub tokens: Vec<Token>,
    pub tags: Vec<usize>,
    pub spans: Vec<EntitySpan>,
    pub relations: Vec<RelationInstance>,
}

impl Sentence {
    /// Builds a sentence from surfaces and spans, deriving the tags.
    pub fn from_spans(
        surfaces: &[&str],
        spans: Vec<EntitySpan>,
        relations: Vec<RelationInstance>,
        scheme: &TagScheme,
    ) -> Result<Self> {
        let tags = spans_to_tags(&spans, surfaces.len(), scheme)?;
        let s = Self {
            tokens: surfaces.iter().map(|&w| Token::new(w)).collect(),
            tags,
            spans,
            relations,
        };
        s.validate(scheme)?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surfaces(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.surface.as_str()).collect()
    }

    pub fn span_surface(&self, span: &EntitySpan) -> String {
        self.tokens[span.start..=span.end]
            .iter()
            .map(|t| t.surface.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn contains_class(&self, cls: usize) -> bool {
        self.spans.iter().any(|s| s.cls == cls)
    }

    /// Checks every structural invariant against `scheme`.
    pub fn validate(&self, scheme: &TagScheme) -> Result<()> {
        if self.tags.len() != self.tokens.len() {
            return Err(contract(format!(
                "{} tags for {} tokens",
                self.tags.len(),
                self.tokens.len()
            )));
        }
        if let Some(t) = self.tokens.iter().find(|t| t.surface.is_empty()) {
            return Err(contract(format!("empty token surface in {:?}", t)));
        }
        if let Some(&bad) = self.tags.iter().find(|&&t| t >= scheme.num_tags()) {
            return Err(contract(format!("tag index {bad} outside scheme")));
        }
        let derived = tags_to_spans(&self.tags, scheme, DecodeMode::Strict)?;
        if derived != self.spans {
            return Err(contract(format!(
                "spans {:?} disagree with tags (expected {:?})",
                self.spans, derived
            )));
        }
        for r in &self.relations {
            if r.head == r.tail {
                return Err(contract(format!("relation {r:?} links a span to itself")));
            }
            if r.head >= self.spans.len() || r.tail >= self.spans.len() {
                return Err(contract(format!(
                    "relation {r:?} references a missing span ({} spans)",
                    self.spans.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Assigns splits positionally: 72% train, 11% validation, 17% test.
pub fn positional_splits(n: usize) -> Vec<Split> {
    let val = (n as f64 * 0.11).round() as usize;
    let test = (n as f64 * 0.17).round() as usize;
    let train = n.saturating_sub(val + test);
    std::iter::repeat_n(Split::Train, train)
        .chain(std::iter::repeat_n(Split::Validation, val))
        .chain(std::iter::repeat_n(Split::Test, n - train - val))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub scheme: TagScheme,
    /// Relation label set; index 0 is always [`NO_RELATION`].
    pub relation_labels: Vec<String>,
    pub sentences: Vec<Sentence>,
    pub splits: Vec<Split>,
}

impl Corpus {
    pub fn new(scheme: TagScheme, relation_labels: Vec<String>, sentences: Vec<Sentence>) -> Result<Self> {
        let splits = positional_splits(sentences.len());
        let corpus = Self {
            scheme,
            relation_labels,
            sentences,
            splits,
        };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn validate(&self) -> Result<()> {
        if self.relation_labels.first().map(String::as_str) != Some(NO_RELATION) {
            return Err(contract(format!("relation labels must start with {NO_RELATION:?}")));
        }
        if self.splits.len() != self.sentences.len() {
            return Err(contract("split assignment does not cover every sentence"));
        }
        for (i, s) in self.sentences.iter().enumerate() {
            s.validate(&self.scheme)
                .map_err(|e| Error::Contract(format!("sentence {i}: {e}")))?;
            if let Some(r) = s.relations.iter().find(|r| !self.relation_labels.contains(&r.label)) {
                return Err(contract(format!("sentence {i}: unknown relation label {:?}", r.label)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn split(&self, split: Split) -> Vec<&Sentence> {
        self.split_indices(split)
            .into_iter()
            .map(|i| &self.sentences[i])
            .collect()
    }

    pub fn relation_index(&self, label: &str) -> Option<usize> {
        self.relation_labels.iter().position(|l| l == label)
    }

    /// Entity counts per class over the whole corpus.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.scheme.num_classes()];
        for s in &self.sentences {
            for sp in &s.spans {
                counts[sp.cls] += 1;
            }
        }
        counts
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    /// Reject `I-c` that does not continue a `c` entity.
    Strict,
    /// Treat an orphan `I-c` as `B-c`.
    Repair,
}

/// Reads entity spans off a BIO tag sequence.
pub fn tags_to_spans(tags: &[usize], scheme: &TagScheme, mode: DecodeMode) -> Result<Vec<EntitySpan>> {
    let mut spans = Vec::new();
    let mut open: Option<EntitySpan> = None;
    for (i, &t) in tags.iter().enumerate() {
        if t >= scheme.num_tags() {
            return Err(Error::Bio {
                index: i,
                msg: format!("tag index {t} outside scheme"),
            });
        }
        match scheme.decode(t) {
            Tag::Outside => spans.extend(open.take()),
            Tag::Begin(c) => {
                spans.extend(open.take());
                open = Some(EntitySpan::new(i, i, c));
            }
            Tag::Inside(c) => match &mut open {
                Some(span) if span.cls == c => span.end = i,
                _ => {
                    if mode == DecodeMode::Strict {
                        return Err(Error::Bio {
                            index: i,
                            msg: format!("{} does not continue an entity", scheme.tag_name(t)),
                        });
                    }
                    spans.extend(open.take());
                    open = Some(EntitySpan::new(i, i, c));
                }
            },
        }
    }
    spans.extend(open);
    Ok(spans)
}

/// Writes spans into a BIO tag sequence of length `n`.
pub fn spans_to_tags(spans: &[EntitySpan], n: usize, scheme: &TagScheme) -> Result<Vec<usize>> {
    let mut tags = vec![0; n];
    let mut taken = vec![false; n];
    for s in spans {
        if s.start > s.end || s.end >= n {
            return Err(contract(format!("span {s:?} outside sentence of length {n}")));
        }
        if s.cls >= scheme.num_classes() {
            return Err(contract(format!("span {s:?} has unknown class")));
        }
        if taken[s.start..=s.end].iter().any(|&t| t) {
            return Err(contract(format!("span {s:?} overlaps another span")));
        }
        taken[s.start..=s.end].iter_mut().for_each(|t| *t = true);
        tags[s.start] = scheme.begin(s.cls);
        for t in &mut tags[s.start + 1..=s.end] {
            *t = scheme.inside(s.cls);
        }
    }
    Ok(tags)
}
