use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{spans_to_tags, EntitySpan, Sentence, TagScheme, Token, ENT_MASK};
use crate::error::{contract, Result};

/// Maps an entity surface (space-joined tokens) to alternate surfaces.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SynonymLexicon {
    entries: BTreeMap<String, Vec<String>>,
}

impl SynonymLexicon {
    pub fn new(entries: impl IntoIterator<Item = (String, Vec<String>)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (key, alts) in entries {
            if alts.is_empty() || alts.iter().any(|a| a.split_whitespace().next().is_none()) {
                return Err(contract(format!("lexicon entry {key:?} needs nonempty alternates")));
            }
            map.insert(normalize(&key), alts);
        }
        Ok(Self { entries: map })
    }

    /// Parses the JSON object form: `{"surface": ["alt", ...], ...}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let map: BTreeMap<String, Vec<String>> = serde_json::from_str(text)?;
        Self::new(map)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.entries)?)
    }

    pub fn get(&self, surface: &str) -> Option<&[String]> {
        self.entries.get(&normalize(surface)).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentMode {
    /// Replace lexicon-matched entities with a seeded choice of alternate.
    Synonym,
    /// Replace every entity token with `[ENT-MASK]`.
    EntityMask,
}

/// Returns an augmented copy of `sentence`. Tokens outside entity spans are
/// never touched; span count, order and classes are preserved.
pub fn augment(
    sentence: &Sentence,
    mode: AugmentMode,
    lexicon: &SynonymLexicon,
    scheme: &TagScheme,
    seed: u64,
) -> Sentence {
    match mode {
        AugmentMode::EntityMask => {
            let mut out = sentence.clone();
            for span in &sentence.spans {
                for tok in &mut out.tokens[span.start..=span.end] {
                    *tok = Token {
                        surface: "[ENT-MASK]".to_string(),
                        subword_ids: vec![ENT_MASK],
                    };
                }
            }
            out
        }
        AugmentMode::Synonym => synonym_substitute(sentence, lexicon, scheme, seed),
    }
}

fn synonym_substitute(sentence: &Sentence, lexicon: &SynonymLexicon, scheme: &TagScheme, seed: u64) -> Sentence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tokens = Vec::with_capacity(sentence.len());
    let mut spans = Vec::with_capacity(sentence.spans.len());
    let mut cursor = 0;
    for span in &sentence.spans {
        tokens.extend_from_slice(&sentence.tokens[cursor..span.start]);
        let start = tokens.len();
        match lexicon.get(&sentence.span_surface(span)) {
            Some(alts) => {
                let choice = &alts[rng.gen_range(0..alts.len())];
                tokens.extend(choice.split_whitespace().map(Token::new));
            }
            None => tokens.extend_from_slice(&sentence.tokens[span.start..=span.end]),
        }
        spans.push(EntitySpan::new(start, tokens.len() - 1, span.cls));
        cursor = span.end + 1;
    }
    tokens.extend_from_slice(&sentence.tokens[cursor..]);
    let tags = spans_to_tags(&spans, tokens.len(), scheme).expect("substituted spans stay disjoint");
    Sentence {
        tokens,
        tags,
        spans,
        relations: sentence.relations.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{default_lexicon, generate_synthetic_corpus};
    use proptest::prelude::*;

    fn lung_cancer_sentence(scheme: &TagScheme) -> Sentence {
        Sentence::from_spans(
            &["patients", "with", "lung", "cancer", "recovered"],
            vec![EntitySpan::new(2, 3, 0)],
            vec![],
            scheme,
        )
        .unwrap()
    }

    #[test]
    fn empty_lexicon_is_identity() {
        let scheme = TagScheme::default();
        let s = lung_cancer_sentence(&scheme);
        let out = augment(&s, AugmentMode::Synonym, &SynonymLexicon::default(), &scheme, 1);
        assert_eq!(out, s);
    }

    #[test]
    fn two_token_synonym_keeps_tags() {
        let scheme = TagScheme::default();
        let s = lung_cancer_sentence(&scheme);
        let lex = SynonymLexicon::new([("lung cancer".to_string(), vec!["pulmonary carcinoma".to_string()])]).unwrap();
        let out = augment(&s, AugmentMode::Synonym, &lex, &scheme, 5);
        assert_eq!(out.surfaces(), vec!["patients", "with", "pulmonary", "carcinoma", "recovered"]);
        assert_eq!(out.spans, vec![EntitySpan::new(2, 3, 0)]);
        assert_eq!(out.tags, s.tags);
    }

    #[test]
    fn length_changing_synonym_shifts_later_spans() {
        let scheme = TagScheme::default();
        let s = Sentence::from_spans(
            &["asthma", "and", "flu", "seen"],
            vec![EntitySpan::new(0, 0, 0), EntitySpan::new(2, 2, 3)],
            vec![],
            &scheme,
        )
        .unwrap();
        let lex = SynonymLexicon::new([("asthma".to_string(), vec!["bronchial asthma".to_string()])]).unwrap();
        let out = augment(&s, AugmentMode::Synonym, &lex, &scheme, 0);
        assert_eq!(out.spans, vec![EntitySpan::new(0, 1, 0), EntitySpan::new(3, 3, 3)]);
        out.validate(&scheme).unwrap();
    }

    #[test]
    fn entity_mask_replaces_span_tokens_only() {
        let scheme = TagScheme::default();
        let s = Sentence::from_spans(
            &["a", "lung", "cancer", "b"],
            vec![EntitySpan::new(1, 2, 0)],
            vec![],
            &scheme,
        )
        .unwrap();
        let out = augment(&s, AugmentMode::EntityMask, &SynonymLexicon::default(), &scheme, 0);
        assert_eq!(out.surfaces(), vec!["a", "[ENT-MASK]", "[ENT-MASK]", "b"]);
        assert_eq!(out.tags, s.tags);
        assert_eq!(out.tokens[1].subword_ids, vec![ENT_MASK]);
    }

    #[test]
    fn lexicon_json_round_trip() {
        let lex = default_lexicon();
        assert_eq!(SynonymLexicon::from_json(&lex.to_json().unwrap()).unwrap(), lex);
        assert!(SynonymLexicon::from_json(r#"{"a": []}"#).is_err());
    }

    proptest! {
        #[test]
        fn augmentation_preserves_span_count_and_classes(seed in 0u64..500, idx in 0usize..200) {
            let corpus = generate_synthetic_corpus(200, 11);
            let s = &corpus.sentences[idx];
            let lex = default_lexicon();
            for mode in [AugmentMode::Synonym, AugmentMode::EntityMask] {
                let out = augment(s, mode, &lex, &corpus.scheme, seed);
                prop_assert!(out.validate(&corpus.scheme).is_ok());
                let classes = |x: &Sentence| x.spans.iter().map(|sp| sp.cls).collect::<Vec<_>>();
                prop_assert_eq!(classes(&out), classes(s));
                // outside-entity tokens unchanged, in order
                let outside = |x: &Sentence| {
                    x.tokens.iter().enumerate()
                        .filter(|(i, _)| !x.spans.iter().any(|sp| sp.start <= *i && *i <= sp.end))
                        .map(|(_, t)| t.surface.clone())
                        .collect::<Vec<_>>()
                };
                prop_assert_eq!(outside(&out), outside(s));
            }
        }
    }
}
