//! Tag files (`token<TAB>tag` lines, blank line between sentences) and the
//! parallel JSON-lines annotation file carrying spans and relations.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    tags_to_spans, Corpus, DecodeMode, EntitySpan, RelationInstance, Sentence, TagScheme, Token,
    RELATION_LABELS,
};
use crate::error::{Error, Result};

/// Parses tag-file text into sentences. Spans are rebuilt in strict mode.
pub fn parse_conll(text: &str, scheme: &TagScheme) -> Result<Vec<Sentence>> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<Token> = Vec::new();
    let mut tags: Vec<usize> = Vec::new();
    let mut first_line = 1;

    let mut flush = |tokens: &mut Vec<Token>, tags: &mut Vec<usize>, first_line: usize| -> Result<()> {
        if tokens.is_empty() {
            return Ok(());
        }
        let spans = tags_to_spans(tags, scheme, DecodeMode::Strict).map_err(|e| match e {
            Error::Bio { index, msg } => Error::Parse {
                line: first_line + index,
                msg: format!("invalid BIO at token {index}: {msg}"),
            },
            other => other,
        })?;
        sentences.push(Sentence {
            tokens: std::mem::take(tokens),
            tags: std::mem::take(tags),
            spans,
            relations: Vec::new(),
        });
        Ok(())
    };

    for (i, raw) in text.split('\n').enumerate() {
        let line_no = i + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags, first_line)?;
            first_line = line_no + 1;
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [surface, tag] = fields[..] else {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected `token<TAB>tag`, found {} field(s)", fields.len()),
            });
        };
        if surface.is_empty() || tag.is_empty() {
            return Err(Error::Parse {
                line: line_no,
                msg: "empty token or tag".into(),
            });
        }
        let idx = scheme.parse_tag(tag).ok_or_else(|| Error::Parse {
            line: line_no,
            msg: format!("unknown tag {tag:?}"),
        })?;
        tokens.push(Token::new(surface));
        tags.push(idx);
    }
    flush(&mut tokens, &mut tags, first_line)?;
    Ok(sentences)
}

/// Renders sentences in canonical tag-file form.
pub fn write_conll(sentences: &[Sentence], scheme: &TagScheme) -> String {
    let mut out = String::new();
    for (i, s) in sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for (tok, &tag) in s.tokens.iter().zip(&s.tags) {
            out.push_str(&tok.surface);
            out.push('\t');
            out.push_str(&scheme.tag_name(tag));
            out.push('\n');
        }
    }
    out
}

pub fn load_conll(path: &Path, scheme: &TagScheme) -> Result<Corpus> {
    let text = fs::read_to_string(path)?;
    let sentences = parse_conll(&text, scheme)?;
    Corpus::new(scheme.clone(), default_labels(), sentences)
}

pub fn save_conll(corpus: &Corpus, path: &Path) -> Result<()> {
    fs::write(path, write_conll(&corpus.sentences, &corpus.scheme))?;
    Ok(())
}

fn default_labels() -> Vec<String> {
    RELATION_LABELS.iter().map(|s| s.to_string()).collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpanRecord {
    start: usize,
    end: usize,
    cls: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationRecord {
    spans: Vec<SpanRecord>,
    relations: Vec<RelationInstance>,
}

/// One JSON object per sentence, in corpus order.
pub fn write_annotations(corpus: &Corpus) -> Result<String> {
    let mut out = String::new();
    for s in &corpus.sentences {
        let rec = AnnotationRecord {
            spans: s
                .spans
                .iter()
                .map(|sp| SpanRecord {
                    start: sp.start,
                    end: sp.end,
                    cls: corpus.scheme.classes()[sp.cls].clone(),
                })
                .collect(),
            relations: s.relations.clone(),
        };
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn save_annotations(corpus: &Corpus, path: &Path) -> Result<()> {
    fs::write(path, write_annotations(corpus)?)?;
    Ok(())
}

/// Attaches spans and relations from annotation text to `corpus`.
///
/// Annotated spans must agree with the spans derived from the tags.
pub fn load_annotations(corpus: &mut Corpus, text: &str) -> Result<()> {
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if lines.len() != corpus.sentences.len() {
        return Err(Error::Parse {
            line: lines.len(),
            msg: format!(
                "annotation file has {} records for {} sentences",
                lines.len(),
                corpus.sentences.len()
            ),
        });
    }
    for (i, (line, sentence)) in lines.iter().zip(corpus.sentences.iter_mut()).enumerate() {
        let parse_err = |msg: String| Error::Parse { line: i + 1, msg };
        let rec: AnnotationRecord = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        let spans = rec
            .spans
            .iter()
            .map(|r| {
                corpus
                    .scheme
                    .class_index(&r.cls)
                    .map(|c| EntitySpan::new(r.start, r.end, c))
                    .ok_or_else(|| parse_err(format!("unknown class {:?}", r.cls)))
            })
            .collect::<Result<Vec<_>>>()?;
        if spans != sentence.spans {
            return Err(parse_err(format!(
                "annotated spans {spans:?} disagree with tag-derived spans {:?}",
                sentence.spans
            )));
        }
        for r in &rec.relations {
            if !corpus.relation_labels.contains(&r.label) {
                corpus.relation_labels.push(r.label.clone());
            }
        }
        sentence.relations = rec.relations;
    }
    corpus.validate()
}

/// Loads a tag file and, when given, its annotation file.
pub fn load_corpus(tags: &Path, annotations: Option<&Path>, scheme: &TagScheme) -> Result<Corpus> {
    let mut corpus = load_conll(tags, scheme)?;
    if let Some(path) = annotations {
        load_annotations(&mut corpus, &fs::read_to_string(path)?)?;
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_synthetic_corpus;

    #[test]
    fn empty_text_yields_no_sentences() {
        assert!(parse_conll("", &TagScheme::default()).unwrap().is_empty());
    }

    #[test]
    fn single_entity_sentence() {
        let s = parse_conll("flu\tB-Specific\n\n", &TagScheme::default()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].spans, vec![EntitySpan::new(0, 0, 0)]);
    }

    #[test]
    fn unknown_tag_is_named() {
        let err = parse_conll("flu\tB-Bogus\n", &TagScheme::default()).unwrap_err();
        match err {
            Error::Parse { line, msg } => {
                assert_eq!(line, 1);
                assert!(msg.contains("B-Bogus"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn arity_mismatch_is_a_parse_error() {
        let err = parse_conll("a\tO\nflu\n", &TagScheme::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
        assert!(parse_conll("a\tO\tX\n", &TagScheme::default()).is_err());
    }

    #[test]
    fn invalid_bio_reports_position() {
        let err = parse_conll("x\tO\n\nthe\tO\nflu\tI-Specific\n", &TagScheme::default()).unwrap_err();
        match err {
            Error::Parse { line, msg } => {
                assert_eq!(line, 4);
                assert!(msg.contains("token 1"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tolerates_crlf_and_extra_blank_lines() {
        let s = parse_conll("a\tO\r\n\r\n\r\nb\tB-Modifier\r\n\n\n", &TagScheme::default()).unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn canonical_round_trip_is_byte_identical() {
        let corpus = generate_synthetic_corpus(40, 3);
        let text = write_conll(&corpus.sentences, &corpus.scheme);
        let parsed = parse_conll(&text, &corpus.scheme).unwrap();
        assert_eq!(write_conll(&parsed, &corpus.scheme), text);

        let ann = write_annotations(&corpus).unwrap();
        let mut reloaded = Corpus::new(corpus.scheme.clone(), default_labels(), parsed).unwrap();
        load_annotations(&mut reloaded, &ann).unwrap();
        assert_eq!(reloaded, corpus);
        assert_eq!(write_annotations(&reloaded).unwrap(), ann);
    }

    #[test]
    fn annotation_span_mismatch_rejected() {
        let mut corpus = Corpus::new(
            TagScheme::default(),
            default_labels(),
            parse_conll("flu\tB-Specific\n", &TagScheme::default()).unwrap(),
        )
        .unwrap();
        let bad = r#"{"spans":[{"start":0,"end":0,"cls":"Modifier"}],"relations":[]}"#;
        assert!(load_annotations(&mut corpus, bad).is_err());
    }
}
