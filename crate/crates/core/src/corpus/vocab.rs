use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Corpus;
use crate::error::{contract, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const MASK: u32 = 2;
pub const ENT_MASK: u32 = 3;
pub const RESERVED_COUNT: usize = 4;

const RESERVED: [&str; RESERVED_COUNT] = ["[PAD]", "[UNK]", "[MASK]", "[ENT-MASK]"];

/// Subword vocabulary: reserved entries, frequent whole tokens, then single
/// characters.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    entries: Vec<String>,
    min_freq: usize,
    index: HashMap<String, u32>,
    max_piece_chars: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    min_freq: usize,
    entries: Vec<String>,
}

impl TryFrom<VocabRepr> for Vocab {
    type Error = crate::Error;

    fn try_from(r: VocabRepr) -> Result<Self> {
        Vocab::from_entries(r.entries, r.min_freq)
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr {
            min_freq: v.min_freq,
            entries: v.entries,
        }
    }
}

impl Vocab {
    pub fn from_entries(entries: Vec<String>, min_freq: usize) -> Result<Self> {
        if entries.len() < RESERVED_COUNT || entries[..RESERVED_COUNT] != RESERVED {
            return Err(contract("vocabulary must begin with the reserved entries"));
        }
        let mut index = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.is_empty() {
                return Err(contract("empty vocabulary entry"));
            }
            if index.insert(e.clone(), i as u32).is_some() {
                return Err(contract(format!("duplicate vocabulary entry {e:?}")));
            }
        }
        let max_piece_chars = entries[RESERVED_COUNT..]
            .iter()
            .map(|e| e.chars().count())
            .max()
            .unwrap_or(0);
        Ok(Self {
            entries,
            min_freq,
            index,
            max_piece_chars,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.entries.get(id as usize).map(String::as_str)
    }
}

/// Builds the vocabulary from token and character frequencies.
///
/// Whole tokens with frequency `>= min_freq` come first, then every observed
/// character not already present; both groups are ordered by descending
/// frequency, then lexicographically.
pub fn build_vocab(corpus: &Corpus, min_freq: usize) -> Result<Vocab> {
    if min_freq == 0 {
        return Err(contract("min_freq must be at least 1"));
    }
    let mut words: HashMap<&str, usize> = HashMap::new();
    let mut chars: HashMap<String, usize> = HashMap::new();
    for tok in corpus.sentences.iter().flat_map(|s| &s.tokens) {
        if RESERVED.contains(&tok.surface.as_str()) {
            continue;
        }
        *words.entry(&tok.surface).or_default() += 1;
        for c in tok.surface.chars() {
            *chars.entry(c.to_string()).or_default() += 1;
        }
    }
    let ordered = |m: HashMap<String, usize>| {
        let mut v: Vec<(String, usize)> = m.into_iter().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        v.into_iter().map(|(k, _)| k)
    };
    let frequent: HashMap<String, usize> = words
        .into_iter()
        .filter(|&(_, n)| n >= min_freq)
        .map(|(w, n)| (w.to_string(), n))
        .collect();

    let mut entries: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    entries.extend(ordered(frequent));
    for c in ordered(chars) {
        if !entries.contains(&c) {
            entries.push(c);
        }
    }
    Vocab::from_entries(entries, min_freq)
}

/// Greedy longest-match segmentation of `surface` into vocabulary ids.
///
/// Characters that start no vocabulary piece become `[UNK]`. Reserved
/// surfaces such as `[ENT-MASK]` map to their own id.
pub fn tokenize_subword(surface: &str, vocab: &Vocab) -> Vec<u32> {
    if let Some(pos) = RESERVED.iter().position(|&r| r == surface) {
        return vec![pos as u32];
    }
    let chars: Vec<char> = surface.chars().collect();
    if chars.is_empty() {
        return vec![UNK];
    }
    let mut ids = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let longest = vocab.max_piece_chars.min(chars.len() - i);
        let hit = (1..=longest).rev().find_map(|len| {
            let piece: String = chars[i..i + len].iter().collect();
            vocab
                .id(&piece)
                .filter(|&id| id as usize >= RESERVED_COUNT)
                .map(|id| (id, len))
        });
        match hit {
            Some((id, len)) => {
                ids.push(id);
                i += len;
            }
            None => {
                ids.push(UNK);
                i += 1;
            }
        }
    }
    ids
}
