use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const BOS: u32 = 0;
pub const EOS: u32 = 1;
pub const PAD: u32 = 2;
pub const UNK: u32 = 3;

const SPECIALS: [&str; 4] = ["<bos>", "<eos>", "<pad>", "<unk>"];

/// A lowercased word and its `[start, end)` character span in the source.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Word {
    pub text: String,
    pub span: (usize, usize),
}

/// Splits text into lowercase words: alphanumeric runs, with every other
/// non-whitespace character as its own token. Spans count `char`s.
pub fn split_words(text: &str) -> Vec<Word> {
    let mut words = Vec::new();
    let mut current: Option<(usize, String)> = None;
    let flush = |current: &mut Option<(usize, String)>, end: usize, words: &mut Vec<Word>| {
        if let Some((start, text)) = current.take() {
            words.push(Word {
                text,
                span: (start, end),
            });
        }
    };
    let mut pos = 0;
    for (pos_i, ch) in text.chars().enumerate() {
        pos = pos_i;
        if ch.is_alphanumeric() {
            let entry = current.get_or_insert_with(|| (pos_i, String::new()));
            entry.1.extend(ch.to_lowercase());
        } else {
            flush(&mut current, pos_i, &mut words);
            if !ch.is_whitespace() {
                words.push(Word {
                    text: ch.to_lowercase().collect(),
                    span: (pos_i, pos_i + 1),
                });
            }
        }
    }
    let end = if text.is_empty() { 0 } else { pos + 1 };
    flush(&mut current, end, &mut words);
    words
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

/// A caption as encoder input.
///
/// `ids` is `BOS, words…, EOS` followed by `PAD` up to the tokenizer's
/// `max_len`. `spans[i]` is the character span of the word at position
/// `i + 1`, so every non-special position has exactly one span.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenizedCaption {
    pub ids: Vec<u32>,
    pub len: usize,
    pub spans: Vec<(usize, usize)>,
}

impl TokenizedCaption {
    pub fn eos_position(&self) -> usize {
        self.len - 1
    }

    pub fn real_ids(&self) -> &[u32] {
        &self.ids[..self.len]
    }

    /// Positions whose character span intersects `[start, end)`.
    pub fn positions_overlapping(&self, start: usize, end: usize) -> Vec<usize> {
        self.spans
            .iter()
            .enumerate()
            .filter(|(_, &(s, e))| s < end && start < e)
            .map(|(i, _)| i + 1)
            .collect()
    }
}

impl Vocabulary {
    /// Word-level vocabulary: tokens with frequency `>= min_freq`, most
    /// frequent first with alphabetical tie-break, at most `max_size`
    /// regular tokens after the four specials.
    pub fn build<'a>(
        corpus: impl IntoIterator<Item = &'a str>,
        min_freq: usize,
        max_size: usize,
    ) -> Result<Self> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut n_docs = 0usize;
        for caption in corpus {
            n_docs += 1;
            for w in split_words(caption) {
                *counts.entry(w.text).or_default() += 1;
            }
        }
        if n_docs == 0 {
            return Err(Error::Input("cannot build a vocabulary from an empty corpus".into()));
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_freq && !SPECIALS.contains(&t.as_str()))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size);
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .collect();
        Self::from_tokens(tokens)
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIALS.len() || tokens[..4] != SPECIALS.map(String::from) {
            return Err(Error::Input("vocabulary must start with <bos> <eos> <pad> <unk>".into()));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Input(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    /// `BOS words… EOS PAD…`; words past `max_len - 2` are dropped so the
    /// sequence always ends in EOS.
    pub fn tokenize(&self, caption: &str, max_len: usize) -> TokenizedCaption {
        assert!(max_len >= 2, "max_len must leave room for BOS and EOS");
        let words = split_words(caption);
        let keep = words.len().min(max_len - 2);
        let mut ids = Vec::with_capacity(max_len);
        ids.push(BOS);
        let mut spans = Vec::with_capacity(keep);
        for w in &words[..keep] {
            ids.push(self.id(&w.text));
            spans.push(w.span);
        }
        ids.push(EOS);
        let len = ids.len();
        ids.resize(max_len, PAD);
        TokenizedCaption { ids, len, spans }
    }

    /// One token per line; the line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_owned).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
