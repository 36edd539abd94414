use std::collections::HashSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::Lexicon;
use crate::text::{split_words, TokenizedCaption, Word};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PosTag {
    Det,
    Adj,
    Noun,
    Verb,
    Adp,
    Pron,
    Conj,
    Punct,
    Num,
    Adv,
    Other,
}

/// A `DET? ADJ* NOUN+ NUM?` chunk of a caption.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NounPhrase {
    /// `[start, end)` in characters of the source caption.
    pub char_span: (usize, usize),
    /// Canonical head noun: the last noun of the chunk, lowercase.
    pub head: String,
    /// Word indices covered, as produced by [`split_words`].
    pub words: Range<usize>,
}

/// Positions of `tok` whose character spans intersect the phrase. Empty
/// when the phrase was truncated away.
pub fn span_to_token_indices(np: &NounPhrase, tok: &TokenizedCaption) -> Vec<usize> {
    tok.positions_overlapping(np.char_span.0, np.char_span.1)
}

#[derive(Clone, Debug)]
pub struct ConceptParser {
    lexicon: Lexicon,
    corpus: HashSet<String>,
}

impl Default for ConceptParser {
    fn default() -> Self {
        Self::new(Lexicon::builtin())
    }
}

impl ConceptParser {
    pub fn new(lexicon: Lexicon) -> Self {
        Self {
            lexicon,
            corpus: HashSet::new(),
        }
    }

    /// Records every word of `captions` so plural heads whose singular
    /// occurs in the corpus canonicalize to it.
    pub fn with_corpus<'a>(mut self, captions: impl IntoIterator<Item = &'a str>) -> Self {
        for c in captions {
            self.corpus.extend(split_words(c).into_iter().map(|w| w.text));
        }
        self
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn tag_word(&self, word: &str) -> PosTag {
        let lex = &self.lexicon;
        if !word.chars().any(char::is_alphanumeric) {
            return PosTag::Punct;
        }
        if word.chars().all(|c| c.is_numeric() || c == '.' || c == ',') {
            return PosTag::Num;
        }
        let closed = [
            (&lex.determiners, PosTag::Det),
            (&lex.prepositions, PosTag::Adp),
            (&lex.pronouns, PosTag::Pron),
            (&lex.conjunctions, PosTag::Conj),
            (&lex.verbs, PosTag::Verb),
            (&lex.adverbs, PosTag::Adv),
            (&lex.adjectives, PosTag::Adj),
            (&lex.nouns, PosTag::Noun),
        ];
        if let Some((_, tag)) = closed.iter().find(|(set, _)| set.contains(word)) {
            return *tag;
        }
        let len = word.chars().count();
        if len > 3 && word.ends_with("ly") {
            return PosTag::Adv;
        }
        if (len > 4 && word.ends_with("ing")) || (len > 3 && word.ends_with("ed")) {
            return PosTag::Verb;
        }
        if word.chars().any(|c| c.is_numeric()) {
            return PosTag::Other;
        }
        PosTag::Noun
    }

    pub fn pos_tag<S: AsRef<str>>(&self, words: &[S]) -> Vec<PosTag> {
        words.iter().map(|w| self.tag_word(w.as_ref())).collect()
    }

    /// Left-to-right maximal matches of `DET? ADJ* NOUN+ NUM?`.
    pub fn chunk_nps(&self, words: &[Word], tags: &[PosTag]) -> Vec<NounPhrase> {
        debug_assert_eq!(words.len(), tags.len());
        let n = tags.len();
        let mut out = Vec::new();
        let mut i = 0;
        while i < n {
            let mut j = i;
            if tags[j] == PosTag::Det {
                j += 1;
            }
            while j < n && tags[j] == PosTag::Adj {
                j += 1;
            }
            let nouns_start = j;
            while j < n && tags[j] == PosTag::Noun {
                j += 1;
            }
            if j == nouns_start {
                i += 1;
                continue;
            }
            let head = j - 1;
            if j < n && tags[j] == PosTag::Num {
                j += 1;
            }
            out.push(NounPhrase {
                char_span: (words[i].span.0, words[j - 1].span.1),
                head: self.canonicalize(&words[head].text),
                words: i..j,
            });
            i = j;
        }
        out
    }

    /// Strips a plural `s` when the singular is a known noun or occurs in
    /// the corpus. Words ending in `ss` are never stripped, which keeps the
    /// mapping idempotent.
    pub fn canonicalize(&self, head: &str) -> String {
        if head.chars().count() > 3 && head.ends_with('s') && !head.ends_with("ss") {
            let stem = &head[..head.len() - 1];
            if self.lexicon.nouns.contains(stem) || self.corpus.contains(stem) {
                return stem.to_owned();
            }
        }
        head.to_owned()
    }

    pub fn noun_phrases(&self, caption: &str) -> Vec<NounPhrase> {
        let words = split_words(caption);
        let tags = self.pos_tag(&words.iter().map(|w| w.text.as_str()).collect::<Vec<_>>());
        self.chunk_nps(&words, &tags)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::Vocabulary;
    use PosTag::*;

    fn parser() -> ConceptParser {
        ConceptParser::default()
    }

    #[test]
    fn tags_simple_sentence() {
        let tags = parser().pos_tag(&["a", "cow", "on", "the", "grass"]);
        assert_eq!(tags, vec![Det, Noun, Adp, Det, Noun]);
    }

    #[test]
    fn suffix_and_punct_rules() {
        let p = parser();
        assert_eq!(p.pos_tag(&["quickly"]), vec![Adv]);
        assert_eq!(p.pos_tag(&[","]), vec![Punct]);
        assert_eq!(p.pos_tag(&["42"]), vec![Num]);
        assert_eq!(p.pos_tag(&["jumping", "jumped"]), vec![Verb, Verb]);
        // lexicon nouns win over the -ing/-ed rule
        assert_eq!(p.pos_tag(&["building", "bed"]), vec![Noun, Noun]);
        assert_eq!(p.pos_tag(&["red", "friendly"]), vec![Adj, Adj]);
        assert_eq!(p.pos_tag(&["blorp"]), vec![Noun]);
    }

    #[test]
    fn chunks_adjective_phrase() {
        let nps = parser().noun_phrases("a brown cow on the grass");
        let heads: Vec<&str> = nps.iter().map(|n| n.head.as_str()).collect();
        assert_eq!(heads, vec!["cow", "grass"]);
        assert_eq!(nps[0].char_span, (0, 11));
        assert_eq!(nps[1].char_span, (15, 24));
    }

    #[test]
    fn no_nouns_no_phrases() {
        assert!(parser().noun_phrases("run quickly").is_empty());
    }

    #[test]
    fn counted_plural() {
        let nps = parser().noun_phrases("two cats");
        assert_eq!(nps.len(), 1);
        assert_eq!(nps[0].head, "cat");
        assert_eq!(nps[0].char_span, (0, 8));
    }

    #[test]
    fn trailing_number_joins_phrase() {
        let nps = parser().noun_phrases("the bus 42 stops");
        assert_eq!(nps[0].char_span, (0, 10));
        assert_eq!(nps[0].head, "bus");
    }

    #[test]
    fn canonicalize_cases() {
        let p = parser();
        assert_eq!(p.canonicalize("cats"), "cat");
        assert_eq!(p.canonicalize("grass"), "grass");
        assert_eq!(p.canonicalize("cow"), "cow");
        assert_eq!(p.canonicalize("bus"), "bus");
        // unknown singular stays plural unless the corpus has it
        assert_eq!(p.canonicalize("blorps"), "blorps");
        let p = parser().with_corpus(["a blorp"]);
        assert_eq!(p.canonicalize("blorps"), "blorp");
    }

    #[test]
    fn token_indices_for_phrase() {
        let vocab = Vocabulary::build(["a cow ."], 1, 10).unwrap();
        let tok = vocab.tokenize("a cow .", 8);
        let nps = parser().noun_phrases("a cow .");
        assert_eq!(span_to_token_indices(&nps[0], &tok), vec![1, 2]);

        let tok = vocab.tokenize("cow", 8);
        let nps = parser().noun_phrases("cow");
        assert_eq!(span_to_token_indices(&nps[0], &tok), vec![1]);
    }

    #[test]
    fn truncated_phrase_has_no_tokens() {
        let caption = "a cow and a cat and a dog";
        let vocab = Vocabulary::build([caption], 1, 20).unwrap();
        let tok = vocab.tokenize(caption, 5);
        let nps = parser().noun_phrases(caption);
        assert_eq!(nps.len(), 3);
        assert!(span_to_token_indices(&nps[2], &tok).is_empty());
    }
}
