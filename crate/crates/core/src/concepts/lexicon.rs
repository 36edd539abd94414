use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Word lists driving the rule-based tagger. Each list is a UTF-8 file with
/// one lowercase word per line; the defaults are compiled in.
#[derive(Clone, Debug, Default)]
pub struct Lexicon {
    pub determiners: HashSet<String>,
    pub prepositions: HashSet<String>,
    pub pronouns: HashSet<String>,
    pub conjunctions: HashSet<String>,
    pub verbs: HashSet<String>,
    pub adverbs: HashSet<String>,
    pub adjectives: HashSet<String>,
    pub nouns: HashSet<String>,
}

const FILES: [&str; 8] = [
    "determiners",
    "prepositions",
    "pronouns",
    "conjunctions",
    "verbs",
    "adverbs",
    "adjectives",
    "nouns",
];

fn words(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

impl Lexicon {
    pub fn builtin() -> Self {
        Self {
            determiners: words(include_str!("../../lexicons/determiners.txt")),
            prepositions: words(include_str!("../../lexicons/prepositions.txt")),
            pronouns: words(include_str!("../../lexicons/pronouns.txt")),
            conjunctions: words(include_str!("../../lexicons/conjunctions.txt")),
            verbs: words(include_str!("../../lexicons/verbs.txt")),
            adverbs: words(include_str!("../../lexicons/adverbs.txt")),
            adjectives: words(include_str!("../../lexicons/adjectives.txt")),
            nouns: words(include_str!("../../lexicons/nouns.txt")),
        }
    }

    /// Loads `<name>.txt` for every list from `dir`; missing files fall back
    /// to the built-in list.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let mut lex = Self::builtin();
        for name in FILES {
            let path = dir.join(format!("{name}.txt"));
            if !path.exists() {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            let set = words(&text);
            match name {
                "determiners" => lex.determiners = set,
                "prepositions" => lex.prepositions = set,
                "pronouns" => lex.pronouns = set,
                "conjunctions" => lex.conjunctions = set,
                "verbs" => lex.verbs = set,
                "adverbs" => lex.adverbs = set,
                "adjectives" => lex.adjectives = set,
                _ => lex.nouns = set,
            }
        }
        Ok(lex)
    }
}
