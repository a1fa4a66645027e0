//! Text preprocessing: wordpunct tokenization, a deterministic coarse
//! part-of-speech tagger, and stoplists.
//!
//! The tagger is two-stage — exact lexicon lookup, then ordered suffix
//! rules — so the whole generation pipeline has no statistical component
//! and reruns bit-identically. Corpora that were tagged by a stronger
//! external tagger can bypass it entirely (see [`crate::corpus`]).

use std::collections::BTreeSet;
use std::collections::HashMap;
use std::path::Path;

use crate::{Error, Result};

/// Coarse part-of-speech category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Tag {
    Noun,
    Verb,
    Adj,
    Adv,
    Other,
}

impl Tag {
    pub fn parse(s: &str) -> Option<Tag> {
        match s {
            "NOUN" => Some(Tag::Noun),
            "VERB" => Some(Tag::Verb),
            "ADJ" => Some(Tag::Adj),
            "ADV" => Some(Tag::Adv),
            "OTHER" => Some(Tag::Other),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Tag::Noun => "NOUN",
            Tag::Verb => "VERB",
            Tag::Adj => "ADJ",
            Tag::Adv => "ADV",
            Tag::Other => "OTHER",
        }
    }

    /// Categories eligible to be blanked out.
    pub fn is_content(&self) -> bool {
        !matches!(self, Tag::Other)
    }
}

/// One token with its lowercased form and coarse tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedToken {
    pub surface: String,
    pub lower: String,
    pub tag: Tag,
}

impl TaggedToken {
    pub fn new(surface: impl Into<String>, tag: Tag) -> TaggedToken {
        let surface = surface.into();
        let lower = lowercase(&surface);
        TaggedToken {
            surface,
            lower,
            tag,
        }
    }
}

/// Splits text into maximal runs of word characters (letters, digits,
/// underscore) and maximal runs of other non-whitespace characters, then
/// lowercases every token. Whitespace never appears in the output.
pub fn tokenize_wordpunct(text: &str) -> Vec<String> {
    #[derive(PartialEq, Clone, Copy)]
    enum Kind {
        Word,
        Punct,
    }
    fn kind(c: char) -> Option<Kind> {
        if c.is_whitespace() {
            None
        } else if c.is_alphanumeric() || c == '_' {
            Some(Kind::Word)
        } else {
            Some(Kind::Punct)
        }
    }

    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut current_kind: Option<Kind> = None;
    for c in text.chars() {
        let k = kind(c);
        if k != current_kind && !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
        current_kind = k;
        if k.is_some() {
            current.extend(c.to_lowercase());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Character-wise lowercasing, matching what the tokenizer emits.
pub fn lowercase(s: &str) -> String {
    s.chars().flat_map(|c| c.to_lowercase()).collect()
}

/// Exact word → tag table; the first stage of the tagger.
#[derive(Debug, Clone, Default)]
pub struct Lexicon {
    entries: HashMap<String, Tag>,
}

impl Lexicon {
    /// The lexicon shipped with the crate (~1.7k common words).
    pub fn builtin() -> Lexicon {
        Lexicon::parse(include_str!("../data/lexicon.tsv"))
            .expect("shipped lexicon must parse")
    }

    pub fn load(path: &Path) -> Result<Lexicon> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Lexicon::parse(&text).map_err(|e| match e {
            Error::Validation(msg) => Error::parse(path, 0, msg),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Lexicon> {
        let mut entries = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, tag) = line.split_once('\t').ok_or_else(|| {
                Error::Validation(format!("lexicon line {}: expected word<TAB>TAG", i + 1))
            })?;
            let tag = Tag::parse(tag.trim()).ok_or_else(|| {
                Error::Validation(format!("lexicon line {}: unknown tag {:?}", i + 1, tag))
            })?;
            entries.insert(lowercase(word.trim()), tag);
        }
        Ok(Lexicon { entries })
    }

    pub fn lookup(&self, lower: &str) -> Option<Tag> {
        self.entries.get(lower).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

const SUFFIX_RULES: &[(&str, Tag)] = &[
    ("ly", Tag::Adv),
    ("ing", Tag::Verb),
    ("ed", Tag::Verb),
    ("ous", Tag::Adj),
    ("ful", Tag::Adj),
    ("ive", Tag::Adj),
    ("able", Tag::Adj),
    ("tion", Tag::Noun),
    ("ness", Tag::Noun),
    ("ment", Tag::Noun),
];

/// Tags one lowercased token: lexicon, then suffix rules in fixed
/// priority, then a trailing-s strip-and-retry, then NOUN for alphabetic
/// tokens and OTHER for everything else.
pub fn tag_token(lower: &str, lexicon: &Lexicon) -> Tag {
    fn go(lower: &str, lexicon: &Lexicon, allow_strip: bool) -> Tag {
        if let Some(t) = lexicon.lookup(lower) {
            return t;
        }
        for (suffix, tag) in SUFFIX_RULES {
            // require a stem of at least two characters so short words like
            // "fly" or "red" never match
            if lower.len() >= suffix.len() + 2 && lower.ends_with(suffix) {
                return *tag;
            }
        }
        if allow_strip && lower.len() >= 3 && lower.ends_with('s') && !lower.ends_with("ss") {
            return go(&lower[..lower.len() - 1], lexicon, false);
        }
        if !lower.is_empty() && lower.chars().all(char::is_alphabetic) {
            Tag::Noun
        } else {
            Tag::Other
        }
    }
    go(lower, lexicon, true)
}

/// Tags a list of lowercased tokens. Pure: same inputs, same output.
pub fn tag(tokens: &[String], lexicon: &Lexicon) -> Vec<TaggedToken> {
    tokens
        .iter()
        .map(|t| TaggedToken {
            surface: t.clone(),
            lower: t.clone(),
            tag: tag_token(t, lexicon),
        })
        .collect()
}

/// Set of lowercased words excluded from blank candidacy.
#[derive(Debug, Clone, Default)]
pub struct Stoplist {
    entries: BTreeSet<String>,
}

impl Stoplist {
    pub fn empty() -> Stoplist {
        Stoplist::default()
    }

    pub fn from_words<I: IntoIterator<Item = S>, S: AsRef<str>>(words: I) -> Stoplist {
        Stoplist {
            entries: words
                .into_iter()
                .map(|w| lowercase(w.as_ref().trim()))
                .filter(|w| !w.is_empty())
                .collect(),
        }
    }

    /// Loads one entry per line; `#`-prefixed lines are comments.
    pub fn load(path: &Path) -> Result<Stoplist> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Stoplist::from_words(
            text.lines().filter(|l| !l.trim_start().starts_with('#')),
        ))
    }

    pub fn contains(&self, lower: &str) -> bool {
        self.entries.contains(lower)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_basic_sentence() {
        assert_eq!(
            tokenize_wordpunct("She shakes her head."),
            vec!["she", "shakes", "her", "head", "."]
        );
    }

    #[test]
    fn tokenize_empty_and_whitespace() {
        assert_eq!(tokenize_wordpunct(""), Vec::<String>::new());
        assert_eq!(tokenize_wordpunct("  \t\n "), Vec::<String>::new());
    }

    #[test]
    fn apostrophe_is_its_own_run() {
        assert_eq!(
            tokenize_wordpunct("don't stop"),
            vec!["don", "'", "t", "stop"]
        );
    }

    #[test]
    fn punct_runs_are_maximal() {
        assert_eq!(
            tokenize_wordpunct("wait... what?!"),
            vec!["wait", "...", "what", "?!"]
        );
    }

    #[test]
    fn tagger_matches_shipped_lexicon_expectations() {
        let lex = Lexicon::builtin();
        let tokens: Vec<String> = ["she", "shakes", "her", "head"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let tags: Vec<Tag> = tag(&tokens, &lex).into_iter().map(|t| t.tag).collect();
        assert_eq!(tags, vec![Tag::Other, Tag::Verb, Tag::Other, Tag::Noun]);
    }

    #[test]
    fn suffix_rules_fire_in_order() {
        let lex = Lexicon::builtin();
        assert_eq!(tag_token("quickly", &lex), Tag::Adv);
        assert_eq!(tag_token("zorping", &lex), Tag::Verb);
        assert_eq!(tag_token("zorped", &lex), Tag::Verb);
        assert_eq!(tag_token("zorpous", &lex), Tag::Adj);
        assert_eq!(tag_token("zorpment", &lex), Tag::Noun);
        // unknown alphabetic defaults to NOUN, non-alphabetic to OTHER
        assert_eq!(tag_token("zorp", &lex), Tag::Noun);
        assert_eq!(tag_token("'", &lex), Tag::Other);
        assert_eq!(tag_token("1953", &lex), Tag::Other);
        // short words never suffix-match: stem would be a single char
        assert_eq!(tag_token("sly", &lex), Tag::Noun);
    }

    #[test]
    fn trailing_s_strips_and_retries() {
        let lex = Lexicon::builtin();
        assert_eq!(tag_token("walks", &lex), Tag::Verb);
        assert_eq!(tag_token("doors", &lex), Tag::Noun);
        // "ss" endings are not stripped
        assert_eq!(tag_token("glass", &lex), Tag::Noun);
    }

    #[test]
    fn tag_is_length_preserving_and_empty_safe() {
        let lex = Lexicon::builtin();
        assert!(tag(&[], &lex).is_empty());
        let toks = tokenize_wordpunct("a b c d e f!");
        assert_eq!(tag(&toks, &lex).len(), toks.len());
    }

    #[test]
    fn stoplist_load_dedups_and_lowercases() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("stop.txt");
        std::fs::write(&p, "Her\nher\n# comment\nthe\n").unwrap();
        let s = Stoplist::load(&p).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.contains("her") && s.contains("the"));
        assert!(!s.contains("# comment"));
    }

    #[test]
    fn stoplist_empty_file_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.txt");
        std::fs::write(&p, "").unwrap();
        assert_eq!(Stoplist::load(&p).unwrap().len(), 0);
        assert!(Stoplist::load(&dir.path().join("nope.txt")).is_err());
    }

    #[test]
    fn builtin_lexicon_is_substantial() {
        assert!(Lexicon::builtin().len() > 1000);
    }

    proptest! {
        // tokens preserve exactly the non-whitespace characters of the
        // source, lowercased
        #[test]
        fn tokenize_preserves_non_whitespace_chars(s in "\\PC{0,60}") {
            let tokens = tokenize_wordpunct(&s);
            let mut from_tokens: Vec<char> = tokens.concat().chars().collect();
            let mut from_source: Vec<char> = s
                .chars()
                .filter(|c| !c.is_whitespace())
                .flat_map(|c| c.to_lowercase())
                .collect();
            from_tokens.sort_unstable();
            from_source.sort_unstable();
            prop_assert_eq!(from_tokens, from_source);
        }

        #[test]
        fn tokens_never_contain_whitespace(s in "\\PC{0,60}") {
            for t in tokenize_wordpunct(&s) {
                prop_assert!(!t.chars().any(char::is_whitespace));
                prop_assert!(!t.is_empty());
            }
        }

        #[test]
        fn tagging_is_pure(s in "[a-z]{1,12}") {
            let lex = Lexicon::builtin();
            prop_assert_eq!(tag_token(&s, &lex), tag_token(&s, &lex));
        }
    }
}
