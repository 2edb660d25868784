use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const CLS: usize = 1;
pub const SEP: usize = 2;
pub const MASK: usize = 3;
pub const UNK: usize = 4;
pub const SPECIALS: [&str; 5] = ["[PAD]", "[CLS]", "[SEP]", "[MASK]", "[UNK]"];

/// Whitespace word vocabulary with single-character fallback.
///
/// Ids `0..5` are the specials, followed by the printable ASCII
/// characters, followed by whole words in first-seen order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn build<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for s in SPECIALS {
            v.push(s);
        }
        for c in '!'..='~' {
            v.push(&c.to_string());
        }
        for w in words {
            let w = w.as_ref();
            if !w.is_empty() && !w.contains(char::is_whitespace) {
                v.push(w);
            }
        }
        v
    }

    /// Vocabulary covering every generator word.
    pub fn standard() -> Self {
        Vocab::build(super::pools::all_words())
    }

    fn push(&mut self, w: &str) {
        if !self.index.contains_key(w) {
            self.index.insert(w.to_string(), self.tokens.len());
            self.tokens.push(w.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn is_special(id: usize) -> bool {
        id < SPECIALS.len()
    }

    /// First id that is neither special nor a single character.
    pub fn first_word_id(&self) -> usize {
        SPECIALS.len() + ('!'..='~').count()
    }

    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            match self.id(word) {
                Some(id) => out.push(id),
                None => out.extend(word.chars().map(|c| self.id(&c.to_string()).unwrap_or(UNK))),
            }
        }
        out
    }

    /// Inverse of [`Vocab::tokenize`] for in-vocabulary words.
    pub fn detokenize(&self, ids: &[usize]) -> String {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(SPECIALS[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn to_lines(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_lines(text: &str) -> Result<Self> {
        let tokens: Vec<&str> = text.lines().collect();
        if tokens.len() < SPECIALS.len() || tokens[..SPECIALS.len()] != SPECIALS {
            return Err(Error::Data("vocabulary does not start with the special tokens".into()));
        }
        let v = Vocab::build(tokens[SPECIALS.len()..].iter().copied());
        if v.len() != tokens.len() {
            return Err(Error::Data("vocabulary contains duplicate or malformed entries".into()));
        }
        Ok(v)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocab::from_lines(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_has_no_tokens() {
        assert!(Vocab::standard().tokenize("").is_empty());
    }

    #[test]
    fn known_word_round_trips() {
        let v = Vocab::build(["total"]);
        let ids = v.tokenize("total");
        assert_eq!(ids.len(), 1);
        assert_eq!(v.detokenize(&ids), "total");
    }

    #[test]
    fn unknown_word_splits_into_characters() {
        let v = Vocab::standard();
        assert!(v.id("zzq").is_none());
        let ids = v.tokenize("zzq");
        assert_eq!(ids, vec![v.id("z").unwrap(), v.id("z").unwrap(), v.id("q").unwrap()]);
    }

    #[test]
    fn characters_outside_charset_are_unknown() {
        let v = Vocab::standard();
        assert_eq!(v.tokenize("é"), vec![UNK]);
    }

    #[test]
    fn standard_vocab_fits_budget() {
        let v = Vocab::standard();
        assert!(v.len() <= 1024, "{}", v.len());
        assert_eq!(v.id("[MASK]"), Some(MASK));
    }

    #[test]
    fn lines_round_trip() {
        let v = Vocab::standard();
        assert_eq!(Vocab::from_lines(&v.to_lines()).unwrap(), v);
    }
}
