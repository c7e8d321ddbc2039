use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK: &str = "<unk>";
pub const GRAPH: &str = "<graph>";

/// Word-level vocabulary. Ids `0..4` are `<bos>`, `<eos>`, `<unk>`, `<graph>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, TokenId>,
}

impl Vocabulary {
    pub const BOS: TokenId = TokenId(0);
    pub const EOS: TokenId = TokenId(1);
    pub const UNK: TokenId = TokenId(2);
    pub const GRAPH: TokenId = TokenId(3);

    /// Specials followed by `words` in first-seen order; duplicates and
    /// special names are skipped.
    pub fn build<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self { tokens: Vec::new(), index: BTreeMap::new() };
        for s in [BOS, EOS, UNK, GRAPH] {
            v.push(s);
        }
        for w in words {
            v.push(w.as_ref());
        }
        v
    }

    fn push(&mut self, word: &str) {
        if !self.index.contains_key(word) {
            let id = TokenId(self.tokens.len() as u32);
            self.index.insert(word.to_string(), id);
            self.tokens.push(word.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.index.get(word).copied()
    }

    pub fn id_or_unk(&self, word: &str) -> TokenId {
        self.id(word).unwrap_or(Self::UNK)
    }

    pub fn word(&self, id: TokenId) -> &str {
        self.tokens.get(id.index()).map_or(UNK, String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Token ids of each label word, in label-space order.
    pub fn label_ids(&self, label_space: &[String]) -> Result<Vec<TokenId>> {
        label_space
            .iter()
            .map(|name| {
                let word = label_word(name);
                self.id(&word)
                    .ok_or_else(|| Error::InvalidArgument(format!("label word {word:?} is not in the vocabulary")))
            })
            .collect()
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 4 || tokens[..4] != [BOS, EOS, UNK, GRAPH] {
            return Err(Error::InvalidArgument("vocabulary must start with <bos> <eos> <unk> <graph>".into()));
        }
        let v = Self::build(tokens.iter().skip(4));
        if v.len() != tokens.len() {
            return Err(Error::InvalidArgument("vocabulary contains duplicate tokens".into()));
        }
        Ok(v)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Lowercases and splits into maximal runs of alphanumerics/underscore;
/// every other non-space character is a token of its own.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if is_word_char(c) {
            current.push(c);
            continue;
        }
        if !current.is_empty() {
            out.push(core::mem::take(&mut current));
        }
        if !c.is_whitespace() {
            out.push(c.to_string());
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

/// Out-of-vocabulary words map to `<unk>`.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Vec<TokenId> {
    split_words(text).iter().map(|w| vocab.id_or_unk(w)).collect()
}

pub fn detokenize(ids: &[TokenId], vocab: &Vocabulary) -> String {
    let words: Vec<&str> = ids.iter().map(|&id| vocab.word(id)).collect();
    words.join(" ")
}

/// Single-token spelling of a class name: lowercase, other characters
/// replaced by `_`.
pub fn label_word(name: &str) -> String {
    let w: String = name
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if is_word_char(c) { c } else { '_' })
        .collect();
    if w.is_empty() {
        "_".into()
    } else {
        w
    }
}
