//! Text side: tokenization, vocabulary, tag / sentence / stochastic
//! representations and word-vector tables.

pub mod repr;
pub mod vectors;

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use repr::{
    sentence_representation, sentence_words, stochastic_representation, tag_representation,
    text_input_from_str, StochasticSample,
};
pub use vectors::{load_word_vectors, WordVectorTable};

/// Maximum sequence length including the leading SOS token.
pub const MAX_LEN: usize = 64;
pub const SOS: usize = 0;
pub const UNK: usize = 1;
pub const SOS_TOKEN: &str = "<sos>";
pub const UNK_TOKEN: &str = "<unk>";

/// Lowercase, whitespace split. Punctuation stays inside tokens.
pub fn tokenize(text: &str) -> Result<Vec<String>> {
    let tokens: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    if tokens.is_empty() {
        return Err(Error::EmptyInput("text has no tokens".into()));
    }
    Ok(tokens)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from arbitrary words; order is sorted so that the
    /// same word set always gets the same indices.
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = words
            .into_iter()
            .filter(|w| *w != SOS_TOKEN && *w != UNK_TOKEN)
            .collect();
        let mut tokens = vec![SOS_TOKEN.to_string(), UNK_TOKEN.to_string()];
        tokens.extend(set.into_iter().map(str::to_string));
        Self::from_tokens(tokens).expect("freshly built vocabulary is valid")
    }

    /// Restores a vocabulary from its token list (as saved in checkpoints).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[SOS] != SOS_TOKEN || tokens[UNK] != UNK_TOKEN {
            return Err(Error::Contract(
                "vocabulary must start with the SOS and UNK tokens".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Contract(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self { tokens, index })
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

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TextMode {
    Tag,
    Sentence,
    Stochastic,
}

impl fmt::Display for TextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TextMode::Tag => "tag",
            TextMode::Sentence => "sentence",
            TextMode::Stochastic => "stochastic",
        })
    }
}

impl FromStr for TextMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tag" => Ok(TextMode::Tag),
            "sentence" => Ok(TextMode::Sentence),
            "stochastic" => Ok(TextMode::Stochastic),
            other => Err(Error::Config(format!("unknown text representation `{other}`"))),
        }
    }
}

/// Tokenized text ready for either text encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct TextInput {
    /// Surface words after truncation, without SOS.
    pub words: Vec<String>,
    /// Vocabulary indices with SOS first; at most [`MAX_LEN`] long.
    pub tokens: Vec<usize>,
    pub mode: TextMode,
    pub source_tags: Vec<String>,
}

impl TextInput {
    pub fn new(
        mut words: Vec<String>,
        mode: TextMode,
        source_tags: Vec<String>,
        vocab: &Vocabulary,
    ) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::EmptyInput("text input without words".into()));
        }
        words.truncate(MAX_LEN - 1);
        let tokens = std::iter::once(SOS)
            .chain(words.iter().map(|w| vocab.index_of(w)))
            .collect();
        Ok(Self {
            words,
            tokens,
            mode,
            source_tags,
        })
    }
}
