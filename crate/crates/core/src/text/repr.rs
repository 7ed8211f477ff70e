use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::{tokenize, TextInput, TextMode, Vocabulary};
use crate::error::{Error, Result};

/// Which words of the full sentence a stochastic draw kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StochasticSample {
    /// Sentence length in words, before sampling.
    pub l: usize,
    /// Number of kept words, `1 ≤ k ≤ l`.
    pub k: usize,
    /// Strictly increasing positions into the sentence word list.
    pub kept_positions: Vec<usize>,
}

fn require_tags(tags: &[String]) -> Result<()> {
    if tags.is_empty() {
        return Err(Error::EmptyInput("empty tag list".into()));
    }
    Ok(())
}

/// One tag, chosen uniformly.
pub fn tag_representation(
    tags: &[String],
    vocab: &Vocabulary,
    rng: &mut impl Rng,
) -> Result<TextInput> {
    require_tags(tags)?;
    let tag = &tags[rng.random_range(0..tags.len())];
    TextInput::new(tokenize(tag)?, TextMode::Tag, tags.to_vec(), vocab)
}

/// All tags in shuffled order, tokenized, before truncation.
pub fn sentence_words(tags: &[String], rng: &mut impl Rng) -> Result<Vec<String>> {
    require_tags(tags)?;
    let mut order: Vec<&String> = tags.iter().collect();
    order.shuffle(rng);
    let joined = order
        .iter()
        .map(|t| t.as_str())
        .collect::<Vec<_>>()
        .join(" ");
    tokenize(&joined)
}

pub fn sentence_representation(
    tags: &[String],
    vocab: &Vocabulary,
    rng: &mut impl Rng,
) -> Result<TextInput> {
    let words = sentence_words(tags, rng)?;
    TextInput::new(words, TextMode::Sentence, tags.to_vec(), vocab)
}

/// Keeps `K ~ Uniform{1..L}` distinct words of the shuffled sentence, in
/// their original order.
pub fn stochastic_representation(
    tags: &[String],
    vocab: &Vocabulary,
    rng: &mut impl Rng,
) -> Result<(TextInput, StochasticSample)> {
    let words = sentence_words(tags, rng)?;
    let l = words.len();
    let k = rng.random_range(1..=l);
    let mut kept_positions = index::sample(rng, l, k).into_vec();
    kept_positions.sort_unstable();
    let kept = kept_positions.iter().map(|&i| words[i].clone()).collect();
    let input = TextInput::new(kept, TextMode::Stochastic, tags.to_vec(), vocab)?;
    Ok((
        input,
        StochasticSample {
            l,
            k,
            kept_positions,
        },
    ))
}

/// Free text (a query or caption) as a sentence-mode input.
pub fn text_input_from_str(text: &str, vocab: &Vocabulary) -> Result<TextInput> {
    TextInput::new(tokenize(text)?, TextMode::Sentence, vec![], vocab)
}
