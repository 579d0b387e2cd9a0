//! Surface complexity measures for a user utterance: word count,
//! type-token ratio and the Gunning fog index.
//!
//! These are utilities only; typed input is not fed into the filter
//! through them.

use std::collections::HashSet;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TextMetricError {
    #[error("text contains no words")]
    Empty,
}

/// Splits on whitespace and punctuation. Apostrophes inside a word are kept
/// (`ich's` is one token).
pub fn tokens(text: &str) -> Vec<&str> {
    text.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '’'))
        .map(|t| t.trim_matches(|c| c == '\'' || c == '’'))
        .filter(|t| !t.is_empty())
        .collect()
}

fn non_empty(text: &str) -> Result<Vec<&str>, TextMetricError> {
    let t = tokens(text);
    if t.is_empty() {
        Err(TextMetricError::Empty)
    } else {
        Ok(t)
    }
}

pub fn word_count(text: &str) -> Result<usize, TextMetricError> {
    Ok(non_empty(text)?.len())
}

/// Lexeme key: lowercased surface form with an enclitic after the
/// apostrophe dropped (`ich's` counts as `ich`).
fn lexeme(token: &str) -> String {
    let base = token.split(['\'', '’']).next().unwrap_or(token);
    base.to_lowercase()
}

/// Distinct lexemes over tokens.
pub fn type_token_ratio(text: &str) -> Result<f64, TextMetricError> {
    let t = non_empty(text)?;
    let types: HashSet<String> = t.iter().map(|w| lexeme(w)).collect();
    Ok(types.len() as f64 / t.len() as f64)
}

/// Sentence count: runs of `.`, `!` or `?` that follow some text. A text
/// without terminal punctuation is one sentence.
pub fn sentence_count(text: &str) -> usize {
    let mut count = 0;
    let mut pending = false;
    for c in text.chars() {
        if matches!(c, '.' | '!' | '?') {
            if pending {
                count += 1;
                pending = false;
            }
        } else if c.is_alphanumeric() {
            pending = true;
        }
    }
    if pending {
        count += 1;
    }
    count.max(1)
}

fn is_vowel(c: char) -> bool {
    matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y' | 'ä' | 'ö' | 'ü')
}

/// Vowel-group syllable estimate; inflectional `-es`, `-ed` and `-ing`
/// endings are not counted.
pub fn syllables(word: &str) -> usize {
    let lower = word.to_lowercase();
    let stem = ["ing", "es", "ed"]
        .iter()
        .find_map(|s| lower.strip_suffix(s).filter(|r| r.chars().count() > 2))
        .unwrap_or(&lower);
    let mut count = 0;
    let mut in_group = false;
    for c in stem.chars() {
        let v = is_vowel(c);
        if v && !in_group {
            count += 1;
        }
        in_group = v;
    }
    count.max(1)
}

pub fn complex_word_count(text: &str) -> usize {
    tokens(text).iter().filter(|w| syllables(w) >= 3).count()
}

/// `0.4 * (words / sentences + 100 * complex / words)`.
pub fn gunning_fog(text: &str) -> Result<f64, TextMetricError> {
    let words = non_empty(text)?.len() as f64;
    let sentences = sentence_count(text) as f64;
    let complex = complex_word_count(text) as f64;
    Ok(0.4 * (words / sentences + 100.0 * complex / words))
}
