use std::collections::HashMap;

use super::ResponseSpaceError;
use crate::corpus::MessagePair;

/// Determiners, possessives, intensifiers and politeness adjectives that do
/// not carry the intent of a short reply.
const MODIFIERS: &[&str] = &[
    "the", "a", "an", "this", "that", "these", "those", "my", "your", "our", "their", "his",
    "her", "its", "for", "you", "very", "really", "so", "too", "quite", "just", "kind", "nice",
    "lovely", "much", "pretty", "truly",
];

const VARIANTS: &[(&str, &str)] = &[
    ("thank", "thanks"),
    ("thx", "thanks"),
    ("updating", "update"),
    ("updated", "update"),
    ("updates", "update"),
    ("okay", "ok"),
    ("yeah", "yes"),
    ("yep", "yes"),
    ("yup", "yes"),
    ("'ll", "will"),
    ("wo", "will"),
    ("ca", "can"),
    ("'m", "am"),
    ("'re", "are"),
    ("'ve", "have"),
];

fn is_punct(tok: &str) -> bool {
    !tok.chars().any(char::is_alphanumeric)
}

/// Reduces a tokenized reply to its content words: punctuation and
/// modifier words are dropped, common variants are mapped to one form,
/// order is kept.
pub fn canonicalize<S: AsRef<str>>(sentence: &[S]) -> Result<Vec<String>, ResponseSpaceError> {
    let out: Vec<String> = sentence
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| !is_punct(t) && !MODIFIERS.contains(t))
        .map(|t| {
            VARIANTS
                .iter()
                .find(|(from, _)| *from == t)
                .map_or(t, |(_, to)| to)
                .to_string()
        })
        .collect();
    if out.is_empty() {
        return Err(ResponseSpaceError::CanonicalEmpty(
            sentence.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(" "),
        ));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CanonicalResponse {
    pub surface: Vec<String>,
    pub canonical: Vec<String>,
    pub frequency: u64,
}

/// Distinct replies seen at least `min_count` times with at most `max_tokens`
/// tokens, by descending frequency then lexicographically. A reply with no
/// content words keeps its surface form as its canonical form.
pub fn collect_frequent_responses<'a, I>(
    pairs: I,
    min_count: u64,
    max_tokens: usize,
) -> Vec<CanonicalResponse>
where
    I: IntoIterator<Item = &'a MessagePair>,
{
    let mut counts: HashMap<&'a [String], u64> = HashMap::new();
    for p in pairs {
        if !p.response.is_empty() && p.response.len() <= max_tokens {
            *counts.entry(p.response.as_slice()).or_insert(0) += 1;
        }
    }
    let mut kept: Vec<(&[String], u64)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count.max(1))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    kept.into_iter()
        .map(|(surface, frequency)| CanonicalResponse {
            surface: surface.to_vec(),
            canonical: canonicalize(surface).unwrap_or_else(|_| surface.to_vec()),
            frequency,
        })
        .collect()
}
