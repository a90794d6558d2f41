//! From a raw ranking to at most three varied suggestions.

use std::collections::HashSet;

use serde::Serialize;

use crate::corpus::{detokenize, TokenId};
use crate::response_space::{Polarity, ResponseSet};
use crate::scoring::Scorer;
use crate::search::{beam_search, ResponseTrie, ScoredResponse, SearchError};

pub const DEFAULT_LAMBDA: f64 = 0.3;
pub const MAX_SUGGESTIONS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum DiversityError {
    #[error("beam search produced no candidates")]
    NoCandidates,
    #[error(transparent)]
    Search(#[from] SearchError),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Suggestion {
    pub rank: usize,
    pub text: String,
    pub intent_id: String,
    pub polarity: Polarity,
    pub logp: f64,
    pub normalized_score: f64,
    #[serde(skip)]
    pub entry_index: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
#[serde(transparent)]
pub struct SuggestionList {
    pub items: Vec<Suggestion>,
}

impl SuggestionList {
    fn from_ranked(ranked: &[ScoredResponse], set: &ResponseSet) -> Self {
        let items = ranked
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let e = &set.entries[r.entry_index];
                Suggestion {
                    rank: i + 1,
                    text: detokenize(&e.tokens),
                    intent_id: e.intent_id.clone(),
                    polarity: e.polarity,
                    logp: r.logp,
                    normalized_score: r.normalized_score,
                    entry_index: r.entry_index,
                }
            })
            .collect();
        SuggestionList { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.items.iter().map(|s| s.text.as_str()).collect()
    }
}

/// `normalized_score = logp - lambda * prior_logp`, which pushes generic
/// (high-prior) responses down. Stable re-sort, so equal scores keep their
/// input order and `lambda = 0` is the identity on a logp-sorted input.
pub fn normalize_scores(mut ranked: Vec<ScoredResponse>, set: &ResponseSet, lambda: f64) -> Vec<ScoredResponse> {
    for r in &mut ranked {
        r.normalized_score = r.logp - lambda * set.entries[r.entry_index].prior_logp;
    }
    ranked.sort_by(|a, b| b.normalized_score.total_cmp(&a.normalized_score));
    ranked
}

/// Keeps the first (highest-ranked) response of each intent.
pub fn dedupe_by_intent(ranked: Vec<ScoredResponse>, set: &ResponseSet) -> Vec<ScoredResponse> {
    let mut seen = HashSet::new();
    ranked
        .into_iter()
        .filter(|r| seen.insert(set.entries[r.entry_index].intent_id.clone()))
        .collect()
}

/// Which polarity, if any, the third slot must be switched to. Missing
/// negatives: the first two contain a positive and none of the first three
/// is negative. Missing positives: everything shown is negative.
pub fn required_polarity(top: &[Polarity]) -> Option<Polarity> {
    let top = &top[..top.len().min(MAX_SUGGESTIONS)];
    let first_two = &top[..top.len().min(2)];
    if first_two.contains(&Polarity::Positive) && !top.contains(&Polarity::Negative) {
        Some(Polarity::Negative)
    } else if !top.is_empty() && top.iter().all(|&p| p == Polarity::Negative) {
        Some(Polarity::Positive)
    } else {
        None
    }
}

/// Takes the top three of a deduplicated ranking and, when the polarity rule
/// fires, replaces the third slot (or fills it, for shorter lists) with the
/// best response of the missing polarity found by a second, restricted beam
/// pass. The replacement is normalized like the first pass and must have an
/// intent not already shown in slots 1-2. Without such a candidate the list
/// is left as it was.
#[allow(clippy::too_many_arguments)]
pub fn enforce_polarity<S: Scorer>(
    deduped: &[ScoredResponse],
    scorer: &S,
    trie: &ResponseTrie,
    set: &ResponseSet,
    original: &[TokenId],
    b: usize,
    max_len: usize,
    lambda: f64,
) -> Result<SuggestionList, DiversityError> {
    let mut top: Vec<ScoredResponse> = deduped.iter().take(MAX_SUGGESTIONS).cloned().collect();
    let polarities: Vec<Polarity> = top.iter().map(|r| set.entries[r.entry_index].polarity).collect();
    if let Some(want) = required_polarity(&polarities) {
        if trie.has_entries(Some(want)) {
            let kept: HashSet<&str> = top
                .iter()
                .take(2)
                .map(|r| set.entries[r.entry_index].intent_id.as_str())
                .collect();
            let second = beam_search(scorer, original, trie, b, max_len, Some(want))?;
            let second = normalize_scores(second, set, lambda);
            if let Some(pick) = second
                .into_iter()
                .find(|r| !kept.contains(set.entries[r.entry_index].intent_id.as_str()))
            {
                top.truncate(2);
                top.push(pick);
            }
        }
    }
    Ok(SuggestionList::from_ranked(&top, set))
}

/// Beam search, specificity normalization, intent deduplication, polarity
/// enforcement.
pub fn select_suggestions<S: Scorer>(
    scorer: &S,
    trie: &ResponseTrie,
    set: &ResponseSet,
    original: &[TokenId],
    b: usize,
    max_len: usize,
    lambda: f64,
) -> Result<SuggestionList, DiversityError> {
    let ranked = beam_search(scorer, original, trie, b, max_len, None)?;
    diversify(ranked, scorer, trie, set, original, b, max_len, lambda)
}

/// The selection steps after the first beam pass: normalization, intent
/// dedup and polarity enforcement.
#[allow(clippy::too_many_arguments)]
pub fn diversify<S: Scorer>(
    ranked: Vec<ScoredResponse>,
    scorer: &S,
    trie: &ResponseTrie,
    set: &ResponseSet,
    original: &[TokenId],
    b: usize,
    max_len: usize,
    lambda: f64,
) -> Result<SuggestionList, DiversityError> {
    if ranked.is_empty() {
        return Err(DiversityError::NoCandidates);
    }
    let deduped = dedupe_by_intent(normalize_scores(ranked, set, lambda), set);
    enforce_polarity(&deduped, scorer, trie, set, original, b, max_len, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::response_space::ResponseEntry;
    use Polarity::*;

    fn set(rows: &[(&str, Polarity, f64)]) -> ResponseSet {
        ResponseSet {
            entries: rows
                .iter()
                .enumerate()
                .map(|(i, (intent, p, prior))| ResponseEntry {
                    tokens: vec![format!("r{i}")],
                    intent_id: intent.to_string(),
                    polarity: *p,
                    prior_logp: *prior,
                    validated: true,
                })
                .collect(),
        }
    }

    fn scored(v: &[(usize, f64)]) -> Vec<ScoredResponse> {
        v.iter().map(|&(i, l)| ScoredResponse::new(i, l)).collect()
    }

    fn order(v: &[ScoredResponse]) -> Vec<usize> {
        v.iter().map(|r| r.entry_index).collect()
    }

    #[test]
    fn lambda_zero_is_identity() {
        let s = set(&[("a", Positive, -1.0), ("b", Positive, -9.0), ("c", Neutral, -3.0)]);
        let ranked = scored(&[(2, -1.0), (0, -2.0), (1, -2.0)]);
        assert_eq!(order(&normalize_scores(ranked, &s, 0.0)), vec![2, 0, 1]);
    }

    #[test]
    fn rarer_entry_wins_equal_logp() {
        let s = set(&[("a", Positive, -1.0), ("b", Positive, -5.0)]);
        for lambda in [0.01, 0.3, 1.0] {
            let out = normalize_scores(scored(&[(0, -2.0), (1, -2.0)]), &s, lambda);
            assert_eq!(order(&out), vec![1, 0]);
        }
    }

    #[test]
    fn dedupe_keeps_best_per_intent() {
        let s = set(&[("A", Positive, -1.0), ("A", Positive, -1.0), ("B", Neutral, -1.0)]);
        let out = dedupe_by_intent(scored(&[(0, -0.1), (1, -0.2), (2, -0.3)]), &s);
        assert_eq!(order(&out), vec![0, 2]);
        let s = set(&[("A", Positive, -1.0), ("B", Positive, -1.0)]);
        assert_eq!(order(&dedupe_by_intent(scored(&[(1, -0.1), (0, -0.2)]), &s)), vec![1, 0]);
    }

    #[test]
    fn rule_conditions() {
        assert_eq!(required_polarity(&[Positive, Positive, Positive]), Some(Negative));
        assert_eq!(required_polarity(&[Neutral, Positive, Neutral]), Some(Negative));
        assert_eq!(required_polarity(&[Positive, Neutral, Negative]), None);
        assert_eq!(required_polarity(&[Neutral, Neutral, Positive]), None);
        assert_eq!(required_polarity(&[Negative, Negative, Negative]), Some(Positive));
        assert_eq!(required_polarity(&[Negative, Neutral, Negative]), None);
        assert_eq!(required_polarity(&[]), None);
    }
}
