use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::canonical::CanonicalResponse;
use super::discover::{extract_top_members, Discovery};
use super::graph::IntentGraph;
use super::ResponseSpaceError;
use crate::corpus::tokenize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
    Neutral,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResponseEntry {
    pub tokens: Vec<String>,
    pub intent_id: String,
    pub polarity: Polarity,
    /// Log of the entry's share of total response frequency.
    pub prior_logp: f64,
    pub validated: bool,
}

impl ResponseEntry {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResponseSet {
    pub entries: Vec<ResponseEntry>,
}

#[derive(Serialize, Deserialize)]
struct EntryRecord {
    text: String,
    intent_id: String,
    polarity: Polarity,
    prior_logp: f64,
    validated: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SetFile {
    version: String,
    entries: Vec<EntryRecord>,
}

impl ResponseSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_json(&self) -> String {
        let file = SetFile {
            version: "v1".into(),
            entries: self
                .entries
                .iter()
                .map(|e| EntryRecord {
                    text: e.text(),
                    intent_id: e.intent_id.clone(),
                    polarity: e.polarity,
                    prior_logp: e.prior_logp,
                    validated: e.validated,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("response set serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ResponseSpaceError> {
        let file: SetFile =
            serde_json::from_str(text).map_err(|e| ResponseSpaceError::BadFile(e.to_string()))?;
        if file.version != "v1" {
            return Err(ResponseSpaceError::BadFile(format!(
                "unsupported version {:?}",
                file.version
            )));
        }
        let mut entries = Vec::with_capacity(file.entries.len());
        for r in file.entries {
            let tokens: Vec<String> = r.text.split_whitespace().map(String::from).collect();
            if tokens.is_empty() {
                return Err(ResponseSpaceError::BadFile("entry with empty text".into()));
            }
            if !(r.prior_logp <= 0.0) {
                return Err(ResponseSpaceError::BadFile(format!(
                    "prior_logp {} for {:?} is not a log-probability",
                    r.prior_logp, r.text
                )));
            }
            entries.push(ResponseEntry {
                tokens,
                intent_id: r.intent_id,
                polarity: r.polarity,
                prior_logp: r.prior_logp,
                validated: r.validated,
            });
        }
        Ok(ResponseSet { entries })
    }

    pub fn save(&self, path: &Path) -> Result<(), ResponseSpaceError> {
        std::fs::write(path, self.to_json()).map_err(|e| io_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, ResponseSpaceError> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        Self::from_json(&text)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> ResponseSpaceError {
    ResponseSpaceError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Draft response set: the top `k` members of every discovered cluster, in
/// cluster order, with frequency priors renormalized over the draft.
/// Polarity is tagged afterwards by [`tag_polarity`].
pub fn build_draft(
    graph: &IntentGraph,
    responses: &[CanonicalResponse],
    discovery: &Discovery,
    k: usize,
) -> Result<ResponseSet, ResponseSpaceError> {
    let mut picked: Vec<(usize, &str)> = Vec::new();
    for label in discovery.clusters() {
        for r in extract_top_members(graph, discovery, label, k)? {
            picked.push((r, label));
        }
    }
    let total: u64 = picked.iter().map(|&(r, _)| responses[r].frequency).sum();
    let entries = picked
        .into_iter()
        .map(|(r, label)| ResponseEntry {
            tokens: responses[r].surface.clone(),
            intent_id: label.to_string(),
            polarity: Polarity::Neutral,
            prior_logp: (responses[r].frequency as f64 / total as f64).ln().min(0.0),
            validated: false,
        })
        .collect();
    Ok(tag_polarity(ResponseSet { entries }))
}

const POSITIVE_OPENERS: &[&str] = &["yes", "sure", "yeah", "yep", "absolutely", "definitely"];

const NEGATIVE_PHRASES: &[&[&str]] = &[
    &["ca", "n't"],
    &["wo", "n't"],
    &["cannot"],
    &["unfortunately"],
    &["unable"],
    &["not", "be", "able"],
    &["not", "be", "available"],
    &["do", "n't", "think"],
];

fn contains_phrase(tokens: &[&str], phrase: &[&str]) -> bool {
    tokens.windows(phrase.len()).any(|w| w == phrase)
}

/// Lexicon polarity of a single tokenized reply. An affirmative opener wins
/// over any later negation.
pub fn classify_polarity<S: AsRef<str>>(tokens: &[S]) -> Polarity {
    let t: Vec<String> = tokens.iter().map(|s| s.as_ref().to_lowercase()).collect();
    let t: Vec<&str> = t.iter().map(String::as_str).collect();
    match t.as_slice() {
        [first, ..] if POSITIVE_OPENERS.contains(first) => return Polarity::Positive,
        ["of", "course", ..] => return Polarity::Positive,
        // "no problem" and "no worries" are agreements.
        ["no", next, ..] if !matches!(*next, "problem" | "worries") => return Polarity::Negative,
        ["no"] => return Polarity::Negative,
        _ => {}
    }
    if NEGATIVE_PHRASES.iter().any(|p| contains_phrase(&t, p)) {
        Polarity::Negative
    } else {
        Polarity::Neutral
    }
}

/// Tags every entry with its lexicon polarity, then gives all members of a
/// cluster the cluster's majority polarity (neutral on ties).
pub fn tag_polarity(mut set: ResponseSet) -> ResponseSet {
    let raw: Vec<Polarity> = set.entries.iter().map(|e| classify_polarity(&e.tokens)).collect();
    let mut votes: HashMap<&str, [usize; 3]> = HashMap::new();
    for (e, p) in set.entries.iter().zip(&raw) {
        votes.entry(e.intent_id.as_str()).or_default()[*p as usize] += 1;
    }
    let majority: HashMap<String, Polarity> = votes
        .into_iter()
        .map(|(label, v)| {
            let top = *v.iter().max().unwrap();
            let winners: Vec<usize> = (0..3).filter(|&i| v[i] == top).collect();
            let p = match winners.as_slice() {
                [0] => Polarity::Positive,
                [1] => Polarity::Negative,
                _ => Polarity::Neutral,
            };
            (label.to_string(), p)
        })
        .collect();
    for e in &mut set.entries {
        e.polarity = majority[&e.intent_id];
    }
    set
}

/// Applies rater verdicts from a TSV of `response_text<TAB>cluster<TAB>yes|no`.
/// "no" removes the entry, "yes" marks it validated. With `strict`, entries
/// that were never rated are dropped too. Blank lines and `#` comments are
/// skipped.
pub fn apply_validation(
    set: &ResponseSet,
    ratings: &str,
    strict: bool,
) -> Result<ResponseSet, ResponseSpaceError> {
    let index: HashMap<(String, &str), usize> = set
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| ((e.text(), e.intent_id.as_str()), i))
        .collect();
    let mut verdict: Vec<Option<bool>> = vec![None; set.len()];
    for (n, line) in ratings.lines().enumerate() {
        let line_no = n + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [text, cluster, answer] = fields.as_slice() else {
            return Err(ResponseSpaceError::MalformedRating {
                line: line_no,
                msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        };
        let yes = match answer.trim().to_ascii_lowercase().as_str() {
            "yes" => true,
            "no" => false,
            other => {
                return Err(ResponseSpaceError::MalformedRating {
                    line: line_no,
                    msg: format!("verdict must be yes or no, got {other:?}"),
                })
            }
        };
        let key = (tokenize(text).join(" "), cluster.trim());
        let &i = index
            .get(&key)
            .ok_or(ResponseSpaceError::UnknownRating { line: line_no })?;
        // A later "no" overrides an earlier "yes" for the same entry.
        verdict[i] = Some(verdict[i].unwrap_or(true) && yes);
    }
    let entries = set
        .entries
        .iter()
        .zip(&verdict)
        .filter_map(|(e, v)| match v {
            Some(false) => None,
            Some(true) => Some(ResponseEntry {
                validated: true,
                ..e.clone()
            }),
            None if strict => None,
            None => Some(e.clone()),
        })
        .collect();
    Ok(ResponseSet { entries })
}
