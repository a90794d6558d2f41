use std::collections::HashSet;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use super::clean::{strip_quotation, strip_salutation_close};
use super::normalize::{classify_entity, normalize_tokens};
use super::tokenize::{segment_sentences, tokenize_cased};
use super::vocab::{Special, Vocabulary};
use super::{PreprocessError, RawMessage};

static STOPWORDS: LazyLock<HashSet<&'static str>> = LazyLock::new(|| {
    "a about after again all also am an and any are as at be because been before being but by \
     can could did do does doing down for from had has have having he her here hers him his how \
     i if in into is it its just let me more most my no nor not now of off ok on once only or \
     other our out over own please same she should so some such sure than thanks that the their \
     them then there these they this those through to too under until up very was we were what \
     when where which while who why will with would yes you your 's 'll 're 've 'd 'm n't"
        .split_whitespace()
        .collect()
});

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Minimum stopword fraction for a message to count as English.
    pub english_threshold: f64,
    /// Whether subject tokens precede body tokens in the scorer input.
    pub include_subject: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            english_threshold: 0.15,
            include_subject: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TokenizedMessage {
    pub subject_tokens: Vec<String>,
    pub body_sentences: Vec<Vec<String>>,
    pub normalized: bool,
}

impl TokenizedMessage {
    pub fn body_tokens(&self) -> impl Iterator<Item = &String> {
        self.body_sentences.iter().flatten()
    }

    pub fn body_len(&self) -> usize {
        self.body_sentences.iter().map(Vec::len).sum()
    }

    /// Token sequence fed to a response scorer.
    pub fn scorer_input(&self, include_subject: bool) -> Vec<String> {
        let mut out = Vec::new();
        if include_subject {
            out.extend(self.subject_tokens.iter().cloned());
        }
        out.extend(self.body_tokens().cloned());
        out
    }

    pub fn render_subject(&self) -> String {
        self.subject_tokens.join(" ")
    }

    /// One sentence per line, tokens separated by single spaces.
    pub fn render_body(&self) -> String {
        self.body_sentences
            .iter()
            .map(|s| s.join(" "))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Fraction of word tokens that are English stopwords, or `None` when the
/// text has no word tokens. Entity tokens are not words; PERSON/UNK stand in
/// for words and count as non-stopwords.
pub fn english_ratio(text: &str) -> Option<f64> {
    let mut words = 0usize;
    let mut stops = 0usize;
    for tok in tokenize_cased(text) {
        let lower = tok.to_lowercase();
        let is_word = match Special::from_token(&lower) {
            Some(Special::Person) | Some(Special::Unk) => true,
            Some(_) => false,
            None => classify_entity(&tok).is_none() && tok.chars().any(char::is_alphabetic),
        };
        if is_word {
            words += 1;
            if STOPWORDS.contains(lower.as_str()) {
                stops += 1;
            }
        }
    }
    (words > 0).then(|| stops as f64 / words as f64)
}

fn tokenize_sentences(text: &str, vocab: &Vocabulary) -> Vec<Vec<String>> {
    segment_sentences(text)
        .iter()
        .map(|s| normalize_tokens(&tokenize_cased(s), vocab))
        .filter(|s| !s.is_empty())
        .collect()
}

/// Full message preprocessing: language check, quotation removal,
/// salutation/close removal, sentence segmentation, tokenization and
/// normalization, in that order.
pub fn preprocess(
    msg: &RawMessage,
    vocab: &Vocabulary,
    config: &PreprocessConfig,
) -> Result<TokenizedMessage, PreprocessError> {
    let full = format!("{}\n{}", msg.subject, msg.body);
    if let Some(ratio) = english_ratio(&full) {
        if ratio < config.english_threshold {
            return Err(PreprocessError::NonEnglish {
                id: msg.id.clone(),
                ratio,
            });
        }
    }
    let body = strip_salutation_close(&strip_quotation(&msg.body));
    let body_sentences = tokenize_sentences(&body, vocab);
    if body_sentences.is_empty() {
        return Err(PreprocessError::EmptyAfterStripping { id: msg.id.clone() });
    }
    let subject_tokens = normalize_tokens(&tokenize_cased(&msg.subject), vocab);
    Ok(TokenizedMessage {
        subject_tokens,
        body_sentences,
        normalized: true,
    })
}

/// Preprocessing for reply texts: no language check; all sentences are
/// concatenated into one token list.
pub fn preprocess_response(
    id: &str,
    text: &str,
    vocab: &Vocabulary,
) -> Result<Vec<String>, PreprocessError> {
    let body = strip_salutation_close(&strip_quotation(text));
    let tokens: Vec<String> = tokenize_sentences(&body, vocab).into_iter().flatten().collect();
    if tokens.is_empty() {
        return Err(PreprocessError::EmptyAfterStripping { id: id.to_string() });
    }
    Ok(tokens)
}

/// Tokenization used to build the vocabulary: cleaning and entity masking
/// without any vocabulary lookups.
pub fn vocab_tokens(text: &str) -> Vec<String> {
    let body = strip_salutation_close(&strip_quotation(text));
    tokenize_cased(&body)
        .iter()
        .map(|t| super::normalize::mask_entities(t))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab::build_vocab;

    fn msg(subject: &str, body: &str) -> RawMessage {
        RawMessage {
            id: "m1".into(),
            subject: subject.into(),
            body: body.into(),
            ..Default::default()
        }
    }

    fn vocab_for(texts: &[&str]) -> Vocabulary {
        build_vocab(texts.iter().map(|t| vocab_tokens(t)), 1000).unwrap()
    }

    #[test]
    fn meeting_email() {
        let body = "Hi John\nCan you join tomorrow's meeting? Call 555-123-4567.\n> old stuff\nBest regards, Mary";
        let vocab = vocab_for(&["can you join tomorrow's meeting ? call ."]);
        let tm = preprocess(&msg("Meeting", body), &vocab, &PreprocessConfig::default()).unwrap();
        assert!(tm.normalized);
        assert_eq!(
            tm.body_sentences,
            vec![
                vec!["can", "you", "join", "tomorrow", "'s", "meeting", "?"],
                vec!["call", "<phone>", "."],
            ]
        );
        assert_eq!(tm.subject_tokens, vec!["meeting"]);
        assert_eq!(tm.scorer_input(false).len(), 10);
        assert_eq!(tm.scorer_input(true).len(), 11);
    }

    #[test]
    fn quoted_only_body_is_empty() {
        let vocab = vocab_for(&["x"]);
        let r = preprocess(
            &msg("", "> Can you send me the report by Friday?\n> Thanks"),
            &vocab,
            &PreprocessConfig::default(),
        );
        assert!(matches!(r, Err(PreprocessError::EmptyAfterStripping { .. })));
    }

    #[test]
    fn non_english_rejected() {
        let vocab = vocab_for(&["x"]);
        let r = preprocess(
            &msg("Reunión", "Nos vemos mañana en la oficina para revisar el presupuesto"),
            &vocab,
            &PreprocessConfig::default(),
        );
        assert!(matches!(r, Err(PreprocessError::NonEnglish { .. })));
    }

    #[test]
    fn response_text() {
        let vocab = vocab_for(&["sure , i'll be there ."]);
        assert_eq!(
            preprocess_response("r", "Sure, I'll be there.\n\nOn Mon, A wrote:\n> q", &vocab).unwrap(),
            vec!["sure", ",", "i", "'ll", "be", "there", "."]
        );
    }
}
