use std::sync::LazyLock;

use regex::Regex;

use super::vocab::{Special, Vocabulary};

static EMAIL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^[A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(\.[A-Za-z0-9-]+)+$").unwrap()
});
static URL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)^(?:(?:https?|ftp)://\S+|www\.\S+|[a-z0-9-]+(?:\.[a-z0-9-]+)*\.(?:com|org|net|edu|gov|io|co|uk|de)(?:/\S*)?)$",
    )
    .unwrap()
});
static PHONE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:\+?\d{7,15}|\+?(?:\d{1,3}[-.])?\(?\d{3}\)?[-.]\d{3}[-.]\d{4}|\d{3}-\d{4})$")
        .unwrap()
});
static NUM: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\d+(?:[.,:/]\d+)*(?:st|nd|rd|th|am|pm|k|%)?$").unwrap()
});

/// Regex entity detection for a single token.
pub fn classify_entity(token: &str) -> Option<Special> {
    if EMAIL.is_match(token) {
        Some(Special::Email)
    } else if URL.is_match(token) {
        Some(Special::Url)
    } else if PHONE.is_match(token) {
        Some(Special::Phone)
    } else if NUM.is_match(token) {
        Some(Special::Num)
    } else {
        None
    }
}

/// Replaces entities with special tokens, capitalized out-of-vocabulary words
/// with PERSON and every other out-of-vocabulary word with UNK. Output is
/// lowercased and has the same length as the input.
pub fn normalize_tokens<S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> Vec<String> {
    tokens
        .iter()
        .map(|t| normalize_token(t.as_ref(), vocab))
        .collect()
}

fn normalize_token(token: &str, vocab: &Vocabulary) -> String {
    if Special::from_token(token).is_some() {
        return token.to_string();
    }
    if let Some(s) = classify_entity(token) {
        return s.token().to_string();
    }
    let lower = token.to_lowercase();
    if vocab.contains(&lower) {
        return lower;
    }
    if token.chars().next().is_some_and(char::is_uppercase) {
        Special::Person.token().to_string()
    } else {
        Special::Unk.token().to_string()
    }
}

/// Entity replacement only; used before counting tokens for the vocabulary.
pub fn mask_entities(token: &str) -> String {
    match classify_entity(token) {
        Some(s) => s.token().to_string(),
        None => token.to_lowercase(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::vocab::build_vocab;

    fn v(words: &str) -> Vocabulary {
        build_vocab(
            vec![words.split_whitespace().map(String::from).collect::<Vec<_>>()],
            1000,
        )
        .unwrap()
    }

    #[test]
    fn entity_classes() {
        assert_eq!(classify_entity("bob@x.com"), Some(Special::Email));
        assert_eq!(classify_entity("https://a.b/c"), Some(Special::Url));
        assert_eq!(classify_entity("example.org"), Some(Special::Url));
        assert_eq!(classify_entity("5551234567"), Some(Special::Phone));
        assert_eq!(classify_entity("(555)-123-4567"), Some(Special::Phone));
        assert_eq!(classify_entity("555-1234"), Some(Special::Phone));
        assert_eq!(classify_entity("42"), Some(Special::Num));
        assert_eq!(classify_entity("3pm"), Some(Special::Num));
        assert_eq!(classify_entity("hello"), None);
        assert_eq!(classify_entity("."), None);
    }

    #[test]
    fn replaces_email() {
        let vocab = v("email me at");
        assert_eq!(
            normalize_tokens(&["email", "me", "at", "bob@x.com"], &vocab),
            vec!["email", "me", "at", "<email>"]
        );
    }

    #[test]
    fn in_vocab_is_identity() {
        let vocab = v("see you then .");
        let input = ["see", "you", "then", "."];
        assert_eq!(normalize_tokens(&input, &vocab), input.to_vec());
    }

    #[test]
    fn phone_person_unk() {
        let vocab = v("call hi");
        assert_eq!(
            normalize_tokens(&["call", "5551234567"], &vocab),
            vec!["call", "<phone>"]
        );
        assert_eq!(
            normalize_tokens(&["Hi", "Zelda", "zorp"], &vocab),
            vec!["hi", "<person>", "<unk>"]
        );
    }
}
