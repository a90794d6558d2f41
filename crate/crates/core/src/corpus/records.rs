//! On-disk corpus records (JSONL).

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::CorpusError;

/// One incoming message with its reply flags and social signals.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawMessage {
    pub id: String,
    #[serde(default)]
    pub subject: String,
    #[serde(default)]
    pub body: String,
    #[serde(default)]
    pub sender: String,
    #[serde(default)]
    pub recipient: String,
    #[serde(default)]
    pub replied: bool,
    #[serde(default)]
    pub reply_from_mobile: bool,
    #[serde(default)]
    pub sender_in_address_book: bool,
    #[serde(default)]
    pub sender_in_social_network: bool,
    #[serde(default)]
    pub recipient_replied_before: bool,
}

/// `(original, response)` link. The same schema is used for raw input pairs
/// and for preprocessed output, where both texts are space-joined tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub original_id: String,
    #[serde(default)]
    pub original_text: String,
    pub response_text: String,
}

/// Training pair in token form. `original` is the scorer input sequence
/// (subject tokens, when enabled, followed by body tokens).
#[derive(Clone, Debug, PartialEq)]
pub struct MessagePair {
    pub original_id: String,
    pub original: Vec<String>,
    pub response: Vec<String>,
}

impl MessagePair {
    pub fn to_record(&self) -> PairRecord {
        PairRecord {
            original_id: self.original_id.clone(),
            original_text: self.original.join(" "),
            response_text: self.response.join(" "),
        }
    }

    pub fn from_record(rec: &PairRecord) -> Self {
        MessagePair {
            original_id: rec.original_id.clone(),
            original: rec.original_text.split_whitespace().map(String::from).collect(),
            response: rec.response_text.split_whitespace().map(String::from).collect(),
        }
    }
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = std::fs::File::open(path).map_err(|e| CorpusError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CorpusError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            path: path.display().to_string(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CorpusError> {
    let file = std::fs::File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        let line = serde_json::to_string(r).expect("record serializes");
        writeln!(w, "{line}").map_err(|e| CorpusError::io(path, e))?;
    }
    w.flush().map_err(|e| CorpusError::io(path, e))
}

/// Loads a message corpus, enforcing unique ids and consistent reply flags.
pub fn load_corpus(path: &Path) -> Result<Vec<RawMessage>, CorpusError> {
    let msgs: Vec<RawMessage> = read_jsonl(path)?;
    validate_corpus(&msgs)?;
    Ok(msgs)
}

pub fn validate_corpus(msgs: &[RawMessage]) -> Result<(), CorpusError> {
    let mut seen = HashSet::new();
    for m in msgs {
        if !seen.insert(m.id.as_str()) {
            return Err(CorpusError::DuplicateId(m.id.clone()));
        }
        if !m.replied && m.reply_from_mobile {
            return Err(CorpusError::InconsistentFlags(m.id.clone()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn booleans_default_false() {
        let m: RawMessage = serde_json::from_str(r#"{"id":"a","body":"hi"}"#).unwrap();
        assert!(!m.replied && !m.sender_in_address_book);
        assert!(serde_json::from_str::<RawMessage>(r#"{"id":"a","extra":1}"#).is_err());
    }

    #[test]
    fn corpus_validation() {
        let a = RawMessage {
            id: "a".into(),
            ..Default::default()
        };
        assert!(matches!(
            validate_corpus(&[a.clone(), a.clone()]),
            Err(CorpusError::DuplicateId(_))
        ));
        let bad = RawMessage {
            reply_from_mobile: true,
            ..a
        };
        assert!(matches!(
            validate_corpus(&[bad]),
            Err(CorpusError::InconsistentFlags(_))
        ));
    }

    #[test]
    fn jsonl_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        std::fs::write(&p, "{\"id\":\"a\"}\n\nnot json\n").unwrap();
        match read_jsonl::<RawMessage>(&p) {
            Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
