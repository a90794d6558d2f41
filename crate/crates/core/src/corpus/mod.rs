//! Corpus ingestion: cleaning, tokenization, normalization and the
//! vocabulary, turning raw messages into `(original, response)` pairs.

mod clean;
mod normalize;
mod preprocess;
mod records;
mod tokenize;
mod vocab;

use std::collections::HashMap;
use std::path::Path;

pub use clean::{strip_quotation, strip_salutation_close};
pub use normalize::{classify_entity, mask_entities, normalize_tokens};
pub use preprocess::{
    english_ratio, preprocess, preprocess_response, vocab_tokens, PreprocessConfig,
    TokenizedMessage,
};
pub use records::{
    load_corpus, read_jsonl, validate_corpus, write_jsonl, MessagePair, PairRecord, RawMessage,
};
pub use tokenize::{detokenize, segment_sentences, tokenize, tokenize_cased};
pub use vocab::{build_vocab, Special, TokenId, Vocabulary};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Malformed { path: String, line: usize, msg: String },
    #[error("duplicate message id {0:?}")]
    DuplicateId(String),
    #[error("message {0:?}: reply_from_mobile set on an unreplied message")]
    InconsistentFlags(String),
    #[error("bad vocabulary: {0}")]
    BadVocab(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PreprocessError {
    #[error("message {id:?} is not English (stopword ratio {ratio:.3})")]
    NonEnglish { id: String, ratio: f64 },
    #[error("message {id:?} is empty after quotation/salutation removal")]
    EmptyAfterStripping { id: String },
}

/// Counts of pairs dropped during ingestion.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct IngestStats {
    pub pairs_in: usize,
    pub pairs_out: usize,
    pub non_english: usize,
    pub empty: usize,
}

pub struct Ingested {
    pub vocab: Vocabulary,
    pub pairs: Vec<MessagePair>,
    pub stats: IngestStats,
}

/// Builds the vocabulary from every message and reply text, then
/// preprocesses each raw pair. The original is taken from the corpus when
/// its id is present there, else from the pair's own `original_text`.
/// Pair order is preserved (it is the delivery order used for temporal
/// splits).
pub fn ingest(
    messages: &[RawMessage],
    raw_pairs: &[PairRecord],
    max_vocab: usize,
    config: &PreprocessConfig,
) -> Result<Ingested, CorpusError> {
    let by_id: HashMap<&str, &RawMessage> = messages.iter().map(|m| (m.id.as_str(), m)).collect();
    let originals: Vec<RawMessage> = raw_pairs
        .iter()
        .map(|p| match by_id.get(p.original_id.as_str()) {
            Some(m) => (*m).clone(),
            None => RawMessage {
                id: p.original_id.clone(),
                body: p.original_text.clone(),
                ..Default::default()
            },
        })
        .collect();

    let mut texts: Vec<Vec<String>> = Vec::new();
    for m in messages {
        texts.push(vocab_tokens(&m.subject));
        texts.push(vocab_tokens(&m.body));
    }
    for (p, o) in raw_pairs.iter().zip(&originals) {
        if !by_id.contains_key(o.id.as_str()) {
            texts.push(vocab_tokens(&o.body));
        }
        texts.push(vocab_tokens(&p.response_text));
    }
    let vocab = build_vocab(&texts, max_vocab)?;

    let mut stats = IngestStats {
        pairs_in: raw_pairs.len(),
        ..Default::default()
    };
    let mut pairs = Vec::new();
    for (p, o) in raw_pairs.iter().zip(&originals) {
        let original = match preprocess(o, &vocab, config) {
            Ok(tm) => tm,
            Err(e) => {
                stats.count(&e);
                continue;
            }
        };
        let response = match preprocess_response(&p.original_id, &p.response_text, &vocab) {
            Ok(r) => r,
            Err(e) => {
                stats.count(&e);
                continue;
            }
        };
        pairs.push(MessagePair {
            original_id: p.original_id.clone(),
            original: original.scorer_input(config.include_subject),
            response,
        });
    }
    stats.pairs_out = pairs.len();
    Ok(Ingested {
        vocab,
        pairs,
        stats,
    })
}

impl IngestStats {
    fn count(&mut self, e: &PreprocessError) {
        match e {
            PreprocessError::NonEnglish { .. } => self.non_english += 1,
            PreprocessError::EmptyAfterStripping { .. } => self.empty += 1,
        }
    }
}
