use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CorpusError;

pub type TokenId = u32;

const VOCAB_VERSION: &str = "v1";

/// Reserved tokens present in every vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Special {
    Eom,
    Unk,
    Person,
    Url,
    Email,
    Phone,
    Num,
}

impl Special {
    pub const ALL: [Special; 7] = [
        Special::Eom,
        Special::Unk,
        Special::Person,
        Special::Url,
        Special::Email,
        Special::Phone,
        Special::Num,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Special::Eom => "<eom>",
            Special::Unk => "<unk>",
            Special::Person => "<person>",
            Special::Url => "<url>",
            Special::Email => "<email>",
            Special::Phone => "<phone>",
            Special::Num => "<num>",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Special::Eom => "EOM",
            Special::Unk => "UNK",
            Special::Person => "PERSON",
            Special::Url => "URL",
            Special::Email => "EMAIL",
            Special::Phone => "PHONE",
            Special::Num => "NUM",
        }
    }

    pub fn from_token(token: &str) -> Option<Special> {
        Special::ALL.into_iter().find(|s| s.token() == token)
    }
}

/// Dense token <-> id mapping. Regular tokens come first (by descending
/// frequency), followed by the specials in [`Special::ALL`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    max_size: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: String,
    max_size: usize,
    tokens: Vec<String>,
    specials: BTreeMap<String, String>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>, max_size: usize) -> Result<Self, CorpusError> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(CorpusError::BadVocab(format!("duplicate token {t:?}")));
            }
        }
        for s in Special::ALL {
            if !index.contains_key(s.token()) {
                return Err(CorpusError::BadVocab(format!("missing special {}", s.key())));
            }
        }
        Ok(Vocabulary {
            tokens,
            index,
            max_size,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or of UNK when it is out of vocabulary.
    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or_else(|| self.special(Special::Unk))
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn special(&self, s: Special) -> TokenId {
        self.index[s.token()]
    }

    pub fn eom(&self) -> TokenId {
        self.special(Special::Eom)
    }

    pub fn is_special_id(&self, id: TokenId) -> bool {
        Special::from_token(self.token(id)).is_some()
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id_or_unk(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    /// 64-bit fingerprint of the token list; model files record it so a model
    /// is never paired with a different vocabulary.
    pub fn fingerprint(&self) -> u64 {
        let joined = self.tokens.join("\n");
        twox_hash::XxHash64::oneshot(0, joined.as_bytes())
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            version: VOCAB_VERSION.to_string(),
            max_size: self.max_size,
            tokens: self.tokens.clone(),
            specials: Special::ALL
                .iter()
                .map(|s| (s.key().to_string(), s.token().to_string()))
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CorpusError> {
        let file: VocabFile =
            serde_json::from_str(text).map_err(|e| CorpusError::BadVocab(e.to_string()))?;
        if file.version != VOCAB_VERSION {
            return Err(CorpusError::BadVocab(format!(
                "unsupported version {:?}",
                file.version
            )));
        }
        for s in Special::ALL {
            match file.specials.get(s.key()) {
                Some(t) if t == s.token() => {}
                _ => {
                    return Err(CorpusError::BadVocab(format!(
                        "special {} missing or remapped",
                        s.key()
                    )))
                }
            }
        }
        Vocabulary::from_tokens(file.tokens, file.max_size)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_json()).map_err(|e| CorpusError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        Vocabulary::from_json(&text)
    }
}

/// Keeps the `max_size` most frequent tokens (ties broken lexicographically)
/// and appends the specials. Special tokens in the input are not counted.
pub fn build_vocab<I, T>(corpus: I, max_size: usize) -> Result<Vocabulary, CorpusError>
where
    I: IntoIterator<Item = T>,
    T: AsRef<[String]>,
{
    if max_size == 0 {
        return Err(CorpusError::InvalidArgument("max_size must be > 0".into()));
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for seq in corpus {
        for tok in seq.as_ref() {
            if Special::from_token(tok).is_none() {
                *counts.entry(tok.clone()).or_insert(0) += 1;
            }
        }
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut tokens: Vec<String> = ranked.into_iter().take(max_size).map(|(t, _)| t).collect();
    tokens.extend(Special::ALL.iter().map(|s| s.token().to_string()));
    Vocabulary::from_tokens(tokens, max_size)
}
