//! Whether a message should get suggestions at all: hashed content and
//! social features, a feed-forward classifier and a threshold.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use twox_hash::XxHash64;

use crate::container::{ContainerError, ModelFile, Tensor};
use crate::corpus::{RawMessage, TokenizedMessage};
use crate::nn::{self, Mlp, MlpShape, SparseInput, Target, TrainConfig};

const KIND: &str = "trigger";

/// Seed of the xxHash64 used for feature hashing; stored in model files.
pub const HASH_SEED: u64 = 0x7269_6767_6572;

/// Upper bounds (inclusive) of the body-length buckets, in tokens.
const LENGTH_BUCKETS: [usize; 4] = [5, 20, 50, 100];

pub const FAMILIES: [&str; 3] = ["body_unigram", "body_bigram", "subject_unigram"];

/// Three social flags plus a one-hot body-length bucket.
pub const DENSE_DIM: usize = 3 + LENGTH_BUCKETS.len() + 1;

#[derive(Debug, thiserror::Error)]
pub enum TriggerError {
    #[error("training data has a single class")]
    SingleClassData,
    #[error("trigger loss became non-finite")]
    DivergedLoss,
    #[error("invalid trigger configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriggerFeatures {
    /// Hashed ids per family, in [`FAMILIES`] order.
    pub sparse: [Vec<u32>; 3],
    pub dense: Vec<f64>,
}

impl TriggerFeatures {
    fn input(&self) -> SparseInput {
        SparseInput {
            sparse: self.sparse.to_vec(),
            dense: self.dense.clone(),
        }
    }
}

pub fn hash_feature(family: &str, text: &str, seed: u64, buckets: usize) -> u32 {
    let key = format!("{family}\u{1f}{text}");
    (XxHash64::oneshot(seed, key.as_bytes()) % buckets as u64) as u32
}

/// Body unigrams, body bigrams (within sentences) and subject unigrams,
/// hashed into `buckets`; social flags and a body-length bucket as dense
/// features.
pub fn extract_features(msg: &TokenizedMessage, raw: &RawMessage, buckets: usize) -> TriggerFeatures {
    extract_features_seeded(msg, raw, buckets, HASH_SEED)
}

pub fn extract_features_seeded(msg: &TokenizedMessage, raw: &RawMessage, buckets: usize, seed: u64) -> TriggerFeatures {
    let h = |fam: usize, text: &str| hash_feature(FAMILIES[fam], text, seed, buckets);
    let unigrams = msg.body_tokens().map(|t| h(0, t)).collect();
    let bigrams = msg
        .body_sentences
        .iter()
        .flat_map(|s| s.windows(2).map(|w| format!("{} {}", w[0], w[1])))
        .map(|b| h(1, &b))
        .collect();
    let subject = msg.subject_tokens.iter().map(|t| h(2, t)).collect();
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    let mut dense = vec![
        flag(raw.sender_in_address_book),
        flag(raw.sender_in_social_network),
        flag(raw.recipient_replied_before),
    ];
    let len = msg.body_len();
    let bucket = LENGTH_BUCKETS.iter().position(|&b| len <= b).unwrap_or(LENGTH_BUCKETS.len());
    dense.extend((0..=LENGTH_BUCKETS.len()).map(|i| flag(i == bucket)));
    TriggerFeatures {
        sparse: [unigrams, bigrams, subject],
        dense,
    }
}

/// Positives were answered from a mobile device; negatives were never
/// answered. Messages answered elsewhere carry no label.
pub fn trigger_label(raw: &RawMessage) -> Option<bool> {
    if raw.reply_from_mobile {
        Some(true)
    } else if !raw.replied {
        Some(false)
    } else {
        None
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TriggerConfig {
    pub buckets: usize,
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub threshold: f64,
    pub rng_seed: u64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        TriggerConfig {
            buckets: 1 << 18,
            embed_dim: 16,
            hidden: vec![64, 32, 16],
            dropout: 0.2,
            epochs: 10,
            learning_rate: 0.05,
            batch_size: 32,
            threshold: 0.5,
            rng_seed: 1,
        }
    }
}

impl TriggerConfig {
    pub fn shape(&self) -> MlpShape {
        MlpShape {
            families: FAMILIES.len(),
            buckets: self.buckets,
            embed_dim: self.embed_dim,
            dense_dim: DENSE_DIM,
            hidden: self.hidden.clone(),
            outputs: 1,
        }
    }

    pub fn validate(&self) -> Result<(), TriggerError> {
        if self.buckets == 0 || self.embed_dim == 0 || self.hidden.contains(&0) || self.batch_size == 0 {
            return Err(TriggerError::InvalidConfig("sizes must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.threshold) {
            return Err(TriggerError::InvalidConfig("dropout and threshold must lie in [0,1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriggerModel {
    pub mlp: Mlp,
    pub threshold: f64,
    pub hash_seed: u64,
    pub dropout: f64,
}

impl TriggerModel {
    /// All-zero weights: scores 0.5 everywhere.
    pub fn zeros(config: &TriggerConfig) -> Self {
        TriggerModel {
            mlp: Mlp::zeros(config.shape()),
            threshold: config.threshold,
            hash_seed: HASH_SEED,
            dropout: config.dropout,
        }
    }

    pub fn buckets(&self) -> usize {
        self.mlp.shape.buckets
    }

    /// Probability of triggering; dropout is never applied here.
    pub fn score(&self, feats: &TriggerFeatures) -> f64 {
        let z = self.mlp.logits(&feats.input())[0];
        1.0 / (1.0 + (-z).exp())
    }

    pub fn features(&self, msg: &TokenizedMessage, raw: &RawMessage) -> TriggerFeatures {
        extract_features_seeded(msg, raw, self.buckets(), self.hash_seed)
    }

    pub fn to_file(&self) -> ModelFile {
        // The trigger does not depend on the vocabulary; hash 0 marks that.
        let mut f = ModelFile::new(KIND, 0);
        let s = &self.mlp.shape;
        f.set_meta("threshold", self.threshold);
        f.set_meta("hash_seed", self.hash_seed);
        f.set_meta("dropout", self.dropout);
        f.set_meta("buckets", s.buckets);
        f.set_meta("embed_dim", s.embed_dim);
        f.set_meta(
            "hidden",
            s.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","),
        );
        f.insert("params", Tensor::from_f64(vec![self.mlp.params.len()], &self.mlp.params));
        f
    }

    pub fn from_file(file: &ModelFile) -> Result<Self, TriggerError> {
        file.expect(KIND, 0)?;
        let hidden: String = file.meta("hidden")?;
        let hidden = hidden
            .split(',')
            .filter(|h| !h.is_empty())
            .map(|h| h.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| ContainerError::Corrupt(format!("hidden sizes: {e}")))?;
        let shape = MlpShape {
            families: FAMILIES.len(),
            buckets: file.meta("buckets")?,
            embed_dim: file.meta("embed_dim")?,
            dense_dim: DENSE_DIM,
            hidden,
            outputs: 1,
        };
        let params: Vec<f64> = file.f32s("params")?.iter().map(|&x| x as f64).collect();
        if params.len() != shape.param_count() {
            return Err(ContainerError::Corrupt("trigger parameter count".into()).into());
        }
        Ok(TriggerModel {
            mlp: Mlp { shape, params },
            threshold: file.meta("threshold")?,
            hash_seed: file.meta("hash_seed")?,
            dropout: file.meta("dropout")?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TriggerError> {
        Ok(self.to_file().save(path)?)
    }

    pub fn load(path: &Path) -> Result<Self, TriggerError> {
        Self::from_file(&ModelFile::load(path)?)
    }
}

/// Randomly drops examples of the larger class until both classes have the
/// same size. Order of the survivors is preserved.
pub fn balance<T: Clone>(examples: &[(T, bool)], rng_seed: u64) -> Vec<(T, bool)> {
    let pos: Vec<usize> = (0..examples.len()).filter(|&i| examples[i].1).collect();
    let neg: Vec<usize> = (0..examples.len()).filter(|&i| !examples[i].1).collect();
    let (mut big, small) = if neg.len() > pos.len() { (neg, pos) } else { (pos, neg) };
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    big.shuffle(&mut rng);
    big.truncate(small.len());
    let mut keep: Vec<usize> = big.into_iter().chain(small).collect();
    keep.sort_unstable();
    keep.into_iter().map(|i| examples[i].clone()).collect()
}

/// Balances the classes, then trains with AdaGrad on the logistic loss.
/// Returns the model and the per-epoch training loss.
pub fn train_trigger(
    examples: &[(TriggerFeatures, bool)],
    config: &TriggerConfig,
) -> Result<(TriggerModel, Vec<f64>), TriggerError> {
    config.validate()?;
    if examples.iter().all(|e| e.1) || examples.iter().all(|e| !e.1) {
        return Err(TriggerError::SingleClassData);
    }
    let balanced = balance(examples, config.rng_seed);
    let data: Vec<(SparseInput, Target)> = balanced.iter().map(|(f, y)| (f.input(), Target::Binary(*y))).collect();
    let mut mlp = Mlp::init(config.shape(), config.rng_seed);
    let train_config = TrainConfig {
        epochs: config.epochs,
        learning_rate: config.learning_rate,
        batch_size: config.batch_size,
        dropout: config.dropout,
        rng_seed: config.rng_seed ^ 0x7261_696e,
    };
    let losses = nn::train(&mut mlp, &data, &train_config).ok_or(TriggerError::DivergedLoss)?;
    let mut model = TriggerModel {
        mlp,
        threshold: config.threshold,
        hash_seed: HASH_SEED,
        dropout: config.dropout,
    };
    // Keep the parameters f32-exact so a saved model scores identically.
    model.mlp.params.iter_mut().for_each(|p| *p = *p as f32 as f64);
    Ok((model, losses))
}

/// Strictly above the threshold triggers.
pub fn should_trigger(score: f64, threshold: f64) -> bool {
    score > threshold
}

/// Threshold at which a `target` fraction of `scores` triggers: midway
/// between the k-th and (k+1)-th highest score, `k = round(target * n)`.
pub fn calibrate_threshold(scores: &[f64], target: f64) -> f64 {
    if scores.is_empty() {
        return 0.5;
    }
    let mut s = scores.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    let k = ((target * s.len() as f64).round() as usize).min(s.len());
    let t = match k {
        0 => s[0] + (1.0 - s[0]) / 2.0,
        k if k == s.len() => s[k - 1] / 2.0,
        k => (s[k - 1] + s[k]) / 2.0,
    };
    t.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
}
