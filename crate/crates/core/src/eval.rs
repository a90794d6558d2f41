//! Evaluation: perplexity, response ranking metrics and baselines, AUC.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{MessagePair, Vocabulary};
use crate::nn::{self, Mlp, MlpShape, SparseInput, Target, TrainConfig};
use crate::response_space::ResponseSet;
use crate::scoring::{score_ids, Scorer, ScoringError};
use crate::search::{build_trie, score_all, ResponseTrie};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty input")]
    EmptyInput,
    #[error("test pair {index} ({original_id:?}) has zero probability under the model")]
    ZeroProbability { index: usize, original_id: String },
    #[error("response of pair {0} is not in the response set")]
    ResponseNotInSet(usize),
    #[error("need examples of at least two classes")]
    SingleClassData,
    #[error("training diverged")]
    DivergedLoss,
    #[error(transparent)]
    Scoring(#[from] ScoringError),
}

/// `exp(-(1/W) * sum_i ln P(r_i | o_i))` with `W` the number of response
/// tokens including each EOM.
pub fn perplexity<S: Scorer>(model: &S, test: &[MessagePair]) -> Result<f64, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let v = model.vocab();
    let scores = test
        .par_iter()
        .map(|p| score_ids(model, &v.encode(&p.original), &v.encode(&p.response)))
        .collect::<Result<Vec<f64>, _>>()?;
    let mut total = 0.0;
    let mut words = 0usize;
    for (i, (s, p)) in scores.iter().zip(test).enumerate() {
        if !s.is_finite() {
            return Err(EvalError::ZeroProbability {
                index: i,
                original_id: p.original_id.clone(),
            });
        }
        total += s;
        words += p.response.len() + 1;
    }
    Ok((-total / words as f64).exp())
}

/// Entry index of each response text, for matching pairs to the set.
pub fn set_index(set: &ResponseSet) -> HashMap<String, usize> {
    let mut idx = HashMap::new();
    for (i, e) in set.entries.iter().enumerate() {
        idx.entry(e.text()).or_insert(i);
    }
    idx
}

/// 1-based rank of `true_score` among `scores`: one plus the number of
/// strictly better scores, so ties are resolved optimistically.
pub fn rank_among(scores: &[f64], true_score: f64) -> usize {
    1 + scores.iter().filter(|&&s| s > true_score).count()
}

/// Rank of the pair's own response among all entries, by model score.
pub fn rank_of_true_response<S: Scorer>(scorer: &S, pair: &MessagePair, set: &ResponseSet) -> Result<usize, EvalError> {
    let trie = build_trie(set, scorer.vocab());
    Ok(ranks_for(scorer, std::slice::from_ref(pair), set, &trie)?[0])
}

/// Ranks for many pairs in parallel; every pair's response must be in the set.
pub fn ranks_for<S: Scorer>(
    scorer: &S,
    pairs: &[MessagePair],
    set: &ResponseSet,
    trie: &ResponseTrie,
) -> Result<Vec<usize>, EvalError> {
    let index = set_index(set);
    let v = scorer.vocab();
    pairs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let truth = *index.get(&p.response.join(" ")).ok_or(EvalError::ResponseNotInSet(i))?;
            let scores = score_all(scorer, &v.encode(&p.original), trie);
            Ok(rank_among(&scores, scores[truth]))
        })
        .collect()
}

pub fn mrr(ranks: &[usize]) -> Result<f64, EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64)
}

pub fn precision_at_k(ranks: &[usize], k: usize) -> Result<f64, EvalError> {
    if ranks.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
}

/// Mann-Whitney AUC with midranks for tied scores.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClassData);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let mid = (i + j + 2) as f64 / 2.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// A seeded random permutation of entry indices.
pub fn baseline_random(set: &ResponseSet, rng_seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    order
}

/// Entry indices by descending prior, ties by response text.
pub fn baseline_frequency(set: &ResponseSet) -> Vec<usize> {
    let mut order: Vec<usize> = (0..set.len()).collect();
    let texts: Vec<String> = set.entries.iter().map(|e| e.text()).collect();
    order.sort_by(|&a, &b| {
        set.entries[b]
            .prior_logp
            .total_cmp(&set.entries[a].prior_logp)
            .then_with(|| texts[a].cmp(&texts[b]))
    });
    order
}

/// 1-based position of `entry` in a fixed ranking.
pub fn rank_in(ranking: &[usize], entry: usize) -> Option<usize> {
    ranking.iter().position(|&e| e == entry).map(|p| p + 1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BowConfig {
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for BowConfig {
    fn default() -> Self {
        BowConfig {
            embed_dim: 16,
            hidden: vec![64, 32, 16],
            train: TrainConfig::default(),
        }
    }
}

/// Bag-of-words classifier over the entries of the response set: summed
/// word embeddings of the original, the trigger network's hidden stack and
/// a softmax over entries.
#[derive(Clone, Debug)]
pub struct MulticlassBow {
    pub mlp: Mlp,
    vocab: Vocabulary,
}

impl MulticlassBow {
    pub fn untrained(vocab: &Vocabulary, n_classes: usize, config: &BowConfig) -> Self {
        MulticlassBow {
            mlp: Mlp::zeros(bow_shape(vocab, n_classes, config)),
            vocab: vocab.clone(),
        }
    }

    fn input(&self, original: &[String]) -> SparseInput {
        SparseInput {
            sparse: vec![self.vocab.encode(original)],
            dense: Vec::new(),
        }
    }

    /// Log-probabilities over the entries.
    pub fn log_probs(&self, original: &[String]) -> Vec<f64> {
        let z = self.mlp.logits(&self.input(original));
        let lse = crate::scoring::logsumexp(&z);
        z.into_iter().map(|x| x - lse).collect()
    }

    pub fn ranks(&self, pairs: &[MessagePair], set: &ResponseSet) -> Result<Vec<usize>, EvalError> {
        let index = set_index(set);
        pairs
            .par_iter()
            .enumerate()
            .map(|(i, p)| {
                let truth = *index.get(&p.response.join(" ")).ok_or(EvalError::ResponseNotInSet(i))?;
                let lp = self.log_probs(&p.original);
                Ok(rank_among(&lp, lp[truth]))
            })
            .collect()
    }
}

fn bow_shape(vocab: &Vocabulary, n_classes: usize, config: &BowConfig) -> MlpShape {
    MlpShape {
        families: 1,
        buckets: vocab.len(),
        embed_dim: config.embed_dim,
        dense_dim: 0,
        hidden: config.hidden.clone(),
        outputs: n_classes,
    }
}

/// Trains only on pairs whose response is an entry of the set.
pub fn baseline_multiclass_bow(
    pairs: &[MessagePair],
    set: &ResponseSet,
    vocab: &Vocabulary,
    config: &BowConfig,
) -> Result<MulticlassBow, EvalError> {
    let index = set_index(set);
    let mut model = MulticlassBow::untrained(vocab, set.len(), config);
    let data: Vec<(SparseInput, Target)> = pairs
        .iter()
        .filter_map(|p| index.get(&p.response.join(" ")).map(|&c| (model.input(&p.original), Target::Class(c))))
        .collect();
    let mut classes: Vec<usize> = data
        .iter()
        .map(|(_, t)| match t {
            Target::Class(c) => *c,
            Target::Binary(_) => unreachable!(),
        })
        .collect();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return Err(EvalError::SingleClassData);
    }
    model.mlp = Mlp::init(bow_shape(vocab, set.len(), config), config.train.rng_seed);
    nn::train(&mut model.mlp, &data, &config.train).ok_or(EvalError::DivergedLoss)?;
    Ok(model)
}

/// Delivery-ordered split: the first `train_fraction` of pairs train, the
/// rest test, so every test pair comes after every train pair.
pub struct EvalSplit {
    pub train: Vec<MessagePair>,
    pub test: Vec<MessagePair>,
}

pub fn temporal_split(pairs: &[MessagePair], train_fraction: f64) -> EvalSplit {
    let cut = ((pairs.len() as f64) * train_fraction).round() as usize;
    let cut = cut.min(pairs.len());
    EvalSplit {
        train: pairs[..cut].to_vec(),
        test: pairs[cut..].to_vec(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub p_at_10: f64,
    pub p_at_20: f64,
    pub mrr: f64,
}

impl RankingMetrics {
    pub fn from_ranks(ranks: &[usize]) -> Result<Self, EvalError> {
        Ok(RankingMetrics {
            p_at_10: precision_at_k(ranks, 10)?,
            p_at_20: precision_at_k(ranks, 20)?,
            mrr: mrr(ranks)?,
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Report {
    #[serde(flatten)]
    pub ranking: BTreeMap<String, RankingMetrics>,
    pub perplexity: BTreeMap<String, f64>,
    pub auc: Option<f64>,
    pub beam_curve: Vec<(usize, f64)>,
    /// Number of ranked test pairs.
    pub n: usize,
}

impl Report {
    /// Plain-text table: one row per ranking model, best first by MRR.
    pub fn table(&self) -> String {
        let mut rows: Vec<(&String, &RankingMetrics)> = self.ranking.iter().collect();
        rows.sort_by(|a, b| b.1.mrr.total_cmp(&a.1.mrr));
        let mut out = String::new();
        let _ = writeln!(out, "{:<16} {:>10} {:>10} {:>10}", "Model", "P@10", "P@20", "MRR");
        for (name, m) in rows {
            let _ = writeln!(out, "{:<16} {:>10.4} {:>10.4} {:>10.4}", name, m.p_at_10, m.p_at_20, m.mrr);
        }
        let _ = writeln!(out, "(N = {})", self.n);
        for (name, p) in &self.perplexity {
            let _ = writeln!(out, "perplexity {name}: {p:.3}");
        }
        if let Some(a) = self.auc {
            let _ = writeln!(out, "trigger AUC: {a:.4}");
        }
        for (b, r) in &self.beam_curve {
            let _ = writeln!(out, "beam {b}: top-1 match {r:.4}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_examples() {
        assert!((mrr(&[1, 2, 4]).unwrap() - 0.583_333_333_333).abs() < 1e-9);
        assert_eq!(mrr(&[1, 1]).unwrap(), 1.0);
        assert!((precision_at_k(&[1, 5, 30], 10).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(precision_at_k(&[1, 5, 30], 30).unwrap(), 1.0);
        assert!(matches!(mrr(&[]), Err(EvalError::EmptyInput)));
    }

    #[test]
    fn auc_examples() {
        let labels = [true, true, false, true, false, false];
        let s = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4];
        assert_eq!(auc(&s, &labels).unwrap(), 8.0 / 9.0);
        assert_eq!(auc(&[0.3; 6], &labels).unwrap(), 0.5);
        assert_eq!(auc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert!(matches!(auc(&[0.1], &[true]), Err(EvalError::SingleClassData)));
    }

    #[test]
    fn optimistic_ties() {
        assert_eq!(rank_among(&[-1.0, -2.0, -2.0, -3.0], -2.0), 2);
    }
}
