use std::collections::{BTreeMap, HashMap};

use super::{Scorer, ScoringError};
use crate::container::{ContainerError, ModelFile, Tensor};
use crate::corpus::{MessagePair, TokenId, Vocabulary};

pub(super) const KIND: &str = "katz";

/// Sentence-start context marker; never predicted.
const BOS: TokenId = TokenId::MAX;

/// Counts at or below this are Good-Turing discounted.
pub const DISCOUNT_THRESHOLD: u64 = 5;

#[derive(Clone, Debug)]
struct Context {
    /// `(token, count)` sorted by token.
    followers: Vec<(TokenId, u64)>,
    total: u64,
    alpha: f64,
    /// Multiplier on the discounted estimates; 1 except for contexts whose
    /// lower-order distribution leaves no mass to back off into.
    scale: f64,
}

impl Context {
    fn count(&self, w: TokenId) -> u64 {
        self.followers
            .binary_search_by_key(&w, |f| f.0)
            .map_or(0, |i| self.followers[i].1)
    }
}

/// Katz back-off n-gram model over response token streams. It ignores the
/// original message, so it is the unconditioned response language model.
#[derive(Clone, Debug)]
pub struct KatzModel {
    vocab: Vocabulary,
    order: usize,
    /// `counts[n - 1]` maps each n-gram (context then word) to its count.
    counts: Vec<BTreeMap<Vec<TokenId>, u64>>,
    /// `discounts[n - 1][r]` for `1 <= r <= DISCOUNT_THRESHOLD`.
    discounts: Vec<Vec<f64>>,
    /// `contexts[n - 1]` holds the contexts of length `n - 1` (n >= 2).
    contexts: Vec<HashMap<Vec<TokenId>, Context>>,
    unigram: Vec<f64>,
}

/// Last `order - 1` tokens, starting with the sentence-start marker.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KatzState(Vec<TokenId>);

/// Katz discount ratios `d_r` from count-of-counts `n[r]` (index 0 unused):
/// `d_r = (r*/r - (k+1) n_{k+1} / n_1) / (1 - (k+1) n_{k+1} / n_1)` with
/// `r* = (r+1) n_{r+1} / n_r`. Ratios outside `(0, 1]` fall back to 1.
pub fn good_turing_discounts(count_of_counts: &[u64], k: u64) -> Vec<f64> {
    let n = |r: u64| count_of_counts.get(r as usize).copied().unwrap_or(0) as f64;
    let mut d = vec![1.0; k as usize + 1];
    if n(1) == 0.0 {
        return d;
    }
    let common = (k + 1) as f64 * n(k + 1) / n(1);
    for r in 1..=k {
        if n(r) == 0.0 || common >= 1.0 {
            continue;
        }
        let r_star = (r + 1) as f64 * n(r + 1) / n(r);
        let dr = (r_star / r as f64 - common) / (1.0 - common);
        if dr > 0.0 && dr <= 1.0 {
            d[r as usize] = dr;
        }
    }
    d
}

impl KatzModel {
    fn from_counts(
        vocab: Vocabulary,
        order: usize,
        counts: Vec<BTreeMap<Vec<TokenId>, u64>>,
    ) -> Result<Self, ScoringError> {
        let v = vocab.len();
        let k = DISCOUNT_THRESHOLD;
        let discounts: Vec<Vec<f64>> = counts
            .iter()
            .map(|table| {
                let mut coc = vec![0u64; k as usize + 2];
                for &c in table.values() {
                    if c <= k + 1 {
                        coc[c as usize] += 1;
                    }
                }
                good_turing_discounts(&coc, k)
            })
            .collect();
        let disc = |n: usize, c: u64| if c <= k { discounts[n - 1][c as usize] } else { 1.0 };

        let mut unigram = vec![0.0; v];
        let total: u64 = counts[0].values().sum();
        if total == 0 {
            return Err(ScoringError::EmptyCorpus);
        }
        for (g, &c) in &counts[0] {
            unigram[g[0] as usize] = disc(1, c) * c as f64 / total as f64;
        }
        let seen_mass: f64 = unigram.iter().sum();
        let unseen = unigram.iter().filter(|&&p| p == 0.0).count();
        if unseen > 0 {
            // Unseen words share the discounted mass. When nothing was
            // discounted, reserve the Witten-Bell share instead.
            let mut leftover = 1.0 - seen_mass;
            if leftover <= 1e-12 {
                let types = counts[0].len() as f64;
                leftover = types / (total as f64 + types);
                unigram.iter_mut().for_each(|p| *p *= (1.0 - leftover) / seen_mass);
            }
            let share = leftover / unseen as f64;
            unigram.iter_mut().filter(|p| **p == 0.0).for_each(|p| *p = share);
        } else {
            unigram.iter_mut().for_each(|p| *p /= seen_mass);
        }

        let mut model = KatzModel {
            vocab,
            order,
            counts,
            discounts: discounts.clone(),
            contexts: vec![HashMap::new(); order],
            unigram,
        };
        for n in 2..=order {
            let mut grouped: BTreeMap<&[TokenId], Vec<(TokenId, u64)>> = BTreeMap::new();
            for (g, &c) in &model.counts[n - 1] {
                grouped.entry(&g[..n - 1]).or_default().push((g[n - 1], c));
            }
            let mut table = HashMap::with_capacity(grouped.len());
            for (ctx, followers) in grouped {
                let total: u64 = followers.iter().map(|f| f.1).sum();
                let mut kept = 0.0;
                let mut lower = 0.0;
                for &(w, c) in &followers {
                    kept += disc(n, c) * c as f64 / total as f64;
                    lower += model.prob(&ctx[1..], w);
                }
                let types = followers.len() as f64;
                let (leftover, mut scale) = if 1.0 - kept > 1e-12 {
                    (1.0 - kept, 1.0)
                } else {
                    let l = types / (total as f64 + types);
                    (l, (1.0 - l) / kept)
                };
                let alpha = if 1.0 - lower > 1e-12 {
                    leftover / (1.0 - lower)
                } else {
                    // Every word already follows this context.
                    scale = 1.0 / kept;
                    0.0
                };
                table.insert(
                    ctx.to_vec(),
                    Context {
                        followers,
                        total,
                        alpha,
                        scale,
                    },
                );
            }
            model.contexts[n - 1] = table;
        }
        Ok(model)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Discount ratios for n-grams of order `n`, indexed by count.
    pub fn discounts(&self, n: usize) -> &[f64] {
        &self.discounts[n - 1]
    }

    /// `P(w | history)`; only the last `order - 1` history tokens matter.
    pub fn prob(&self, history: &[TokenId], w: TokenId) -> f64 {
        let h = &history[history.len().saturating_sub(self.order - 1)..];
        if h.is_empty() {
            return self.unigram[w as usize];
        }
        match self.contexts[h.len()].get(h) {
            None => self.prob(&h[1..], w),
            Some(ctx) => match ctx.count(w) {
                0 => {
                    if ctx.alpha == 0.0 {
                        0.0
                    } else {
                        ctx.alpha * self.prob(&h[1..], w)
                    }
                }
                c => {
                    let d = if c <= DISCOUNT_THRESHOLD {
                        self.discounts[h.len()][c as usize]
                    } else {
                        1.0
                    };
                    ctx.scale * d * c as f64 / ctx.total as f64
                }
            },
        }
    }

    /// Full next-token distribution after `history`.
    pub fn distribution(&self, history: &[TokenId]) -> Vec<f64> {
        let h = &history[history.len().saturating_sub(self.order - 1)..];
        if h.is_empty() {
            return self.unigram.clone();
        }
        let mut dist = self.distribution(&h[1..]);
        if let Some(ctx) = self.contexts[h.len()].get(h) {
            dist.iter_mut().for_each(|p| *p *= ctx.alpha);
            for &(w, c) in &ctx.followers {
                let d = if c <= DISCOUNT_THRESHOLD {
                    self.discounts[h.len()][c as usize]
                } else {
                    1.0
                };
                dist[w as usize] = ctx.scale * d * c as f64 / ctx.total as f64;
            }
        }
        dist
    }

    /// All contexts with at least one observed continuation, for each order.
    pub fn observed_contexts(&self) -> Vec<Vec<TokenId>> {
        let mut out = vec![Vec::new()];
        for table in &self.contexts[1..] {
            let mut keys: Vec<_> = table.keys().cloned().collect();
            keys.sort();
            out.extend(keys);
        }
        out
    }

    pub fn to_file(&self) -> ModelFile {
        let mut f = ModelFile::new(KIND, self.vocab.fingerprint());
        f.set_meta("order", self.order);
        f.set_meta("discount_threshold", DISCOUNT_THRESHOLD);
        for (i, table) in self.counts.iter().enumerate() {
            let n = i + 1;
            let grams: Vec<u32> = table.keys().flatten().copied().collect();
            let counts: Vec<u32> = table.values().map(|&c| c.min(u32::MAX as u64) as u32).collect();
            f.insert(&format!("order{n}.ngrams"), Tensor::u32(vec![table.len(), n], grams));
            f.insert(&format!("order{n}.counts"), Tensor::u32(vec![table.len()], counts));
        }
        f
    }

    pub fn from_file(file: &ModelFile, vocab: Vocabulary) -> Result<Self, ScoringError> {
        file.expect(KIND, vocab.fingerprint())?;
        let order: usize = file.meta("order")?;
        if order == 0 {
            return Err(ContainerError::Corrupt("order 0".into()).into());
        }
        let mut counts = Vec::with_capacity(order);
        for n in 1..=order {
            let grams = file.u32s(&format!("order{n}.ngrams"))?;
            let cs = file.u32s(&format!("order{n}.counts"))?;
            if grams.len() != cs.len() * n {
                return Err(ContainerError::Corrupt(format!("order {n} table shape")).into());
            }
            let table = grams
                .chunks_exact(n)
                .zip(cs)
                .map(|(g, &c)| (g.to_vec(), c as u64))
                .collect();
            counts.push(table);
        }
        Self::from_counts(vocab, order, counts)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ScoringError> {
        Ok(self.to_file().save(path)?)
    }
}

/// Counts n-grams of orders `1..=order` over every response followed by
/// EOM, with a single sentence-start marker as the first context.
pub fn train_katz(pairs: &[MessagePair], vocab: &Vocabulary, order: usize) -> Result<KatzModel, ScoringError> {
    if order == 0 {
        return Err(ScoringError::InvalidConfig("order must be >= 1".into()));
    }
    let mut counts: Vec<BTreeMap<Vec<TokenId>, u64>> = vec![BTreeMap::new(); order];
    let mut any = false;
    for p in pairs.iter().filter(|p| !p.response.is_empty()) {
        any = true;
        let mut seq = vec![BOS];
        seq.extend(vocab.encode(&p.response));
        seq.push(vocab.eom());
        for i in 1..seq.len() {
            for n in 1..=order.min(i + 1) {
                *counts[n - 1].entry(seq[i + 1 - n..=i].to_vec()).or_insert(0) += 1;
            }
        }
    }
    if !any {
        return Err(ScoringError::EmptyCorpus);
    }
    KatzModel::from_counts(vocab.clone(), order, counts)
}

impl Scorer for KatzModel {
    type State = KatzState;

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn start(&self, _: &[TokenId]) -> KatzState {
        KatzState(if self.order > 1 { vec![BOS] } else { Vec::new() })
    }

    fn advance(&self, state: &KatzState, token: TokenId) -> KatzState {
        let mut h = state.0.clone();
        h.push(token);
        let keep = self.order - 1;
        KatzState(h[h.len().saturating_sub(keep)..].to_vec())
    }

    fn log_prob(&self, state: &KatzState, token: TokenId) -> f64 {
        self.prob(&state.0, token).ln()
    }

    fn log_probs(&self, state: &KatzState) -> Vec<f64> {
        self.distribution(&state.0).into_iter().map(f64::ln).collect()
    }
}
