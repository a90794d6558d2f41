use std::collections::HashMap;

use super::Scorer;
use crate::corpus::{TokenId, Vocabulary};

/// A fixed response distribution, independent of the original message, that
/// factorizes over prefixes: `P(t | prefix) = mass(prefix t) / mass(prefix)`,
/// mixed with `epsilon` of uniform mass so every step is a full
/// distribution. Useful as a hand-built fixture with known response scores.
#[derive(Clone, Debug)]
pub struct PrefixMassScorer {
    vocab: Vocabulary,
    epsilon: f64,
    prefix_mass: HashMap<Vec<TokenId>, f64>,
    complete_mass: HashMap<Vec<TokenId>, f64>,
}

impl PrefixMassScorer {
    /// `responses` are token sequences with non-negative weights; weights are
    /// normalized internally.
    pub fn new(vocab: Vocabulary, responses: &[(Vec<TokenId>, f64)], epsilon: f64) -> Self {
        let total: f64 = responses.iter().map(|r| r.1).sum();
        let mut prefix_mass = HashMap::new();
        let mut complete_mass = HashMap::new();
        for (tokens, w) in responses {
            let w = w / total;
            for i in 0..=tokens.len() {
                *prefix_mass.entry(tokens[..i].to_vec()).or_insert(0.0) += w;
            }
            *complete_mass.entry(tokens.clone()).or_insert(0.0) += w;
        }
        PrefixMassScorer {
            vocab,
            epsilon,
            prefix_mass,
            complete_mass,
        }
    }

    /// Builds from token strings, e.g. `[("sure , i 'll be there .", 0.3)]`.
    pub fn from_texts(vocab: Vocabulary, responses: &[(&str, f64)], epsilon: f64) -> Self {
        let ids: Vec<(Vec<TokenId>, f64)> = responses
            .iter()
            .map(|(t, w)| (vocab.encode(&t.split_whitespace().collect::<Vec<_>>()), *w))
            .collect();
        Self::new(vocab, &ids, epsilon)
    }
}

impl Scorer for PrefixMassScorer {
    /// The response prefix, or `None` once it has left the support.
    type State = Option<Vec<TokenId>>;

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn start(&self, _: &[TokenId]) -> Self::State {
        Some(Vec::new())
    }

    fn advance(&self, state: &Self::State, token: TokenId) -> Self::State {
        let mut next = state.clone()?;
        if token == self.vocab.eom() {
            return None;
        }
        next.push(token);
        self.prefix_mass.contains_key(&next).then_some(next)
    }

    fn log_prob(&self, state: &Self::State, token: TokenId) -> f64 {
        let uniform = 1.0 / self.vocab.len() as f64;
        let Some(prefix) = state else {
            return uniform.ln();
        };
        let here = self.prefix_mass.get(prefix).copied().unwrap_or(0.0);
        let next = if token == self.vocab.eom() {
            self.complete_mass.get(prefix).copied().unwrap_or(0.0)
        } else {
            let mut p = prefix.clone();
            p.push(token);
            self.prefix_mass.get(&p).copied().unwrap_or(0.0)
        };
        let fixed = if here > 0.0 { next / here } else { uniform };
        ((1.0 - self.epsilon) * fixed + self.epsilon * uniform).ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocab;
    use crate::scoring::{logsumexp, score_response};

    #[test]
    fn full_responses_get_their_weight() {
        let toks: Vec<Vec<String>> = vec!["yes no i can".split(' ').map(String::from).collect()];
        let v = build_vocab(&toks, 10).unwrap();
        let s = PrefixMassScorer::from_texts(v, &[("yes", 0.5), ("yes i can", 0.3), ("no", 0.2)], 0.0);
        assert!((score_response(&s, &[""], &["yes"]).unwrap() - 0.5f64.ln()).abs() < 1e-12);
        assert!((score_response(&s, &[""], &["yes", "i", "can"]).unwrap() - 0.3f64.ln()).abs() < 1e-12);
        let st = s.start(&[]);
        assert!(logsumexp(&s.log_probs(&st)).abs() < 1e-12);
        let s = PrefixMassScorer::new(s.vocab.clone(), &[(vec![0], 1.0)], 0.1);
        let st = s.advance(&s.start(&[]), 3);
        assert!(logsumexp(&s.log_probs(&st)).abs() < 1e-12);
    }
}
