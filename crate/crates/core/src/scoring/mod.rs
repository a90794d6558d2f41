//! Stepwise conditional response models `P(r_t | o, r_<t)`.

mod katz;
mod prefix;
mod recurrent;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::container::{ContainerError, ModelFile};
use crate::corpus::{TokenId, Vocabulary};

pub use katz::{train_katz, KatzModel, KatzState};
pub use prefix::PrefixMassScorer;
pub use recurrent::{
    train_recurrent, RecurrentConfig, RecurrentModel, RecurrentState, TrainingLog,
};

#[derive(Debug, thiserror::Error)]
pub enum ScoringError {
    #[error("response is empty")]
    EmptyResponse,
    #[error("no training pairs")]
    EmptyCorpus,
    #[error("training loss became non-finite in epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("invalid scorer configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Container(#[from] ContainerError),
}

/// A left-to-right conditional token model. `start` consumes the original
/// message; each `advance` feeds one response token. The distribution for
/// the next token is available from any state.
pub trait Scorer: Sync {
    type State: Clone + Send + Sync;

    fn vocab(&self) -> &Vocabulary;

    fn start(&self, original: &[TokenId]) -> Self::State;

    fn advance(&self, state: &Self::State, token: TokenId) -> Self::State;

    fn log_prob(&self, state: &Self::State, token: TokenId) -> f64;

    /// Full next-token log-distribution over the vocabulary.
    fn log_probs(&self, state: &Self::State) -> Vec<f64> {
        (0..self.vocab().len() as TokenId)
            .map(|t| self.log_prob(state, t))
            .collect()
    }

    /// One contract step: the log-distribution at `state` and the state after
    /// feeding `token`.
    fn step(&self, state: &Self::State, token: TokenId) -> (Vec<f64>, Self::State) {
        (self.log_probs(state), self.advance(state, token))
    }
}

/// `sum_t log P(r_t | o, r_<t)` including the final end-of-message step.
pub fn score_ids<S: Scorer>(scorer: &S, original: &[TokenId], response: &[TokenId]) -> Result<f64, ScoringError> {
    if response.is_empty() {
        return Err(ScoringError::EmptyResponse);
    }
    let mut state = scorer.start(original);
    let mut total = 0.0;
    for &t in response {
        total += scorer.log_prob(&state, t);
        state = scorer.advance(&state, t);
    }
    Ok(total + scorer.log_prob(&state, scorer.vocab().eom()))
}

/// [`score_ids`] over token strings; out-of-vocabulary tokens map to UNK.
pub fn score_response<S: Scorer, T: AsRef<str>>(
    scorer: &S,
    original: &[T],
    response: &[T],
) -> Result<f64, ScoringError> {
    let v = scorer.vocab();
    score_ids(scorer, &v.encode(original), &v.encode(response))
}

/// Ancestral sampling of token ids until end-of-message or `max_len` tokens.
/// The end-of-message token itself is not returned.
pub fn sample_ids<S: Scorer>(scorer: &S, original: &[TokenId], rng_seed: u64, max_len: usize) -> Vec<TokenId> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let eom = scorer.vocab().eom();
    let mut state = scorer.start(original);
    let mut out = Vec::new();
    while out.len() < max_len {
        let weights: Vec<f64> = scorer.log_probs(&state).iter().map(|l| l.exp()).collect();
        let t = WeightedIndex::new(&weights).expect("distribution has mass").sample(&mut rng) as TokenId;
        if t == eom {
            break;
        }
        out.push(t);
        state = scorer.advance(&state, t);
    }
    out
}

pub fn sample_response<S: Scorer, T: AsRef<str>>(
    scorer: &S,
    original: &[T],
    rng_seed: u64,
    max_len: usize,
) -> Vec<String> {
    let v = scorer.vocab();
    v.decode(&sample_ids(scorer, &v.encode(original), rng_seed, max_len))
}

pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// All-zero logits: every step is uniform over the vocabulary.
#[derive(Clone, Debug)]
pub struct UniformScorer {
    vocab: Vocabulary,
}

impl UniformScorer {
    pub fn new(vocab: Vocabulary) -> Self {
        UniformScorer { vocab }
    }
}

impl Scorer for UniformScorer {
    type State = ();

    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn start(&self, _: &[TokenId]) {}

    fn advance(&self, _: &(), _: TokenId) {}

    fn log_prob(&self, _: &(), _: TokenId) -> f64 {
        -(self.vocab.len() as f64).ln()
    }
}

/// Counts `advance` calls of the wrapped scorer.
pub struct CountingScorer<'a, S> {
    pub inner: &'a S,
    advances: AtomicUsize,
}

impl<'a, S> CountingScorer<'a, S> {
    pub fn new(inner: &'a S) -> Self {
        CountingScorer {
            inner,
            advances: AtomicUsize::new(0),
        }
    }

    pub fn advances(&self) -> usize {
        self.advances.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.advances.store(0, Ordering::Relaxed);
    }
}

impl<S: Scorer> Scorer for CountingScorer<'_, S> {
    type State = S::State;

    fn vocab(&self) -> &Vocabulary {
        self.inner.vocab()
    }

    fn start(&self, original: &[TokenId]) -> S::State {
        self.inner.start(original)
    }

    fn advance(&self, state: &S::State, token: TokenId) -> S::State {
        self.advances.fetch_add(1, Ordering::Relaxed);
        self.inner.advance(state, token)
    }

    fn log_prob(&self, state: &S::State, token: TokenId) -> f64 {
        self.inner.log_prob(state, token)
    }

    fn log_probs(&self, state: &S::State) -> Vec<f64> {
        self.inner.log_probs(state)
    }
}

/// Any scorer that can be loaded from a model file.
#[derive(Clone, Debug)]
pub enum AnyScorer {
    Recurrent(RecurrentModel),
    Katz(KatzModel),
}

#[derive(Clone, Debug)]
pub enum AnyState {
    Recurrent(RecurrentState),
    Katz(KatzState),
}

impl AnyScorer {
    pub fn load(path: &Path, vocab: &Vocabulary) -> Result<Self, ScoringError> {
        let file = ModelFile::load(path)?;
        match file.kind.as_str() {
            recurrent::KIND => Ok(AnyScorer::Recurrent(RecurrentModel::from_file(&file, vocab.clone())?)),
            katz::KIND => Ok(AnyScorer::Katz(KatzModel::from_file(&file, vocab.clone())?)),
            other => Err(ContainerError::WrongKind {
                expected: "recurrent or katz".into(),
                found: other.into(),
            }
            .into()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AnyScorer::Recurrent(_) => recurrent::KIND,
            AnyScorer::Katz(_) => katz::KIND,
        }
    }
}

impl Scorer for AnyScorer {
    type State = AnyState;

    fn vocab(&self) -> &Vocabulary {
        match self {
            AnyScorer::Recurrent(m) => m.vocab(),
            AnyScorer::Katz(m) => m.vocab(),
        }
    }

    fn start(&self, original: &[TokenId]) -> AnyState {
        match self {
            AnyScorer::Recurrent(m) => AnyState::Recurrent(m.start(original)),
            AnyScorer::Katz(m) => AnyState::Katz(m.start(original)),
        }
    }

    fn advance(&self, state: &AnyState, token: TokenId) -> AnyState {
        match (self, state) {
            (AnyScorer::Recurrent(m), AnyState::Recurrent(s)) => AnyState::Recurrent(m.advance(s, token)),
            (AnyScorer::Katz(m), AnyState::Katz(s)) => AnyState::Katz(m.advance(s, token)),
            _ => panic!("state does not belong to this scorer"),
        }
    }

    fn log_prob(&self, state: &AnyState, token: TokenId) -> f64 {
        match (self, state) {
            (AnyScorer::Recurrent(m), AnyState::Recurrent(s)) => m.log_prob(s, token),
            (AnyScorer::Katz(m), AnyState::Katz(s)) => m.log_prob(s, token),
            _ => panic!("state does not belong to this scorer"),
        }
    }

    fn log_probs(&self, state: &AnyState) -> Vec<f64> {
        match (self, state) {
            (AnyScorer::Recurrent(m), AnyState::Recurrent(s)) => m.log_probs(s),
            (AnyScorer::Katz(m), AnyState::Katz(s)) => m.log_probs(s),
            _ => panic!("state does not belong to this scorer"),
        }
    }
}
