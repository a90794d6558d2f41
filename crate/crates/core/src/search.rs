//! Token trie over the response set and trie-constrained beam search.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::corpus::{TokenId, Vocabulary};
use crate::response_space::{Polarity, ResponseSet};
use crate::scoring::{score_ids, Scorer};

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("beam size must be at least 1")]
    ZeroBeam,
    #[error("no response survives the polarity filter")]
    EmptyTrieAfterFilter,
    #[error("response set is empty")]
    EmptySet,
    #[error(transparent)]
    Scoring(#[from] crate::scoring::ScoringError),
}

/// Polarity filter slot used for "any polarity".
const ANY: usize = 3;

#[derive(Clone, Debug)]
struct Node {
    children: BTreeMap<TokenId, usize>,
    terminal: Option<usize>,
    /// Smallest entry index in this subtree, per polarity and overall.
    min_entry: [usize; 4],
}

impl Node {
    fn new() -> Self {
        Node {
            children: BTreeMap::new(),
            terminal: None,
            min_entry: [usize::MAX; 4],
        }
    }
}

/// Prefix tree of the response set's token sequences. Node 0 is the root;
/// a terminal node carries the index of its entry in the set.
#[derive(Clone, Debug)]
pub struct ResponseTrie {
    nodes: Vec<Node>,
    polarity: Vec<Polarity>,
    entry_len: Vec<usize>,
    terminals: usize,
    duplicates: Vec<(usize, usize)>,
}

fn slot(restrict: Option<Polarity>) -> usize {
    restrict.map_or(ANY, |p| p as usize)
}

/// Builds the trie. An entry whose token sequence repeats an earlier one is
/// skipped with a warning; `duplicates()` lists `(kept, dropped)` pairs.
pub fn build_trie(set: &ResponseSet, vocab: &Vocabulary) -> ResponseTrie {
    let mut trie = ResponseTrie {
        nodes: vec![Node::new()],
        polarity: set.entries.iter().map(|e| e.polarity).collect(),
        entry_len: Vec::with_capacity(set.len()),
        terminals: 0,
        duplicates: Vec::new(),
    };
    for (idx, entry) in set.entries.iter().enumerate() {
        let ids = vocab.encode(&entry.tokens);
        trie.entry_len.push(ids.len());
        let mut path = vec![0];
        for &t in &ids {
            let cur = *path.last().unwrap();
            let next = match trie.nodes[cur].children.get(&t) {
                Some(&n) => n,
                None => {
                    trie.nodes.push(Node::new());
                    let n = trie.nodes.len() - 1;
                    trie.nodes[cur].children.insert(t, n);
                    n
                }
            };
            path.push(next);
        }
        let end = *path.last().unwrap();
        if let Some(kept) = trie.nodes[end].terminal {
            log::warn!(
                "duplicate response {:?} (entry {idx} repeats entry {kept}); keeping the first",
                entry.text()
            );
            trie.duplicates.push((kept, idx));
            continue;
        }
        trie.nodes[end].terminal = Some(idx);
        trie.terminals += 1;
        let p = entry.polarity as usize;
        for &n in &path {
            let m = &mut trie.nodes[n].min_entry;
            m[p] = m[p].min(idx);
            m[ANY] = m[ANY].min(idx);
        }
    }
    trie
}

impl ResponseTrie {
    pub fn terminal_count(&self) -> usize {
        self.terminals
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn duplicates(&self) -> &[(usize, usize)] {
        &self.duplicates
    }

    /// Entry index spelled exactly by `tokens`, if any.
    pub fn lookup(&self, tokens: &[TokenId]) -> Option<usize> {
        let mut n = 0;
        for t in tokens {
            n = *self.nodes[n].children.get(t)?;
        }
        self.nodes[n].terminal
    }

    /// Largest number of children of any node.
    pub fn max_branching(&self) -> usize {
        self.nodes.iter().map(|n| n.children.len()).max().unwrap_or(0)
    }

    /// Whether any entry of the given polarity (or any entry at all) exists.
    pub fn has_entries(&self, restrict: Option<Polarity>) -> bool {
        self.nodes[0].min_entry[slot(restrict)] != usize::MAX
    }

    fn allowed_terminal(&self, node: usize, restrict: Option<Polarity>) -> Option<usize> {
        let e = self.nodes[node].terminal?;
        match restrict {
            Some(p) if self.polarity[e] != p => None,
            _ => Some(e),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredResponse {
    pub entry_index: usize,
    pub logp: f64,
    /// Equal to `logp` until the diversity stage rescores it.
    pub normalized_score: f64,
}

impl ScoredResponse {
    pub fn new(entry_index: usize, logp: f64) -> Self {
        ScoredResponse {
            entry_index,
            logp,
            normalized_score: logp,
        }
    }
}

/// Descending by score, ascending by entry index on ties.
pub(crate) fn by_score_then_index(a: (f64, usize), b: (f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub prefix: Vec<TokenId>,
    pub cum_logp: f64,
    pub completed: bool,
}

/// Renders trace rows as TSV with a header line.
pub fn trace_tsv(rows: &[TraceRow], vocab: &Vocabulary) -> String {
    let mut out = String::from("step\tprefix\tcum_logp\tcompleted\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            r.step,
            vocab.decode(&r.prefix).join(" "),
            r.cum_logp,
            r.completed
        );
    }
    out
}

struct Hyp<St> {
    prefix: Vec<TokenId>,
    cum_logp: f64,
    node: usize,
    state: St,
}

enum Candidate {
    Open { parent: usize, token: TokenId, node: usize },
    Done { parent: usize, entry: usize },
}

/// Left-to-right beam search that only extends prefixes present in the trie.
/// At each step every open hypothesis proposes its allowed children and, if
/// it sits on an allowed terminal, its completion (scored with the EOM
/// step). The best `b` proposals survive; completions leave the beam.
/// Prefixes are at most `max_len` tokens long. Results are sorted by log
/// probability, ties by entry index.
pub fn beam_search<S: Scorer>(
    scorer: &S,
    original: &[TokenId],
    trie: &ResponseTrie,
    b: usize,
    max_len: usize,
    restrict: Option<Polarity>,
) -> Result<Vec<ScoredResponse>, SearchError> {
    run_beam(scorer, original, trie, b, max_len, restrict, None)
}

/// [`beam_search`] that also records the surviving hypotheses of each step.
pub fn beam_search_traced<S: Scorer>(
    scorer: &S,
    original: &[TokenId],
    trie: &ResponseTrie,
    b: usize,
    max_len: usize,
    restrict: Option<Polarity>,
    trace: &mut Vec<TraceRow>,
) -> Result<Vec<ScoredResponse>, SearchError> {
    run_beam(scorer, original, trie, b, max_len, restrict, Some(trace))
}

fn run_beam<S: Scorer>(
    scorer: &S,
    original: &[TokenId],
    trie: &ResponseTrie,
    b: usize,
    max_len: usize,
    restrict: Option<Polarity>,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<Vec<ScoredResponse>, SearchError> {
    if b == 0 {
        return Err(SearchError::ZeroBeam);
    }
    if !trie.has_entries(restrict) {
        return Err(SearchError::EmptyTrieAfterFilter);
    }
    let s = slot(restrict);
    let eom = scorer.vocab().eom();
    let mut beam = vec![Hyp {
        prefix: Vec::new(),
        cum_logp: 0.0,
        node: 0,
        state: scorer.start(original),
    }];
    let mut done = Vec::new();
    for step in 0..=max_len {
        if beam.is_empty() {
            break;
        }
        let mut cands: Vec<(f64, usize, Candidate)> = Vec::new();
        for (i, h) in beam.iter().enumerate() {
            if let Some(e) = trie.allowed_terminal(h.node, restrict) {
                let lp = h.cum_logp + scorer.log_prob(&h.state, eom);
                cands.push((lp, e, Candidate::Done { parent: i, entry: e }));
            }
            if h.prefix.len() == max_len {
                continue;
            }
            for (&t, &child) in &trie.nodes[h.node].children {
                let min = trie.nodes[child].min_entry[s];
                if min == usize::MAX {
                    continue;
                }
                let lp = h.cum_logp + scorer.log_prob(&h.state, t);
                cands.push((
                    lp,
                    min,
                    Candidate::Open {
                        parent: i,
                        token: t,
                        node: child,
                    },
                ));
            }
        }
        cands.sort_by(|a, b| by_score_then_index((a.0, a.1), (b.0, b.1)));
        cands.truncate(b);
        let mut next = Vec::new();
        for (lp, _, c) in cands {
            match c {
                Candidate::Done { parent, entry } => {
                    if let Some(tr) = trace.as_deref_mut() {
                        tr.push(TraceRow {
                            step,
                            prefix: beam[parent].prefix.clone(),
                            cum_logp: lp,
                            completed: true,
                        });
                    }
                    done.push(ScoredResponse::new(entry, lp));
                }
                Candidate::Open { parent, token, node } => {
                    let h = &beam[parent];
                    let mut prefix = h.prefix.clone();
                    prefix.push(token);
                    if let Some(tr) = trace.as_deref_mut() {
                        tr.push(TraceRow {
                            step,
                            prefix: prefix.clone(),
                            cum_logp: lp,
                            completed: false,
                        });
                    }
                    next.push(Hyp {
                        prefix,
                        cum_logp: lp,
                        node,
                        state: scorer.advance(&h.state, token),
                    });
                }
            }
        }
        beam = next;
    }
    done.sort_by(|a, b| by_score_then_index((a.logp, a.entry_index), (b.logp, b.entry_index)));
    done.truncate(b);
    Ok(done)
}

/// Scores every entry of the set and ranks them all: the exhaustive oracle.
pub fn exhaustive_rank<S: Scorer>(
    scorer: &S,
    original: &[TokenId],
    set: &ResponseSet,
) -> Result<Vec<ScoredResponse>, SearchError> {
    if set.is_empty() {
        return Err(SearchError::EmptySet);
    }
    let vocab = scorer.vocab();
    let mut out = set
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, e)| Ok(ScoredResponse::new(i, score_ids(scorer, original, &vocab.encode(&e.tokens))?)))
        .collect::<Result<Vec<_>, SearchError>>()?;
    out.sort_by(|a, b| by_score_then_index((a.logp, a.entry_index), (b.logp, b.entry_index)));
    Ok(out)
}

/// Full-sequence log-probability of every entry, indexed like the set.
/// Walks the trie once so shared prefixes are scored once; equal to
/// `score_ids` per entry. Duplicate entries get the score of the kept one.
pub fn score_all<S: Scorer>(scorer: &S, original: &[TokenId], trie: &ResponseTrie) -> Vec<f64> {
    let eom = scorer.vocab().eom();
    let mut out = vec![f64::NEG_INFINITY; trie.polarity.len()];
    let mut stack = vec![(0usize, scorer.start(original), 0.0)];
    while let Some((node, state, cum)) = stack.pop() {
        let n = &trie.nodes[node];
        let lp = scorer.log_probs(&state);
        if let Some(e) = n.terminal {
            out[e] = cum + lp[eom as usize];
        }
        for (&t, &child) in &n.children {
            let next = scorer.advance(&state, t);
            stack.push((child, next, cum + lp[t as usize]));
        }
    }
    for &(kept, dropped) in &trie.duplicates {
        out[dropped] = out[kept];
    }
    out
}

/// For each beam size, the fraction of messages whose beam top-1 equals the
/// exhaustive top-1.
pub fn beam_match_rate<S: Scorer>(
    scorer: &S,
    messages: &[Vec<TokenId>],
    set: &ResponseSet,
    trie: &ResponseTrie,
    beam_sizes: &[usize],
    max_len: usize,
) -> Result<Vec<(usize, f64)>, SearchError> {
    let hits = messages
        .par_iter()
        .map(|m| {
            let best = exhaustive_rank(scorer, m, set)?[0].entry_index;
            beam_sizes
                .iter()
                .map(|&b| {
                    let top = beam_search(scorer, m, trie, b, max_len, None)?;
                    Ok(top.first().is_some_and(|r| r.entry_index == best))
                })
                .collect::<Result<Vec<bool>, SearchError>>()
        })
        .collect::<Result<Vec<_>, SearchError>>()?;
    let n = messages.len().max(1) as f64;
    Ok(beam_sizes
        .iter()
        .enumerate()
        .map(|(k, &b)| (b, hits.iter().filter(|h| h[k]).count() as f64 / n))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocab;
    use crate::response_space::ResponseEntry;
    use crate::scoring::UniformScorer;

    pub(crate) fn set_of(texts: &[(&str, Polarity)]) -> ResponseSet {
        ResponseSet {
            entries: texts
                .iter()
                .enumerate()
                .map(|(i, (t, p))| ResponseEntry {
                    tokens: t.split_whitespace().map(String::from).collect(),
                    intent_id: format!("i{i}"),
                    polarity: *p,
                    prior_logp: -1.0,
                    validated: true,
                })
                .collect(),
        }
    }

    fn vocab() -> Vocabulary {
        let toks: Vec<Vec<String>> = vec!["yes no thanks".split(' ').map(String::from).collect()];
        build_vocab(&toks, 10).unwrap()
    }

    #[test]
    fn trie_shape() {
        let v = vocab();
        let t = build_trie(&set_of(&[("yes", Polarity::Positive), ("yes thanks", Polarity::Positive)]), &v);
        assert_eq!(t.terminal_count(), 2);
        assert_eq!(t.node_count(), 3);
        assert_eq!(t.lookup(&v.encode(&["yes"])), Some(0));
        assert_eq!(t.lookup(&v.encode(&["yes", "thanks"])), Some(1));
        assert_eq!(t.lookup(&v.encode(&["thanks"])), None);
        let empty = build_trie(&ResponseSet::default(), &v);
        assert_eq!((empty.node_count(), empty.terminal_count()), (1, 0));
    }

    #[test]
    fn duplicates_keep_first() {
        let v = vocab();
        let t = build_trie(&set_of(&[("yes", Polarity::Positive), ("yes", Polarity::Neutral)]), &v);
        assert_eq!(t.terminal_count(), 1);
        assert_eq!(t.duplicates(), &[(0, 1)]);
    }

    #[test]
    fn uniform_ties_break_by_index() {
        let v = vocab();
        let set = set_of(&[("yes", Polarity::Positive), ("no", Polarity::Negative)]);
        let t = build_trie(&set, &v);
        let s = UniformScorer::new(v);
        let out = beam_search(&s, &[], &t, 2, 30, None).unwrap();
        assert_eq!(out.iter().map(|r| r.entry_index).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(out[0].logp, out[1].logp);
        let neg = beam_search(&s, &[], &t, 2, 30, Some(Polarity::Negative)).unwrap();
        assert_eq!(neg.len(), 1);
        assert_eq!(neg[0].entry_index, 1);
        assert!(matches!(
            beam_search(&s, &[], &t, 2, 30, Some(Polarity::Neutral)),
            Err(SearchError::EmptyTrieAfterFilter)
        ));
    }

    #[test]
    fn trace_has_header_and_rows() {
        let v = vocab();
        let set = set_of(&[("yes thanks", Polarity::Positive)]);
        let t = build_trie(&set, &v);
        let s = UniformScorer::new(v.clone());
        let mut rows = Vec::new();
        beam_search_traced(&s, &[], &t, 1, 30, None, &mut rows).unwrap();
        assert_eq!(rows.len(), 3);
        let tsv = trace_tsv(&rows, &v);
        assert!(tsv.starts_with("step\tprefix\tcum_logp"));
        assert!(tsv.contains("\tyes thanks\t"));
    }
}
