//! Response / feature / seed graph used for intent propagation.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer};

use super::canonical::{canonicalize, CanonicalResponse};
use super::ResponseSpaceError;
use crate::corpus::tokenize;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Response,
    Seed,
    Feature,
}

/// Ordered cluster seeds: `(cluster label, example sentences)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SeedList(pub Vec<(String, Vec<String>)>);

impl<'de> Deserialize<'de> for SeedList {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct SeedVisitor;
        impl<'de> Visitor<'de> for SeedVisitor {
            type Value = SeedList;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("an object mapping cluster labels to example lists")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<SeedList, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, Vec<String>>()? {
                    out.push((k, v));
                }
                Ok(SeedList(out))
            }
        }
        d.deserialize_map(SeedVisitor)
    }
}

impl SeedList {
    /// Parses a seeds file. Duplicate labels are kept here and rejected by
    /// [`build_intent_graph`].
    pub fn from_json(text: &str) -> Result<Self, ResponseSpaceError> {
        serde_json::from_str(text).map_err(|e| ResponseSpaceError::BadSeeds(e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphOptions {
    /// Feature edges carry weight 1 instead of the occurrence count.
    pub binary_weights: bool,
    pub message_edge_weight: f64,
}

impl Default for GraphOptions {
    fn default() -> Self {
        GraphOptions {
            binary_weights: false,
            message_edge_weight: 1.0,
        }
    }
}

/// Undirected weighted graph. Response nodes are numbered first (in input
/// order), so response `i` is node `i`.
#[derive(Clone, Debug, Default)]
pub struct IntentGraph {
    kinds: Vec<NodeKind>,
    names: Vec<String>,
    adj: Vec<Vec<(usize, f64)>>,
    canonical: Vec<Vec<String>>,
    seed_labels: Vec<Option<String>>,
    feature_index: HashMap<String, usize>,
    pub warnings: Vec<String>,
}

/// n-grams (n <= 3) and one-gap skip-grams over a canonical token list, with
/// occurrence counts. A skip-gram spans one more position than its length and
/// marks the skipped position with `*`: `a_*_c`, `a_*_c_d`, `a_b_*_d`.
pub fn extract_features<S: AsRef<str>>(tokens: &[S]) -> BTreeMap<String, u32> {
    let t: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    let n = t.len();
    let mut out = BTreeMap::new();
    let mut add = |parts: &[&str]| *out.entry(parts.join("_")).or_insert(0) += 1;
    for i in 0..n {
        add(&[t[i]]);
        if i + 1 < n {
            add(&[t[i], t[i + 1]]);
        }
        if i + 2 < n {
            add(&[t[i], t[i + 1], t[i + 2]]);
            add(&[t[i], "*", t[i + 2]]);
        }
        if i + 3 < n {
            add(&[t[i], "*", t[i + 2], t[i + 3]]);
            add(&[t[i], t[i + 1], "*", t[i + 3]]);
        }
    }
    out
}

impl IntentGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn kind(&self, node: usize) -> NodeKind {
        self.kinds[node]
    }

    pub fn name(&self, node: usize) -> &str {
        &self.names[node]
    }

    pub fn neighbors(&self, node: usize) -> &[(usize, f64)] {
        &self.adj[node]
    }

    pub fn canonical(&self, node: usize) -> &[String] {
        &self.canonical[node]
    }

    pub fn nodes_of(&self, kind: NodeKind) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(move |&i| self.kinds[i] == kind)
    }

    pub fn response_count(&self) -> usize {
        self.nodes_of(NodeKind::Response).count()
    }

    pub fn feature_node(&self, feature: &str) -> Option<usize> {
        self.feature_index.get(feature).copied()
    }

    /// Seed nodes with their cluster labels, in insertion order.
    pub fn seeds(&self) -> Vec<(usize, &str)> {
        self.seed_labels
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.as_deref().map(|l| (i, l)))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(Vec::len).sum::<usize>() / 2
    }

    /// Gauss-Seidel sweep order: responses, then seeds, then features, each
    /// in insertion order.
    pub fn sweep_order(&self) -> Vec<usize> {
        let mut order: Vec<usize> = self.nodes_of(NodeKind::Response).collect();
        order.extend(self.nodes_of(NodeKind::Seed));
        order.extend(self.nodes_of(NodeKind::Feature));
        order
    }

    pub fn add_node(&mut self, kind: NodeKind, name: impl Into<String>) -> usize {
        self.kinds.push(kind);
        self.names.push(name.into());
        self.adj.push(Vec::new());
        self.canonical.push(Vec::new());
        self.seed_labels.push(None);
        self.kinds.len() - 1
    }

    pub fn add_seed_node(&mut self, label: &str, name: impl Into<String>) -> usize {
        let id = self.add_node(NodeKind::Seed, name);
        self.seed_labels[id] = Some(label.to_string());
        id
    }

    /// Adds (or reinforces) an undirected edge. Only response-feature,
    /// seed-feature and response-response edges are allowed.
    pub fn add_edge(&mut self, u: usize, v: usize, weight: f64) -> Result<(), ResponseSpaceError> {
        use NodeKind::*;
        let n = self.len();
        if u >= n || v >= n || u == v {
            return Err(ResponseSpaceError::InvalidEdge(u, v));
        }
        let ok = matches!(
            (self.kinds[u], self.kinds[v]),
            (Response, Feature) | (Feature, Response) | (Seed, Feature) | (Feature, Seed) | (Response, Response)
        );
        if !ok || !(weight > 0.0 && weight.is_finite()) {
            return Err(ResponseSpaceError::InvalidEdge(u, v));
        }
        if let Some(e) = self.adj[u].iter_mut().find(|e| e.0 == v) {
            e.1 += weight;
            self.adj[v].iter_mut().find(|e| e.0 == u).unwrap().1 += weight;
        } else {
            self.adj[u].push((v, weight));
            self.adj[v].push((u, weight));
        }
        Ok(())
    }

    fn feature_node_or_insert(&mut self, feature: &str) -> usize {
        if let Some(&id) = self.feature_index.get(feature) {
            return id;
        }
        let id = self.add_node(NodeKind::Feature, feature);
        self.feature_index.insert(feature.to_string(), id);
        id
    }

    fn attach_features(&mut self, node: usize, canonical: &[String], binary: bool) {
        for (feat, count) in extract_features(canonical) {
            let f = self.feature_node_or_insert(&feat);
            let w = if binary { 1.0 } else { count as f64 };
            self.add_edge(node, f, w).expect("feature edge is valid");
        }
        self.canonical[node] = canonical.to_vec();
    }

    /// Edge list as TSV (`source<TAB>target<TAB>weight`), each edge once.
    pub fn to_edge_tsv(&self) -> String {
        let mut out = String::new();
        for u in 0..self.len() {
            for &(v, w) in &self.adj[u] {
                if u < v {
                    let _ = writeln!(out, "{}\t{}\t{}", self.names[u], self.names[v], w);
                }
            }
        }
        out
    }
}

/// Builds the propagation graph: one node per response, one node per seed
/// example, one feature node per distinct n-gram/skip-gram, plus message
/// edges between linked responses (`pair_links` index into `responses`).
pub fn build_intent_graph(
    responses: &[CanonicalResponse],
    seeds: &SeedList,
    pair_links: &[(usize, usize)],
    options: GraphOptions,
) -> Result<IntentGraph, ResponseSpaceError> {
    let mut labels = HashSet::new();
    for (label, _) in &seeds.0 {
        if !labels.insert(label.as_str()) {
            return Err(ResponseSpaceError::DuplicateSeedLabel(label.clone()));
        }
    }
    let mut g = IntentGraph::new();
    for r in responses {
        g.add_node(NodeKind::Response, r.surface.join(" "));
    }
    for (i, r) in responses.iter().enumerate() {
        g.attach_features(i, &r.canonical, options.binary_weights);
    }
    let known: HashSet<&[String]> = responses.iter().map(|r| r.canonical.as_slice()).collect();
    for (label, examples) in &seeds.0 {
        for text in examples {
            let canonical = canonicalize(&tokenize(text)).map_err(|_| {
                ResponseSpaceError::SeedNotCanonical {
                    label: label.clone(),
                    text: text.clone(),
                }
            })?;
            if !known.contains(canonical.as_slice()) {
                g.warnings.push(format!(
                    "seed {text:?} for {label:?} matches no response"
                ));
            }
            let node = g.add_seed_node(label, format!("seed:{label}:{text}"));
            g.attach_features(node, &canonical, options.binary_weights);
        }
    }
    for &(a, b) in pair_links {
        if a >= responses.len() || b >= responses.len() {
            return Err(ResponseSpaceError::InvalidEdge(a, b));
        }
        if a != b {
            g.add_edge(a, b, options.message_edge_weight)?;
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resp(canon: &str) -> CanonicalResponse {
        let c: Vec<String> = canon.split_whitespace().map(String::from).collect();
        CanonicalResponse {
            surface: c.clone(),
            canonical: c,
            frequency: 1,
        }
    }

    #[test]
    fn two_token_features() {
        let f = extract_features(&["thanks", "update"]);
        let keys: Vec<_> = f.keys().cloned().collect();
        assert_eq!(keys, vec!["thanks", "thanks_update", "update"]);
        assert!(f.values().all(|&c| c == 1));

        let g = build_intent_graph(&[resp("thanks update")], &SeedList::default(), &[], GraphOptions::default()).unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!(g.edge_count(), 3);
        assert!(g.neighbors(0).iter().all(|&(_, w)| w == 1.0));
    }

    #[test]
    fn skip_grams() {
        let f = extract_features(&["a", "b", "c", "d"]);
        for k in ["a_*_c", "b_*_d", "a_*_c_d", "a_b_*_d", "a_b_c", "b_c_d"] {
            assert!(f.contains_key(k), "{k}");
        }
        // 4 unigrams, 3 bigrams, 2 trigrams, 2 gap-2, 2 gap-3
        assert_eq!(f.len(), 13);
        assert_eq!(extract_features(&["a", "a"])["a"], 2);
    }

    #[test]
    fn shared_feature_two_hops() {
        let g = build_intent_graph(
            &[resp("thanks update"), resp("thanks status")],
            &SeedList::default(),
            &[],
            GraphOptions::default(),
        )
        .unwrap();
        let f = g.feature_node("thanks").unwrap();
        let nb: Vec<usize> = g.neighbors(f).iter().map(|e| e.0).collect();
        assert_eq!(nb, vec![0, 1]);
    }

    #[test]
    fn seeds_and_links() {
        let seeds = SeedList::from_json(r#"{"thanks": ["Thanks!", "Thank you."]}"#).unwrap();
        let g = build_intent_graph(
            &[resp("thanks"), resp("ok")],
            &seeds,
            &[(0, 1)],
            GraphOptions::default(),
        )
        .unwrap();
        assert_eq!(g.seeds().len(), 2);
        assert!(g.neighbors(0).contains(&(1, 1.0)));
        assert!(g.warnings.is_empty());
        let order = g.sweep_order();
        assert_eq!(order, vec![0, 1, 4, 5, 2, 3]);
    }

    #[test]
    fn duplicate_seed_label() {
        let seeds = SeedList::from_json(r#"{"a": ["yes"], "a": ["ok"]}"#).unwrap();
        assert_eq!(seeds.0.len(), 2);
        assert!(matches!(
            build_intent_graph(&[], &seeds, &[], GraphOptions::default()),
            Err(ResponseSpaceError::DuplicateSeedLabel(_))
        ));
    }

    #[test]
    fn unknown_seed_text_warns() {
        let seeds = SeedList::from_json(r#"{"fun": ["lol"]}"#).unwrap();
        let g = build_intent_graph(&[resp("ok")], &seeds, &[], GraphOptions::default()).unwrap();
        assert_eq!(g.warnings.len(), 1);
    }

    #[test]
    fn rejects_bad_edges() {
        let mut g = IntentGraph::new();
        let s = g.add_seed_node("x", "s");
        let r = g.add_node(NodeKind::Response, "r");
        let f = g.add_node(NodeKind::Feature, "f");
        assert!(g.add_edge(s, r, 1.0).is_err());
        assert!(g.add_edge(r, f, 0.0).is_err());
        assert!(g.add_edge(r, f, 2.0).is_ok());
        assert_eq!(g.to_edge_tsv(), "r\tf\t2\n");
    }
}
