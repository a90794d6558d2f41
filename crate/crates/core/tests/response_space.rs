use std::collections::{BTreeMap, HashMap, HashSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use replykit::corpus::{tokenize, MessagePair};
use replykit::response_space::*;

fn resp(canon: &[&str], freq: u64) -> CanonicalResponse {
    let c: Vec<String> = canon.iter().map(|s| s.to_string()).collect();
    CanonicalResponse {
        surface: c.clone(),
        canonical: c,
        frequency: freq,
    }
}

fn labels(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("l{i}")).collect()
}

/// Plain gradient descent on the global objective, written against the
/// edge list rather than the solver's update rule.
fn gradient_descent_oracle(
    n: usize,
    edges: &[(usize, usize, f64)],
    seeds: &[(usize, usize)],
    n_labels: usize,
    mu_np: f64,
    mu_pp: f64,
) -> Vec<Vec<f64>> {
    let u = 1.0 / n_labels as f64;
    let mut x = vec![vec![u; n_labels]; n];
    let lr = 0.02;
    for _ in 0..200_000 {
        let mut g = vec![vec![0.0; n_labels]; n];
        for i in 0..n {
            for k in 0..n_labels {
                g[i][k] += 2.0 * mu_pp * (x[i][k] - u);
            }
        }
        for &(node, lab) in seeds {
            for k in 0..n_labels {
                let c = if k == lab { 1.0 } else { 0.0 };
                g[node][k] += 2.0 * (x[node][k] - c);
            }
        }
        for &(a, b, w) in edges {
            for k in 0..n_labels {
                let d = 2.0 * mu_np * w * (x[a][k] - x[b][k]);
                g[a][k] += d;
                g[b][k] -= d;
            }
        }
        let mut moved: f64 = 0.0;
        for i in 0..n {
            for k in 0..n_labels {
                x[i][k] -= lr * g[i][k];
                moved = moved.max((lr * g[i][k]).abs());
            }
        }
        if moved < 1e-14 {
            break;
        }
    }
    x
}

#[test]
fn chain_fixed_point_matches_gradient_descent() {
    let mut g = IntentGraph::new();
    let s = g.add_seed_node("l0", "seed");
    let f = g.add_node(NodeKind::Feature, "f");
    let r = g.add_node(NodeKind::Response, "r");
    g.add_edge(s, f, 1.0).unwrap();
    g.add_edge(r, f, 1.0).unwrap();
    let params = PropagationParams {
        mu_np: 1.0,
        mu_pp: 1.0,
        label_iters: 10_000,
        tolerance: 1e-13,
        ..Default::default()
    };
    let p = propagate_labels(&g, &params, &labels(2), &[(s, 0)]).unwrap();
    assert!(p.converged);
    let oracle = gradient_descent_oracle(3, &[(s, f, 1.0), (r, f, 1.0)], &[(s, 0)], 2, 1.0, 1.0);
    for node in [s, f, r] {
        for k in 0..2 {
            let got = p.scores.row(node)[k];
            assert!((got - oracle[node][k]).abs() < 1e-8, "node {node} label {k}: {got} vs {}", oracle[node][k]);
        }
    }
}

#[derive(Debug, Clone)]
struct RandomGraph {
    n_resp: usize,
    n_feat: usize,
    n_seed: usize,
    edges: Vec<(usize, usize, f64)>,
    seed_labels: Vec<usize>,
    n_labels: usize,
}

fn random_graph(rng: &mut ChaCha8Rng, n_resp: usize, n_feat: usize, n_seed: usize, n_labels: usize) -> RandomGraph {
    let mut edges = Vec::new();
    let mut seen = HashSet::new();
    let feat = |i: usize| n_resp + n_seed + i;
    for r in 0..n_resp + n_seed {
        for _ in 0..3 {
            let f = feat(rng.gen_range(0..n_feat));
            if seen.insert((r, f)) {
                edges.push((r, f, rng.gen_range(1..4) as f64));
            }
        }
    }
    for _ in 0..n_resp / 3 {
        let a = rng.gen_range(0..n_resp);
        let b = rng.gen_range(0..n_resp);
        if a != b && seen.insert((a.min(b), a.max(b))) {
            edges.push((a.min(b), a.max(b), 1.0));
        }
    }
    let seed_labels = (0..n_seed).map(|_| rng.gen_range(0..n_labels)).collect();
    RandomGraph {
        n_resp,
        n_feat,
        n_seed,
        edges,
        seed_labels,
        n_labels,
    }
}

impl RandomGraph {
    /// Builds the graph with node ids shuffled by `perm` (old id -> new id)
    /// within each kind block.
    fn build(&self, perm: &[usize]) -> (IntentGraph, Vec<(usize, usize)>) {
        let n = self.n_resp + self.n_seed + self.n_feat;
        let mut inv = vec![0; n];
        for (old, &new) in perm.iter().enumerate() {
            inv[new] = old;
        }
        let mut g = IntentGraph::new();
        for new in 0..n {
            let old = inv[new];
            if old < self.n_resp {
                g.add_node(NodeKind::Response, format!("r{old}"));
            } else if old < self.n_resp + self.n_seed {
                let lab = self.seed_labels[old - self.n_resp];
                g.add_seed_node(&format!("l{lab}"), format!("s{old}"));
            } else {
                g.add_node(NodeKind::Feature, format!("f{old}"));
            }
        }
        for &(a, b, w) in &self.edges {
            g.add_edge(perm[a], perm[b], w).unwrap();
        }
        let seeds = (0..self.n_seed)
            .map(|i| (perm[self.n_resp + i], self.seed_labels[i]))
            .collect();
        (g, seeds)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn objective_never_increases(seed in any::<u64>(), mu_np in 0.0f64..5.0, mu_pp in 0.01f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rg = random_graph(&mut rng, 12, 10, 3, 3);
        let ident: Vec<usize> = (0..25).collect();
        let (g, seeds) = rg.build(&ident);
        let params = PropagationParams { mu_np, mu_pp, label_iters: 30, tolerance: 0.0, ..Default::default() };
        let p = propagate_labels(&g, &params, &labels(rg.n_labels), &seeds).unwrap();
        for w in p.objective_trace.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn fixed_point_holds_at_convergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rg = random_graph(&mut rng, 30, 20, 5, 4);
    let ident: Vec<usize> = (0..55).collect();
    let (g, seeds) = rg.build(&ident);
    let params = PropagationParams {
        label_iters: 100_000,
        ..Default::default()
    };
    let p = propagate_labels(&g, &params, &labels(4), &seeds).unwrap();
    assert!(p.converged);
    assert!(fixed_point_residual(&g, &params, &seeds, &p.scores) < 1e-6);
}

#[test]
fn seed_anchoring() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rg = random_graph(&mut rng, 10, 8, 4, 3);
    let ident: Vec<usize> = (0..22).collect();
    let (g, seeds) = rg.build(&ident);
    let params = PropagationParams {
        mu_np: 0.0,
        mu_pp: 1e-6,
        ..Default::default()
    };
    let p = propagate_labels(&g, &params, &labels(3), &seeds).unwrap();
    for &(node, lab) in &seeds {
        for (k, &v) in p.scores.row(node).iter().enumerate() {
            let c = if k == lab { 1.0 } else { 0.0 };
            assert!((v - c).abs() < 1e-4);
        }
    }
}

#[test]
fn permutation_invariant_at_fixed_point() {
    // 8 responses + 4 seeds + 8 features = 20 nodes.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rg = random_graph(&mut rng, 8, 8, 4, 3);
    let n = 20;
    let ident: Vec<usize> = (0..n).collect();
    let (g0, s0) = rg.build(&ident);
    let params = PropagationParams {
        label_iters: 100_000,
        tolerance: 1e-13,
        ..Default::default()
    };
    let base = propagate_labels(&g0, &params, &labels(3), &s0).unwrap();
    for trial in 0..5u64 {
        let mut prng = ChaCha8Rng::seed_from_u64(100 + trial);
        let mut perm: Vec<usize> = (0..n).collect();
        // Any relabeling of nodes, across kind blocks too.
        for i in (1..n).rev() {
            perm.swap(i, prng.gen_range(0..=i));
        }
        let (g, s) = rg.build(&perm);
        let p = propagate_labels(&g, &params, &labels(3), &s).unwrap();
        for old in 0..n {
            for k in 0..3 {
                let a = base.scores.row(old)[k];
                let b = p.scores.row(perm[old])[k];
                assert!((a - b).abs() < 1e-9, "node {old}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn canonical_collapse_shares_features() {
    let texts = [
        "Thanks for your kind update.",
        "Thank you for updating!",
        "Thanks for the status update.",
    ];
    let feats: Vec<BTreeMap<String, u32>> = texts
        .iter()
        .map(|t| extract_features(&canonicalize(&tokenize(t)).unwrap()))
        .collect();
    for i in 0..3 {
        for j in i + 1..3 {
            let shared = feats[i].keys().filter(|k| feats[j].contains_key(*k)).count();
            assert!(shared >= 1, "{} / {}", texts[i], texts[j]);
        }
    }
}

/// Feature enumeration written from the definition: every contiguous
/// window of 1..=3 tokens, and every window of 3..=4 positions with exactly
/// one interior position skipped and 2..=3 tokens kept.
fn brute_features(t: &[String]) -> HashMap<String, u32> {
    let mut out = HashMap::new();
    for start in 0..t.len() {
        for len in 1..=4 {
            if start + len > t.len() {
                break;
            }
            let w = &t[start..start + len];
            if len <= 3 {
                *out.entry(w.join("_")).or_insert(0) += 1;
            }
            if len >= 3 {
                for skip in 1..len - 1 {
                    let parts: Vec<&str> = w
                        .iter()
                        .enumerate()
                        .map(|(i, s)| if i == skip { "*" } else { s.as_str() })
                        .collect();
                    *out.entry(parts.join("_")).or_insert(0) += 1;
                }
            }
        }
    }
    out
}

#[test]
fn graph_counts_match_brute_force() {
    let words = ["yes", "no", "thanks", "see", "soon", "ok", "sounds", "good", "great", "later"];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut responses = Vec::new();
    let mut seen = HashSet::new();
    while responses.len() < 50 {
        let len = rng.gen_range(1..=5);
        let toks: Vec<&str> = (0..len).map(|_| words[rng.gen_range(0..words.len())]).collect();
        if seen.insert(toks.join(" ")) {
            responses.push(resp(&toks, 1));
        }
    }
    let g = build_intent_graph(&responses, &SeedList::default(), &[], GraphOptions::default()).unwrap();
    let mut all_feats = HashSet::new();
    let mut edges = 0;
    let mut weight_total = 0u32;
    for r in &responses {
        let f = brute_features(&r.canonical);
        edges += f.len();
        weight_total += f.values().sum::<u32>();
        all_feats.extend(f.into_keys());
    }
    assert_eq!(g.len(), 50 + all_feats.len());
    assert_eq!(g.edge_count(), edges);
    let graph_weight: f64 = (0..50).flat_map(|r| g.neighbors(r).iter().map(|e| e.1)).sum();
    assert_eq!(graph_weight, weight_total as f64);
}

#[test]
fn frequent_responses_match_counting_oracle() {
    let vocab = ["thanks", "ok", "yes", "sure", "no", "later", "!", "."];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let pairs: Vec<MessagePair> = (0..10_000)
        .map(|_| {
            // Zipf-ish lengths and tokens so that counts vary.
            let len = 1 + (rng.gen::<f64>().powi(3) * 12.0) as usize;
            MessagePair {
                original_id: String::new(),
                original: vec![],
                response: (0..len)
                    .map(|_| vocab[(rng.gen::<f64>().powi(2) * vocab.len() as f64) as usize].to_string())
                    .collect(),
            }
        })
        .collect();
    let got = collect_frequent_responses(&pairs, 3, 10);

    let mut counts: HashMap<String, u64> = HashMap::new();
    for p in &pairs {
        if p.response.len() <= 10 {
            *counts.entry(p.response.join(" ")).or_default() += 1;
        }
    }
    let mut want: Vec<(String, u64)> = counts.into_iter().filter(|(_, c)| *c >= 3).collect();
    want.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.split(' ').cmp(b.0.split(' '))));
    let got: Vec<(String, u64)> = got.iter().map(|c| (c.surface.join(" "), c.frequency)).collect();
    assert!(want.len() > 20);
    assert_eq!(got, want);
}

/// Three planted intents with disjoint vocabularies and seeds for the first
/// intent only. Two bridge responses tie the seeded intent to each of the
/// others, so seed mass leaks into them before they are discovered.
fn planted() -> (Vec<CanonicalResponse>, Vec<Option<usize>>, SeedList) {
    let vocab = [
        ["thanks", "appreciate", "update", "grateful", "helpful", "info"],
        ["meet", "tomorrow", "noon", "lunch", "calendar", "time"],
        ["attached", "file", "report", "draft", "document", "sent"],
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut responses = Vec::new();
    let mut truth = Vec::new();
    let mut seen = HashSet::new();
    for (c, words) in vocab.iter().enumerate() {
        let mut made = 0;
        while made < 30 {
            let len = rng.gen_range(2..=4);
            let toks: Vec<&str> = (0..len).map(|_| words[rng.gen_range(0..6)]).collect();
            if seen.insert(toks.join(" ")) {
                responses.push(resp(&toks, 1));
                truth.push(Some(c));
                made += 1;
            }
        }
    }
    for (a, b) in [(0, 1), (2, 0)] {
        responses.push(resp(&[vocab[a][0], vocab[b][0]], 1));
        truth.push(None);
    }
    let seeds = SeedList(vec![(
        "thanks".to_string(),
        responses[..3].iter().map(|r| r.surface.join(" ")).collect(),
    )]);
    (responses, truth, seeds)
}

fn planted_recovery(d: &Discovery, truth: &[Option<usize>]) -> (f64, usize) {
    let mut recovered = 0;
    let mut total = 0;
    let mut majorities = HashSet::new();
    for c in 0..3 {
        let members: Vec<usize> = (0..truth.len()).filter(|&r| truth[r] == Some(c)).collect();
        let mut votes: HashMap<Option<usize>, usize> = HashMap::new();
        for &r in &members {
            *votes.entry(d.assignment[r]).or_default() += 1;
        }
        let (&label, &n) = votes.iter().max_by_key(|(l, n)| (**n, std::cmp::Reverse(**l))).unwrap();
        total += members.len();
        if label.is_some() && majorities.insert(label) {
            recovered += n;
        }
    }
    (recovered as f64 / total as f64, majorities.len())
}

#[test]
fn planted_clusters_are_discovered() {
    let (responses, truth, seeds) = planted();
    let g = build_intent_graph(&responses, &seeds, &[], GraphOptions::default()).unwrap();
    let params = PropagationParams {
        sample_size: 1,
        ..Default::default()
    };
    for rng_seed in 0..20 {
        let d = discover_clusters(&g, &params, rng_seed).unwrap();
        assert!(d.converged);
        assert!(d.new_clusters.len() >= 2, "{:?}", d.new_clusters);
        let (recovery, distinct) = planted_recovery(&d, &truth);
        assert_eq!(distinct, 3, "seed {rng_seed}: {:?}", d.new_clusters);
        assert!(recovery >= 0.95, "seed {rng_seed}: recovered {recovery}");
    }
    let d = discover_clusters(&g, &params, 42).unwrap();

    // The best-scoring member of the seeded cluster is one of the responses
    // that coincide with a seed example.
    let top = extract_top_members(&g, &d, "thanks", 1).unwrap()[0];
    assert!(top < 3, "top member {}", g.name(top));

    let again = discover_clusters(&g, &params, 42).unwrap();
    assert_eq!(again.labels, d.labels);
    assert_eq!(again.assignment, d.assignment);
}
