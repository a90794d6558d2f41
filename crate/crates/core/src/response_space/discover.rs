use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::graph::{IntentGraph, NodeKind};
use super::propagate::{propagate_labels, Propagation, PropagationParams};
use super::ResponseSpaceError;

/// Reserved label at index 0. It is never seeded; a node whose scores carry
/// no signal ties on every label and resolves to it, which is what lets a
/// single seeded cluster be told apart from "no cluster".
pub const BACKGROUND_LABEL: &str = "__background__";

#[derive(Clone, Debug)]
pub struct Discovery {
    /// All labels; index 0 is [`BACKGROUND_LABEL`].
    pub labels: Vec<String>,
    /// Graph node of each response, in response order.
    pub response_nodes: Vec<usize>,
    /// Assigned label index per response, `None` when unlabeled.
    pub assignment: Vec<Option<usize>>,
    /// Winning raw score per response.
    pub scores: Vec<f64>,
    /// Labels created by sampling, in creation order.
    pub new_clusters: Vec<String>,
    pub phases: usize,
    /// False when `max_phases` ran out while clusters were still being added.
    pub converged: bool,
    pub propagation: Propagation,
}

impl Discovery {
    pub fn label_of(&self, response: usize) -> Option<&str> {
        self.assignment[response].map(|l| self.labels[l].as_str())
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Real clusters (background excluded) in label order.
    pub fn clusters(&self) -> &[String] {
        &self.labels[1..]
    }

    pub fn members(&self, label: usize) -> Vec<usize> {
        (0..self.assignment.len())
            .filter(|&r| self.assignment[r] == Some(label))
            .collect()
    }
}

fn unique_name(base: &str, taken: &HashSet<String>) -> String {
    if !taken.contains(base) {
        return base.to_string();
    }
    (2..)
        .map(|i| format!("{base}_{i}"))
        .find(|n| !taken.contains(n))
        .unwrap()
}

/// Repeated-phase cluster discovery. Each phase propagates labels, assigns
/// every response its best label when that label scores at least the floor,
/// then promotes a uniform sample of unlabeled responses to new clusters
/// named after their canonical form. Stops once a phase adds nothing.
pub fn discover_clusters(
    graph: &IntentGraph,
    params: &PropagationParams,
    rng_seed: u64,
) -> Result<Discovery, ResponseSpaceError> {
    params.validate()?;
    let seed_nodes = graph.seeds();
    if seed_nodes.is_empty() {
        return Err(ResponseSpaceError::NoSeeds);
    }
    let mut labels = vec![BACKGROUND_LABEL.to_string()];
    let mut seeds: Vec<(usize, usize)> = Vec::new();
    for (node, label) in seed_nodes {
        let idx = match labels.iter().position(|l| l == label) {
            Some(i) => i,
            None => {
                labels.push(label.to_string());
                labels.len() - 1
            }
        };
        seeds.push((node, idx));
    }
    let response_nodes: Vec<usize> = graph.nodes_of(NodeKind::Response).collect();
    let mut taken: HashSet<String> = labels.iter().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut new_clusters = Vec::new();
    let mut previous: Option<Vec<Option<usize>>> = None;
    let mut phases = 0;

    loop {
        phases += 1;
        let prop = propagate_labels(graph, params, &labels, &seeds)?;
        let floor = params.floor_for(labels.len());
        let mut assignment = Vec::with_capacity(response_nodes.len());
        let mut scores = Vec::with_capacity(response_nodes.len());
        for &node in &response_nodes {
            let (best, score) = prop.scores.argmax(node);
            scores.push(score);
            assignment.push((best != 0 && score >= floor).then_some(best));
        }

        let unlabeled: Vec<usize> = (0..response_nodes.len())
            .filter(|&r| assignment[r].is_none())
            .collect();
        let stable = previous.as_ref().is_none_or(|p| *p == assignment);
        let done = unlabeled.is_empty() || params.sample_size == 0;
        if (done && stable) || phases >= params.max_phases {
            let converged = done && stable;
            if !converged {
                log::warn!("cluster discovery stopped after {phases} phases without converging");
            }
            return Ok(Discovery {
                labels,
                response_nodes,
                assignment,
                scores,
                new_clusters,
                phases,
                converged,
                propagation: prop,
            });
        }

        let take = params.sample_size.min(unlabeled.len());
        for &r in unlabeled.choose_multiple(&mut rng, take) {
            let node = response_nodes[r];
            let name = unique_name(&graph.canonical(node).join("_"), &taken);
            taken.insert(name.clone());
            labels.push(name.clone());
            seeds.push((node, labels.len() - 1));
            new_clusters.push(name);
        }
        log::info!(
            "phase {phases}: {} unlabeled, {} clusters",
            unlabeled.len(),
            labels.len() - 1
        );
        previous = Some(assignment);
    }
}

/// Up to `k` responses assigned to `cluster`, best score first, ties broken
/// by response text.
pub fn extract_top_members(
    graph: &IntentGraph,
    discovery: &Discovery,
    cluster: &str,
    k: usize,
) -> Result<Vec<usize>, ResponseSpaceError> {
    let label = discovery
        .label_index(cluster)
        .filter(|&l| l != 0)
        .ok_or_else(|| ResponseSpaceError::UnknownCluster(cluster.to_string()))?;
    let mut members = discovery.members(label);
    members.sort_by(|&a, &b| {
        discovery.scores[b]
            .total_cmp(&discovery.scores[a])
            .then_with(|| {
                graph
                    .name(discovery.response_nodes[a])
                    .cmp(graph.name(discovery.response_nodes[b]))
            })
    });
    members.truncate(k);
    Ok(members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::response_space::canonical::CanonicalResponse;
    use crate::response_space::graph::{build_intent_graph, GraphOptions, SeedList};

    fn resp(s: &str) -> CanonicalResponse {
        let c: Vec<String> = s.split_whitespace().map(String::from).collect();
        CanonicalResponse {
            surface: c.clone(),
            canonical: c,
            frequency: 1,
        }
    }

    fn seeds(pairs: &[(&str, &[&str])]) -> SeedList {
        SeedList(
            pairs
                .iter()
                .map(|(l, ex)| (l.to_string(), ex.iter().map(|s| s.to_string()).collect()))
                .collect(),
        )
    }

    #[test]
    fn covered_graph_converges_immediately() {
        let rs = vec![resp("thanks update"), resp("thanks status update"), resp("great thanks")];
        let g = build_intent_graph(&rs, &seeds(&[("thanks", &["thanks update", "thanks status update", "great thanks"])]), &[], GraphOptions::default())
            .unwrap();
        let d = discover_clusters(&g, &PropagationParams::default(), 1).unwrap();
        assert!(d.converged);
        assert_eq!(d.phases, 1);
        assert!(d.new_clusters.is_empty());
        assert!((0..3).all(|r| d.label_of(r) == Some("thanks")));
    }

    #[test]
    fn top_members_and_errors() {
        let rs = vec![resp("thanks"), resp("thanks update"), resp("great thanks")];
        let g = build_intent_graph(&rs, &seeds(&[("thanks", &["thanks"])]), &[], GraphOptions::default())
            .unwrap();
        let d = discover_clusters(&g, &PropagationParams::default(), 1).unwrap();
        let top = extract_top_members(&g, &d, "thanks", 5).unwrap();
        assert_eq!(top.len(), 3);
        assert_eq!(top[0], 0);
        assert!(d.scores[top[0]] >= d.scores[top[1]] && d.scores[top[1]] >= d.scores[top[2]]);
        assert!(extract_top_members(&g, &d, "thanks", 0).unwrap().is_empty());
        assert!(matches!(
            extract_top_members(&g, &d, "nope", 1),
            Err(ResponseSpaceError::UnknownCluster(_))
        ));
        assert!(extract_top_members(&g, &d, BACKGROUND_LABEL, 1).is_err());
    }

    #[test]
    fn naming_collisions_get_suffix() {
        let taken: HashSet<String> = ["ok".to_string(), "ok_2".to_string()].into();
        assert_eq!(unique_name("ok", &taken), "ok_3");
        assert_eq!(unique_name("fine", &taken), "fine");
    }
}
