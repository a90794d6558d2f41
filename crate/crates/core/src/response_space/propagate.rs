//! Quadratic-objective label propagation solved by Gauss-Seidel sweeps.
//!
//! For labeled nodes (`s = 1`, one-hot target `C`) and unlabeled nodes
//! (`s = 0`) the objective is
//!
//! ```text
//! J = sum_i s_i |Ĉ_i - C_i|^2 + mu_pp sum_i |Ĉ_i - U|^2
//!   + mu_np sum_{(i,j) in E} w_ij |Ĉ_i - Ĉ_j|^2
//! ```
//!
//! where every undirected edge is counted once, so the coordinate minimizer
//! for node `i` is
//! `(s_i C_i + mu_pp U + mu_np sum_j w_ij Ĉ_j) / (s_i + mu_pp + mu_np sum_j w_ij)`.

use serde::{Deserialize, Serialize};

use super::graph::IntentGraph;
use super::ResponseSpaceError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationParams {
    /// Penalty on neighbouring nodes with different distributions.
    pub mu_np: f64,
    /// Penalty on deviation from the uniform prior.
    pub mu_pp: f64,
    /// Sweeps per propagation run.
    pub label_iters: usize,
    /// Unlabeled responses promoted to new clusters per discovery phase.
    pub sample_size: usize,
    pub max_phases: usize,
    /// Minimum winning score for an assignment; `None` means
    /// `1 / |labels| + DEFAULT_FLOOR_MARGIN`.
    pub score_floor: Option<f64>,
    /// Early stop when no entry moves by more than this in a sweep.
    pub tolerance: f64,
}

impl Default for PropagationParams {
    fn default() -> Self {
        PropagationParams {
            mu_np: 1.0,
            mu_pp: 0.1,
            label_iters: 5,
            sample_size: 100,
            max_phases: 20,
            score_floor: None,
            tolerance: 1e-6,
        }
    }
}

impl PropagationParams {
    pub fn validate(&self) -> Result<(), ResponseSpaceError> {
        if !(self.mu_np >= 0.0) || !(self.mu_pp > 0.0) || self.label_iters == 0 {
            return Err(ResponseSpaceError::InvalidParams(format!(
                "need mu_np >= 0, mu_pp > 0, label_iters >= 1 (got {}, {}, {})",
                self.mu_np, self.mu_pp, self.label_iters
            )));
        }
        Ok(())
    }

    /// Assignment floor for a label set of size `n_labels`: the explicit
    /// `score_floor`, else the uniform share plus [`DEFAULT_FLOOR_MARGIN`].
    pub fn floor_for(&self, n_labels: usize) -> f64 {
        self.score_floor
            .unwrap_or(1.0 / n_labels as f64 + DEFAULT_FLOOR_MARGIN)
    }
}

/// Margin over the uniform score a label needs before a node is assigned to
/// it. Seed evidence is diluted by every feature edge it crosses, so
/// deviations from uniform a few hops out are of order 1e-3; a multiplicative
/// floor such as 1.5x uniform leaves most of a connected cluster unassigned.
pub const DEFAULT_FLOOR_MARGIN: f64 = 1e-4;

/// Per-node score vectors stored row-major (`nodes x labels`).
#[derive(Clone, Debug, PartialEq)]
pub struct LabelScores {
    pub n_labels: usize,
    pub values: Vec<f64>,
}

impl LabelScores {
    pub fn uniform(n_nodes: usize, n_labels: usize) -> Self {
        LabelScores {
            n_labels,
            values: vec![1.0 / n_labels as f64; n_nodes * n_labels],
        }
    }

    pub fn row(&self, node: usize) -> &[f64] {
        &self.values[node * self.n_labels..(node + 1) * self.n_labels]
    }

    fn row_mut(&mut self, node: usize) -> &mut [f64] {
        &mut self.values[node * self.n_labels..(node + 1) * self.n_labels]
    }

    /// Highest-scoring label, lowest index on ties.
    pub fn argmax(&self, node: usize) -> (usize, f64) {
        let mut best = (0, f64::NEG_INFINITY);
        for (l, &v) in self.row(node).iter().enumerate() {
            if v > best.1 {
                best = (l, v);
            }
        }
        best
    }
}

#[derive(Clone, Debug)]
pub struct Propagation {
    pub scores: LabelScores,
    /// Objective before the first sweep and after every sweep.
    pub objective_trace: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

impl Propagation {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().unwrap()
    }
}

fn seed_targets(n_nodes: usize, n_labels: usize, seeds: &[(usize, usize)]) -> Result<Vec<Option<usize>>, ResponseSpaceError> {
    let mut target = vec![None; n_nodes];
    for &(node, label) in seeds {
        if node >= n_nodes || label >= n_labels {
            return Err(ResponseSpaceError::InvalidParams(format!(
                "seed ({node}, {label}) out of range"
            )));
        }
        target[node] = Some(label);
    }
    Ok(target)
}

/// Value of the global objective for the given scores.
pub fn objective(
    graph: &IntentGraph,
    params: &PropagationParams,
    seeds: &[(usize, usize)],
    scores: &LabelScores,
) -> f64 {
    let l = scores.n_labels;
    let u = 1.0 / l as f64;
    let mut target = vec![None; graph.len()];
    for &(n, lab) in seeds {
        target[n] = Some(lab);
    }
    let mut total = 0.0;
    for i in 0..graph.len() {
        let row = scores.row(i);
        if let Some(lab) = target[i] {
            total += row
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    let c = if k == lab { 1.0 } else { 0.0 };
                    (v - c) * (v - c)
                })
                .sum::<f64>();
        }
        total += params.mu_pp * row.iter().map(|&v| (v - u) * (v - u)).sum::<f64>();
        for &(j, w) in graph.neighbors(i) {
            if i < j {
                let d: f64 = row
                    .iter()
                    .zip(scores.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                total += params.mu_np * w * d;
            }
        }
    }
    total
}

/// Runs up to `params.label_iters` Gauss-Seidel sweeps from the uniform
/// prior, stopping early once no entry changes by more than
/// `params.tolerance`. `seeds` are `(node, label index)` pairs; any node may
/// be labeled.
pub fn propagate_labels(
    graph: &IntentGraph,
    params: &PropagationParams,
    labels: &[String],
    seeds: &[(usize, usize)],
) -> Result<Propagation, ResponseSpaceError> {
    params.validate()?;
    if seeds.is_empty() {
        return Err(ResponseSpaceError::NoSeeds);
    }
    let l = labels.len();
    let target = seed_targets(graph.len(), l, seeds)?;
    let u = 1.0 / l as f64;
    let mut scores = LabelScores::uniform(graph.len(), l);
    let order = graph.sweep_order();
    let mut trace = vec![objective(graph, params, seeds, &scores)];
    let mut acc = vec![0.0; l];
    let mut converged = false;
    let mut sweeps = 0;
    for _ in 0..params.label_iters {
        sweeps += 1;
        let mut max_change: f64 = 0.0;
        for &i in &order {
            acc.iter_mut().for_each(|a| *a = params.mu_pp * u);
            let mut denom = params.mu_pp;
            if let Some(lab) = target[i] {
                acc[lab] += 1.0;
                denom += 1.0;
            }
            for &(j, w) in graph.neighbors(i) {
                let coef = params.mu_np * w;
                if coef == 0.0 {
                    continue;
                }
                for (a, v) in acc.iter_mut().zip(scores.row(j)) {
                    *a += coef * v;
                }
                denom += coef;
            }
            for (dst, a) in scores.row_mut(i).iter_mut().zip(&acc) {
                let new = a / denom;
                max_change = max_change.max((new - *dst).abs());
                *dst = new;
            }
        }
        trace.push(objective(graph, params, seeds, &scores));
        if max_change < params.tolerance {
            converged = true;
            break;
        }
    }
    Ok(Propagation {
        scores,
        objective_trace: trace,
        sweeps,
        converged,
    })
}

/// Largest violation of the per-node closed-form update at `scores`.
pub fn fixed_point_residual(
    graph: &IntentGraph,
    params: &PropagationParams,
    seeds: &[(usize, usize)],
    scores: &LabelScores,
) -> f64 {
    let l = scores.n_labels;
    let u = 1.0 / l as f64;
    let mut target = vec![None; graph.len()];
    for &(n, lab) in seeds {
        target[n] = Some(lab);
    }
    let mut worst: f64 = 0.0;
    for i in 0..graph.len() {
        let mut acc = vec![params.mu_pp * u; l];
        let mut denom = params.mu_pp;
        if let Some(lab) = target[i] {
            acc[lab] += 1.0;
            denom += 1.0;
        }
        for &(j, w) in graph.neighbors(i) {
            for (a, v) in acc.iter_mut().zip(scores.row(j)) {
                *a += params.mu_np * w * v;
            }
            denom += params.mu_np * w;
        }
        for (a, v) in acc.iter().zip(scores.row(i)) {
            worst = worst.max((a / denom - v).abs());
        }
    }
    worst
}
