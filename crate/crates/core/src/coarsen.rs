//! Multi-scale pairwise coarsening.
//!
//! Edges are weighted by the (clamped) cosine similarity of their endpoint
//! features, node pairs are matched greedily by decreasing weight over the
//! whole graph, and each matched pair is merged into one super-node whose edge
//! weights are the sums of its members' weights. The weight between the two
//! members of a pair is dropped, so coarse graphs never carry self-loops.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{MpcclError, Result};
use crate::graphdata::AttributedGraph;
use crate::sparse::CsrMatrix;

/// Default lower bound on the number of nodes of any coarse graph.
pub const DEFAULT_MIN_NODES: usize = 32;

/// Weighted undirected graph with per-node mass (original nodes represented).
///
/// Structural edges of weight zero are kept as explicit entries so that
/// matching can still use them.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    pub weights: CsrMatrix,
    pub node_mass: Vec<usize>,
}

impl WeightedGraph {
    pub fn n_nodes(&self) -> usize {
        self.node_mass.len()
    }

    /// Sum of all stored weights over unordered pairs.
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().filter(|&(u, v, _)| u < v).map(|(_, _, w)| w).sum()
    }

    /// Undirected edges `(u, v, w)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.weights.iter().filter(|&(u, v, _)| u < v)
    }
}

/// Assignment of each node of a finer graph to a node of a coarser one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MergeMap {
    pub assignment: Vec<usize>,
    pub n_coarse: usize,
}

impl MergeMap {
    pub fn identity(n: usize) -> Self {
        MergeMap {
            assignment: (0..n).collect(),
            n_coarse: n,
        }
    }

    /// `self` maps original → middle; `next` maps middle → coarse.
    pub fn then(&self, next: &MergeMap) -> MergeMap {
        MergeMap {
            assignment: self.assignment.iter().map(|&m| next.assignment[m]).collect(),
            n_coarse: next.n_coarse,
        }
    }

    /// Members of each super-node, in increasing original index.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut blocks = vec![Vec::new(); self.n_coarse];
        for (u, &c) in self.assignment.iter().enumerate() {
            blocks[c].push(u);
        }
        blocks
    }

    pub fn is_consistent(&self) -> bool {
        let mut seen = vec![false; self.n_coarse];
        for &c in &self.assignment {
            if c >= self.n_coarse {
                return false;
            }
            seen[c] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

/// One graph of the multi-scale sequence.
#[derive(Debug, Clone)]
pub struct CoarsenedGraph {
    pub graph: WeightedGraph,
    /// Original node → super-node at this scale.
    pub merge_map: MergeMap,
    pub scale: f64,
    pub target_nodes: usize,
    /// Match/merge passes performed since the original graph.
    pub steps: usize,
    /// Intra-pair weight discarded since the original graph.
    pub dropped_weight: f64,
    /// True when a pass found no pairs before the target was reached.
    pub early_stopped: bool,
}

/// Result of a single match+merge pass.
#[derive(Debug, Clone)]
pub struct CoarsenStep {
    pub graph: WeightedGraph,
    pub merge_map: MergeMap,
    pub dropped_weight: f64,
}

/// Cosine similarity weights on the edges of `graph`, clamped at zero.
/// Edges touching a zero-norm feature vector get weight 0.
pub fn edge_weights(graph: &AttributedGraph) -> WeightedGraph {
    let x = &graph.features;
    let norms: Vec<f64> = x.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let weights = CsrMatrix::from_triplets(
        graph.n_nodes(),
        graph.n_nodes(),
        graph.adjacency.iter().map(|(u, v, _)| {
            let denom = norms[u] * norms[v];
            let w = if denom > 0.0 {
                (x.row(u).dot(&x.row(v)) / denom).max(0.0)
            } else {
                0.0
            };
            (u, v, w)
        }),
    )
    .expect("adjacency indices are in range");
    WeightedGraph {
        weights,
        node_mass: vec![1; graph.n_nodes()],
    }
}

/// Greedy maximum-similarity matching over all edges.
///
/// Edges are visited by decreasing weight, ties broken by the smaller endpoint
/// and then the larger one; an edge is taken when both endpoints are still
/// free. Pairs are returned as `(min, max)` in selection order.
pub fn match_pairs(wg: &WeightedGraph) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize, f64)> = wg.edges().collect();
    edges.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let mut matched = vec![false; wg.n_nodes()];
    let mut pairs = Vec::new();
    for (u, v, _) in edges {
        if !matched[u] && !matched[v] {
            matched[u] = true;
            matched[v] = true;
            pairs.push((u, v));
        }
    }
    pairs
}

/// Merges every pair into one node. Super-node ids follow the smallest member
/// index, so unmatched nodes keep their relative order.
pub fn coarsen_step(wg: &WeightedGraph, pairs: &[(usize, usize)]) -> Result<CoarsenStep> {
    let n = wg.n_nodes();
    let mut partner: Vec<Option<usize>> = vec![None; n];
    for &(u, v) in pairs {
        if u >= n || v >= n || u == v {
            return Err(MpcclError::Contract(format!("invalid pair ({u}, {v})")));
        }
        if partner[u].is_some() || partner[v].is_some() {
            return Err(MpcclError::Contract(format!("pair ({u}, {v}) overlaps another pair")));
        }
        partner[u] = Some(v);
        partner[v] = Some(u);
    }

    let mut assignment = vec![usize::MAX; n];
    let mut n_coarse = 0;
    for u in 0..n {
        if assignment[u] != usize::MAX {
            continue;
        }
        assignment[u] = n_coarse;
        if let Some(p) = partner[u] {
            assignment[p] = n_coarse;
        }
        n_coarse += 1;
    }

    let mut node_mass = vec![0; n_coarse];
    for u in 0..n {
        node_mass[assignment[u]] += wg.node_mass[u];
    }

    let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut dropped = 0.0;
    for (u, v, w) in wg.edges() {
        let (a, b) = (assignment[u], assignment[v]);
        if a == b {
            dropped += w;
        } else {
            *acc.entry((a.min(b), a.max(b))).or_insert(0.0) += w;
        }
    }
    let weights = CsrMatrix::from_triplets(
        n_coarse,
        n_coarse,
        acc.into_iter().flat_map(|((a, b), w)| [(a, b, w), (b, a, w)]),
    )?;
    Ok(CoarsenStep {
        graph: WeightedGraph { weights, node_mass },
        merge_map: MergeMap {
            assignment,
            n_coarse,
        },
        dropped_weight: dropped,
    })
}

/// `max(n_min, ⌊s·n⌋)`.
pub fn target_size(scale: f64, n: usize, n_min: usize) -> usize {
    ((scale * n as f64).floor() as usize).max(n_min)
}

fn check_scales(scales: &[f64]) -> Result<()> {
    if scales.is_empty() {
        return Err(MpcclError::Config("no coarsening scales given".into()));
    }
    for &s in scales {
        if !(s > 0.0 && s <= 1.0) {
            return Err(MpcclError::Config(format!("scale {s} outside (0, 1]")));
        }
    }
    if scales.windows(2).any(|w| w[1] > w[0]) {
        return Err(MpcclError::Config(format!(
            "scales must be sorted in descending order, got {scales:?}"
        )));
    }
    Ok(())
}

/// Builds the coarse graph for every scale, each from the previous one.
///
/// Within a scale, passes repeat until the node count reaches the target. The
/// final pass only applies as many of its (highest-weight) pairs as needed to
/// land exactly on the target. A pass that finds no pair at all stops the
/// cascade early and is flagged on every remaining scale.
pub fn multi_scale_coarsen(
    graph: &AttributedGraph,
    scales: &[f64],
    n_min: usize,
) -> Result<Vec<CoarsenedGraph>> {
    check_scales(scales)?;
    if n_min == 0 {
        return Err(MpcclError::Config("min-nodes must be at least 1".into()));
    }
    let n = graph.n_nodes();
    let mut current = edge_weights(graph);
    let mut merge_map = MergeMap::identity(n);
    let mut steps = 0;
    let mut dropped = 0.0;
    let mut stuck = false;
    let mut out = Vec::with_capacity(scales.len());

    for &scale in scales {
        let target = target_size(scale, n, n_min);
        while !stuck && current.n_nodes() > target {
            let mut pairs = match_pairs(&current);
            if pairs.is_empty() {
                stuck = true;
                break;
            }
            pairs.truncate(current.n_nodes() - target);
            let step = coarsen_step(&current, &pairs)?;
            merge_map = merge_map.then(&step.merge_map);
            dropped += step.dropped_weight;
            current = step.graph;
            steps += 1;
        }
        out.push(CoarsenedGraph {
            graph: current.clone(),
            merge_map: merge_map.clone(),
            scale,
            target_nodes: target,
            steps,
            dropped_weight: dropped,
            early_stopped: stuck && current.n_nodes() > target,
        });
    }
    Ok(out)
}

/// Re-indexes coarse edge weights onto the original nodes:
/// `lifted[u][v] = W[c(u)][c(v)]` when `c(u) != c(v)`, else 0.
pub fn lift_adjacency(cg: &CoarsenedGraph, n_original: usize) -> Result<CsrMatrix> {
    let map = &cg.merge_map;
    if map.assignment.len() != n_original {
        return Err(MpcclError::Contract(format!(
            "merge map covers {} nodes, expected {n_original}",
            map.assignment.len()
        )));
    }
    let blocks = map.blocks();
    let w = &cg.graph.weights;
    let mut triplets = Vec::new();
    for u in 0..n_original {
        let cu = map.assignment[u];
        for (cv, x) in w.row(cu) {
            if cv == cu || x == 0.0 {
                continue;
            }
            triplets.extend(blocks[cv].iter().map(|&v| (u, v, x)));
        }
    }
    CsrMatrix::from_triplets(n_original, n_original, triplets)
}
