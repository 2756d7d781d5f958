//! Synthetic citation-style graphs: a degree-corrected stochastic block model
//! with binary bag-of-words features drawn from class topics.
//!
//! The presets copy the published size, class balance, vocabulary size,
//! words per document, edge count and edge homophily of Cora and Citeseer.
//! They stand in for the real datasets when those are not available locally.

use std::collections::HashSet;

use ndarray::Array2;
use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MpcclError, Result};
use crate::graphdata::{symmetrize, AttributedGraph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub name: String,
    pub class_sizes: Vec<usize>,
    pub n_features: usize,
    /// Mean number of distinct words per node.
    pub mean_words: f64,
    /// Number of undirected edges.
    pub n_edges: usize,
    /// Fraction of edges joining nodes of the same class.
    pub homophily: f64,
    /// Probability that a word is drawn from the node's class topic rather
    /// than the shared background vocabulary.
    pub topic_fraction: f64,
    /// Tail exponent of the degree propensities.
    pub degree_exponent: f64,
}

impl SynthSpec {
    pub fn cora_like() -> Self {
        SynthSpec {
            name: "cora-synth".into(),
            class_sizes: vec![818, 426, 418, 351, 298, 217, 180],
            n_features: 1433,
            mean_words: 18.0,
            n_edges: 5278,
            homophily: 0.81,
            topic_fraction: 0.3,
            degree_exponent: 2.5,
        }
    }

    pub fn citeseer_like() -> Self {
        SynthSpec {
            name: "citeseer-synth".into(),
            class_sizes: vec![264, 590, 668, 701, 596, 508],
            n_features: 3703,
            mean_words: 32.0,
            n_edges: 4552,
            homophily: 0.74,
            topic_fraction: 0.3,
            degree_exponent: 2.5,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "cora" => Some(Self::cora_like()),
            "citeseer" => Some(Self::citeseer_like()),
            _ => None,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.class_sizes.iter().sum()
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_nodes();
        let k = self.class_sizes.len();
        if k < 2 || self.class_sizes.contains(&0) {
            return Err(MpcclError::Config("need at least two non-empty classes".into()));
        }
        if self.n_features < k {
            return Err(MpcclError::Config("vocabulary smaller than the number of classes".into()));
        }
        if !(self.mean_words >= 1.0 && self.mean_words <= self.n_features as f64) {
            return Err(MpcclError::Config("mean_words must lie in [1, n_features]".into()));
        }
        if !(0.0..=1.0).contains(&self.homophily) || !(0.0..=1.0).contains(&self.topic_fraction) {
            return Err(MpcclError::Config("homophily and topic_fraction must lie in [0, 1]".into()));
        }
        if !(self.degree_exponent > 1.0) {
            return Err(MpcclError::Config("degree_exponent must exceed 1".into()));
        }
        let max_edges = n * (n - 1) / 2;
        if self.n_edges < (n + 1) / 2 || self.n_edges > max_edges / 2 {
            return Err(MpcclError::Config(format!(
                "edge count {} outside the feasible range for {n} nodes",
                self.n_edges
            )));
        }
        Ok(())
    }
}

/// Word-frequency weights decaying like `1/rank`.
fn zipf(len: usize) -> Vec<f64> {
    (1..=len).map(|r| 1.0 / r as f64).collect()
}

pub fn generate(spec: &SynthSpec, seed: u64) -> Result<AttributedGraph> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n_nodes();
    let k = spec.class_sizes.len();
    let d = spec.n_features;

    let mut labels: Vec<usize> = spec
        .class_sizes
        .iter()
        .enumerate()
        .flat_map(|(c, &s)| std::iter::repeat(c).take(s))
        .collect();
    labels.shuffle(&mut rng);

    // each class owns a contiguous slice of a shuffled vocabulary
    let mut vocab: Vec<usize> = (0..d).collect();
    vocab.shuffle(&mut rng);
    let topic_len = d / k;
    let topics: Vec<&[usize]> = (0..k).map(|c| &vocab[c * topic_len..(c + 1) * topic_len]).collect();
    let topic_pick = WeightedIndex::new(zipf(topic_len)).expect("positive weights");
    let mut background: Vec<usize> = (0..d).collect();
    background.shuffle(&mut rng);
    let background_pick = WeightedIndex::new(zipf(d)).expect("positive weights");

    let mut features = Array2::zeros((n, d));
    for (i, &c) in labels.iter().enumerate() {
        // 1 + Poisson-like count via a binomial with matching mean
        let trials = (4.0 * spec.mean_words) as usize;
        let p = (spec.mean_words - 1.0) / trials as f64;
        let target = 1 + (0..trials).filter(|_| rng.gen::<f64>() < p).count();
        let target = target.min(d);
        let mut placed = 0;
        while placed < target {
            let word = if rng.gen::<f64>() < spec.topic_fraction {
                topics[c][topic_pick.sample(&mut rng)]
            } else {
                background[background_pick.sample(&mut rng)]
            };
            if features[[i, word]] == 0.0 {
                features[[i, word]] = 1.0;
                placed += 1;
            }
        }
    }

    let propensity: Vec<f64> = (0..n)
        .map(|_| (1.0 - rng.gen::<f64>()).powf(-1.0 / (spec.degree_exponent - 1.0)).min(n as f64))
        .collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &c) in labels.iter().enumerate() {
        members[c].push(i);
    }
    let class_pick: Vec<WeightedIndex<f64>> = members
        .iter()
        .map(|m| WeightedIndex::new(m.iter().map(|&i| propensity[i])).expect("positive weights"))
        .collect();
    let any_pick = WeightedIndex::new(&propensity).expect("positive weights");

    let mut edges: HashSet<(usize, usize)> = HashSet::with_capacity(spec.n_edges);
    let mut degree = vec![0usize; n];
    let partner = |u: usize, rng: &mut ChaCha8Rng| -> usize {
        let c = labels[u];
        if rng.gen::<f64>() < spec.homophily {
            members[c][class_pick[c].sample(rng)]
        } else {
            loop {
                let v = any_pick.sample(rng);
                if labels[v] != c {
                    return v;
                }
            }
        }
    };
    let add = |u: usize, v: usize, edges: &mut HashSet<(usize, usize)>, degree: &mut [usize]| {
        if u != v && edges.insert((u.min(v), u.max(v))) {
            degree[u] += 1;
            degree[v] += 1;
        }
    };

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    for &u in &order {
        while degree[u] == 0 {
            let v = partner(u, &mut rng);
            add(u, v, &mut edges, &mut degree);
        }
    }
    while edges.len() < spec.n_edges {
        let u = any_pick.sample(&mut rng);
        let v = partner(u, &mut rng);
        add(u, v, &mut edges, &mut degree);
    }
    let mut edge_list: Vec<(usize, usize)> = edges.into_iter().collect();
    edge_list.sort_unstable();

    let adjacency = symmetrize(n, edge_list.iter().map(|&(u, v)| (u, v, 1.0)))?;
    AttributedGraph::new(features, adjacency, Some(labels), Some(k))
}

/// Fraction of edges whose endpoints share a label.
pub fn edge_homophily(graph: &AttributedGraph) -> Option<f64> {
    let labels = graph.labels.as_ref()?;
    let (mut same, mut total) = (0usize, 0usize);
    for (u, v, _) in graph.adjacency.iter() {
        if u < v {
            total += 1;
            if labels[u] == labels[v] {
                same += 1;
            }
        }
    }
    (total > 0).then(|| same as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cora_preset_shape() {
        let spec = SynthSpec::cora_like();
        let g = generate(&spec, 0).unwrap();
        assert_eq!(g.n_nodes(), 2708);
        assert_eq!(g.n_features(), 1433);
        assert_eq!(g.n_edges(), 5278);
        assert_eq!(g.n_classes, Some(7));
        let labels = g.labels.as_ref().unwrap();
        for (c, &size) in spec.class_sizes.iter().enumerate() {
            assert_eq!(labels.iter().filter(|&&l| l == c).count(), size);
        }
        let degrees = g.adjacency.row_sums();
        assert!(degrees.iter().all(|&d| d >= 1.0));
        let h = edge_homophily(&g).unwrap();
        assert!((h - 0.81).abs() < 0.03, "homophily {h}");
        let words = g.features.sum() / 2708.0;
        assert!((words - 18.0).abs() < 1.0, "words per node {words}");
    }

    #[test]
    fn deterministic() {
        let mut spec = SynthSpec::cora_like();
        spec.class_sizes = vec![30, 20, 10];
        spec.n_features = 60;
        spec.mean_words = 5.0;
        spec.n_edges = 120;
        let a = generate(&spec, 5).unwrap();
        let b = generate(&spec, 5).unwrap();
        assert_eq!(a.adjacency, b.adjacency);
        assert_eq!(a.features, b.features);
        assert_ne!(generate(&spec, 6).unwrap().features, a.features);
    }

    #[test]
    fn infeasible_spec_rejected() {
        let mut spec = SynthSpec::cora_like();
        spec.homophily = 1.5;
        assert!(matches!(generate(&spec, 0), Err(MpcclError::Config(_))));
    }
}
