//! Clustering quality: Hungarian-matched accuracy, NMI, ARI and macro-F1.

use std::collections::{BTreeMap, BTreeSet};

use pathfinding::kuhn_munkres::kuhn_munkres;
use pathfinding::matrix::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{MpcclError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub nmi: f64,
    pub ari: f64,
    pub f1: f64,
    pub n_samples: usize,
    /// `(cluster, class)` pairs of the accuracy-optimal matching.
    pub mapping: Vec<(usize, usize)>,
}

/// Compact relabeling: distinct values in ascending order become 0, 1, ...
fn compact(labels: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let values: Vec<usize> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let index: BTreeMap<usize, usize> = values.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    (labels.iter().map(|l| index[l]).collect(), values)
}

/// Contingency table `n[cluster][class]`.
pub fn contingency(pred: &[usize], truth: &[usize]) -> (Vec<Vec<u64>>, Vec<usize>, Vec<usize>) {
    let (p, pv) = compact(pred);
    let (t, tv) = compact(truth);
    let mut table = vec![vec![0u64; tv.len()]; pv.len()];
    for (&a, &b) in p.iter().zip(&t) {
        table[a][b] += 1;
    }
    (table, pv, tv)
}

/// Sum in ascending order so the result does not depend on label ids.
fn ordered_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.into_iter().sum()
}

fn entropy(counts: impl Iterator<Item = u64>, n: f64) -> f64 {
    ordered_sum(
        counts
            .filter(|&c| c > 0)
            .map(|c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .collect(),
    )
}

fn comb2(x: u64) -> f64 {
    let x = x as f64;
    x * (x - 1.0) / 2.0
}

/// Fixed-point precision of the F1 tie-break in the matching weights; 16 more
/// bits keep the summed tie-break below one matched sample for < 2^16 labels.
const F1_BITS: u32 = 40;

pub fn clustering_metrics(pred: &[usize], truth: &[usize]) -> Result<MetricsReport> {
    if pred.len() != truth.len() {
        return Err(MpcclError::Contract(format!(
            "{} predictions for {} ground-truth labels",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(MpcclError::Domain("no samples to evaluate".into()));
    }
    let n = pred.len();
    let nf = n as f64;
    let (table, pv, tv) = contingency(pred, truth);
    let (kp, kt) = (pv.len(), tv.len());

    // Hungarian matching on a square, zero-padded table
    let size = kp.max(kt);
    let row_sums: Vec<u64> = table.iter().map(|r| r.iter().sum()).collect();
    let col_sums: Vec<u64> = (0..kt).map(|j| table.iter().map(|r| r[j]).sum()).collect();
    // Matched count first; among equally accurate matchings prefer the higher
    // F1 so the result does not depend on how labels are numbered.
    let weights = Matrix::from_fn(size, size, |(i, j)| {
        if i < kp && j < kt {
            let f1 = 2.0 * table[i][j] as f64 / (row_sums[i] + col_sums[j]) as f64;
            ((table[i][j] as i128) << (F1_BITS + 16)) + (f1 * (1u64 << F1_BITS) as f64).round() as i128
        } else {
            0
        }
    });
    let (_, assignment) = kuhn_munkres(&weights);
    let matched: u64 = assignment
        .iter()
        .enumerate()
        .filter(|&(i, &j)| i < kp && j < kt)
        .map(|(i, &j)| table[i][j])
        .sum();
    let acc = matched as f64 / nf;
    let mut mapping = Vec::new();
    let mut class_of_cluster = vec![None; kp];
    for (i, &j) in assignment.iter().enumerate() {
        if i < kp && j < kt {
            class_of_cluster[i] = Some(j);
            mapping.push((pv[i], tv[j]));
        }
    }

    let h_pred = entropy(row_sums.iter().copied(), nf);
    let h_truth = entropy(col_sums.iter().copied(), nf);
    let mut mi_terms = Vec::new();
    for (i, row) in table.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            if c > 0 {
                let c = c as f64;
                mi_terms.push(c / nf * (c * nf / (row_sums[i] as f64 * col_sums[j] as f64)).ln());
            }
        }
    }
    let mi = ordered_sum(mi_terms);
    let nmi = if h_pred == 0.0 && h_truth == 0.0 {
        1.0
    } else {
        (mi / ((h_pred + h_truth) / 2.0)).clamp(0.0, 1.0)
    };

    let index: f64 = table.iter().flatten().map(|&c| comb2(c)).sum();
    let sum_rows: f64 = row_sums.iter().map(|&c| comb2(c)).sum();
    let sum_cols: f64 = col_sums.iter().map(|&c| comb2(c)).sum();
    let total = comb2(n as u64);
    let expected = if total > 0.0 { sum_rows * sum_cols / total } else { 0.0 };
    let max_index = (sum_rows + sum_cols) / 2.0;
    let ari = if max_index == expected {
        1.0
    } else {
        (index - expected) / (max_index - expected)
    };

    let mut f1_sum = 0.0;
    for j in 0..kt {
        let cluster = class_of_cluster.iter().position(|&c| c == Some(j));
        let f = match cluster {
            Some(i) if table[i][j] > 0 => {
                let tp = table[i][j] as f64;
                let precision = tp / row_sums[i] as f64;
                let recall = tp / col_sums[j] as f64;
                2.0 * precision * recall / (precision + recall)
            }
            _ => 0.0,
        };
        f1_sum += f;
    }
    let f1 = f1_sum / kt as f64;

    Ok(MetricsReport {
        acc,
        nmi,
        ari,
        f1,
        n_samples: n,
        mapping,
    })
}
