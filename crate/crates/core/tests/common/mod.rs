//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

/// All permutations of `0..n`.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Accuracy maximized over every injective relabeling of predicted ids
/// (padded with dummy classes when there are more clusters than classes).
pub fn brute_force_acc(pred: &[usize], truth: &[usize]) -> f64 {
    let kp = pred.iter().max().map_or(0, |m| m + 1);
    let kt = truth.iter().max().map_or(0, |m| m + 1);
    let k = kp.max(kt);
    let mut best = 0;
    for perm in permutations(k) {
        let hits = pred.iter().zip(truth).filter(|(p, t)| perm[**p] == **t).count();
        best = best.max(hits);
    }
    best as f64 / pred.len() as f64
}

fn entropy_of(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// NMI with arithmetic-mean normalization, from label counts directly.
pub fn oracle_nmi(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len() as f64;
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut a: BTreeMap<usize, usize> = BTreeMap::new();
    let mut b: BTreeMap<usize, usize> = BTreeMap::new();
    for (&p, &t) in pred.iter().zip(truth) {
        *joint.entry((p, t)).or_default() += 1;
        *a.entry(p).or_default() += 1;
        *b.entry(t).or_default() += 1;
    }
    let ha = entropy_of(a.values().copied(), n);
    let hb = entropy_of(b.values().copied(), n);
    let mut mi = 0.0;
    for (&(p, t), &c) in &joint {
        let pij = c as f64 / n;
        mi += pij * (pij / ((a[&p] as f64 / n) * (b[&t] as f64 / n))).ln();
    }
    let denom = (ha + hb) / 2.0;
    if denom == 0.0 {
        1.0
    } else {
        mi / denom
    }
}

/// ARI by enumerating all node pairs.
pub fn oracle_ari(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len();
    let (mut both, mut in_pred, mut in_truth) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let sp = pred[i] == pred[j];
            let st = truth[i] == truth[j];
            if sp && st {
                both += 1.0;
            }
            if sp {
                in_pred += 1.0;
            }
            if st {
                in_truth += 1.0;
            }
        }
    }
    let pairs = (n * (n.saturating_sub(1)) / 2) as f64;
    if pairs == 0.0 {
        return 1.0;
    }
    let expected = in_pred * in_truth / pairs;
    let max_index = (in_pred + in_truth) / 2.0;
    if max_index == expected {
        1.0
    } else {
        (both - expected) / (max_index - expected)
    }
}

/// Macro-F1 over truth classes after mapping clusters through `mapping`;
/// unmapped clusters predict no class.
pub fn oracle_f1(pred: &[usize], truth: &[usize], mapping: &[(usize, usize)]) -> f64 {
    let map: BTreeMap<usize, usize> = mapping.iter().copied().collect();
    let classes: std::collections::BTreeSet<usize> = truth.iter().copied().collect();
    let mut total = 0.0;
    for &c in &classes {
        let mut tp = 0.0;
        let mut fp = 0.0;
        let mut fn_ = 0.0;
        for (p, &t) in pred.iter().zip(truth) {
            let hit = map.get(p) == Some(&c);
            match (hit, t == c) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                _ => {}
            }
        }
        let denom = 2.0 * tp + fp + fn_;
        total += if denom > 0.0 { 2.0 * tp / denom } else { 0.0 };
    }
    total / classes.len() as f64
}

/// Every labeling of `n` points using ids below `k`.
pub fn all_labelings(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|l| {
                (0..k).map(move |c| {
                    let mut m = l.clone();
                    m.push(c);
                    m
                })
            })
            .collect();
    }
    out
}
