//! Attributed graphs: ingestion, validation, adjacency normalization and
//! Laplacian construction.
//!
//! A dataset directory holds `meta.json`, `features.csv`, `edges.csv` and an
//! optional `labels.csv`. Edges are 0-indexed, undirected and may be separated
//! by a comma or whitespace; an optional third column carries a nonnegative
//! weight (default 1). Listing an edge in both directions, or repeating it, is
//! tolerated. Self-loops are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{MpcclError, Result};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphMeta {
    pub n_nodes: usize,
    pub n_features: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_classes: Option<usize>,
}

/// Node features `X` (N×d), symmetric adjacency `A` (N×N) and optional labels.
#[derive(Debug, Clone)]
pub struct AttributedGraph {
    pub features: Array2<f64>,
    pub adjacency: CsrMatrix,
    pub labels: Option<Vec<usize>>,
    pub n_classes: Option<usize>,
}

impl AttributedGraph {
    /// Builds and validates a graph.
    pub fn new(
        features: Array2<f64>,
        adjacency: CsrMatrix,
        labels: Option<Vec<usize>>,
        n_classes: Option<usize>,
    ) -> Result<Self> {
        let g = AttributedGraph {
            features,
            adjacency,
            labels,
            n_classes,
        };
        g.validate()?;
        Ok(g)
    }

    /// Convenience constructor from an undirected edge list with unit weights.
    pub fn from_edges(
        features: Array2<f64>,
        edges: &[(usize, usize)],
        labels: Option<Vec<usize>>,
        n_classes: Option<usize>,
    ) -> Result<Self> {
        let n = features.nrows();
        let adjacency = symmetrize(n, edges.iter().map(|&(u, v)| (u, v, 1.0)))?;
        Self::new(features, adjacency, labels, n_classes)
    }

    pub fn n_nodes(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    /// Number of undirected edges.
    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().filter(|&(u, v, _)| u < v).count()
    }

    pub fn meta(&self) -> GraphMeta {
        GraphMeta {
            n_nodes: self.n_nodes(),
            n_features: self.n_features(),
            n_classes: self.n_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_nodes();
        let a = &self.adjacency;
        if a.n_rows() != n || a.n_cols() != n {
            return Err(MpcclError::Format(format!(
                "adjacency is {}x{} but there are {n} nodes",
                a.n_rows(),
                a.n_cols()
            )));
        }
        if let Some(bad) = self.features.iter().find(|v| !v.is_finite()) {
            return Err(MpcclError::Format(format!("non-finite feature value {bad}")));
        }
        for (u, v, w) in a.iter() {
            if u == v {
                return Err(MpcclError::Format(format!("self-loop on node {u}")));
            }
            if !w.is_finite() || w < 0.0 {
                return Err(MpcclError::Format(format!("invalid edge weight {w} on ({u}, {v})")));
            }
            if a.get(v, u) != w || !a.contains(v, u) {
                return Err(MpcclError::Format(format!("adjacency not symmetric at ({u}, {v})")));
            }
        }
        if let Some(labels) = &self.labels {
            if labels.len() != n {
                return Err(MpcclError::Format(format!(
                    "{} labels for {n} nodes",
                    labels.len()
                )));
            }
            let k = self
                .n_classes
                .ok_or_else(|| MpcclError::Format("labels given without n_classes".into()))?;
            if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
                return Err(MpcclError::Format(format!("label {bad} outside [0, {k})")));
            }
        }
        Ok(())
    }
}

/// Stores every undirected edge in both directions. Repeats of the same edge
/// (in either orientation) collapse to one entry; self-loops are rejected.
pub fn symmetrize(
    n: usize,
    edges: impl IntoIterator<Item = (usize, usize, f64)>,
) -> Result<CsrMatrix> {
    let mut seen: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for (u, v, w) in edges {
        if u >= n || v >= n {
            return Err(MpcclError::Format(format!("edge ({u}, {v}) references a node >= {n}")));
        }
        if u == v {
            return Err(MpcclError::Format(format!("self-loop on node {u}")));
        }
        if !w.is_finite() || w < 0.0 {
            return Err(MpcclError::Format(format!("invalid edge weight {w} on ({u}, {v})")));
        }
        let key = (u.min(v), u.max(v));
        match seen.get(&key) {
            Some(&prev) if prev != w => {
                return Err(MpcclError::Format(format!(
                    "edge ({u}, {v}) listed with conflicting weights {prev} and {w}"
                )));
            }
            _ => {
                seen.insert(key, w);
            }
        }
    }
    CsrMatrix::from_triplets(
        n,
        n,
        seen.into_iter().flat_map(|((u, v), w)| [(u, v, w), (v, u, w)]),
    )
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| MpcclError::io(path, e))
}

fn split_fields(line: &str) -> impl Iterator<Item = &str> {
    line.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
}

/// Loads a dataset directory.
pub fn load_graph(dir: &Path) -> Result<AttributedGraph> {
    let meta: GraphMeta = serde_json::from_str(&read_text(&dir.join("meta.json"))?)
        .map_err(|e| MpcclError::Format(format!("meta.json: {e}")))?;
    let (n, d) = (meta.n_nodes, meta.n_features);

    let text = read_text(&dir.join("features.csv"))?;
    let rows: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    if rows.len() != n {
        return Err(MpcclError::Format(format!(
            "features.csv has {} rows, meta says {n}",
            rows.len()
        )));
    }
    let mut features = Array2::zeros((n, d));
    for (i, line) in rows.iter().enumerate() {
        let mut count = 0;
        for (j, field) in line.split(',').enumerate() {
            if j >= d {
                count = j + 1;
                continue;
            }
            let v: f64 = field.trim().parse().map_err(|_| {
                MpcclError::Format(format!("features.csv row {i}: bad number {field:?}"))
            })?;
            if !v.is_finite() {
                return Err(MpcclError::Format(format!(
                    "features.csv row {i}: non-finite value {field:?}"
                )));
            }
            features[[i, j]] = v;
            count = j + 1;
        }
        if count != d {
            return Err(MpcclError::Format(format!(
                "features.csv row {i} has {count} columns, meta says {d}"
            )));
        }
    }

    let text = read_text(&dir.join("edges.csv"))?;
    let mut edges = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = split_fields(line).collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 2 && fields.len() != 3 {
            return Err(MpcclError::Format(format!(
                "edges.csv line {}: expected `u,v` or `u,v,w`",
                lineno + 1
            )));
        }
        let parse_idx = |s: &str| {
            s.parse::<usize>().map_err(|_| {
                MpcclError::Format(format!("edges.csv line {}: bad node index {s:?}", lineno + 1))
            })
        };
        let u = parse_idx(fields[0])?;
        let v = parse_idx(fields[1])?;
        let w = match fields.get(2) {
            Some(s) => s.parse::<f64>().map_err(|_| {
                MpcclError::Format(format!("edges.csv line {}: bad weight {s:?}", lineno + 1))
            })?,
            None => 1.0,
        };
        edges.push((u, v, w));
    }
    let adjacency = symmetrize(n, edges)?;

    let labels_path = dir.join("labels.csv");
    let labels = if labels_path.exists() {
        let text = read_text(&labels_path)?;
        let labels = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                l.trim().parse::<usize>().map_err(|_| {
                    MpcclError::Format(format!("labels.csv line {}: bad label {l:?}", i + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Some(labels)
    } else {
        None
    };

    AttributedGraph::new(features, adjacency, labels, meta.n_classes)
}

/// Writes a graph in the dataset directory layout read by [`load_graph`].
pub fn save_graph(graph: &AttributedGraph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| MpcclError::io(dir, e))?;
    let write = |name: &str, body: String| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| MpcclError::io(p, e))
    };
    let meta = serde_json::to_string(&graph.meta()).expect("meta serializes");
    write("meta.json", meta + "\n")?;

    let mut buf = String::new();
    for row in graph.features.rows() {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                buf.push(',');
            }
            write!(buf, "{v}").unwrap();
        }
        buf.push('\n');
    }
    write("features.csv", buf)?;

    let mut buf = String::new();
    for (u, v, w) in graph.adjacency.iter().filter(|&(u, v, _)| u < v) {
        if w == 1.0 {
            writeln!(buf, "{u},{v}").unwrap();
        } else {
            writeln!(buf, "{u},{v},{w}").unwrap();
        }
    }
    write("edges.csv", buf)?;

    if let Some(labels) = &graph.labels {
        let mut buf = String::new();
        for l in labels {
            writeln!(buf, "{l}").unwrap();
        }
        write("labels.csv", buf)?;
    }
    Ok(())
}

/// Renormalized adjacency `D̃^{-1/2} (A + I) D̃^{-1/2}` where `D̃` is the degree
/// matrix of `A + I`.
pub fn normalize_adjacency(a: &CsrMatrix) -> CsrMatrix {
    let n = a.n_rows();
    let with_loops = CsrMatrix::from_triplets(
        n,
        n,
        a.iter().chain((0..n).map(|i| (i, i, 1.0))),
    )
    .expect("square matrix");
    let d_inv_sqrt: Vec<f64> = with_loops.row_sums().iter().map(|d| 1.0 / d.sqrt()).collect();
    with_loops.scale_rows_cols(&d_inv_sqrt, &d_inv_sqrt)
}

/// Combinatorial Laplacian `L = D - W` of a weighted graph, stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianMatrix {
    pub matrix: Array2<f64>,
}

impl LaplacianMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Builds `L = D - W` from a symmetric nonnegative weight matrix.
pub fn laplacian(w: &CsrMatrix) -> Result<LaplacianMatrix> {
    let n = w.n_rows();
    if w.n_cols() != n {
        return Err(MpcclError::Domain("weight matrix is not square".into()));
    }
    let mut l = Array2::zeros((n, n));
    for (u, v, x) in w.iter() {
        if u == v {
            continue;
        }
        if x < 0.0 {
            return Err(MpcclError::Domain(format!("negative weight {x} on ({u}, {v})")));
        }
        l[[u, v]] -= x;
        l[[u, u]] += x;
    }
    Ok(LaplacianMatrix { matrix: l })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn k2() -> CsrMatrix {
        symmetrize(2, [(0, 1, 1.0)]).unwrap()
    }

    #[test]
    fn symmetrize_collapses_both_orientations() {
        let a = symmetrize(3, [(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
        assert_eq!(a.nnz(), 2);
        assert_eq!(a.get(0, 1), 1.0);
        assert_eq!(a.get(1, 0), 1.0);
        let again = symmetrize(3, a.iter()).unwrap();
        assert_eq!(again, a);
    }

    #[test]
    fn self_loops_rejected() {
        assert!(matches!(symmetrize(2, [(1, 1, 1.0)]), Err(MpcclError::Format(_))));
    }

    #[test]
    fn conflicting_duplicate_weights_rejected() {
        assert!(symmetrize(2, [(0, 1, 1.0), (1, 0, 2.0)]).is_err());
    }

    #[test]
    fn normalize_isolated_node_is_one() {
        let a = CsrMatrix::zeros(1, 1);
        assert_eq!(normalize_adjacency(&a).to_dense(), array![[1.0]]);
    }

    #[test]
    fn normalize_k2_is_half() {
        let norm = normalize_adjacency(&k2()).to_dense();
        // degrees of A + I are 2 and 2
        let expected = array![[0.5, 0.5], [0.5, 0.5]];
        for (a, b) in norm.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn laplacian_small_cases() {
        let l0 = laplacian(&CsrMatrix::zeros(3, 3)).unwrap();
        assert_eq!(l0.matrix, Array2::<f64>::zeros((3, 3)));
        let l = laplacian(&k2()).unwrap();
        assert_eq!(l.matrix, array![[1.0, -1.0], [-1.0, 1.0]]);
    }

    #[test]
    fn laplacian_rejects_negative_weight() {
        let w = CsrMatrix::from_triplets(2, 2, [(0, 1, -0.5), (1, 0, -0.5)]).unwrap();
        assert!(matches!(laplacian(&w), Err(MpcclError::Domain(_))));
    }

    #[test]
    fn validate_catches_bad_labels() {
        let x = Array2::zeros((2, 1));
        let err = AttributedGraph::from_edges(x, &[(0, 1)], Some(vec![0, 3]), Some(2));
        assert!(matches!(err, Err(MpcclError::Format(_))));
    }
}
