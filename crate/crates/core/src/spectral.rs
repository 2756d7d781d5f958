//! Dense spectral checks for partition-based coarsening.
//!
//! For a partition `C_1..C_n'` of the nodes, the projection `P` has the value
//! `1/sqrt(|C_i|)` on block `i` and the coarse operator is `L' = PᵀLP`. This
//! module computes both spectra and checks, numerically:
//!
//! - interlacing `λ_k(L) <= λ_k(L')` for `k <= n'`,
//! - condition-number contraction `κ(L') <= κ(L)` with `κ = λ_max / λ_2`,
//! - the Weyl bound `|λ_i(L) - λ_i(PL'Pᵀ)| <= ‖L - PL'Pᵀ‖₂`,
//!
//! and reports the intra-block bound `η²·W_intra` next to the measured
//! approximation error.
//!
//! Eigenvalues come from a dense symmetric solver, which is fine up to a few
//! thousand nodes.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::Serialize;

use crate::coarsen::{edge_weights, CoarsenedGraph};
use crate::error::{MpcclError, Result};
use crate::graphdata::{laplacian, AttributedGraph, LaplacianMatrix};
use crate::sparse::CsrMatrix;

/// Absolute tolerance for the spectral inequalities.
pub const SPECTRAL_TOL: f64 = 1e-8;
const SYMMETRY_TOL: f64 = 1e-9;

/// Disjoint, covering, non-empty blocks of node indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub blocks: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(blocks: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for (i, block) in blocks.iter().enumerate() {
            if block.is_empty() {
                return Err(MpcclError::Domain(format!("block {i} is empty")));
            }
            for &u in block {
                if u >= n {
                    return Err(MpcclError::Domain(format!("node {u} outside [0, {n})")));
                }
                if seen[u] {
                    return Err(MpcclError::Domain(format!("node {u} in more than one block")));
                }
                seen[u] = true;
            }
        }
        if let Some(u) = seen.iter().position(|s| !s) {
            return Err(MpcclError::Domain(format!("node {u} not covered by any block")));
        }
        Ok(Partition { blocks })
    }

    pub fn singletons(n: usize) -> Self {
        Partition {
            blocks: (0..n).map(|u| vec![u]).collect(),
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    fn block_of(&self) -> Vec<usize> {
        let mut out = vec![0; self.n_nodes()];
        for (i, b) in self.blocks.iter().enumerate() {
            for &u in b {
                out[u] = i;
            }
        }
        out
    }
}

/// Orthonormal block-indicator projection `P` (n×n').
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    pub matrix: Array2<f64>,
}

pub fn projection_matrix(partition: &Partition, n: usize) -> Result<ProjectionMatrix> {
    let mut p = Array2::zeros((n, partition.n_blocks()));
    for (i, block) in partition.blocks.iter().enumerate() {
        if block.is_empty() {
            return Err(MpcclError::Domain(format!("block {i} is empty")));
        }
        let v = 1.0 / (block.len() as f64).sqrt();
        for &u in block {
            if u >= n {
                return Err(MpcclError::Domain(format!("node {u} outside [0, {n})")));
            }
            p[[u, i]] = v;
        }
    }
    Ok(ProjectionMatrix { matrix: p })
}

fn to_nalgebra(m: ArrayView2<f64>) -> DMatrix<f64> {
    let (r, c) = m.dim();
    DMatrix::from_fn(r, c, |i, j| m[[i, j]])
}

fn max_asymmetry(m: ArrayView2<f64>) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[[i, j]] - m[[j, i]]).abs());
        }
    }
    worst
}

/// Full eigen-decomposition of a symmetric matrix, eigenvalues ascending.
pub fn symmetric_eigen(m: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    if m.nrows() != m.ncols() {
        return Err(MpcclError::Domain("matrix is not square".into()));
    }
    let asym = max_asymmetry(m);
    if asym > SYMMETRY_TOL {
        return Err(MpcclError::Domain(format!("matrix not symmetric (max asymmetry {asym:e})")));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok((Vec::new(), Array2::zeros((0, 0))));
    }
    let eig = SymmetricEigen::new(to_nalgebra(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = Array2::from_shape_fn((n, n), |(i, j)| eig.eigenvectors[(i, order[j])]);
    Ok((values, vectors))
}

/// Sorted (non-decreasing) spectrum of `l`.
pub fn eigenvalues(l: &LaplacianMatrix) -> Result<Vec<f64>> {
    Ok(symmetric_eigen(l.matrix.view())?.0)
}

/// Largest `‖Lv − λv‖₂` over all computed eigenpairs, relative to `‖L‖₂`.
pub fn max_relative_residual(m: ArrayView2<f64>) -> Result<f64> {
    let (values, vectors) = symmetric_eigen(m)?;
    let norm = values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    let mv = m.dot(&vectors);
    let mut worst: f64 = 0.0;
    for (k, &lam) in values.iter().enumerate() {
        let r = &mv.column(k) - &(&vectors.column(k) * lam);
        worst = worst.max(r.dot(&r).sqrt() / norm);
    }
    Ok(worst)
}

/// Spectral norm of a symmetric matrix: the largest absolute eigenvalue.
pub fn spectral_norm_symmetric(m: ArrayView2<f64>) -> Result<f64> {
    Ok(symmetric_eigen(m)?
        .0
        .into_iter()
        .fold(0.0, |a: f64, v| a.max(v.abs())))
}

/// `PᵀLP`.
pub fn coarsened_laplacian(l: &LaplacianMatrix, p: &ProjectionMatrix) -> Result<LaplacianMatrix> {
    if p.matrix.nrows() != l.dim() {
        return Err(MpcclError::Contract(format!(
            "projection has {} rows, Laplacian is {}x{}",
            p.matrix.nrows(),
            l.dim(),
            l.dim()
        )));
    }
    let mut out = p.matrix.t().dot(&l.matrix).dot(&p.matrix);
    // symmetrize away round-off
    let n = out.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (out[[i, j]] + out[[j, i]]);
            out[[i, j]] = avg;
            out[[j, i]] = avg;
        }
    }
    Ok(LaplacianMatrix { matrix: out })
}

/// `λ_max / λ_2` of a sorted spectrum; `None` with fewer than two eigenvalues
/// or a non-positive `λ_2`.
pub fn condition_number(sorted_eigs: &[f64]) -> Option<f64> {
    if sorted_eigs.len() < 2 {
        return None;
    }
    let l2 = sorted_eigs[1];
    let lmax = *sorted_eigs.last().unwrap();
    (l2 > 0.0).then(|| lmax / l2)
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectralReport {
    pub n_nodes: usize,
    pub n_blocks: usize,
    pub eigs_original: Vec<f64>,
    pub eigs_coarse: Vec<f64>,
    pub kappa_original: Option<f64>,
    pub kappa_coarse: Option<f64>,
    pub interlacing_ok: bool,
    pub condition_ok: bool,
    pub weyl_ok: bool,
    /// `‖L − PL'Pᵀ‖₂`.
    pub spectral_error: f64,
    /// Largest `|λ_i(L) − λ_i(PL'Pᵀ)|`.
    pub weyl_gap: f64,
    /// `η²·W_intra`.
    pub intra_bound: f64,
    pub eta: f64,
    pub w_intra: f64,
    pub connected: bool,
    pub warnings: Vec<String>,
}

/// Total weight of edges whose endpoints share a block, read off `L`.
pub fn intra_block_weight(l: &LaplacianMatrix, partition: &Partition) -> f64 {
    let mut total = 0.0;
    for block in &partition.blocks {
        for (a, &u) in block.iter().enumerate() {
            for &v in &block[a + 1..] {
                total -= l.matrix[[u, v]];
            }
        }
    }
    total
}

/// Largest relative feature gap `‖x_u − x_v‖ / max(‖x_u‖, ‖x_v‖)` over pairs
/// of nodes sharing a block; zero-norm pairs contribute 0.
pub fn feature_gap_eta(features: ArrayView2<f64>, partition: &Partition) -> f64 {
    let norms: Vec<f64> = features.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let mut eta: f64 = 0.0;
    for block in &partition.blocks {
        for (a, &u) in block.iter().enumerate() {
            for &v in &block[a + 1..] {
                let scale = norms[u].max(norms[v]);
                if scale > 0.0 {
                    let diff = &features.row(u) - &features.row(v);
                    eta = eta.max(diff.dot(&diff).sqrt() / scale);
                }
            }
        }
    }
    eta
}

/// Computes both spectra and evaluates every coarsening inequality.
///
/// `eta` is the caller's intra-block smoothness constant used only for the
/// reported bound `η²·W_intra`.
pub fn verify_theorems(
    l: &LaplacianMatrix,
    partition: &Partition,
    eta: f64,
) -> Result<SpectralReport> {
    let n = l.dim();
    if partition.n_nodes() != n {
        return Err(MpcclError::Contract(format!(
            "partition covers {} nodes, Laplacian has {n}",
            partition.n_nodes()
        )));
    }
    let p = projection_matrix(partition, n)?;
    let lc = coarsened_laplacian(l, &p)?;
    let eigs_original = eigenvalues(l)?;
    let eigs_coarse = eigenvalues(&lc)?;

    let interlacing_ok = eigs_coarse
        .iter()
        .zip(&eigs_original)
        .all(|(c, o)| *o <= *c + SPECTRAL_TOL);

    let scale = eigs_original.last().copied().unwrap_or(0.0).abs().max(1.0);
    let mut warnings = Vec::new();
    let connected = eigs_original.len() < 2 || eigs_original[1] > SPECTRAL_TOL * scale;
    if !connected {
        warnings.push("graph is disconnected; condition numbers use λ₂ regardless".to_string());
    }
    let kappa_original = condition_number(&eigs_original);
    let kappa_coarse = condition_number(&eigs_coarse);
    let condition_ok = match (kappa_coarse, kappa_original) {
        (Some(kc), Some(ko)) => kc <= ko + SPECTRAL_TOL * ko.max(1.0),
        (None, _) if partition.n_blocks() < 2 => {
            warnings.push("coarse operator has fewer than two eigenvalues".to_string());
            true
        }
        _ => false,
    };

    // Lifted operator PL'Pᵀ and the approximation error.
    let lifted = p.matrix.dot(&lc.matrix).dot(&p.matrix.t());
    let mut diff = &l.matrix - &lifted;
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (diff[[i, j]] + diff[[j, i]]);
            diff[[i, j]] = avg;
            diff[[j, i]] = avg;
        }
    }
    let spectral_error = spectral_norm_symmetric(diff.view())?;
    let mut lifted_sym = lifted;
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (lifted_sym[[i, j]] + lifted_sym[[j, i]]);
            lifted_sym[[i, j]] = avg;
            lifted_sym[[j, i]] = avg;
        }
    }
    let eigs_lifted = symmetric_eigen(lifted_sym.view())?.0;
    let weyl_gap = eigs_original
        .iter()
        .zip(&eigs_lifted)
        .fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    let weyl_ok = weyl_gap <= spectral_error + SPECTRAL_TOL;

    let w_intra = intra_block_weight(l, partition);
    Ok(SpectralReport {
        n_nodes: n,
        n_blocks: partition.n_blocks(),
        eigs_original,
        eigs_coarse,
        kappa_original,
        kappa_coarse,
        interlacing_ok,
        condition_ok,
        weyl_ok,
        spectral_error,
        weyl_gap,
        intra_bound: eta * eta * w_intra,
        eta,
        w_intra,
        connected,
        warnings,
    })
}

/// Report for a real coarsening: `L` of the cosine-weighted graph, the
/// partition induced by the merge map, `η` from the node features.
pub fn report_for_coarsening(
    graph: &AttributedGraph,
    cg: &CoarsenedGraph,
) -> Result<SpectralReport> {
    let w = edge_weights(graph);
    let l = laplacian(&w.weights)?;
    let partition = Partition::new(cg.merge_map.blocks(), graph.n_nodes())?;
    let eta = feature_gap_eta(graph.features.view(), &partition);
    verify_theorems(&l, &partition, eta)
}

/// Weighted graph with constant weight `inter[i][j]` between every node of
/// block `i` and every node of block `j`, and constant `intra_weight` inside
/// blocks. Zero weights produce no edge. Returns the generating partition.
pub fn synth_assumption1_graph(
    block_sizes: &[usize],
    inter: ArrayView2<f64>,
    intra_weight: f64,
) -> Result<(CsrMatrix, Partition)> {
    let k = block_sizes.len();
    if inter.dim() != (k, k) {
        return Err(MpcclError::Domain(format!(
            "inter-block weights are {:?}, expected {k}x{k}",
            inter.dim()
        )));
    }
    if block_sizes.iter().any(|&s| s == 0) {
        return Err(MpcclError::Domain("block sizes must be >= 1".into()));
    }
    if !(intra_weight >= 0.0) || !intra_weight.is_finite() {
        return Err(MpcclError::Domain(format!("negative intra weight {intra_weight}")));
    }
    for i in 0..k {
        for j in 0..k {
            let w = inter[[i, j]];
            if !(w >= 0.0) || !w.is_finite() {
                return Err(MpcclError::Domain(format!("negative inter weight {w} at ({i}, {j})")));
            }
            if i != j && w != inter[[j, i]] {
                return Err(MpcclError::Domain("inter-block weights not symmetric".into()));
            }
        }
    }
    let mut blocks = Vec::with_capacity(k);
    let mut next = 0;
    for &s in block_sizes {
        blocks.push((next..next + s).collect::<Vec<_>>());
        next += s;
    }
    let n = next;
    let partition = Partition::new(blocks, n)?;
    let block_of = partition.block_of();
    let mut triplets = Vec::new();
    for u in 0..n {
        for v in 0..n {
            if u == v {
                continue;
            }
            let (bu, bv) = (block_of[u], block_of[v]);
            let w = if bu == bv { intra_weight } else { inter[[bu, bv]] };
            if w > 0.0 {
                triplets.push((u, v, w));
            }
        }
    }
    Ok((CsrMatrix::from_triplets(n, n, triplets)?, partition))
}

/// Random block-constant instance with at most `max_nodes` nodes, at least two
/// blocks and strictly positive inter-block weights (hence connected).
pub fn random_assumption1_instance<R: Rng>(
    rng: &mut R,
    max_nodes: usize,
) -> (CsrMatrix, Partition) {
    let max_nodes = max_nodes.max(2);
    loop {
        let n_blocks = rng.gen_range(2..=6.min(max_nodes));
        let sizes: Vec<usize> = (0..n_blocks).map(|_| rng.gen_range(1..=6)).collect();
        if sizes.iter().sum::<usize>() > max_nodes {
            continue;
        }
        let mut inter = Array2::zeros((n_blocks, n_blocks));
        for i in 0..n_blocks {
            for j in (i + 1)..n_blocks {
                let w = rng.gen_range(0.05..2.0);
                inter[[i, j]] = w;
                inter[[j, i]] = w;
            }
        }
        let intra = if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.0..3.0) };
        return synth_assumption1_graph(&sizes, inter.view(), intra)
            .expect("generated parameters are valid");
    }
}
