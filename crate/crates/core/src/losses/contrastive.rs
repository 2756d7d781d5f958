//! Cross-view similarity, the one-to-many contrastive loss with cluster
//! centroid positives, and the similarity-Laplacian regularizer.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use super::kmeans::{kmeans_cluster, kmeans_warm, DEFAULT_MAX_ITER};
use crate::error::{MpcclError, Result};

/// Default denominator stabilizer.
pub const DEFAULT_EPS: f64 = 1e-8;

/// Rows scaled to unit length; zero rows stay zero. Also returns the norms.
pub fn row_normalize(z: ArrayView2<f64>) -> (Array2<f64>, Vec<f64>) {
    let norms: Vec<f64> = z.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let mut out = z.to_owned();
    for (mut row, &n) in out.rows_mut().into_iter().zip(&norms) {
        if n > 0.0 {
            row /= n;
        }
    }
    (out, norms)
}

/// Pulls a gradient on normalized rows back to the raw rows.
pub fn row_normalize_backward(normalized: ArrayView2<f64>, norms: &[f64], grad: ArrayView2<f64>) -> Array2<f64> {
    let mut out = grad.to_owned();
    for ((mut g, zn), &n) in out.rows_mut().into_iter().zip(normalized.rows()).zip(norms) {
        if n > 0.0 {
            let radial = zn.dot(&g);
            g.scaled_add(-radial, &zn);
            g /= n;
        } else {
            g.fill(0.0);
        }
    }
    out
}

/// `S_ab = exp(Z̃_a Z̃_bᵀ / τ)` for the three view pairs, with the Gram
/// matrices and normalized embeddings kept for the backward pass.
#[derive(Debug, Clone)]
pub struct SimilarityTensor {
    pub tau: f64,
    pub s11: Array2<f64>,
    pub s22: Array2<f64>,
    pub s12: Array2<f64>,
    pub k11: Array2<f64>,
    pub k22: Array2<f64>,
    pub z1n: Array2<f64>,
    pub z2n: Array2<f64>,
    pub norms1: Vec<f64>,
    pub norms2: Vec<f64>,
}

impl SimilarityTensor {
    pub fn s21(&self) -> ArrayView2<'_, f64> {
        self.s12.t()
    }

    pub fn n(&self) -> usize {
        self.s11.nrows()
    }
}

pub fn similarity_matrices(z1: ArrayView2<f64>, z2: ArrayView2<f64>, tau: f64) -> Result<SimilarityTensor> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(MpcclError::Config(format!("temperature must be positive, got {tau}")));
    }
    if z1.dim() != z2.dim() {
        return Err(MpcclError::Contract(format!(
            "view embeddings differ in shape: {:?} vs {:?}",
            z1.dim(),
            z2.dim()
        )));
    }
    let (z1n, norms1) = row_normalize(z1);
    let (z2n, norms2) = row_normalize(z2);
    let k11 = z1n.dot(&z1n.t());
    let k22 = z2n.dot(&z2n.t());
    let s12 = z1n.dot(&z2n.t()).mapv(|v| (v / tau).exp());
    let s11 = k11.mapv(|v| (v / tau).exp());
    let s22 = k22.mapv(|v| (v / tau).exp());
    if s12.iter().chain(s11.iter()).chain(s22.iter()).any(|v| !v.is_finite()) {
        return Err(MpcclError::Numerics("similarity overflow".into()));
    }
    Ok(SimilarityTensor {
        tau,
        s11,
        s22,
        s12,
        k11,
        k22,
        z1n,
        z2n,
        norms1,
        norms2,
    })
}

/// Cluster-centroid positives: k-means on each normalized view. A node in
/// view 1 is paired with the centroid of its cluster in view 2 and vice versa.
#[derive(Debug, Clone)]
pub struct ContrastPositives {
    pub centroids1: Array2<f64>,
    pub labels1: Vec<usize>,
    pub centroids2: Array2<f64>,
    pub labels2: Vec<usize>,
}

/// Runs k-means with `m` clusters on both normalized views, warm-started from
/// `previous` when given.
pub fn contrast_positives(
    sim: &SimilarityTensor,
    m: usize,
    previous: Option<&ContrastPositives>,
    restarts: usize,
    seed: u64,
) -> Result<ContrastPositives> {
    let (r1, r2) = match previous {
        Some(p) => (
            kmeans_warm(sim.z1n.view(), p.centroids1.view(), DEFAULT_MAX_ITER)?,
            kmeans_warm(sim.z2n.view(), p.centroids2.view(), DEFAULT_MAX_ITER)?,
        ),
        None => (
            kmeans_cluster(sim.z1n.view(), m, restarts, DEFAULT_MAX_ITER, seed)?,
            kmeans_cluster(sim.z2n.view(), m, restarts, DEFAULT_MAX_ITER, seed.wrapping_add(1))?,
        ),
    };
    Ok(ContrastPositives {
        centroids1: r1.centroids,
        labels1: r1.labels,
        centroids2: r2.centroids,
        labels2: r2.labels,
    })
}

/// Contrastive terms and exact gradients with respect to the raw (not
/// normalized) embeddings and the positive centroids.
#[derive(Debug, Clone)]
pub struct ContrastOutput {
    pub loss_cont: f64,
    pub loss_lap: f64,
    /// `loss_cont + λ · loss_lap`
    pub total: f64,
    pub d_z1: Array2<f64>,
    pub d_z2: Array2<f64>,
    pub d_centroids1: Option<Array2<f64>>,
    pub d_centroids2: Option<Array2<f64>>,
}

/// `‖Z̃‖_F² − tr(Z̃ᵀ D^{-1/2} S D^{-1/2} Z̃)` for one view, with `D` the row
/// sums of `s`.
pub fn laplacian_reg(s: ArrayView2<f64>, zn: ArrayView2<f64>) -> f64 {
    let k = zn.dot(&zn.t());
    let u: Array1<f64> = s.sum_axis(Axis(1)).mapv(|d| 1.0 / d.sqrt());
    let mut r = 0.0;
    for ((i, j), &sij) in s.indexed_iter() {
        r += u[i] * u[j] * sij * k[[i, j]];
    }
    zn.iter().map(|v| v * v).sum::<f64>() - r
}

/// Value of the regularizer and the coefficient matrix `Γ` with
/// `d(−R)/dK = Γ` (including the path through `S = exp(K/τ)`), scaled by `f`.
fn lap_terms(s: &Array2<f64>, k: &Array2<f64>, zn: &Array2<f64>, tau: f64, f: f64) -> (f64, Array2<f64>) {
    let n = s.nrows();
    let u: Array1<f64> = s.sum_axis(Axis(1)).mapv(|d| 1.0 / d.sqrt());
    let mut r = Array1::<f64>::zeros(n);
    for i in 0..n {
        let (si, ki) = (s.row(i), k.row(i));
        let mut acc = 0.0;
        for j in 0..n {
            acc += u[j] * si[j] * ki[j];
        }
        r[i] = acc;
    }
    let total_r: f64 = u.iter().zip(r.iter()).map(|(a, b)| a * b).sum();
    let value = zn.iter().map(|v| v * v).sum::<f64>() - total_r;
    let mut gamma = Array2::zeros((n, n));
    Zip::indexed(&mut gamma).and(s).and(k).for_each(|(i, j), g, &sij, &kij| {
        let uu = u[i] * u[j];
        *g = -f * (uu * sij + (uu * kij - u[i].powi(3) * r[i]) * sij / tau);
    });
    (value, gamma)
}

/// One-to-many contrastive loss. With `positives = None` each node has only
/// its cross-view counterpart as positive.
///
/// Per node and direction: `−log(pos / neg)` with
/// `pos₁ = s¹²_ii + s^(1c)_i`, `neg₁ = Σ_{j≠i} s¹¹_ij + Σ_j s¹²_ij + ε`,
/// symmetrically for view 2, averaged over nodes. The regularizer enters as
/// `λ (L₁ + L₂) / (2N)`.
pub fn one_to_many_contrastive(
    sim: &SimilarityTensor,
    positives: Option<&ContrastPositives>,
    lambda: f64,
    eps: f64,
) -> Result<ContrastOutput> {
    let n = sim.n();
    let tau = sim.tau;
    if n == 0 {
        return Err(MpcclError::Contract("empty similarity tensor".into()));
    }
    let nf = n as f64;
    let a = &sim.z1n;
    let b = &sim.z2n;

    let (e1, e2) = match positives {
        Some(p) => {
            if p.labels1.len() != n || p.labels2.len() != n {
                return Err(MpcclError::Contract("positive labels do not match node count".into()));
            }
            let e1: Vec<f64> = (0..n)
                .map(|i| (a.row(i).dot(&p.centroids2.row(p.labels2[i])) / tau).exp())
                .collect();
            let e2: Vec<f64> = (0..n)
                .map(|i| (b.row(i).dot(&p.centroids1.row(p.labels1[i])) / tau).exp())
                .collect();
            (e1, e2)
        }
        None => (vec![0.0; n], vec![0.0; n]),
    };

    let rs11 = sim.s11.sum_axis(Axis(1));
    let rs22 = sim.s22.sum_axis(Axis(1));
    let rs12 = sim.s12.sum_axis(Axis(1));
    let cs12 = sim.s12.sum_axis(Axis(0));
    let mut neg1 = vec![0.0; n];
    let mut neg2 = vec![0.0; n];
    let mut pos1 = vec![0.0; n];
    let mut pos2 = vec![0.0; n];
    let mut loss_cont = 0.0;
    for i in 0..n {
        neg1[i] = rs11[i] - sim.s11[[i, i]] + rs12[i] + eps;
        neg2[i] = rs22[i] - sim.s22[[i, i]] + cs12[i] + eps;
        pos1[i] = sim.s12[[i, i]] + e1[i];
        pos2[i] = sim.s12[[i, i]] + e2[i];
        loss_cont += neg1[i].ln() - pos1[i].ln() + neg2[i].ln() - pos2[i].ln();
    }
    loss_cont /= nf;
    if !loss_cont.is_finite() {
        return Err(MpcclError::Numerics("contrastive loss is not finite".into()));
    }

    let f = lambda / (2.0 * nf);
    let (lap1, gamma1) = lap_terms(&sim.s11, &sim.k11, a, tau, f);
    let (lap2, gamma2) = lap_terms(&sim.s22, &sim.k22, b, tau, f);
    let loss_lap = (lap1 + lap2) / (2.0 * nf);

    // dL/dK for each block, divided into the exp path (T) and the direct path (Γ).
    let mut t11 = Array2::zeros((n, n));
    Zip::indexed(&mut t11).and(&sim.s11).for_each(|(i, j), t, &s| {
        if i != j {
            *t = s / (nf * neg1[i]);
        }
    });
    let mut t22 = Array2::zeros((n, n));
    Zip::indexed(&mut t22).and(&sim.s22).for_each(|(i, j), t, &s| {
        if i != j {
            *t = s / (nf * neg2[i]);
        }
    });
    let mut t12 = Array2::zeros((n, n));
    Zip::indexed(&mut t12).and(&sim.s12).for_each(|(i, j), t, &s| {
        *t = s * (1.0 / neg1[i] + 1.0 / neg2[j]) / nf;
        if i == j {
            *t -= s * (1.0 / pos1[i] + 1.0 / pos2[i]) / nf;
        }
    });

    let mut m1 = &t11 + &t11.t();
    m1.scaled_add(tau, &gamma1);
    m1.scaled_add(tau, &gamma1.t());
    let mut m2 = &t22 + &t22.t();
    m2.scaled_add(tau, &gamma2);
    m2.scaled_add(tau, &gamma2.t());

    let mut da = (m1.dot(a) + t12.dot(b)) / tau;
    let mut db = (m2.dot(b) + t12.t().dot(a)) / tau;
    da.scaled_add(2.0 * f, a);
    db.scaled_add(2.0 * f, b);

    let (dc1, dc2) = match positives {
        Some(p) => {
            let mut dc1 = Array2::zeros(p.centroids1.raw_dim());
            let mut dc2 = Array2::zeros(p.centroids2.raw_dim());
            for i in 0..n {
                let w1 = -e1[i] / (nf * pos1[i] * tau);
                let c2 = p.labels2[i];
                da.row_mut(i).scaled_add(w1, &p.centroids2.row(c2));
                dc2.row_mut(c2).scaled_add(w1, &a.row(i));
                let w2 = -e2[i] / (nf * pos2[i] * tau);
                let c1 = p.labels1[i];
                db.row_mut(i).scaled_add(w2, &p.centroids1.row(c1));
                dc1.row_mut(c1).scaled_add(w2, &b.row(i));
            }
            (Some(dc1), Some(dc2))
        }
        None => (None, None),
    };

    let d_z1 = row_normalize_backward(a.view(), &sim.norms1, da.view());
    let d_z2 = row_normalize_backward(b.view(), &sim.norms2, db.view());
    Ok(ContrastOutput {
        loss_cont,
        loss_lap,
        total: loss_cont + lambda * loss_lap,
        d_z1,
        d_z2,
        d_centroids1: dc1,
        d_centroids2: dc2,
    })
}
