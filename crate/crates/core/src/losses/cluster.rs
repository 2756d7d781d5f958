//! Student-t soft assignment, the sharpened target distribution and the
//! self-supervised KL clustering loss with exact gradients.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{MpcclError, Result};

/// Floor applied inside logarithms and divisions.
pub const PROB_FLOOR: f64 = 1e-12;

fn check_shapes(h: ArrayView2<f64>, mu: ArrayView2<f64>, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(MpcclError::Config(format!("degrees of freedom must be positive, got {v}")));
    }
    if h.ncols() != mu.ncols() {
        return Err(MpcclError::Contract(format!(
            "embeddings have {} columns, centroids {}",
            h.ncols(),
            mu.ncols()
        )));
    }
    if mu.nrows() == 0 {
        return Err(MpcclError::Contract("no centroids".into()));
    }
    Ok(())
}

/// Squared distances `‖h_i − μ_j‖²`, computed row by row for accuracy.
fn sq_dist(h: ArrayView2<f64>, mu: ArrayView2<f64>) -> Array2<f64> {
    Array2::from_shape_fn((h.nrows(), mu.nrows()), |(i, j)| {
        h.row(i)
            .iter()
            .zip(mu.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    })
}

/// `q_ij ∝ (1 + ‖h_i − μ_j‖² / v)^{−(v+1)/2}`, rows summing to one.
pub fn soft_assign(h: ArrayView2<f64>, mu: ArrayView2<f64>, v: f64) -> Result<Array2<f64>> {
    check_shapes(h, mu, v)?;
    let d = sq_dist(h, mu);
    let expo = -(v + 1.0) / 2.0;
    // scaled by the row minimum distance to avoid underflow far from all centroids
    let mut q = Array2::zeros(d.raw_dim());
    for (i, row) in d.rows().into_iter().enumerate() {
        let base = 1.0 + row.fold(f64::INFINITY, |a, &b| a.min(b)) / v;
        let mut total = 0.0;
        for (j, &dij) in row.iter().enumerate() {
            let k = ((1.0 + dij / v) / base).powf(expo);
            q[[i, j]] = k;
            total += k;
        }
        q.row_mut(i).mapv_inplace(|x| x / total);
    }
    if q.iter().any(|x| !x.is_finite()) {
        return Err(MpcclError::Numerics("soft assignment is not finite".into()));
    }
    Ok(q)
}

#[derive(Debug, Clone)]
pub struct TargetDistribution {
    pub p: Array2<f64>,
    /// Clusters with zero total soft frequency; their columns are zero.
    pub empty_columns: Vec<usize>,
}

/// `p_ij = (q_ij² / f_j) / Σ_j' (q_ij'² / f_j')` with `f_j = Σ_i q_ij`.
pub fn target_distribution(q: ArrayView2<f64>) -> Result<TargetDistribution> {
    let f = q.sum_axis(Axis(0));
    let empty_columns: Vec<usize> = f.iter().enumerate().filter(|(_, &x)| x <= 0.0).map(|(j, _)| j).collect();
    let mut p = Array2::zeros(q.raw_dim());
    for (i, row) in q.rows().into_iter().enumerate() {
        let mut total = 0.0;
        for (j, &qij) in row.iter().enumerate() {
            if f[j] > 0.0 {
                let w = qij * qij / f[j];
                p[[i, j]] = w;
                total += w;
            }
        }
        if total <= 0.0 {
            return Err(MpcclError::Numerics(format!("target distribution row {i} is all zero")));
        }
        p.row_mut(i).mapv_inplace(|x| x / total);
    }
    Ok(TargetDistribution { p, empty_columns })
}

/// `Σ p log(p / q)` with both arguments floored; `0 · log 0 = 0`.
pub fn kl_divergence(p: ArrayView2<f64>, q: ArrayView2<f64>) -> f64 {
    p.iter()
        .zip(q.iter())
        .map(|(&a, &b)| {
            if a == 0.0 {
                0.0
            } else {
                a * (a.max(PROB_FLOOR).ln() - b.max(PROB_FLOOR).ln())
            }
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ClusterLoss {
    pub kl_p_q1: f64,
    pub kl_p_q2: f64,
    pub kl_q1_q2: f64,
    pub total: f64,
}

/// `KL(P‖Q1) + KL(P‖Q2) + KL(Q1‖Q2)`, summed over nodes.
pub fn clustering_loss(p: ArrayView2<f64>, q1: ArrayView2<f64>, q2: ArrayView2<f64>) -> Result<ClusterLoss> {
    if p.dim() != q1.dim() || p.dim() != q2.dim() {
        return Err(MpcclError::Contract("assignment matrices differ in shape".into()));
    }
    let kl_p_q1 = kl_divergence(p, q1);
    let kl_p_q2 = kl_divergence(p, q2);
    let kl_q1_q2 = kl_divergence(q1, q2);
    let total = kl_p_q1 + kl_p_q2 + kl_q1_q2;
    if !total.is_finite() {
        return Err(MpcclError::Numerics("clustering loss is not finite".into()));
    }
    Ok(ClusterLoss {
        kl_p_q1,
        kl_p_q2,
        kl_q1_q2,
        total,
    })
}

fn inv_floor(x: f64) -> f64 {
    if x > PROB_FLOOR {
        1.0 / x
    } else {
        0.0
    }
}

/// `∂L/∂Q1` and `∂L/∂Q2` with `P` held fixed.
pub fn assignment_partials(
    p: ArrayView2<f64>,
    q1: ArrayView2<f64>,
    q2: ArrayView2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    let mut g1 = Array2::zeros(q1.raw_dim());
    let mut g2 = Array2::zeros(q2.raw_dim());
    for ((idx, &pij), (&a, &b)) in p.indexed_iter().zip(q1.iter().zip(q2.iter())) {
        let log_ratio = a.max(PROB_FLOOR).ln() - b.max(PROB_FLOOR).ln();
        let self_term = if a > PROB_FLOOR { 1.0 } else { 0.0 };
        g1[idx] = -pij * inv_floor(a) + log_ratio + self_term;
        g2[idx] = -(pij + a) * inv_floor(b);
    }
    (g1, g2)
}

/// Pulls `G = ∂L/∂Q` through the kernel and row normalization:
/// `φ_ij = (v+1)/v · q_ij (G_ij − Σ_l G_il q_il) / (1 + d²_ij / v)`,
/// `∂L/∂h_i = −Σ_j φ_ij (h_i − μ_j)`, `∂L/∂μ_j = Σ_i φ_ij (h_i − μ_j)`.
pub fn soft_assign_backward(
    h: ArrayView2<f64>,
    mu: ArrayView2<f64>,
    q: ArrayView2<f64>,
    g: ArrayView2<f64>,
    v: f64,
) -> (Array2<f64>, Array2<f64>) {
    let d = sq_dist(h, mu);
    let c = (v + 1.0) / v;
    let mut phi = Array2::zeros(q.raw_dim());
    for i in 0..q.nrows() {
        let ci: f64 = (0..q.ncols()).map(|l| g[[i, l]] * q[[i, l]]).sum();
        for j in 0..q.ncols() {
            phi[[i, j]] = c * q[[i, j]] * (g[[i, j]] - ci) / (1.0 + d[[i, j]] / v);
        }
    }
    let row = phi.sum_axis(Axis(1));
    let col = phi.sum_axis(Axis(0));
    let mut dh = phi.dot(&mu);
    // dh_i = Σ_j φ_ij μ_j − (Σ_j φ_ij) h_i
    for ((mut r, hi), &s) in dh.rows_mut().into_iter().zip(h.rows()).zip(&row) {
        r.scaled_add(-s, &hi);
    }
    // dμ_j = Σ_i φ_ij h_i − (Σ_i φ_ij) μ_j
    let mut dmu = phi.t().dot(&h);
    for ((mut r, mj), &s) in dmu.rows_mut().into_iter().zip(mu.rows()).zip(&col) {
        r.scaled_add(-s, &mj);
    }
    (dh, dmu)
}

/// Gradients of the clustering loss with respect to `H1`, `H2` and `μ`.
#[derive(Debug, Clone)]
pub struct ClusterGrads {
    pub d_h1: Array2<f64>,
    pub d_h2: Array2<f64>,
    pub d_mu: Array2<f64>,
}

pub fn clustering_backward(
    h1: ArrayView2<f64>,
    h2: ArrayView2<f64>,
    mu: ArrayView2<f64>,
    q1: ArrayView2<f64>,
    q2: ArrayView2<f64>,
    p: ArrayView2<f64>,
    v: f64,
) -> ClusterGrads {
    let (g1, g2) = assignment_partials(p, q1, q2);
    let (d_h1, dmu1) = soft_assign_backward(h1, mu, q1, g1.view(), v);
    let (d_h2, dmu2) = soft_assign_backward(h2, mu, q2, g2.view(), v);
    ClusterGrads {
        d_h1,
        d_h2,
        d_mu: dmu1 + dmu2,
    }
}

/// Centroid gradient assembled entry by entry from the kernel derivative
/// `∂q_il/∂μ_j = q_il (δ_lj − q_ij) g_ij`, `g_ij = (v+1)/v · (h_i − μ_j) / (1 + d²_ij/v)`,
/// and the partials of the three KL terms. Slow; used to cross-check
/// [`clustering_backward`].
pub fn centroid_gradient(
    h1: ArrayView2<f64>,
    h2: ArrayView2<f64>,
    mu: ArrayView2<f64>,
    q1: ArrayView2<f64>,
    q2: ArrayView2<f64>,
    p: ArrayView2<f64>,
    v: f64,
) -> Array2<f64> {
    let (g1, g2) = assignment_partials(p, q1, q2);
    let k = mu.nrows();
    let dim = mu.ncols();
    let mut out = Array2::zeros(mu.raw_dim());
    for (h, q, g) in [(h1.view(), q1.view(), &g1), (h2.view(), q2.view(), &g2)] {
        for i in 0..h.nrows() {
            for j in 0..k {
                let d2: f64 = (0..dim).map(|t| (h[[i, t]] - mu[[j, t]]).powi(2)).sum();
                let scale = (v + 1.0) / v / (1.0 + d2 / v);
                let mut coef = 0.0;
                for l in 0..k {
                    let delta = if l == j { 1.0 } else { 0.0 };
                    coef += g[[i, l]] * q[[i, l]] * (delta - q[[i, j]]);
                }
                for t in 0..dim {
                    out[[j, t]] += coef * scale * (h[[i, t]] - mu[[j, t]]);
                }
            }
        }
    }
    out
}
