//! Feature dropout, the two-layer graph-convolution encoder, the projection
//! head, multi-scale view fusion and hand-written reverse-mode gradients for
//! this fixed architecture.
//!
//! Encoder: `H = Â · ReLU(Â X W1) · W2`.
//! Head: `Z = PReLU(H Wp1 + bp1) Wp2 + bp2` with one shared PReLU slope.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coarsen::CoarsenedGraph;
use crate::error::{MpcclError, Result};
use crate::graphdata::normalize_adjacency;
use crate::sparse::CsrMatrix;

/// Layer widths: input `d`, encoder `h1`, `h2`, head hidden `hp`, head output `hz`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub h1: usize,
    pub h2: usize,
    pub hp: usize,
    pub hz: usize,
}

impl ModelDims {
    pub fn new(input: usize, hidden: [usize; 4]) -> Self {
        ModelDims {
            input,
            h1: hidden[0],
            h2: hidden[1],
            hp: hidden[2],
            hz: hidden[3],
        }
    }
}

/// Default hidden widths `[h1, h2, hp, hz]`.
pub const DEFAULT_HIDDEN: [usize; 4] = [256, 512, 1024, 256];

/// PReLU slope at initialization.
pub const PRELU_INIT: f64 = 0.25;

/// Encoder and projection-head parameters. The same type is used to hold
/// their gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
    pub wp1: Array2<f64>,
    pub bp1: Array1<f64>,
    pub wp2: Array2<f64>,
    pub bp2: Array1<f64>,
    pub prelu_a: f64,
}

fn glorot<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.gen_range(-bound..bound))
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, PReLU slope 0.25.
    pub fn init<R: Rng>(dims: ModelDims, rng: &mut R) -> Self {
        ModelParams {
            w1: glorot(rng, dims.input, dims.h1),
            w2: glorot(rng, dims.h1, dims.h2),
            wp1: glorot(rng, dims.h2, dims.hp),
            bp1: Array1::zeros(dims.hp),
            wp2: glorot(rng, dims.hp, dims.hz),
            bp2: Array1::zeros(dims.hz),
            prelu_a: PRELU_INIT,
        }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            w1: Array2::zeros(self.w1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            wp1: Array2::zeros(self.wp1.raw_dim()),
            bp1: Array1::zeros(self.bp1.raw_dim()),
            wp2: Array2::zeros(self.wp2.raw_dim()),
            bp2: Array1::zeros(self.bp2.raw_dim()),
            prelu_a: 0.0,
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            input: self.w1.nrows(),
            h1: self.w1.ncols(),
            h2: self.w2.ncols(),
            hp: self.wp1.ncols(),
            hz: self.wp2.ncols(),
        }
    }

    /// Named flat views of every tensor, in a fixed order. The flag marks
    /// weight matrices (subject to weight decay).
    pub fn slices(&self) -> [(&'static str, bool, &[f64]); 7] {
        [
            ("w1", true, self.w1.as_slice().expect("standard layout")),
            ("w2", true, self.w2.as_slice().expect("standard layout")),
            ("wp1", true, self.wp1.as_slice().expect("standard layout")),
            ("bp1", false, self.bp1.as_slice().expect("standard layout")),
            ("wp2", true, self.wp2.as_slice().expect("standard layout")),
            ("bp2", false, self.bp2.as_slice().expect("standard layout")),
            ("prelu_a", false, std::slice::from_ref(&self.prelu_a)),
        ]
    }

    pub fn slices_mut(&mut self) -> [(&'static str, bool, &mut [f64]); 7] {
        [
            ("w1", true, self.w1.as_slice_mut().expect("standard layout")),
            ("w2", true, self.w2.as_slice_mut().expect("standard layout")),
            ("wp1", true, self.wp1.as_slice_mut().expect("standard layout")),
            ("bp1", false, self.bp1.as_slice_mut().expect("standard layout")),
            ("wp2", true, self.wp2.as_slice_mut().expect("standard layout")),
            ("bp2", false, self.bp2.as_slice_mut().expect("standard layout")),
            ("prelu_a", false, std::slice::from_mut(&mut self.prelu_a)),
        ]
    }

    pub fn n_values(&self) -> usize {
        self.slices().iter().map(|(_, _, s)| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|(_, _, s)| s.iter().all(|v| v.is_finite()))
    }
}

/// Zeroes each entry of `x` independently with probability `p`. Surviving
/// entries are left unscaled.
pub fn augment(x: ArrayView2<f64>, p: f64, seed: u64) -> Result<Array2<f64>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(MpcclError::Config(format!("mask probability {p} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = x.to_owned();
    for v in out.iter_mut() {
        if rng.gen::<f64>() < p {
            *v = 0.0;
        }
    }
    Ok(out)
}

/// Normalized propagation operator `Â` for one view.
///
/// `Lifted` applies the renormalized lift of a coarse graph without
/// materializing the N×N matrix: with `B` the block-indicator matrix,
/// `lifted = B W Bᵀ` (the coarse graph has no self-loops, so co-merged nodes
/// get 0), and `Â M = D̃^{-1/2} (B W Bᵀ + I) D̃^{-1/2} M`.
#[derive(Debug, Clone)]
pub enum Propagation {
    Sparse(CsrMatrix),
    Lifted {
        coarse: CsrMatrix,
        assignment: Vec<usize>,
        d_inv_sqrt: Vec<f64>,
    },
}

impl Propagation {
    pub fn from_adjacency(a: &CsrMatrix) -> Self {
        Propagation::Sparse(normalize_adjacency(a))
    }

    pub fn from_coarsened(cg: &CoarsenedGraph) -> Self {
        let coarse = cg.graph.weights.clone();
        let mass: Vec<f64> = cg.graph.node_mass.iter().map(|&m| m as f64).collect();
        let coarse_deg: Vec<f64> = (0..coarse.n_rows())
            .map(|c| coarse.row(c).map(|(j, w)| w * mass[j]).sum())
            .collect();
        let assignment = cg.merge_map.assignment.clone();
        let d_inv_sqrt = assignment
            .iter()
            .map(|&c| 1.0 / (1.0 + coarse_deg[c]).sqrt())
            .collect();
        Propagation::Lifted {
            coarse,
            assignment,
            d_inv_sqrt,
        }
    }

    pub fn n_nodes(&self) -> usize {
        match self {
            Propagation::Sparse(m) => m.n_rows(),
            Propagation::Lifted { assignment, .. } => assignment.len(),
        }
    }

    /// `Â · m`. `Â` is symmetric, so this is also `Âᵀ · m`.
    pub fn apply(&self, m: ArrayView2<f64>) -> Array2<f64> {
        match self {
            Propagation::Sparse(a) => a.matmul(m),
            Propagation::Lifted {
                coarse,
                assignment,
                d_inv_sqrt,
            } => {
                let cols = m.ncols();
                let mut scaled = m.to_owned();
                for (mut row, &s) in scaled.rows_mut().into_iter().zip(d_inv_sqrt) {
                    row *= s;
                }
                let mut pooled = Array2::zeros((coarse.n_rows(), cols));
                for (row, &c) in scaled.rows().into_iter().zip(assignment) {
                    pooled.row_mut(c).scaled_add(1.0, &row);
                }
                let spread = coarse.matmul(pooled.view());
                for ((mut row, &c), &s) in scaled.rows_mut().into_iter().zip(assignment).zip(d_inv_sqrt)
                {
                    row.scaled_add(1.0, &spread.row(c));
                    row *= s;
                }
                scaled
            }
        }
    }

    /// Dense copy of `Â` (small graphs and tests only).
    pub fn to_dense(&self) -> Array2<f64> {
        self.apply(Array2::eye(self.n_nodes()).view())
    }
}

fn check_finite(m: &Array2<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(MpcclError::Numerics(format!("non-finite values in {what}")))
    }
}

/// Encoder intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GcnCache {
    /// `Â X W1`
    pub pre: Array2<f64>,
    /// `Â · ReLU(pre)`
    pub propagated: Array2<f64>,
    pub h: Array2<f64>,
}

pub fn gcn_forward(x: &CsrMatrix, a_hat: &Propagation, params: &ModelParams) -> Result<GcnCache> {
    if x.n_cols() != params.w1.nrows() || x.n_rows() != a_hat.n_nodes() {
        return Err(MpcclError::Contract(format!(
            "features {}x{}, W1 {:?}, graph with {} nodes",
            x.n_rows(),
            x.n_cols(),
            params.w1.dim(),
            a_hat.n_nodes()
        )));
    }
    let xw = x.matmul(params.w1.view());
    let pre = a_hat.apply(xw.view());
    let relu = pre.mapv(|v| v.max(0.0));
    let propagated = a_hat.apply(relu.view());
    let h = propagated.dot(&params.w2);
    check_finite(&h, "encoder output")?;
    Ok(GcnCache { pre, propagated, h })
}

/// Projection-head intermediates.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// `H Wp1 + bp1`
    pub pre: Array2<f64>,
    /// `PReLU(pre)`
    pub act: Array2<f64>,
    pub z: Array2<f64>,
}

pub fn mlp_project(h: ArrayView2<f64>, params: &ModelParams) -> Result<MlpCache> {
    if h.ncols() != params.wp1.nrows() {
        return Err(MpcclError::Contract(format!(
            "head input has {} columns, Wp1 is {:?}",
            h.ncols(),
            params.wp1.dim()
        )));
    }
    let a = params.prelu_a;
    let pre = h.dot(&params.wp1) + &params.bp1;
    let act = pre.mapv(|v| if v >= 0.0 { v } else { a * v });
    let z = act.dot(&params.wp2) + &params.bp2;
    check_finite(&z, "projection head output")?;
    Ok(MlpCache { pre, act, z })
}

/// `(1/K) Σ_s w_s M_s`.
pub fn fuse_views(mats: &[ArrayView2<f64>], weights: &[f64]) -> Result<Array2<f64>> {
    if mats.is_empty() {
        return Err(MpcclError::Config("no views to fuse".into()));
    }
    if weights.len() != mats.len() {
        return Err(MpcclError::Contract(format!(
            "{} fusion weights for {} views",
            weights.len(),
            mats.len()
        )));
    }
    let shape = mats[0].dim();
    let k = mats.len() as f64;
    let mut out = Array2::zeros(shape);
    for (m, &w) in mats.iter().zip(weights) {
        if m.dim() != shape {
            return Err(MpcclError::Contract(format!(
                "view shapes differ: {:?} vs {shape:?}",
                m.dim()
            )));
        }
        out.scaled_add(w / k, m);
    }
    Ok(out)
}

/// Forward state of one view.
#[derive(Debug, Clone)]
pub struct ViewCache {
    pub gcn: GcnCache,
    pub mlp: MlpCache,
}

/// Original view, per-scale augmented views and their fusion.
#[derive(Debug, Clone)]
pub struct ViewBundle {
    original: Option<ViewCache>,
    augmented: Option<Vec<ViewCache>>,
    pub h1: Array2<f64>,
    pub z1: Array2<f64>,
    pub h2: Array2<f64>,
    pub z2: Array2<f64>,
    pub fusion_weights: Vec<f64>,
}

impl ViewBundle {
    pub fn h2s(&self) -> Option<Vec<ArrayView2<'_, f64>>> {
        self.augmented
            .as_ref()
            .map(|v| v.iter().map(|c| c.gcn.h.view()).collect())
    }

    pub fn z2s(&self) -> Option<Vec<ArrayView2<'_, f64>>> {
        self.augmented
            .as_ref()
            .map(|v| v.iter().map(|c| c.mlp.z.view()).collect())
    }

    pub fn n_views(&self) -> usize {
        self.fusion_weights.len()
    }

    /// Drops the backward caches, keeping only the fused outputs.
    pub fn release_caches(&mut self) {
        self.original = None;
        self.augmented = None;
    }

    pub fn has_caches(&self) -> bool {
        self.original.is_some() && self.augmented.is_some()
    }

    /// Smallest `|x|` over all ReLU and PReLU inputs; `None` without caches.
    pub fn min_abs_preactivation(&self) -> Option<f64> {
        let orig = self.original.as_ref()?;
        let aug = self.augmented.as_ref()?;
        Some(
            std::iter::once(orig)
                .chain(aug.iter())
                .flat_map(|c| c.gcn.pre.iter().chain(c.mlp.pre.iter()))
                .fold(f64::INFINITY, |m, v| m.min(v.abs())),
        )
    }
}

/// Original view from `(X, Â)`; one augmented view per operator in `views`
/// from `(X_aug, Â_s)`; fused `H2`, `Z2`.
pub fn forward_views(
    x: &CsrMatrix,
    x_aug: &CsrMatrix,
    original: &Propagation,
    views: &[Propagation],
    fusion_weights: &[f64],
    params: &ModelParams,
) -> Result<ViewBundle> {
    if views.is_empty() {
        return Err(MpcclError::Config("at least one augmented view is required".into()));
    }
    let gcn = gcn_forward(x, original, params)?;
    let mlp = mlp_project(gcn.h.view(), params)?;
    let orig = ViewCache { gcn, mlp };
    let mut augmented = Vec::with_capacity(views.len());
    for op in views {
        let gcn = gcn_forward(x_aug, op, params)?;
        let mlp = mlp_project(gcn.h.view(), params)?;
        augmented.push(ViewCache { gcn, mlp });
    }
    let hs: Vec<_> = augmented.iter().map(|c| c.gcn.h.view()).collect();
    let zs: Vec<_> = augmented.iter().map(|c| c.mlp.z.view()).collect();
    let h2 = fuse_views(&hs, fusion_weights)?;
    let z2 = fuse_views(&zs, fusion_weights)?;
    Ok(ViewBundle {
        h1: orig.gcn.h.clone(),
        z1: orig.mlp.z.clone(),
        original: Some(orig),
        augmented: Some(augmented),
        h2,
        z2,
        fusion_weights: fusion_weights.to_vec(),
    })
}

/// Loss gradients with respect to the bundle outputs.
#[derive(Debug, Clone)]
pub struct UpstreamGrads {
    pub h1: Array2<f64>,
    pub z1: Array2<f64>,
    pub h2: Array2<f64>,
    pub z2: Array2<f64>,
}

impl UpstreamGrads {
    pub fn zeros(bundle: &ViewBundle) -> Self {
        UpstreamGrads {
            h1: Array2::zeros(bundle.h1.raw_dim()),
            z1: Array2::zeros(bundle.z1.raw_dim()),
            h2: Array2::zeros(bundle.h2.raw_dim()),
            z2: Array2::zeros(bundle.z2.raw_dim()),
        }
    }
}

/// Backpropagates `dz` through the head; accumulates parameter gradients and
/// returns `dL/dH`.
pub fn mlp_backward(
    cache: &MlpCache,
    h: ArrayView2<f64>,
    dz: ArrayView2<f64>,
    params: &ModelParams,
    grads: &mut ModelParams,
) -> Array2<f64> {
    let a = params.prelu_a;
    grads.wp2 += &cache.act.t().dot(&dz);
    grads.bp2 += &dz.sum_axis(Axis(0));
    let dact = dz.dot(&params.wp2.t());
    let mut dpre = dact.clone();
    let mut da = 0.0;
    Zip::from(&mut dpre)
        .and(&dact)
        .and(&cache.pre)
        .for_each(|dp, &g, &u| {
            if u < 0.0 {
                da += g * u;
                *dp = g * a;
            }
        });
    grads.prelu_a += da;
    grads.wp1 += &h.t().dot(&dpre);
    grads.bp1 += &dpre.sum_axis(Axis(0));
    dpre.dot(&params.wp1.t())
}

/// Backpropagates `dh` through the encoder, accumulating `dW1`, `dW2`.
pub fn gcn_backward(
    cache: &GcnCache,
    x: &CsrMatrix,
    a_hat: &Propagation,
    dh: ArrayView2<f64>,
    params: &ModelParams,
    grads: &mut ModelParams,
) {
    grads.w2 += &cache.propagated.t().dot(&dh);
    let dprop = dh.dot(&params.w2.t());
    let mut dpre = a_hat.apply(dprop.view());
    Zip::from(&mut dpre).and(&cache.pre).for_each(|g, &p| {
        if p <= 0.0 {
            *g = 0.0;
        }
    });
    let back = a_hat.apply(dpre.view());
    grads.w1 += &x.transpose_matmul(back.view());
}

/// Exact parameter gradients for upstream gradients on `(H1, Z1, H2, Z2)`.
pub fn backward(
    bundle: &ViewBundle,
    upstream: &UpstreamGrads,
    x: &CsrMatrix,
    x_aug: &CsrMatrix,
    original: &Propagation,
    views: &[Propagation],
    params: &ModelParams,
) -> Result<ModelParams> {
    let (orig, augmented) = match (&bundle.original, &bundle.augmented) {
        (Some(o), Some(a)) => (o, a),
        _ => {
            return Err(MpcclError::Contract(
                "backward called on a bundle without forward caches".into(),
            ))
        }
    };
    if augmented.len() != views.len() {
        return Err(MpcclError::Contract(format!(
            "bundle has {} augmented views, {} operators given",
            augmented.len(),
            views.len()
        )));
    }
    let mut grads = params.zeros_like();
    let k = views.len() as f64;

    let mut dh1 = upstream.h1.clone();
    dh1 += &mlp_backward(&orig.mlp, orig.gcn.h.view(), upstream.z1.view(), params, &mut grads);
    gcn_backward(&orig.gcn, x, original, dh1.view(), params, &mut grads);

    for ((cache, op), &w) in augmented.iter().zip(views).zip(&bundle.fusion_weights) {
        let scale = w / k;
        let dz = &upstream.z2 * scale;
        let mut dh = &upstream.h2 * scale;
        dh += &mlp_backward(&cache.mlp, cache.gcn.h.view(), dz.view(), params, &mut grads);
        gcn_backward(&cache.gcn, x_aug, op, dh.view(), params, &mut grads);
    }
    Ok(grads)
}
