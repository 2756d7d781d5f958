//! Pretraining, centroid initialization, the joint optimization loop and
//! label extraction.

mod adam;
mod config;

pub use adam::{AdamW, ParamSlot};
pub use config::{LossReduction, TrainConfig};

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::coarsen::multi_scale_coarsen;
use crate::error::{MpcclError, Result};
use crate::graphdata::AttributedGraph;
use crate::losses::{
    clustering_backward, clustering_loss, contrast_positives, kmeans_cluster, one_to_many_contrastive,
    reconstruction_grad, similarity_matrices, soft_assign, target_distribution, total_loss, ClusterLoss,
    ContrastPositives, SimilarityTensor,
};
use crate::losses::kmeans::DEFAULT_MAX_ITER;
use crate::metrics::{clustering_metrics, MetricsReport};
use crate::netfwd::{
    augment, backward, forward_views, gcn_backward, gcn_forward, ModelDims, ModelParams, Propagation,
    UpstreamGrads, ViewBundle,
};
use crate::sparse::CsrMatrix;

/// Everything derived from the graph once before training.
#[derive(Debug, Clone)]
pub struct TrainingSetup {
    pub features: Array2<f64>,
    pub x: CsrMatrix,
    pub adjacency: CsrMatrix,
    pub original: Propagation,
    /// Augmented-view operators: the original graph, then one per scale.
    pub views: Vec<Propagation>,
    pub coarse_nodes: Vec<usize>,
    pub early_stopped: Vec<bool>,
    pub fusion_weights: Vec<f64>,
    pub n_clusters: usize,
}

pub fn prepare(graph: &AttributedGraph, cfg: &TrainConfig) -> Result<TrainingSetup> {
    cfg.validate()?;
    let n_clusters = cfg
        .n_clusters
        .or(graph.n_classes)
        .ok_or_else(|| MpcclError::Config("n_clusters not set and the dataset has no class count".into()))?;
    if n_clusters > graph.n_nodes() {
        return Err(MpcclError::Domain(format!(
            "{n_clusters} clusters for {} nodes",
            graph.n_nodes()
        )));
    }
    let coarse = if cfg.scales.is_empty() {
        Vec::new()
    } else {
        multi_scale_coarsen(graph, &cfg.scales, cfg.n_min)?
    };
    let original = Propagation::from_adjacency(&graph.adjacency);
    let mut views = vec![original.clone()];
    views.extend(coarse.iter().map(Propagation::from_coarsened));
    Ok(TrainingSetup {
        features: graph.features.clone(),
        x: CsrMatrix::from_dense(graph.features.view()),
        adjacency: graph.adjacency.clone(),
        original,
        views,
        coarse_nodes: coarse.iter().map(|c| c.graph.n_nodes()).collect(),
        early_stopped: coarse.iter().map(|c| c.early_stopped).collect(),
        fusion_weights: cfg.fusion_weights(),
        n_clusters,
    })
}

/// Seeds for the independent random streams of one run.
fn stream_seed(seed: u64, stream: u64, index: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(index)
}

const STREAM_INIT: u64 = 1;
const STREAM_MASK: u64 = 2;
const STREAM_KMEANS: u64 = 3;
const STREAM_CONTRAST: u64 = 4;

fn finite_or(value: f64, what: &str, epoch: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(MpcclError::Numerics(format!("{what} diverged at epoch {epoch}")))
    }
}

fn encoder_step(opt: &mut AdamW, params: &mut ModelParams, grads: &ModelParams) -> Result<()> {
    let (w1, w2) = (&mut params.w1, &mut params.w2);
    opt.step(
        vec![
            ParamSlot { values: w1.as_slice_mut().expect("standard layout"), decay: true },
            ParamSlot { values: w2.as_slice_mut().expect("standard layout"), decay: true },
        ],
        &[
            grads.w1.as_slice().expect("standard layout"),
            grads.w2.as_slice().expect("standard layout"),
        ],
    )
}

/// Output of [`pretrain`].
#[derive(Debug, Clone)]
pub struct PretrainOutput {
    pub params: ModelParams,
    /// Reconstruction loss before each update, then after the last one.
    pub losses: Vec<f64>,
}

/// Trains the encoder on adjacency reconstruction alone. The head keeps its
/// random initialization.
pub fn pretrain_setup(setup: &TrainingSetup, cfg: &TrainConfig) -> Result<PretrainOutput> {
    let dims = ModelDims::new(setup.x.n_cols(), cfg.dims);
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, STREAM_INIT, 0));
    let mut params = ModelParams::init(dims, &mut rng);
    let mut opt = AdamW::new(cfg.pretrain_learning_rate, cfg.weight_decay);
    let mut losses = Vec::with_capacity(cfg.pretrain_epochs + 1);
    for epoch in 0..=cfg.pretrain_epochs {
        let cache = gcn_forward(&setup.x, &setup.original, &params)?;
        let (loss, dh) = reconstruction_grad(cache.h.view(), &setup.adjacency)?;
        losses.push(finite_or(loss, "pretraining loss", epoch)?);
        if epoch == cfg.pretrain_epochs {
            break;
        }
        let mut grads = params.zeros_like();
        gcn_backward(&cache, &setup.x, &setup.original, dh.view(), &params, &mut grads);
        encoder_step(&mut opt, &mut params, &grads)?;
    }
    Ok(PretrainOutput { params, losses })
}

pub fn pretrain(graph: &AttributedGraph, cfg: &TrainConfig) -> Result<PretrainOutput> {
    pretrain_setup(&prepare(graph, cfg)?, cfg)
}

/// Lowest-inertia k-means centroids over `restarts` runs.
pub fn init_centroids(h: ArrayView2<f64>, k: usize, restarts: usize, seed: u64) -> Result<Array2<f64>> {
    Ok(kmeans_cluster(h, k, restarts, DEFAULT_MAX_ITER, seed)?.centroids)
}

/// `argmax_j (q1_ij + q2_ij) / 2`, ties to the lowest index.
pub fn predict_labels(q1: ArrayView2<f64>, q2: ArrayView2<f64>) -> Result<Vec<usize>> {
    if q1.dim() != q2.dim() {
        return Err(MpcclError::Contract(format!(
            "assignment shapes differ: {:?} vs {:?}",
            q1.dim(),
            q2.dim()
        )));
    }
    Ok(q1
        .rows()
        .into_iter()
        .zip(q2.rows())
        .map(|(a, b)| {
            let mut best = 0;
            let mut best_v = f64::NEG_INFINITY;
            for (j, (x, y)) in a.iter().zip(b.iter()).enumerate() {
                let v = (x + y) / 2.0;
                if v > best_v {
                    best_v = v;
                    best = j;
                }
            }
            best
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    /// Weighted objective after the configured reduction.
    pub total: f64,
    /// Contrastive loss plus the weighted regularizer.
    pub contrast: f64,
    pub cont: f64,
    pub lap: f64,
    /// Clustering and reconstruction terms before reduction.
    pub cluster: ClusterLoss,
    pub recon: f64,
}

/// Per-epoch state that is held fixed while differentiating.
pub struct EpochTargets<'a> {
    pub positives: Option<&'a ContrastPositives>,
    pub target: &'a Array2<f64>,
}

/// Loss values and gradients with respect to the bundle outputs and `μ`.
fn losses_and_upstream(
    setup: &TrainingSetup,
    cfg: &TrainConfig,
    bundle: &ViewBundle,
    sim: &SimilarityTensor,
    mu: &Array2<f64>,
    targets: &EpochTargets<'_>,
) -> Result<(LossBreakdown, UpstreamGrads, Array2<f64>)> {
    let w = cfg.loss_weights();
    let contrast = one_to_many_contrastive(sim, targets.positives, cfg.lambda_reg, cfg.eps)?;
    let q1 = soft_assign(bundle.h1.view(), mu.view(), cfg.dof_v)?;
    let q2 = soft_assign(bundle.h2.view(), mu.view(), cfg.dof_v)?;
    let cluster = clustering_loss(targets.target.view(), q1.view(), q2.view())?;
    let cg = clustering_backward(
        bundle.h1.view(),
        bundle.h2.view(),
        mu.view(),
        q1.view(),
        q2.view(),
        targets.target.view(),
        cfg.dof_v,
    );
    let (recon, d_recon) = reconstruction_grad(bundle.h1.view(), &setup.adjacency)?;
    let (fc, fr) = cfg.loss_reduction.factors(bundle.h1.nrows());

    let mut up = UpstreamGrads::zeros(bundle);
    up.z1.scaled_add(w.alpha, &contrast.d_z1);
    up.z2.scaled_add(w.alpha, &contrast.d_z2);
    up.h1.scaled_add(w.beta * fc, &cg.d_h1);
    up.h2.scaled_add(w.beta * fc, &cg.d_h2);
    up.h1.scaled_add(w.gamma * fr, &d_recon);
    let d_mu = cg.d_mu * (w.beta * fc);

    let breakdown = LossBreakdown {
        total: total_loss(w, contrast.total, fc * cluster.total, fr * recon),
        contrast: contrast.total,
        cont: contrast.loss_cont,
        lap: contrast.loss_lap,
        cluster,
        recon,
    };
    Ok((breakdown, up, d_mu))
}

/// Full objective and exact gradients for fixed augmented features,
/// positives and target distribution.
pub fn evaluate_objective(
    setup: &TrainingSetup,
    cfg: &TrainConfig,
    params: &ModelParams,
    mu: &Array2<f64>,
    x_aug: &CsrMatrix,
    targets: &EpochTargets<'_>,
) -> Result<(LossBreakdown, ModelParams, Array2<f64>)> {
    let bundle = forward_views(&setup.x, x_aug, &setup.original, &setup.views, &setup.fusion_weights, params)?;
    let sim = similarity_matrices(bundle.z1.view(), bundle.z2.view(), cfg.tau)?;
    let (loss, up, d_mu) = losses_and_upstream(setup, cfg, &bundle, &sim, mu, targets)?;
    let grads = backward(&bundle, &up, &setup.x, x_aug, &setup.original, &setup.views, params)?;
    Ok((loss, grads, d_mu))
}

/// Loss value only.
pub fn objective_value(
    setup: &TrainingSetup,
    cfg: &TrainConfig,
    params: &ModelParams,
    mu: &Array2<f64>,
    x_aug: &CsrMatrix,
    targets: &EpochTargets<'_>,
) -> Result<LossBreakdown> {
    let bundle = forward_views(&setup.x, x_aug, &setup.original, &setup.views, &setup.fusion_weights, params)?;
    let sim = similarity_matrices(bundle.z1.view(), bundle.z2.view(), cfg.tau)?;
    let w = cfg.loss_weights();
    let contrast = one_to_many_contrastive(&sim, targets.positives, cfg.lambda_reg, cfg.eps)?;
    let q1 = soft_assign(bundle.h1.view(), mu.view(), cfg.dof_v)?;
    let q2 = soft_assign(bundle.h2.view(), mu.view(), cfg.dof_v)?;
    let cluster = clustering_loss(targets.target.view(), q1.view(), q2.view())?;
    let recon = crate::losses::reconstruction_loss(bundle.h1.view(), &setup.adjacency)?;
    let (fc, fr) = cfg.loss_reduction.factors(bundle.h1.nrows());
    Ok(LossBreakdown {
        total: total_loss(w, contrast.total, fc * cluster.total, fr * recon),
        contrast: contrast.total,
        cont: contrast.loss_cont,
        lap: contrast.loss_lap,
        cluster,
        recon,
    })
}

/// Augmented features for one epoch, as a sparse matrix.
pub fn epoch_features(setup: &TrainingSetup, cfg: &TrainConfig, epoch: usize) -> Result<CsrMatrix> {
    let masked = augment(setup.features.view(), cfg.mask_p, stream_seed(cfg.seed, STREAM_MASK, epoch as u64))?;
    Ok(CsrMatrix::from_dense(masked.view()))
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    /// Accuracy and NMI of the epoch's soft-assignment labels, when ground truth exists.
    pub acc: Option<f64>,
    pub nmi: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainResult {
    #[serde(skip)]
    pub params: ModelParams,
    #[serde(skip)]
    pub centroids: Array2<f64>,
    #[serde(skip)]
    pub embeddings: Array2<f64>,
    pub labels: Vec<usize>,
    pub history: Vec<EpochRecord>,
    pub pretrain_losses: Vec<f64>,
    pub metrics: Option<MetricsReport>,
    pub coarse_nodes: Vec<usize>,
    pub early_stopped: Vec<bool>,
    pub empty_cluster_epochs: usize,
    pub seconds_pretrain: f64,
    pub seconds_train: f64,
    pub wall_clock_secs: f64,
}

fn model_slots<'a>(params: &'a mut ModelParams, mu: &'a mut Array2<f64>) -> Vec<ParamSlot<'a>> {
    let mut slots: Vec<ParamSlot<'a>> = params
        .slices_mut()
        .into_iter()
        .map(|(_, decay, values)| ParamSlot { values, decay })
        .collect();
    slots.push(ParamSlot { values: mu.as_slice_mut().expect("standard layout"), decay: false });
    slots
}

/// Runs the whole procedure: coarsening, pretraining, centroid
/// initialization, `cfg.epochs` joint epochs and label extraction.
pub fn train(graph: &AttributedGraph, cfg: &TrainConfig) -> Result<TrainResult> {
    let start = Instant::now();
    let setup = prepare(graph, cfg)?;
    let pre = pretrain_setup(&setup, cfg)?;
    let seconds_pretrain = start.elapsed().as_secs_f64();
    let mut params = pre.params;

    let h1 = gcn_forward(&setup.x, &setup.original, &params)?.h;
    let mut mu = init_centroids(
        h1.view(),
        setup.n_clusters,
        cfg.kmeans_restarts,
        stream_seed(cfg.seed, STREAM_KMEANS, 0),
    )?;

    let truth = graph.labels.as_deref();
    let mut opt = AdamW::new(cfg.learning_rate, cfg.weight_decay);
    let mut positives: Option<ContrastPositives> = None;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut empty_cluster_epochs = 0;
    let train_start = Instant::now();
    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let x_aug = epoch_features(&setup, cfg, epoch)?;
        let bundle =
            forward_views(&setup.x, &x_aug, &setup.original, &setup.views, &setup.fusion_weights, &params)?;
        let sim = similarity_matrices(bundle.z1.view(), bundle.z2.view(), cfg.tau)?;
        if cfg.centroid_positives {
            positives = Some(contrast_positives(
                &sim,
                setup.n_clusters,
                positives.as_ref(),
                1,
                stream_seed(cfg.seed, STREAM_CONTRAST, epoch as u64),
            )?);
        }
        let q1 = soft_assign(bundle.h1.view(), mu.view(), cfg.dof_v)?;
        let td = target_distribution(q1.view())?;
        if !td.empty_columns.is_empty() {
            empty_cluster_epochs += 1;
        }
        let targets = EpochTargets {
            positives: positives.as_ref(),
            target: &td.p,
        };
        let (loss, up, d_mu) = losses_and_upstream(&setup, cfg, &bundle, &sim, &mu, &targets)?;
        drop(sim);
        finite_or(loss.total, "training loss", epoch)?;
        let grads = backward(&bundle, &up, &setup.x, &x_aug, &setup.original, &setup.views, &params)?;

        let (acc, nmi) = match truth {
            Some(t) => {
                let q2 = soft_assign(bundle.h2.view(), mu.view(), cfg.dof_v)?;
                let m = clustering_metrics(&predict_labels(q1.view(), q2.view())?, t)?;
                (Some(m.acc), Some(m.nmi))
            }
            None => (None, None),
        };
        drop(bundle);

        let grad_slices: Vec<&[f64]> = grads
            .slices()
            .iter()
            .map(|(_, _, s)| *s)
            .chain(std::iter::once(d_mu.as_slice().expect("standard layout")))
            .collect();
        opt.step(model_slots(&mut params, &mut mu), &grad_slices)?;
        if !params.is_finite() || mu.iter().any(|v| !v.is_finite()) {
            return Err(MpcclError::Numerics(format!("parameters diverged at epoch {epoch}")));
        }
        history.push(EpochRecord {
            epoch,
            loss,
            acc,
            nmi,
            seconds: t0.elapsed().as_secs_f64(),
        });
    }
    let seconds_train = train_start.elapsed().as_secs_f64();

    // labels from the un-augmented features
    let mut bundle =
        forward_views(&setup.x, &setup.x, &setup.original, &setup.views, &setup.fusion_weights, &params)?;
    bundle.release_caches();
    let q1 = soft_assign(bundle.h1.view(), mu.view(), cfg.dof_v)?;
    let q2 = soft_assign(bundle.h2.view(), mu.view(), cfg.dof_v)?;
    let labels = predict_labels(q1.view(), q2.view())?;
    let metrics = truth.map(|t| clustering_metrics(&labels, t)).transpose()?;

    Ok(TrainResult {
        params,
        centroids: mu,
        embeddings: bundle.h1,
        labels,
        history,
        pretrain_losses: pre.losses,
        metrics,
        coarse_nodes: setup.coarse_nodes,
        early_stopped: setup.early_stopped,
        empty_cluster_epochs,
        seconds_pretrain,
        seconds_train,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthSpec};
    use ndarray::array;

    fn tiny_graph() -> AttributedGraph {
        let spec = SynthSpec {
            name: "tiny".into(),
            class_sizes: vec![12, 10, 8],
            n_features: 24,
            mean_words: 5.0,
            n_edges: 50,
            homophily: 0.85,
            topic_fraction: 0.6,
            degree_exponent: 2.5,
        };
        generate(&spec, 1).unwrap()
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            scales: vec![0.5, 0.25],
            n_min: 4,
            dims: [8, 6, 10, 5],
            pretrain_epochs: 5,
            epochs: 3,
            kmeans_restarts: 3,
            lambda_reg: 0.1,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn predict_label_cases() {
        let one_hot = array![[0.0, 1.0], [1.0, 0.0]];
        assert_eq!(predict_labels(one_hot.view(), one_hot.view()).unwrap(), vec![1, 0]);
        let q1 = array![[0.6, 0.4]];
        let q2 = array![[0.2, 0.8]];
        assert_eq!(predict_labels(q1.view(), q2.view()).unwrap(), vec![1]);
        let tie = array![[0.5, 0.5]];
        assert_eq!(predict_labels(tie.view(), tie.view()).unwrap(), vec![0]);
        let other = array![[0.5, 0.3, 0.2]];
        assert!(matches!(predict_labels(tie.view(), other.view()), Err(MpcclError::Contract(_))));
    }

    #[test]
    fn zero_pretrain_epochs_returns_initialization() {
        let g = tiny_graph();
        let cfg = TrainConfig {
            pretrain_epochs: 0,
            ..tiny_config()
        };
        let out = pretrain(&g, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, STREAM_INIT, 0));
        let init = ModelParams::init(ModelDims::new(24, cfg.dims), &mut rng);
        assert_eq!(out.params, init);
        assert_eq!(out.losses.len(), 1);
    }

    #[test]
    fn k_equals_n_gives_zero_inertia() {
        let h = array![[0.0, 1.0], [2.0, 3.0], [5.0, -1.0]];
        let mu = init_centroids(h.view(), 3, 2, 0).unwrap();
        let mut rows: Vec<Vec<f64>> = mu.rows().into_iter().map(|r| r.to_vec()).collect();
        rows.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(rows, vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![5.0, -1.0]]);
        assert!(matches!(init_centroids(h.view(), 4, 1, 0), Err(MpcclError::Domain(_))));
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let g = tiny_graph();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            ..tiny_config()
        };
        let pre = pretrain(&g, &cfg).unwrap();
        let r = train(&g, &cfg).unwrap();
        assert_eq!(r.params, pre.params);
        assert!(r.history[0].loss.total.is_finite());
    }

    #[test]
    fn training_is_deterministic() {
        let g = tiny_graph();
        let cfg = tiny_config();
        let a = train(&g, &cfg).unwrap();
        let b = train(&g, &cfg).unwrap();
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.params, b.params);
        assert_eq!(a.labels.len(), 30);
        assert!(a.labels.iter().all(|&l| l < 3));
        assert_eq!(a.coarse_nodes, vec![15, 7]);
    }

    #[test]
    fn view_count_follows_scales() {
        let g = tiny_graph();
        let setup = prepare(&g, &tiny_config()).unwrap();
        assert_eq!(setup.views.len(), 3);
        assert_eq!(setup.fusion_weights, vec![1.0; 3]);
    }
}
