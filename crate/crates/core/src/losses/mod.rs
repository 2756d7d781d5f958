//! Training objectives: one-to-many contrastive loss with the similarity
//! Laplacian regularizer, KL self-supervised clustering and adjacency
//! reconstruction.

pub mod cluster;
pub mod contrastive;
pub mod kmeans;
pub mod recon;

pub use cluster::{
    centroid_gradient, clustering_backward, clustering_loss, kl_divergence, soft_assign, target_distribution,
    ClusterGrads, ClusterLoss, TargetDistribution,
};
pub use contrastive::{
    contrast_positives, laplacian_reg, one_to_many_contrastive, similarity_matrices, ContrastOutput,
    ContrastPositives, SimilarityTensor,
};
pub use kmeans::{kmeans_cluster, kmeans_warm, KMeansResult};
pub use recon::{reconstruction_grad, reconstruction_loss};

use serde::{Deserialize, Serialize};

/// Term weights of the overall objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

/// `α · contrast + β · clustering + γ · reconstruction`, where `contrast`
/// already includes the λ-weighted regularizer.
pub fn total_loss(w: LossWeights, contrast: f64, clustering: f64, reconstruction: f64) -> f64 {
    w.alpha * contrast + w.beta * clustering + w.gamma * reconstruction
}
