//! Training configuration, read from flat TOML files.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coarsen::DEFAULT_MIN_NODES;
use crate::error::{MpcclError, Result};
use crate::losses::LossWeights;
use crate::netfwd::DEFAULT_HIDDEN;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Feature dropout probability.
    pub mask_p: f64,
    /// Weight of the similarity Laplacian regularizer.
    pub lambda_reg: f64,
    /// Coarsening scales, strictly decreasing in (0, 1). The original graph
    /// is always the first augmented view.
    pub scales: Vec<f64>,
    pub n_min: usize,
    pub weight_decay: f64,
    pub learning_rate: f64,
    pub pretrain_learning_rate: f64,
    pub tau: f64,
    pub dof_v: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub pretrain_epochs: usize,
    pub epochs: usize,
    pub kmeans_restarts: usize,
    pub seed: u64,
    /// `[h1, h2, hp, hz]`
    pub dims: [usize; 4],
    /// Per-view fusion weights (original view first); all ones when absent.
    pub fusion_weights: Option<Vec<f64>>,
    /// Use cluster centroids as extra positives; `false` gives one-to-one contrast.
    pub centroid_positives: bool,
    /// Number of clusters; defaults to the dataset's class count.
    pub n_clusters: Option<usize>,
    /// Stabilizer in the contrastive denominators.
    pub eps: f64,
    /// How the clustering and reconstruction terms enter the training objective.
    pub loss_reduction: LossReduction,
    /// Dataset directory, or `synth:<preset>[:<seed>]`.
    pub dataset: Option<String>,
}

/// `Sum` uses the KL divergences and the squared Frobenius error as written.
/// `Mean` divides the KL terms by N and the reconstruction error by N², so all
/// three terms are per-node (or per-entry) averages like the contrastive loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossReduction {
    Sum,
    Mean,
}

impl LossReduction {
    /// Factors applied to the clustering and reconstruction losses for `n` nodes.
    pub fn factors(self, n: usize) -> (f64, f64) {
        match self {
            LossReduction::Sum => (1.0, 1.0),
            LossReduction::Mean => {
                let n = n.max(1) as f64;
                (1.0 / n, 1.0 / (n * n))
            }
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mask_p: 0.1,
            lambda_reg: 0.0005,
            scales: vec![0.2, 0.1],
            n_min: DEFAULT_MIN_NODES,
            weight_decay: 1e-2,
            learning_rate: 5e-4,
            pretrain_learning_rate: 5e-4,
            tau: 0.5,
            dof_v: 1.0,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            pretrain_epochs: 50,
            epochs: 200,
            kmeans_restarts: 20,
            seed: 0,
            dims: DEFAULT_HIDDEN,
            fusion_weights: None,
            centroid_positives: true,
            n_clusters: None,
            eps: 1e-8,
            loss_reduction: LossReduction::Mean,
            dataset: None,
        }
    }
}

impl TrainConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| MpcclError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MpcclError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            MpcclError::Config(m) => MpcclError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
        }
    }

    /// Number of augmented views: the original graph plus one per scale.
    pub fn n_views(&self) -> usize {
        1 + self.scales.len()
    }

    pub fn fusion_weights(&self) -> Vec<f64> {
        self.fusion_weights.clone().unwrap_or_else(|| vec![1.0; self.n_views()])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(MpcclError::Config(m));
        if !(0.0..=1.0).contains(&self.mask_p) {
            return bad(format!("mask_p {} outside [0, 1]", self.mask_p));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be nonnegative", self.learning_rate));
        }
        if !(self.pretrain_learning_rate >= 0.0 && self.pretrain_learning_rate.is_finite()) {
            return bad("pretrain_learning_rate must be nonnegative".into());
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        for &s in &self.scales {
            if !(s > 0.0 && s < 1.0) {
                return bad(format!("scale {s} outside (0, 1); the original graph is always included"));
            }
        }
        if self.scales.windows(2).any(|w| w[1] >= w[0]) {
            return bad("scales must be strictly decreasing".into());
        }
        if self.n_min == 0 {
            return bad("n_min must be positive".into());
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau {} must be positive", self.tau));
        }
        if !(self.dof_v > 0.0) {
            return bad(format!("dof_v {} must be positive", self.dof_v));
        }
        if self.dims.contains(&0) {
            return bad("layer widths must be positive".into());
        }
        if self.kmeans_restarts == 0 {
            return bad("kmeans_restarts must be at least 1".into());
        }
        if !(self.weight_decay >= 0.0) || !(self.lambda_reg >= 0.0) || !(self.eps >= 0.0) {
            return bad("weight_decay, lambda_reg and eps must be nonnegative".into());
        }
        if let Some(w) = &self.fusion_weights {
            if w.len() != self.n_views() {
                return bad(format!("{} fusion weights for {} views", w.len(), self.n_views()));
            }
        }
        if self.n_clusters == Some(0) {
            return bad("n_clusters must be positive".into());
        }
        Ok(())
    }
}
