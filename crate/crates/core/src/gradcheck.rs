//! Central finite-difference checks of the analytic gradients of the full
//! objective on small random graphs.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::losses::{
    centroid_gradient, clustering_loss, contrast_positives, similarity_matrices, soft_assign, target_distribution,
};
use crate::netfwd::{forward_views, ModelDims, ModelParams, ViewBundle};
use crate::synth::{generate, SynthSpec};
use crate::trainer::{epoch_features, evaluate_objective, objective_value, prepare, EpochTargets, TrainConfig};

/// Finite-difference step for the full objective.
pub const FD_STEP: f64 = 1e-5;
/// Pre-activations closer than this to zero make an instance unusable.
pub const KINK_MARGIN: f64 = 1e-3;

/// `|analytic − numeric| / max(1, |numeric|)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(1.0)
}

#[derive(Debug, Clone, Serialize)]
pub struct TensorError {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub seed: u64,
    pub n_nodes: usize,
    pub n_features: usize,
    pub n_clusters: usize,
    pub coarse_nodes: Vec<usize>,
    pub attempts: usize,
    pub loss: f64,
    pub tensors: Vec<TensorError>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn instance_spec() -> SynthSpec {
    SynthSpec {
        name: "gradcheck".into(),
        class_sizes: vec![10, 10, 10],
        n_features: 12,
        mean_words: 4.0,
        n_edges: 60,
        homophily: 0.8,
        topic_fraction: 0.6,
        degree_exponent: 2.5,
    }
}

pub fn instance_config(seed: u64) -> TrainConfig {
    TrainConfig {
        mask_p: 0.2,
        lambda_reg: 0.3,
        scales: vec![0.5, 0.25],
        n_min: 4,
        dims: [8, 6, 10, 5],
        seed,
        ..TrainConfig::default()
    }
}

fn min_abs_preactivation(bundle: &ViewBundle) -> f64 {
    bundle.min_abs_preactivation().unwrap_or(f64::INFINITY)
}

/// Checks every parameter entry and every centroid coordinate of the full
/// objective on a random 30-node graph with two coarse scales.
pub fn run_gradcheck(seed: u64) -> Result<GradcheckReport> {
    let mut attempts = 0;
    loop {
        attempts += 1;
        let sub = seed.wrapping_mul(1_000_003).wrapping_add(attempts as u64);
        if let Some(report) = try_instance(seed, sub, attempts)? {
            return Ok(report);
        }
    }
}

fn try_instance(seed: u64, sub: u64, attempts: usize) -> Result<Option<GradcheckReport>> {
    let graph = generate(&instance_spec(), sub)?;
    let cfg = instance_config(sub);
    let setup = prepare(&graph, &cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub);
    let mut params = ModelParams::init(ModelDims::new(graph.n_features(), cfg.dims), &mut rng);
    params.bp1.mapv_inplace(|_| rng.gen_range(-0.3..0.3));
    params.bp2.mapv_inplace(|_| rng.gen_range(-0.3..0.3));
    params.prelu_a = rng.gen_range(0.1..0.4);

    let x_aug = epoch_features(&setup, &cfg, 0)?;
    let bundle = forward_views(&setup.x, &x_aug, &setup.original, &setup.views, &setup.fusion_weights, &params)?;
    if min_abs_preactivation(&bundle) < KINK_MARGIN {
        return Ok(None);
    }
    let k = setup.n_clusters;
    let mu = Array2::from_shape_fn((k, cfg.dims[1]), |(j, t)| {
        bundle.h1[[j * 7 % graph.n_nodes(), t]] + rng.gen_range(-0.1..0.1)
    });
    let sim = similarity_matrices(bundle.z1.view(), bundle.z2.view(), cfg.tau)?;
    let positives = contrast_positives(&sim, k, None, 2, sub)?;
    let q1 = soft_assign(bundle.h1.view(), mu.view(), cfg.dof_v)?;
    let target = target_distribution(q1.view())?.p;
    let targets = EpochTargets {
        positives: Some(&positives),
        target: &target,
    };
    let (loss, grads, d_mu) = evaluate_objective(&setup, &cfg, &params, &mu, &x_aug, &targets)?;

    let value = |p: &ModelParams, m: &Array2<f64>| -> Result<f64> {
        Ok(objective_value(&setup, &cfg, p, m, &x_aug, &targets)?.total)
    };

    let mut tensors = Vec::new();
    let names: Vec<&'static str> = params.slices().iter().map(|(n, _, _)| *n).collect();
    for (t, name) in names.iter().enumerate() {
        let analytic = grads.slices()[t].2.to_vec();
        let mut worst: f64 = 0.0;
        for (e, &a) in analytic.iter().enumerate() {
            let mut plus = params.clone();
            plus.slices_mut()[t].2[e] += FD_STEP;
            let mut minus = params.clone();
            minus.slices_mut()[t].2[e] -= FD_STEP;
            let numeric = (value(&plus, &mu)? - value(&minus, &mu)?) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(a, numeric));
        }
        tensors.push(TensorError {
            name: name.to_string(),
            entries: analytic.len(),
            max_rel_error: worst,
        });
    }
    let mut worst: f64 = 0.0;
    for idx in 0..mu.len() {
        let (r, c) = (idx / mu.ncols(), idx % mu.ncols());
        let mut plus = mu.clone();
        plus[[r, c]] += FD_STEP;
        let mut minus = mu.clone();
        minus[[r, c]] -= FD_STEP;
        let numeric = (value(&params, &plus)? - value(&params, &minus)?) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(d_mu[[r, c]], numeric));
    }
    tensors.push(TensorError {
        name: "centroids".into(),
        entries: mu.len(),
        max_rel_error: worst,
    });

    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    let tolerance = 1e-4;
    Ok(Some(GradcheckReport {
        seed,
        n_nodes: graph.n_nodes(),
        n_features: graph.n_features(),
        n_clusters: k,
        coarse_nodes: setup.coarse_nodes.clone(),
        attempts,
        loss: loss.total,
        tensors,
        max_rel_error,
        tolerance,
        passed: max_rel_error < tolerance,
    }))
}

#[derive(Debug, Clone, Serialize)]
pub struct CentroidCheckReport {
    pub instances: usize,
    pub max_rel_error: f64,
}

/// Compares the entrywise centroid gradient with central differences of the
/// clustering loss on random instances (target distribution held fixed).
pub fn run_centroid_check(instances: usize, seed: u64, step: f64) -> Result<CentroidCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel_error: f64 = 0.0;
    for _ in 0..instances {
        let n = rng.gen_range(5..25);
        let k = rng.gen_range(2..6);
        let dim = rng.gen_range(2..8);
        let v = [0.5, 1.0, 2.0][rng.gen_range(0..3)];
        let h1 = Array2::from_shape_simple_fn((n, dim), || rng.gen_range(-2.0..2.0));
        let h2 = Array2::from_shape_simple_fn((n, dim), || rng.gen_range(-2.0..2.0));
        let mu = Array2::from_shape_simple_fn((k, dim), || rng.gen_range(-2.0..2.0));
        let q1 = soft_assign(h1.view(), mu.view(), v)?;
        let q2 = soft_assign(h2.view(), mu.view(), v)?;
        let p = target_distribution(q1.view())?.p;
        let analytic = centroid_gradient(h1.view(), h2.view(), mu.view(), q1.view(), q2.view(), p.view(), v);
        let loss = |m: &Array2<f64>| -> Result<f64> {
            let a = soft_assign(h1.view(), m.view(), v)?;
            let b = soft_assign(h2.view(), m.view(), v)?;
            Ok(clustering_loss(p.view(), a.view(), b.view())?.total)
        };
        for idx in 0..mu.len() {
            let at = (idx / dim, idx % dim);
            let mut plus = mu.clone();
            plus[at] += step;
            let mut minus = mu.clone();
            minus[at] -= step;
            let numeric = (loss(&plus)? - loss(&minus)?) / (2.0 * step);
            max_rel_error = max_rel_error.max(relative_error(analytic[at], numeric));
        }
    }
    Ok(CentroidCheckReport {
        instances,
        max_rel_error,
    })
}
