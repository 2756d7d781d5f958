//! Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion and exits
//! non-zero if any criterion fails.
//!
//! Criteria 7 and 8 train the full model a dozen times (hours on one core);
//! they run only with `MPCCL_ACCEPTANCE_FULL=1`.

mod common;

use std::fs;
use std::time::Instant;

use mpccl::coarsen::{edge_weights, multi_scale_coarsen, target_size};
use mpccl::datasets::benchmark;
use mpccl::gradcheck::{run_centroid_check, run_gradcheck};
use mpccl::graphdata::AttributedGraph;
use mpccl::losses::{clustering_loss, kl_divergence, reconstruction_loss, target_distribution};
use mpccl::metrics::clustering_metrics;
use mpccl::spectral::{condition_number, random_assumption1_instance, verify_theorems};
use mpccl::graphdata::laplacian;
use mpccl::trainer::{train, TrainConfig, TrainResult};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SPECTRAL_INSTANCES: usize = 200;
const SPECTRAL_MAX_NODES: usize = 30;
const SPECTRAL_TOL: f64 = 1e-8;
const SPECTRAL_SECONDS: f64 = 30.0;
const GRADCHECK_SEEDS: [u64; 3] = [7, 11, 23];
const GRADCHECK_TOL: f64 = 1e-4;
const GRADCHECK_SECONDS: f64 = 60.0;
const CENTROID_INSTANCES: usize = 50;
const CENTROID_STEP: f64 = 1e-6;
const CENTROID_TOL: f64 = 1e-5;
const CORA_SCALES: [f64; 2] = [0.2, 0.1];
const CONSERVATION_TOL: f64 = 1e-9;
const METRIC_MAX_N: usize = 8;
const METRIC_MAX_BLOCKS: usize = 3;
const METRIC_TOL: f64 = 1e-10;
const QUALITY_SEEDS: [u64; 3] = [0, 1, 2];
const CORA_MIN_ACC: f64 = 0.55;
const CORA_MIN_NMI: f64 = 0.35;
const CITESEER_MIN_ACC: f64 = 0.55;
const MAX_RUN_SECONDS: f64 = 1800.0;

struct Outcome {
    passed: Option<bool>,
    detail: String,
}

impl Outcome {
    fn check(passed: bool, detail: String) -> Self {
        Outcome { passed: Some(passed), detail }
    }
    fn skip(detail: &str) -> Self {
        Outcome { passed: None, detail: detail.to_string() }
    }
}

fn spectral_suite() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut interlace, mut kappa, mut weyl) = (0, 0, 0);
    let mut worst_interlace = f64::NEG_INFINITY;
    for _ in 0..SPECTRAL_INSTANCES {
        let (w, partition) = random_assumption1_instance(&mut rng, SPECTRAL_MAX_NODES);
        let l = laplacian(&w).expect("square weights");
        let r = verify_theorems(&l, &partition, 0.0).expect("valid instance");
        let excess = r
            .eigs_original
            .iter()
            .zip(&r.eigs_coarse)
            .map(|(o, c)| o - c)
            .fold(f64::NEG_INFINITY, f64::max);
        worst_interlace = worst_interlace.max(excess);
        if excess <= SPECTRAL_TOL {
            interlace += 1;
        }
        let ok_kappa = match (condition_number(&r.eigs_coarse), condition_number(&r.eigs_original)) {
            (Some(c), Some(o)) => c <= o + SPECTRAL_TOL * o.max(1.0),
            (None, _) => partition.n_blocks() < 2,
            _ => false,
        };
        if ok_kappa {
            kappa += 1;
        }
        if r.weyl_gap <= r.spectral_error + SPECTRAL_TOL {
            weyl += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let n = SPECTRAL_INSTANCES;
    Outcome::check(
        interlace == n && kappa == n && weyl == n && secs < SPECTRAL_SECONDS,
        format!(
            "{n} instances: interlacing {interlace}/{n} (max excess {worst_interlace:.2e}), kappa {kappa}/{n}, Weyl {weyl}/{n}, {secs:.1}s"
        ),
    )
}

fn gradient_exactness() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut shape = String::new();
    for seed in GRADCHECK_SEEDS {
        let r = run_gradcheck(seed).expect("gradcheck runs");
        worst = worst.max(r.max_rel_error);
        shape = format!("N={} d={} K={} coarse={:?}", r.n_nodes, r.n_features, r.n_clusters, r.coarse_nodes);
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::check(
        worst < GRADCHECK_TOL && secs < GRADCHECK_SECONDS,
        format!("seeds {GRADCHECK_SEEDS:?}, {shape}: max rel err {worst:.2e} (< {GRADCHECK_TOL:e}), {secs:.1}s"),
    )
}

fn centroid_closed_form() -> Outcome {
    let r = run_centroid_check(CENTROID_INSTANCES, 99, CENTROID_STEP).expect("check runs");
    Outcome::check(
        r.max_rel_error < CENTROID_TOL,
        format!("{} instances: max rel err {:.2e} (< {CENTROID_TOL:e})", r.instances, r.max_rel_error),
    )
}

fn coarsening_targets(cora: &AttributedGraph) -> Outcome {
    let levels = multi_scale_coarsen(cora, &CORA_SCALES, 32).expect("coarsening runs");
    let n = cora.n_nodes();
    let total = edge_weights(cora).total_weight();
    let mut ok = true;
    let mut parts = Vec::new();
    for cg in &levels {
        let target = target_size(cg.scale, n, 32);
        let achieved = cg.graph.n_nodes();
        let drift = (cg.graph.total_weight() + cg.dropped_weight - total).abs();
        ok &= (achieved == target || cg.early_stopped) && drift <= CONSERVATION_TOL;
        parts.push(format!(
            "s={} target {target} achieved {achieved}{} drift {drift:.1e}",
            cg.scale,
            if cg.early_stopped { " (early stop)" } else { "" }
        ));
    }
    if n == 2708 {
        ok &= levels.iter().map(|c| target_size(c.scale, n, 32)).eq([541, 270]);
    }
    Outcome::check(ok, format!("N={n}: {}", parts.join("; ")))
}

/// Restricted growth strings: every labeling of `n` points into at most
/// `k` blocks, up to renaming.
fn canonical_labelings(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|l: Vec<usize>| {
                let used = l.iter().max().map_or(0, |m| m + 1);
                (0..(used + 1).min(k)).map(move |c| {
                    let mut m = l.clone();
                    m.push(c);
                    m
                })
            })
            .collect();
    }
    out
}

fn metric_oracles() -> Outcome {
    let mut cases = 0usize;
    let mut acc_exact = true;
    let mut worst: f64 = 0.0;
    for n in 1..=METRIC_MAX_N {
        let labelings = canonical_labelings(n, METRIC_MAX_BLOCKS);
        for truth in &labelings {
            for pred in &labelings {
                let m = clustering_metrics(pred, truth).expect("valid input");
                acc_exact &= m.acc == common::brute_force_acc(pred, truth);
                worst = worst
                    .max((m.nmi - common::oracle_nmi(pred, truth)).abs())
                    .max((m.ari - common::oracle_ari(pred, truth)).abs())
                    .max((m.f1 - common::oracle_f1(pred, truth, &m.mapping)).abs());
                cases += 1;
            }
        }
    }
    Outcome::check(
        acc_exact && worst <= METRIC_TOL,
        format!("{cases} labeling pairs (N <= {METRIC_MAX_N}, <= {METRIC_MAX_BLOCKS} blocks): ACC exact {acc_exact}, max NMI/ARI/F1 gap {worst:.1e}"),
    )
}

fn loss_sanity(cora: &AttributedGraph) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let stochastic = |rng: &mut ChaCha8Rng| {
        let mut m = Array2::from_shape_simple_fn((12, 4), || rng.gen_range(0.01..1.0));
        for mut r in m.rows_mut() {
            let s = r.sum();
            r /= s;
        }
        m
    };
    let mut kl_ok = true;
    for _ in 0..200 {
        let (p, q) = (stochastic(&mut rng), stochastic(&mut rng));
        kl_ok &= kl_divergence(p.view(), q.view()) > 0.0;
        kl_ok &= kl_divergence(p.view(), p.view()).abs() < 1e-12;
        let l = clustering_loss(p.view(), p.view(), p.view()).expect("same shapes");
        kl_ok &= l.total.abs() < 1e-12;
    }
    let mut onehot = Array2::<f64>::zeros((9, 3));
    for i in 0..9 {
        onehot[[i, (i * 5) % 3]] = 1.0;
    }
    let pt = target_distribution(onehot.view()).expect("valid").p;
    let target_ok = pt == onehot;
    let n = cora.n_nodes();
    let h = Array2::<f64>::zeros((n, 16));
    let recon = reconstruction_loss(h.view(), &cora.adjacency).expect("shapes agree");
    let expected = 0.25 * (n * n) as f64;
    let recon_ok = recon == expected;
    Outcome::check(
        kl_ok && target_ok && recon_ok,
        format!("KL >= 0 with equality on equal inputs: {kl_ok}; one-hot target fixed: {target_ok}; recon(H=0) = {recon} vs 0.25N^2 = {expected}"),
    )
}

fn determinism(cora: &AttributedGraph) -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let cfg_path = dir.path().join("cora.toml");
    let mut cfg = TrainConfig::load(std::path::Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/cora.toml")))
        .expect("shipped config loads");
    cfg.pretrain_epochs = 3;
    cfg.epochs = 3;
    cfg.seed = 42;
    fs::write(&cfg_path, cfg.to_toml_string()).expect("write config");
    let graph_dir = dir.path().join("graph");
    mpccl::graphdata::save_graph(cora, &graph_dir).expect("save graph");
    let mut files = Vec::new();
    for run in 0..2 {
        let out = dir.path().join(format!("run{run}"));
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_mpccl"))
            .args(["train", "--config"])
            .arg(&cfg_path)
            .arg("--input")
            .arg(&graph_dir)
            .arg("--out")
            .arg(&out)
            .output()
            .expect("binary runs");
        if !status.status.success() {
            return Outcome::check(false, format!("run {run} failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        files.push(fs::read(out.join("labels.csv")).expect("labels written"));
    }
    Outcome::check(
        files[0] == files[1],
        format!("two 3+3-epoch runs, seed 42: {} bytes each, identical {}", files[0].len(), files[0] == files[1]),
    )
}

fn run(graph: &AttributedGraph, cfg: &TrainConfig, tag: &str) -> TrainResult {
    let r = train(graph, cfg).expect("training runs");
    let m = r.metrics.as_ref().expect("labels available");
    println!(
        "    {tag} seed {}: acc {:.4} nmi {:.4} ari {:.4} f1 {:.4} ({:.0}s)",
        cfg.seed, m.acc, m.nmi, m.ari, m.f1, r.wall_clock_secs
    );
    r
}

fn best(runs: &[TrainResult], f: fn(&mpccl::metrics::MetricsReport) -> f64) -> f64 {
    runs.iter().map(|r| f(r.metrics.as_ref().expect("labels"))).fold(f64::NEG_INFINITY, f64::max)
}

fn config(name: &str) -> TrainConfig {
    let path = format!("{}/../../configs/{name}.toml", env!("CARGO_MANIFEST_DIR"));
    TrainConfig::load(std::path::Path::new(&path)).expect("shipped config loads")
}

fn seeded(cfg: &TrainConfig, seed: u64) -> TrainConfig {
    TrainConfig { seed, ..cfg.clone() }
}

fn quality(cora: &AttributedGraph, cora_runs: &[TrainResult]) -> Outcome {
    let (citeseer, src) = benchmark("citeseer").expect("citeseer available");
    println!("    citeseer source: {}", src.location);
    let cfg = config("citeseer");
    let cite_runs: Vec<TrainResult> = QUALITY_SEEDS.iter().map(|&s| run(&citeseer, &seeded(&cfg, s), "citeseer")).collect();
    let (ca, cn) = (best(cora_runs, |m| m.acc), best(cora_runs, |m| m.nmi));
    let sa = best(&cite_runs, |m| m.acc);
    let slowest = cora_runs.iter().chain(&cite_runs).map(|r| r.wall_clock_secs).fold(0.0, f64::max);
    let _ = cora;
    Outcome::check(
        ca >= CORA_MIN_ACC && cn >= CORA_MIN_NMI && sa >= CITESEER_MIN_ACC && slowest <= MAX_RUN_SECONDS,
        format!(
            "best of {} seeds: cora acc {ca:.4} (>= {CORA_MIN_ACC}) nmi {cn:.4} (>= {CORA_MIN_NMI}); citeseer acc {sa:.4} (>= {CITESEER_MIN_ACC}); slowest run {slowest:.0}s",
            QUALITY_SEEDS.len()
        ),
    )
}

fn ablation(cora: &AttributedGraph, full: &[TrainResult]) -> Outcome {
    let cfg = config("cora");
    let finest = TrainConfig {
        scales: vec![cfg.scales[0]],
        fusion_weights: None,
        ..cfg.clone()
    };
    let single: Vec<TrainResult> = QUALITY_SEEDS.iter().map(|&s| run(cora, &seeded(&finest, s), "single-scale")).collect();
    let one_to_one_cfg = TrainConfig {
        centroid_positives: false,
        ..cfg.clone()
    };
    let one_to_one: Vec<TrainResult> =
        QUALITY_SEEDS.iter().map(|&s| run(cora, &seeded(&one_to_one_cfg, s), "one-to-one")).collect();
    let acc = |m: &mpccl::metrics::MetricsReport| m.acc;
    let (f, s, o) = (best(full, acc), best(&single, acc), best(&one_to_one, acc));
    Outcome::check(
        f >= s && f >= o,
        format!("best acc: full scales {f:.4} vs single scale {:?} {s:.4}; one-to-many {f:.4} vs one-to-one {o:.4}", finest.scales),
    )
}

fn main() {
    let full = std::env::var("MPCCL_ACCEPTANCE_FULL").is_ok_and(|v| v == "1");
    let (cora, src) = benchmark("cora").expect("cora available");
    println!("acceptance: cora source {} ({} nodes)", src.location, cora.n_nodes());

    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |id: u32, name: &'static str, o: Outcome| {
        let status = match o.passed {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        println!("{status} criterion {id} ({name}): {}", o.detail);
        results.push((id, name, o));
    };

    report(1, "spectral theorems", spectral_suite());
    report(2, "gradient exactness", gradient_exactness());
    report(3, "centroid closed form", centroid_closed_form());
    report(4, "coarsening targets and conservation", coarsening_targets(&cora));
    report(5, "metric oracles", metric_oracles());
    report(6, "loss sanity", loss_sanity(&cora));
    if full {
        let cfg = config("cora");
        let cora_runs: Vec<TrainResult> = QUALITY_SEEDS.iter().map(|&s| run(&cora, &seeded(&cfg, s), "cora")).collect();
        report(7, "end-to-end quality", quality(&cora, &cora_runs));
        report(8, "ablation direction", ablation(&cora, &cora_runs));
    } else {
        report(7, "end-to-end quality", Outcome::skip("set MPCCL_ACCEPTANCE_FULL=1 (about 3 hours on one core)"));
        report(8, "ablation direction", Outcome::skip("set MPCCL_ACCEPTANCE_FULL=1 (about 3 hours on one core)"));
    }
    report(9, "determinism", determinism(&cora));

    let failed: Vec<u32> = results.iter().filter(|r| r.2.passed == Some(false)).map(|r| r.0).collect();
    if failed.is_empty() {
        println!("acceptance: no failures");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
