//! Command-line interface. Every subcommand prints a JSON report on stdout.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::coarsen::{multi_scale_coarsen, DEFAULT_MIN_NODES};
use crate::datasets::{benchmark, open_dataset, DatasetSource};
use crate::error::{MpcclError, Result};
use crate::graphdata::{save_graph, AttributedGraph};
use crate::gradcheck::run_gradcheck;
use crate::metrics::clustering_metrics;
use crate::spectral::report_for_coarsening;
use crate::synth::{generate, SynthSpec};
use crate::trainer::{pretrain, train, TrainConfig, TrainResult};

/// Environment variable capping the matrix-multiplication thread count.
pub const THREADS_ENV: &str = "MPCCL_THREADS";

#[derive(Parser, Debug)]
#[command(name = "mpccl", version, about = "Multi-scale coarsening and contrastive graph clustering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Coarsen a graph at several scales and write edge lists and merge maps.
    Coarsen(CoarsenArgs),
    /// Check the interlacing, condition-number and perturbation bounds for each scale.
    VerifySpectral(SpectralArgs),
    /// Pretrain the encoder on adjacency reconstruction.
    Pretrain(TrainArgs),
    /// Train and cluster.
    Train(TrainArgs),
    /// Score predicted labels against ground truth.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients on a small random graph.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic benchmark-shaped dataset.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct CoarsenArgs {
    #[arg(long)]
    input: String,
    #[arg(long, value_delimiter = ',', required = true)]
    scales: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_MIN_NODES)]
    min_nodes: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SpectralArgs {
    #[arg(long)]
    input: String,
    #[arg(long, value_delimiter = ',', required = true)]
    scales: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_MIN_NODES)]
    min_nodes: usize,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory or `synth:<preset>[:<seed>]`; overrides the config.
    #[arg(long)]
    input: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<f64>>,
    #[arg(long, default_value = "result")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    #[arg(long)]
    dump_embeddings: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value = "cora")]
    preset: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Applies `MPCCL_THREADS` to the matrix-multiplication backend. Must run
/// before the first product, which is when the backend reads its setting.
pub fn apply_thread_limit() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| MpcclError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        std::env::set_var("MATMUL_NUM_THREADS", n.to_string());
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| MpcclError::io(parent, e))?;
    }
    fs::write(path, body).map_err(|e| MpcclError::io(path, e))
}

fn scale_tag(s: f64) -> String {
    format!("{s}")
}

fn cmd_coarsen(a: &CoarsenArgs) -> Result<String> {
    let (graph, source) = open_dataset(&a.input)?;
    let levels = multi_scale_coarsen(&graph, &a.scales, a.min_nodes)?;
    fs::create_dir_all(&a.out).map_err(|e| MpcclError::io(&a.out, e))?;
    let mut summary = Vec::new();
    for cg in &levels {
        let tag = scale_tag(cg.scale);
        let mut edges = String::new();
        for (u, v, w) in cg.graph.edges() {
            edges.push_str(&format!("{u},{v},{w:.16e}\n"));
        }
        write_file(&a.out.join(format!("coarse_{tag}_edges.csv")), &edges)?;
        let mut map = String::new();
        for (u, &c) in cg.merge_map.assignment.iter().enumerate() {
            map.push_str(&format!("{u},{c}\n"));
        }
        write_file(&a.out.join(format!("coarse_{tag}_map.csv")), &map)?;
        let meta = json!({
            "scale": cg.scale,
            "target_nodes": cg.target_nodes,
            "n_nodes": cg.graph.n_nodes(),
            "steps": cg.steps,
            "dropped_weight": cg.dropped_weight,
            "early_stopped": cg.early_stopped,
        });
        write_file(&a.out.join(format!("coarse_{tag}_meta.json")), &to_json(&meta))?;
        summary.push(meta);
    }
    Ok(to_json(&json!({ "dataset": source, "levels": summary })))
}

fn cmd_spectral(a: &SpectralArgs) -> Result<String> {
    let (graph, source) = open_dataset(&a.input)?;
    let levels = multi_scale_coarsen(&graph, &a.scales, a.min_nodes)?;
    let mut reports = Vec::new();
    for cg in &levels {
        reports.push(json!({ "scale": cg.scale, "report": report_for_coarsening(&graph, cg)? }));
    }
    let body = to_json(&json!({ "dataset": source, "reports": reports }));
    if let Some(path) = &a.report {
        write_file(path, &body)?;
    }
    Ok(body)
}

fn resolve_training_inputs(a: &TrainArgs) -> Result<(TrainConfig, AttributedGraph, DatasetSource)> {
    let mut cfg = match &a.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = &a.scales {
        cfg.scales = s.clone();
        cfg.fusion_weights = None;
    }
    cfg.validate()?;
    let (graph, source) = match (&a.input, &cfg.dataset) {
        (Some(spec), _) | (None, Some(spec)) => open_dataset(spec)?,
        (None, None) => {
            let name = a
                .config
                .as_ref()
                .and_then(|p| p.file_stem())
                .map(|s| s.to_string_lossy().into_owned())
                .ok_or_else(|| MpcclError::Config("no dataset: pass --input or set `dataset`".into()))?;
            match SynthSpec::preset(&name) {
                Some(_) => benchmark(&name)?,
                None => {
                    let root = std::env::var(crate::datasets::DATA_DIR_ENV).map_err(|_| {
                        MpcclError::Config(format!("dataset {name:?} not found: pass --input or set MPCCL_DATA_DIR"))
                    })?;
                    open_dataset(&Path::new(&root).join(&name).to_string_lossy())?
                }
            }
        }
    };
    Ok((cfg, graph, source))
}

fn labels_csv(labels: &[usize]) -> String {
    let mut s = String::with_capacity(labels.len() * 3);
    for l in labels {
        s.push_str(&format!("{l}\n"));
    }
    s
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn cmd_train(a: &TrainArgs) -> Result<String> {
    if a.repeats == 0 {
        return Err(MpcclError::Config("--repeats must be at least 1".into()));
    }
    let (cfg, graph, source) = resolve_training_inputs(a)?;
    let mut runs: Vec<(u64, TrainResult)> = Vec::new();
    for r in 0..a.repeats {
        let run_cfg = TrainConfig {
            seed: cfg.seed + r as u64,
            ..cfg.clone()
        };
        let result = train(&graph, &run_cfg)?;
        let name = if r == 0 {
            "labels.csv".to_string()
        } else {
            format!("labels_seed{}.csv", run_cfg.seed)
        };
        write_file(&a.out.join(name), &labels_csv(&result.labels))?;
        runs.push((run_cfg.seed, result));
    }
    if let Some(path) = &a.dump_embeddings {
        let emb = &runs[0].1.embeddings;
        let mut body = String::new();
        for row in emb.rows() {
            let fields: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
            body.push_str(&fields.join(","));
            body.push('\n');
        }
        write_file(path, &body)?;
    }
    let summary = if runs.iter().all(|(_, r)| r.metrics.is_some()) {
        let pick = |f: fn(&crate::metrics::MetricsReport) -> f64| {
            let xs: Vec<f64> = runs.iter().map(|(_, r)| f(r.metrics.as_ref().expect("checked"))).collect();
            let (mean, std) = mean_std(&xs);
            json!({ "mean": mean, "std": std, "values": xs })
        };
        Some(json!({
            "acc": pick(|m| m.acc),
            "nmi": pick(|m| m.nmi),
            "ari": pick(|m| m.ari),
            "f1": pick(|m| m.f1),
        }))
    } else {
        None
    };
    let report = json!({
        "dataset": source,
        "config": cfg,
        "metrics": runs[0].1.metrics,
        "summary": summary,
        "runs": runs.iter().map(|(seed, r)| json!({ "seed": seed, "result": r })).collect::<Vec<_>>(),
    });
    let body = to_json(&report);
    write_file(&a.out.join("metrics.json"), &body)?;
    let brief = json!({
        "dataset": source,
        "out": a.out,
        "metrics": runs[0].1.metrics,
        "summary": summary,
        "wall_clock_secs": runs.iter().map(|(_, r)| r.wall_clock_secs).collect::<Vec<_>>(),
    });
    Ok(to_json(&brief))
}

fn cmd_pretrain(a: &TrainArgs) -> Result<String> {
    let (cfg, graph, source) = resolve_training_inputs(a)?;
    let out = pretrain(&graph, &cfg)?;
    let report = json!({ "dataset": source, "losses": out.losses });
    write_file(&a.out.join("pretrain.json"), &to_json(&report))?;
    write_file(
        &a.out.join("params.json"),
        &serde_json::to_string(&out.params).expect("params serialize"),
    )?;
    Ok(to_json(&report))
}

/// One label per non-empty line; with several fields per line the last is used.
/// A non-numeric first line is treated as a header.
pub fn read_labels(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| MpcclError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let field = match line.split(|c: char| c == ',' || c.is_whitespace()).filter(|s| !s.is_empty()).last() {
            Some(f) => f,
            None => continue,
        };
        match field.parse::<usize>() {
            Ok(v) => out.push(v),
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(MpcclError::Format(format!(
                    "{} line {}: bad label {field:?}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}

fn cmd_eval(a: &EvalArgs) -> Result<String> {
    let pred = read_labels(&a.pred)?;
    let truth = read_labels(&a.truth)?;
    let body = to_json(&clustering_metrics(&pred, &truth)?);
    if let Some(path) = &a.out {
        write_file(path, &body)?;
    }
    Ok(body)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<String> {
    let report = run_gradcheck(a.seed)?;
    let body = to_json(&report);
    if let Some(path) = &a.out {
        write_file(path, &body)?;
    }
    if !report.passed {
        print!("{body}");
        return Err(MpcclError::Numerics(format!(
            "max relative gradient error {:.3e} exceeds {:.0e}",
            report.max_rel_error, report.tolerance
        )));
    }
    Ok(body)
}

fn cmd_synth(a: &SynthArgs) -> Result<String> {
    let spec = SynthSpec::preset(&a.preset)
        .ok_or_else(|| MpcclError::Config(format!("unknown preset {:?}", a.preset)))?;
    let graph = generate(&spec, a.seed)?;
    save_graph(&graph, &a.out)?;
    Ok(to_json(&json!({
        "preset": a.preset,
        "seed": a.seed,
        "out": a.out,
        "meta": graph.meta(),
        "n_edges": graph.n_edges(),
        "homophily": crate::synth::edge_homophily(&graph),
    })))
}

fn dispatch(cli: &Cli) -> Result<String> {
    apply_thread_limit()?;
    match &cli.command {
        Command::Coarsen(a) => cmd_coarsen(a),
        Command::VerifySpectral(a) => cmd_spectral(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code: 0 success, 2 usage or config error, 3 numerics error,
/// 1 anything else.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(body) => {
            print!("{body}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
