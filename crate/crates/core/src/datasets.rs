//! Dataset lookup: native directories, the `.content`/`.cites` citation
//! format, and synthetic stand-ins.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::Serialize;

use crate::error::{MpcclError, Result};
use crate::graphdata::{load_graph, symmetrize, AttributedGraph};
use crate::synth::{generate, SynthSpec};

/// Environment variable naming a directory with one subdirectory per dataset.
pub const DATA_DIR_ENV: &str = "MPCCL_DATA_DIR";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSource {
    pub name: String,
    pub synthetic: bool,
    pub location: String,
}

/// Reads `<name>.content` (id, binary word indicators, class) and
/// `<name>.cites` (pairs of ids). Citations to unknown ids and self-citations
/// are dropped; labels are class names in sorted order.
pub fn load_citation_format(dir: &Path) -> Result<AttributedGraph> {
    let content = find_with_extension(dir, "content")?;
    let cites = content.with_extension("cites");
    let text = fs::read_to_string(&content).map_err(|e| MpcclError::io(&content, e))?;
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut classes: Vec<String> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() < 3 {
            return Err(MpcclError::Format(format!("{}: line {} too short", content.display(), lineno + 1)));
        }
        let values = fields[1..fields.len() - 1]
            .iter()
            .map(|s| {
                s.parse::<f64>().map_err(|_| {
                    MpcclError::Format(format!("{}: line {}: bad value {s:?}", content.display(), lineno + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != values.len() {
                return Err(MpcclError::Format(format!(
                    "{}: line {} has {} features, expected {}",
                    content.display(),
                    lineno + 1,
                    values.len(),
                    first.len()
                )));
            }
        }
        if ids.insert(fields[0].to_string(), rows.len()).is_some() {
            return Err(MpcclError::Format(format!("duplicate node id {}", fields[0])));
        }
        rows.push(values);
        classes.push(fields[fields.len() - 1].to_string());
    }
    if rows.is_empty() {
        return Err(MpcclError::Format(format!("{} is empty", content.display())));
    }
    let (n, d) = (rows.len(), rows[0].len());
    let features = Array2::from_shape_fn((n, d), |(i, j)| rows[i][j]);
    let names: Vec<String> = classes.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let labels: Vec<usize> = classes
        .iter()
        .map(|c| names.binary_search(c).expect("class present"))
        .collect();

    let text = fs::read_to_string(&cites).map_err(|e| MpcclError::io(&cites, e))?;
    let mut edges = Vec::new();
    for line in text.lines() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 2 {
            continue;
        }
        if let (Some(&u), Some(&v)) = (ids.get(fields[0]), ids.get(fields[1])) {
            if u != v {
                edges.push((u, v, 1.0));
            }
        }
    }
    let adjacency = symmetrize(n, edges)?;
    AttributedGraph::new(features, adjacency, Some(labels), Some(names.len()))
}

fn find_with_extension(dir: &Path, ext: &str) -> Result<PathBuf> {
    let entries = fs::read_dir(dir).map_err(|e| MpcclError::io(dir, e))?;
    let mut found: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    found.sort();
    found
        .into_iter()
        .next()
        .ok_or_else(|| MpcclError::Format(format!("no .{ext} file in {}", dir.display())))
}

/// Opens `synth:<preset>[:<seed>]`, a native dataset directory, or a
/// directory in the citation format.
pub fn open_dataset(spec: &str) -> Result<(AttributedGraph, DatasetSource)> {
    if let Some(rest) = spec.strip_prefix("synth:") {
        let mut parts = rest.splitn(2, ':');
        let preset = parts.next().unwrap_or_default();
        let seed = match parts.next() {
            Some(s) => s
                .parse::<u64>()
                .map_err(|_| MpcclError::Config(format!("bad synthetic seed {s:?}")))?,
            None => 0,
        };
        let synth = SynthSpec::preset(preset)
            .ok_or_else(|| MpcclError::Config(format!("unknown synthetic preset {preset:?}")))?;
        let graph = generate(&synth, seed)?;
        return Ok((
            graph,
            DatasetSource {
                name: synth.name,
                synthetic: true,
                location: spec.to_string(),
            },
        ));
    }
    let dir = Path::new(spec);
    let name = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| spec.to_string());
    let graph = if dir.join("meta.json").exists() {
        load_graph(dir)?
    } else if dir.is_dir() {
        load_citation_format(dir)?
    } else {
        return Err(MpcclError::io(dir, std::io::Error::from(std::io::ErrorKind::NotFound)));
    };
    Ok((
        graph,
        DatasetSource {
            name,
            synthetic: false,
            location: spec.to_string(),
        },
    ))
}

/// A benchmark by name: `$MPCCL_DATA_DIR/<name>` when present, otherwise the
/// synthetic preset of the same name.
pub fn benchmark(name: &str) -> Result<(AttributedGraph, DatasetSource)> {
    if let Ok(root) = std::env::var(DATA_DIR_ENV) {
        let dir = Path::new(&root).join(name);
        if dir.is_dir() {
            return open_dataset(&dir.to_string_lossy());
        }
    }
    open_dataset(&format!("synth:{name}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn citation_format_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("toy.content"),
            "p1\t1\t0\t1\tA\np2\t0\t1\t0\tB\np3\t1\t1\t0\tA\n",
        )
        .unwrap();
        fs::write(dir.path().join("toy.cites"), "p1\tp2\np2\tp1\np3\tp3\np3\tmissing\np3\tp1\n").unwrap();
        let g = load_citation_format(dir.path()).unwrap();
        assert_eq!(g.n_nodes(), 3);
        assert_eq!(g.n_features(), 3);
        assert_eq!(g.n_edges(), 2);
        assert_eq!(g.labels, Some(vec![0, 1, 0]));
        assert_eq!(g.n_classes, Some(2));
    }

    #[test]
    fn synthetic_specs() {
        let (g, src) = open_dataset("synth:cora:1").unwrap();
        assert!(src.synthetic);
        assert_eq!(g.n_nodes(), 2708);
        assert!(matches!(open_dataset("synth:nope"), Err(MpcclError::Config(_))));
        assert!(open_dataset("/definitely/not/here").is_err());
    }
}
