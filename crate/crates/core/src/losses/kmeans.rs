//! Lloyd's k-means with k-means++ seeding.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{MpcclError, Result};

pub const DEFAULT_MAX_ITER: usize = 100;

#[derive(Debug, Clone)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Array2<f64>,
    pub inertia: f64,
    pub iterations: usize,
}

fn check_input(data: ArrayView2<f64>, m: usize) -> Result<()> {
    if m == 0 {
        return Err(MpcclError::Config("number of clusters must be positive".into()));
    }
    if m > data.nrows() {
        return Err(MpcclError::Domain(format!(
            "{m} clusters requested for {} points",
            data.nrows()
        )));
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(MpcclError::Numerics("non-finite k-means input".into()));
    }
    Ok(())
}

/// Squared distances from every point to every centroid (N×m).
pub fn squared_distances(data: ArrayView2<f64>, centroids: ArrayView2<f64>) -> Array2<f64> {
    let xn = data.map_axis(Axis(1), |r| r.dot(&r));
    let cn = centroids.map_axis(Axis(1), |r| r.dot(&r));
    let mut d = data.dot(&centroids.t());
    for ((i, j), v) in d.indexed_iter_mut() {
        *v = (xn[i] - 2.0 * *v + cn[j]).max(0.0);
    }
    d
}

fn assign(dist: &Array2<f64>) -> (Vec<usize>, Array1<f64>) {
    let mut labels = Vec::with_capacity(dist.nrows());
    let mut best = Array1::zeros(dist.nrows());
    for (i, row) in dist.rows().into_iter().enumerate() {
        let mut arg = 0;
        for (j, &v) in row.iter().enumerate() {
            if v < row[arg] {
                arg = j;
            }
        }
        labels.push(arg);
        best[i] = row[arg];
    }
    (labels, best)
}

fn plus_plus<R: Rng>(data: ArrayView2<f64>, m: usize, rng: &mut R) -> Array2<f64> {
    let n = data.nrows();
    let mut centroids = Array2::zeros((m, data.ncols()));
    let first = rng.gen_range(0..n);
    centroids.row_mut(0).assign(&data.row(first));
    let mut closest = squared_distances(data, centroids.slice(ndarray::s![0..1, ..]))
        .column(0)
        .to_owned();
    for c in 1..m {
        let pick = match WeightedIndex::new(closest.iter()) {
            Ok(w) => w.sample(rng),
            // all remaining mass is zero: duplicate points
            Err(_) => rng.gen_range(0..n),
        };
        centroids.row_mut(c).assign(&data.row(pick));
        let d = squared_distances(data, centroids.slice(ndarray::s![c..c + 1, ..]));
        for (cl, &v) in closest.iter_mut().zip(d.column(0)) {
            *cl = cl.min(v);
        }
    }
    centroids
}

/// Lloyd iterations from the given centroids. An empty cluster takes over the
/// point currently farthest from its centroid.
fn lloyd(data: ArrayView2<f64>, mut centroids: Array2<f64>, max_iter: usize) -> KMeansResult {
    let m = centroids.nrows();
    let mut labels: Vec<usize> = Vec::new();
    let mut iterations = 0;
    loop {
        let dist = squared_distances(data, centroids.view());
        let (mut new_labels, best) = assign(&dist);
        let mut counts = vec![0usize; m];
        for &l in &new_labels {
            counts[l] += 1;
        }
        if counts.contains(&0) {
            let mut order: Vec<usize> = (0..data.nrows()).collect();
            order.sort_by(|&a, &b| best[b].total_cmp(&best[a]).then(a.cmp(&b)));
            let mut cursor = order.into_iter();
            for c in 0..m {
                if counts[c] > 0 {
                    continue;
                }
                for i in cursor.by_ref() {
                    if counts[new_labels[i]] > 1 {
                        counts[new_labels[i]] -= 1;
                        new_labels[i] = c;
                        counts[c] = 1;
                        break;
                    }
                }
            }
        }
        let converged = new_labels == labels;
        labels = new_labels;
        if converged || iterations >= max_iter {
            break;
        }
        iterations += 1;
        centroids.fill(0.0);
        for (row, &l) in data.rows().into_iter().zip(&labels) {
            centroids.row_mut(l).scaled_add(1.0, &row);
        }
        for (mut c, &k) in centroids.rows_mut().into_iter().zip(&counts) {
            c /= k as f64;
        }
    }
    let inertia = data
        .rows()
        .into_iter()
        .zip(&labels)
        .map(|(row, &l)| {
            let diff = &row - &centroids.row(l);
            diff.dot(&diff)
        })
        .sum();
    KMeansResult {
        labels,
        centroids,
        inertia,
        iterations,
    }
}

/// Best of `restarts` k-means++ runs by inertia.
pub fn kmeans_cluster(
    data: ArrayView2<f64>,
    m: usize,
    restarts: usize,
    max_iter: usize,
    seed: u64,
) -> Result<KMeansResult> {
    check_input(data, m)?;
    if restarts == 0 {
        return Err(MpcclError::Config("k-means needs at least one restart".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts {
        let init = plus_plus(data, m, &mut rng);
        let run = lloyd(data, init, max_iter);
        if best.as_ref().map_or(true, |b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Lloyd iterations started from `init`.
pub fn kmeans_warm(data: ArrayView2<f64>, init: ArrayView2<f64>, max_iter: usize) -> Result<KMeansResult> {
    check_input(data, init.nrows())?;
    if init.ncols() != data.ncols() {
        return Err(MpcclError::Contract(format!(
            "centroids have {} columns, data {}",
            init.ncols(),
            data.ncols()
        )));
    }
    Ok(lloyd(data, init.to_owned(), max_iter))
}
