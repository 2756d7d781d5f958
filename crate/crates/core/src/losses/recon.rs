//! Adjacency reconstruction loss `‖A − σ(H Hᵀ)‖_F²`.

use ndarray::{Array2, ArrayView2};

use crate::error::{MpcclError, Result};
use crate::sparse::CsrMatrix;

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check(h: ArrayView2<f64>, a: &CsrMatrix) -> Result<()> {
    if a.n_rows() != h.nrows() || a.n_cols() != h.nrows() {
        return Err(MpcclError::Contract(format!(
            "adjacency is {}x{}, embeddings have {} rows",
            a.n_rows(),
            a.n_cols(),
            h.nrows()
        )));
    }
    Ok(())
}

/// `Â − A` where `Â = σ(H Hᵀ)`; returns the residual and `Â`.
fn residual(h: ArrayView2<f64>, a: &CsrMatrix) -> (Array2<f64>, Array2<f64>) {
    let a_hat = h.dot(&h.t()).mapv(sigmoid);
    let mut r = a_hat.clone();
    for (i, j, w) in a.iter() {
        r[[i, j]] -= w;
    }
    (r, a_hat)
}

/// Squared Frobenius reconstruction error, diagonal included.
pub fn reconstruction_loss(h: ArrayView2<f64>, a: &CsrMatrix) -> Result<f64> {
    check(h, a)?;
    let (r, _) = residual(h, a);
    Ok(r.iter().map(|v| v * v).sum())
}

/// Loss and `∂L/∂H = 2 G H` with `G = 2 (Â − A) ⊙ Â ⊙ (1 − Â)`.
pub fn reconstruction_grad(h: ArrayView2<f64>, a: &CsrMatrix) -> Result<(f64, Array2<f64>)> {
    check(h, a)?;
    let (mut r, a_hat) = residual(h, a);
    let loss: f64 = r.iter().map(|v| v * v).sum();
    if !loss.is_finite() {
        return Err(MpcclError::Numerics("reconstruction loss is not finite".into()));
    }
    ndarray::Zip::from(&mut r)
        .and(&a_hat)
        .for_each(|g, &s| *g = 2.0 * *g * s * (1.0 - s));
    let dh = r.dot(&h) * 2.0;
    Ok((loss, dh))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graphdata::symmetrize;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_embedding_costs_a_quarter_per_entry() {
        let n = 4;
        let h = Array2::zeros((n, 3));
        let a = CsrMatrix::zeros(n, n);
        assert!((reconstruction_loss(h.view(), &a).unwrap() - 0.25 * 16.0).abs() < 1e-15);
        let full = symmetrize(n, [(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0), (1, 2, 1.0), (1, 3, 1.0), (2, 3, 1.0)])
            .unwrap();
        assert!((reconstruction_loss(h.view(), &full).unwrap() - 4.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let h = Array2::from_shape_simple_fn((6, 3), || rng.gen_range(-1.0..1.0));
        let a = symmetrize(6, [(0, 1, 1.0), (1, 2, 1.0), (3, 4, 1.0), (2, 5, 1.0)]).unwrap();
        let (_, g) = reconstruction_grad(h.view(), &a).unwrap();
        let step = 1e-6;
        for idx in [(0, 0), (2, 1), (5, 2)] {
            let (mut p, mut m) = (h.clone(), h.clone());
            p[idx] += step;
            m[idx] -= step;
            let fd = (reconstruction_loss(p.view(), &a).unwrap() - reconstruction_loss(m.view(), &a).unwrap())
                / (2.0 * step);
            assert!((fd - g[idx]).abs() < 1e-7);
        }
    }
}
