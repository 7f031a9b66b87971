use super::{check_features, Adjacency, GraphError, Result};
use crate::numerics::Tensor;

fn sq_dist(x: &[f64], f: usize, i: usize, j: usize) -> f64 {
    x[i * f..(i + 1) * f].iter().zip(&x[j * f..(j + 1) * f]).map(|(a, b)| (a - b).powi(2)).sum()
}

/// Gaussian-kernel weights `exp(-|x_i - x_j|^2 / σ^2)` on the `±1..=τ` band,
/// with `σ^2` the median squared distance over band pairs.
pub fn adjacency_distance(x: &Tensor, tau: usize) -> Result<Adjacency> {
    let (n, f) = check_features(x.shape())?;
    if tau == 0 || tau >= n {
        return Err(GraphError::TauOutOfRange { tau, n });
    }
    let xd = x.data();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..(i + tau + 1).min(n) {
            pairs.push((i, j, sq_dist(xd, f, i, j)));
        }
    }
    let mut d2: Vec<f64> = pairs.iter().map(|p| p.2).collect();
    d2.sort_by(f64::total_cmp);
    let m = d2.len();
    let sigma2 = if m % 2 == 1 { d2[m / 2] } else { 0.5 * (d2[m / 2 - 1] + d2[m / 2]) };
    let mut a = Adjacency::zeros(n, tau);
    for (i, j, d) in pairs {
        let w = if sigma2 > 0.0 {
            (-d / sigma2).exp()
        } else if d == 0.0 {
            1.0
        } else {
            0.0
        };
        a.set(i, j, w);
        a.set(j, i, w);
    }
    Ok(a)
}

/// Unit-weight graph linking each node to its `k` nearest neighbours
/// (Euclidean, ties to the lower index), symmetrised by max.
pub fn adjacency_knn(x: &Tensor, k: usize) -> Result<Adjacency> {
    let (n, f) = check_features(x.shape())?;
    if k == 0 || k >= n {
        return Err(GraphError::KOutOfRange { k, n });
    }
    let xd = x.data();
    let mut a = Adjacency::zeros(n, n - 1);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
    for i in 0..n {
        cand.clear();
        cand.extend((0..n).filter(|&j| j != i).map(|j| (sq_dist(xd, f, i, j), j)));
        cand.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
        for &(_, j) in &cand[..k] {
            a.set(i, j, 1.0);
            a.set(j, i, 1.0);
        }
    }
    Ok(a)
}
