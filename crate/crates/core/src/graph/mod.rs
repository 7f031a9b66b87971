//! Adjacency construction over node features.
//!
//! The learned-graph path builds a banded matrix from products of node pairs
//! `d` apart (`d = 1..=τ`): each pair's element-wise product is reduced by a
//! global max over features and rectified, and the resulting vector is
//! written to diagonals `+d` and `-d`. It is built from tape kernels so
//! gradients reach the node features. The distance and KNN baselines are
//! plain functions of detached features.

mod baselines;
mod correlation;
mod export;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

pub use baselines::{adjacency_distance, adjacency_knn};
pub use correlation::{adjacency_correlation, correlation_adjacency_var};
pub use export::{edge_list, export_graph, read_edges, write_edges, write_nodes};

use crate::numerics::NumericsError;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("tau = {tau} outside 1..{n} for a {n}-node graph")]
    TauOutOfRange { tau: usize, n: usize },
    #[error("k = {k} outside 1..{n} for a {n}-node graph")]
    KOutOfRange { k: usize, n: usize },
    #[error("node features must be [N, F], got {0:?}")]
    BadFeatures(Vec<usize>),
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, GraphError>;

/// Dense `n x n` weighted adjacency. `band` is the largest `|i - j|` that may
/// carry a nonzero weight.
#[derive(Clone, Debug, PartialEq)]
pub struct Adjacency {
    pub n: usize,
    pub band: usize,
    pub a: Vec<f64>,
}

impl Adjacency {
    pub fn zeros(n: usize, band: usize) -> Self {
        Self { n, band, a: vec![0.0; n * n] }
    }

    pub fn from_dense(n: usize, band: usize, a: Vec<f64>) -> Self {
        assert_eq!(a.len(), n * n, "dense adjacency needs n*n entries");
        Self { n, band, a }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.n + j] = v;
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    /// Symmetric, nonnegative, zero diagonal and nothing outside the band.
    pub fn check_invariants(&self) -> bool {
        self.is_symmetric(0.0)
            && (0..self.n).all(|i| {
                self.get(i, i) == 0.0
                    && (0..self.n)
                        .all(|j| self.get(i, j) >= 0.0 && (i.abs_diff(j) <= self.band || self.get(i, j) == 0.0))
            })
    }

    pub fn nonzero_count(&self) -> usize {
        self.a.iter().filter(|&&v| v != 0.0).count()
    }
}

/// How the model derives its adjacency from node features.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AdjacencyMethod {
    #[default]
    Correlation,
    Distance,
    Knn,
}

impl AdjacencyMethod {
    pub const ALL: [AdjacencyMethod; 3] = [Self::Correlation, Self::Distance, Self::Knn];

    pub fn name(self) -> &'static str {
        match self {
            Self::Correlation => "correlation",
            Self::Distance => "distance",
            Self::Knn => "knn",
        }
    }
}

impl fmt::Display for AdjacencyMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AdjacencyMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| format!("unknown adjacency method `{s}`"))
    }
}

pub(crate) fn check_features(shape: &[usize]) -> Result<(usize, usize)> {
    match *shape {
        [n, f] => Ok((n, f)),
        _ => Err(GraphError::BadFeatures(shape.to_vec())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invariants_catch_out_of_band_entries() {
        let mut a = Adjacency::zeros(4, 1);
        a.set(0, 1, 2.0);
        a.set(1, 0, 2.0);
        assert!(a.check_invariants());
        a.set(0, 2, 1.0);
        a.set(2, 0, 1.0);
        assert!(!a.check_invariants());
    }

    #[test]
    fn method_names_parse() {
        for m in AdjacencyMethod::ALL {
            assert_eq!(m.name().parse::<AdjacencyMethod>().unwrap(), m);
        }
    }
}
