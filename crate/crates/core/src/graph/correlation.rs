use super::{check_features, Adjacency, GraphError, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Banded correlation adjacency of `x: [N, F]` or `[B, N, F]` recorded on
/// `tape`; returns `[N, N]` or `[B, N, N]`.
///
/// For each offset `d`, rows `0..N-d` and `d..N` are multiplied element-wise,
/// max-pooled over the whole feature axis (ties to the lowest feature index),
/// rectified, and embedded on diagonals `±d`.
pub fn correlation_adjacency_var(tape: &mut Tape, x: Var, tau: usize) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let (batch, n, f) = match *shape.as_slice() {
        [n, f] => (None, n, f),
        [b, n, f] => (Some(b), n, f),
        _ => return Err(GraphError::BadFeatures(shape)),
    };
    if tau == 0 || tau >= n {
        return Err(GraphError::TauOutOfRange { tau, n });
    }
    let node_axis = shape.len() - 2;
    let out_shape: Vec<usize> = batch.into_iter().chain([n, n]).collect();
    let mut acc = tape.constant(Tensor::zeros(&out_shape));
    for d in 1..=tau {
        let head = tape.slice(x, node_axis, 0, n - d)?;
        let tail = tape.slice(x, node_axis, d, n - d)?;
        let prod = tape.mul(head, tail)?;
        let pooled = tape.maxpool1d(prod, f, f)?;
        let vec_shape: Vec<usize> = batch.into_iter().chain([n - d]).collect();
        let pooled = tape.reshape(pooled, &vec_shape)?;
        let w = tape.relu(pooled)?;
        let up = tape.diag_embed(w, d as isize)?;
        let down = tape.diag_embed(w, -(d as isize))?;
        let both = tape.add(up, down)?;
        acc = tape.add(acc, both)?;
    }
    Ok(acc)
}

/// Correlation adjacency of a single `[N, F]` feature matrix.
pub fn adjacency_correlation(x: &Tensor, tau: usize) -> Result<Adjacency> {
    let (n, _) = check_features(x.shape())?;
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let a = correlation_adjacency_var(&mut tape, v, tau)?;
    Ok(Adjacency::from_dense(n, tau, tape.value(a).data().to_vec()))
}
