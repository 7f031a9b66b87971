//! Graph operators shared by the PoolGAT layers, usable on their own.

use crate::numerics::{NumericsError, Result, Tape, Tensor, Var};

/// `D^-1/2 (A + I) D^-1/2 X Θ`; `a` is `[.., n, n]`, `x` is `[.., n, d]`.
pub fn gcn_propagate(tape: &mut Tape, x: Var, a: Var, theta: Var) -> Result<Var> {
    let p = tape.gcn_normalize(a)?;
    let px = tape.matmul(p, x)?;
    tape.matmul(px, theta)
}

/// Coarsened features and adjacency `(Sᵀ Z, Sᵀ A S)`.
pub fn coarsen(tape: &mut Tape, s: Var, z: Var, a: Var) -> Result<(Var, Var)> {
    let st = tape.transpose(s)?;
    let x_hat = tape.matmul(st, z)?;
    let sta = tape.matmul(st, a)?;
    let a_hat = tape.matmul(sta, s)?;
    Ok((x_hat, a_hat))
}

/// Single-head graph attention over `h = x W` (`[.., n, d]`).
///
/// Scores are `LeakyReLU(β_src·h_i + β_dst·h_j)`, normalised over the
/// neighbourhood `{j : a_ij > 0} ∪ {i}`; the output row `i` is `Σ_j α_ij h_j`.
/// Returns `(output, α)`.
pub fn attention(tape: &mut Tape, h: Var, a: Var, beta_src: Var, beta_dst: Var, slope: f64) -> Result<(Var, Var)> {
    let a_shape = tape.shape(a).to_vec();
    let r = a_shape.len();
    if r < 2 || a_shape[r - 1] != a_shape[r - 2] {
        return Err(NumericsError::shape("attention", format!("adjacency {a_shape:?} is not square")));
    }
    let n = a_shape[r - 1];
    let mask: Vec<bool> =
        tape.value(a).data().iter().enumerate().map(|(k, &v)| v > 0.0 || (k % (n * n)) / n == k % n).collect();
    let src = tape.matmul(h, beta_src)?;
    let dst = tape.matmul(h, beta_dst)?;
    let dst = tape.transpose(dst)?;
    let e = tape.add(src, dst)?;
    let e = tape.leaky_relu(e, slope)?;
    let alpha = tape.masked_softmax(e, &mask)?;
    let out = tape.matmul(alpha, h)?;
    Ok((out, alpha))
}

/// Hard assignment of `n` nodes to `n / factor` consecutive blocks, each
/// column averaging its block.
pub fn block_mean_assignment(n: usize, factor: usize) -> Tensor {
    let m = n / factor;
    let mut t = Tensor::zeros(&[n, m]);
    for i in 0..n {
        t.set(&[i, i / factor], 1.0 / factor as f64);
    }
    t
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}
