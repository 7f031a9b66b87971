use super::tape::{Op, Tape, Var};
use super::tensor::Tensor;
use super::{NumericsError, Result};

/// `out[m,n] += op(a)[m,k] · op(b)[k,n]`.
///
/// With `ta` set, `a` is stored as `[k, m]`; with `tb` set, `b` is stored as
/// `[n, k]`. Zero entries of `a` are skipped, which makes banded operands cheap.
pub(crate) fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize, ta: bool, tb: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    match (ta, tb) {
        (false, false) => {
            for i in 0..m {
                let row = &mut out[i * n..(i + 1) * n];
                for (kk, &aik) in a[i * k..(i + 1) * k].iter().enumerate() {
                    if aik != 0.0 {
                        axpy(aik, &b[kk * n..(kk + 1) * n], row);
                    }
                }
            }
        }
        (true, false) => {
            for kk in 0..k {
                let brow = &b[kk * n..(kk + 1) * n];
                for i in 0..m {
                    let aki = a[kk * m + i];
                    if aki != 0.0 {
                        axpy(aki, brow, &mut out[i * n..(i + 1) * n]);
                    }
                }
            }
        }
        (false, true) => {
            for i in 0..m {
                let arow = &a[i * k..(i + 1) * k];
                for j in 0..n {
                    out[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
                }
            }
        }
        (true, true) => {
            for i in 0..m {
                for j in 0..n {
                    let mut s = 0.0;
                    for kk in 0..k {
                        s += a[kk * m + i] * b[j * k + kk];
                    }
                    out[i * n + j] += s;
                }
            }
        }
    }
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct MatMulDims {
    batch: usize,
    a_batched: bool,
    b_batched: bool,
    m: usize,
    k: usize,
    n: usize,
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<MatMulDims> {
    let bad = || NumericsError::shape("matmul", format!("{a:?} x {b:?}"));
    if !(2..=3).contains(&a.len()) || !(2..=3).contains(&b.len()) {
        return Err(bad());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(bad());
    }
    let a_batched = a.len() == 3;
    let b_batched = b.len() == 3;
    let batch = match (a_batched, b_batched) {
        (true, true) if a[0] != b[0] => return Err(bad()),
        (true, _) => a[0],
        (false, true) => b[0],
        (false, false) => 1,
    };
    Ok(MatMulDims { batch, a_batched, b_batched, m, k, n })
}

impl Tape {
    /// Matrix product over the last two axes. A rank-2 operand is shared
    /// across the batch of a rank-3 operand.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let d = matmul_dims(self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let (sa, sb, so) = (d.m * d.k, d.k * d.n, d.m * d.n);
        let mut out = vec![0.0; d.batch * so];
        for bi in 0..d.batch {
            let ab = if d.a_batched { &av[bi * sa..(bi + 1) * sa] } else { av };
            let bb = if d.b_batched { &bv[bi * sb..(bi + 1) * sb] } else { bv };
            gemm(ab, bb, &mut out[bi * so..(bi + 1) * so], d.m, d.k, d.n, false, false);
        }
        let shape = if d.a_batched || d.b_batched { vec![d.batch, d.m, d.n] } else { vec![d.m, d.n] };
        Ok(self.push(Tensor::new(shape, out)?, Op::MatMul { a, b }))
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(NumericsError::shape("transpose", format!("rank {} < 2", shape.len())));
        }
        let data = transpose_data(self.value(x).data(), &shape);
        let mut out_shape = shape;
        let r = out_shape.len();
        out_shape.swap(r - 2, r - 1);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::Transpose { x }))
    }

    /// Symmetric GCN propagation operator `D^-1/2 (A + I) D^-1/2` for each
    /// square matrix in the last two axes, with `D_ii = sum_j (A + I)_ij`.
    pub fn gcn_normalize(&mut self, a: Var) -> Result<Var> {
        self.check(a)?;
        let shape = self.shape(a).to_vec();
        let r = shape.len();
        if r < 2 || shape[r - 1] != shape[r - 2] {
            return Err(NumericsError::shape("gcn_normalize", format!("{shape:?} is not square")));
        }
        let n = shape[r - 1];
        let av = self.value(a).data();
        let mats = av.len() / (n * n);
        let mut inv_sqrt_deg = Vec::with_capacity(mats * n);
        let mut out = vec![0.0; av.len()];
        for m in 0..mats {
            let base = m * n * n;
            let start = inv_sqrt_deg.len();
            for i in 0..n {
                let deg: f64 = 1.0 + av[base + i * n..base + (i + 1) * n].iter().sum::<f64>();
                if deg <= 0.0 || !deg.is_finite() {
                    return Err(NumericsError::arg("gcn_normalize", format!("degree {deg} at node {i}")));
                }
                inv_sqrt_deg.push(deg.powf(-0.5));
            }
            let s = &inv_sqrt_deg[start..];
            for i in 0..n {
                for j in 0..n {
                    let mij = av[base + i * n + j] + if i == j { 1.0 } else { 0.0 };
                    out[base + i * n + j] = s[i] * mij * s[j];
                }
            }
        }
        Ok(self.push(Tensor::new(shape, out)?, Op::GcnNormalize { a, inv_sqrt_deg }))
    }
}

pub(crate) fn transpose_data(data: &[f64], shape: &[usize]) -> Vec<f64> {
    let r = shape.len();
    let (rows, cols) = (shape[r - 2], shape[r - 1]);
    let mats = data.len() / (rows * cols);
    let mut out = vec![0.0; data.len()];
    for m in 0..mats {
        let base = m * rows * cols;
        for i in 0..rows {
            for j in 0..cols {
                out[base + j * rows + i] = data[base + i * cols + j];
            }
        }
    }
    out
}

pub(crate) fn matmul_backward(tape: &Tape, a: Var, b: Var, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let d = matmul_dims(tape.shape(a), tape.shape(b)).expect("shapes validated in forward");
    let (av, bv) = (tape.value(a).data(), tape.value(b).data());
    let (sa, sb, so) = (d.m * d.k, d.k * d.n, d.m * d.n);
    let mut out = Vec::with_capacity(2);
    if tape.requires_grad(a) {
        let mut da = vec![0.0; av.len()];
        for bi in 0..d.batch {
            let bb = if d.b_batched { &bv[bi * sb..(bi + 1) * sb] } else { bv };
            let dst = if d.a_batched { &mut da[bi * sa..(bi + 1) * sa] } else { &mut da[..] };
            gemm(&g[bi * so..(bi + 1) * so], bb, dst, d.m, d.n, d.k, false, true);
        }
        out.push((a, da));
    }
    if tape.requires_grad(b) {
        let mut db = vec![0.0; bv.len()];
        for bi in 0..d.batch {
            let ab = if d.a_batched { &av[bi * sa..(bi + 1) * sa] } else { av };
            let dst = if d.b_batched { &mut db[bi * sb..(bi + 1) * sb] } else { &mut db[..] };
            gemm(ab, &g[bi * so..(bi + 1) * so], dst, d.k, d.m, d.n, true, false);
        }
        out.push((b, db));
    }
    out
}

pub(crate) fn gcn_normalize_backward(a: &Tensor, inv_sqrt_deg: &[f64], g: &[f64]) -> Vec<f64> {
    let n = a.shape()[a.rank() - 1];
    let av = a.data();
    let mats = av.len() / (n * n);
    let mut da = vec![0.0; av.len()];
    for m in 0..mats {
        let base = m * n * n;
        let s = &inv_sqrt_deg[m * n..(m + 1) * n];
        // dL/ds_i collects both the row and the column role of node i.
        let mut ds = vec![0.0; n];
        for i in 0..n {
            for j in 0..n {
                let mij = av[base + i * n + j] + if i == j { 1.0 } else { 0.0 };
                let gij = g[base + i * n + j];
                ds[i] += gij * mij * s[j];
                ds[j] += gij * mij * s[i];
            }
        }
        for i in 0..n {
            // s = deg^-1/2, deg_i = sum_j M_ij
            let ddeg = ds[i] * -0.5 * s[i].powi(3);
            for j in 0..n {
                da[base + i * n + j] = g[base + i * n + j] * s[i] * s[j] + ddeg;
            }
        }
    }
    da
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn identity_matmul_is_identity() {
        let mut tape = Tape::new();
        let i3 = tape.constant(Tensor::eye(3));
        let x = tape.constant(t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = tape.matmul(i3, x).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
    }

    #[test]
    fn gemm_transpose_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.5, -1.0, 2.0, 0.0, 3.0]; // 3x2
        let mut plain = vec![0.0; 4];
        gemm(&a, &b, &mut plain, 2, 3, 2, false, false);
        let at = transpose_data(&a, &[2, 3]);
        let bt = transpose_data(&b, &[3, 2]);
        for (ta, tb) in [(true, false), (false, true), (true, true)] {
            let mut out = vec![0.0; 4];
            let aa = if ta { &at[..] } else { &a[..] };
            let bb = if tb { &bt[..] } else { &b[..] };
            gemm(aa, bb, &mut out, 2, 3, 2, ta, tb);
            assert_eq!(out, plain);
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_kernel() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert!(err.to_string().contains("matmul"));
    }

    #[test]
    fn gcn_normalize_two_node_example() {
        let mut tape = Tape::new();
        let a = tape.constant(t(&[2, 2], &[0.0, 1.0, 1.0, 0.0]));
        let p = tape.gcn_normalize(a).unwrap();
        for v in tape.value(p).data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn gcn_normalize_zero_graph_is_identity() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[1, 3, 3]));
        let p = tape.gcn_normalize(a).unwrap();
        assert_eq!(tape.value(p).data(), Tensor::eye(3).data());
    }
}
