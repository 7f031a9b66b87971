use super::tape::{Op, Tape, Var};
use super::tensor::Tensor;
use super::{NumericsError, Result};

/// Position of the `k`-th element of diagonal `offset` in an `n x n` matrix.
fn diag_pos(k: usize, offset: isize, n: usize) -> usize {
    let d = offset.unsigned_abs();
    if offset >= 0 {
        k * n + k + d
    } else {
        (k + d) * n + k
    }
}

impl Tape {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check(x)?;
        let n: usize = shape.iter().product();
        if n != self.value(x).len() {
            return Err(NumericsError::shape("reshape", format!("{:?} -> {shape:?}", self.shape(x))));
        }
        let t = self.value(x).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape { x }))
    }

    /// Concatenation along `axis`; all other axes must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(NumericsError::arg("concat", "no inputs"));
        };
        for &v in inputs {
            self.check(v)?;
        }
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(NumericsError::shape("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let same_rest =
                s.len() == base.len() && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same_rest {
                return Err(NumericsError::shape("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let chunk = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        Ok(self.push(Tensor::new(shape, out)?, Op::Concat { inputs: inputs.to_vec(), axis }))
    }

    /// Contiguous range `start..start + len` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(NumericsError::shape("slice", format!("{start}..{} on axis {axis} of {shape:?}", start + len)));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&data[(o * n + start) * inner..(o * n + start + len) * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        Ok(self.push(Tensor::new(out_shape, out)?, Op::Slice { x, axis, start }))
    }

    /// Places the last axis of `x: [..., m]` on diagonal `offset` of a zero
    /// `[..., n, n]` matrix with `n = m + |offset|`. Positive offsets are
    /// above the main diagonal.
    pub fn diag_embed(&mut self, x: Var, offset: isize) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        let Some(&m) = shape.last() else {
            return Err(NumericsError::shape("diag_embed", "scalar input"));
        };
        let n = m + offset.unsigned_abs();
        let mut out_shape = shape[..shape.len() - 1].to_vec();
        out_shape.extend([n, n]);
        let data = diag_embed_data(&shape, offset, self.value(x).data());
        Ok(self.push(Tensor::new(out_shape, data)?, Op::DiagEmbed { x, offset }))
    }

    /// Reads diagonal `offset` of each `[n, n]` matrix in the last two axes.
    pub fn diag_extract(&mut self, x: Var, offset: isize) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        let r = shape.len();
        let d = offset.unsigned_abs();
        if r < 2 || shape[r - 1] != shape[r - 2] || d >= shape[r - 1] {
            return Err(NumericsError::shape("diag_extract", format!("offset {offset} of {shape:?}")));
        }
        let data = diag_extract_data(&shape, offset, self.value(x).data());
        let mut out_shape = shape[..r - 2].to_vec();
        out_shape.push(shape[r - 1] - d);
        Ok(self.push(Tensor::new(out_shape, data)?, Op::DiagExtract { x, offset }))
    }
}

/// Embeds the vectors of `vec_shape` (`[..., m]`) on diagonal `offset`.
pub(crate) fn diag_embed_data(vec_shape: &[usize], offset: isize, v: &[f64]) -> Vec<f64> {
    let m = *vec_shape.last().expect("rank >= 1");
    let n = m + offset.unsigned_abs();
    let mats = v.len() / m;
    let mut out = vec![0.0; mats * n * n];
    for b in 0..mats {
        for k in 0..m {
            out[b * n * n + diag_pos(k, offset, n)] = v[b * m + k];
        }
    }
    out
}

/// Reads diagonal `offset` from matrices of `mat_shape` (`[..., n, n]`).
pub(crate) fn diag_extract_data(mat_shape: &[usize], offset: isize, a: &[f64]) -> Vec<f64> {
    let n = mat_shape[mat_shape.len() - 1];
    let m = n - offset.unsigned_abs();
    let mats = a.len() / (n * n);
    let mut out = Vec::with_capacity(mats * m);
    for b in 0..mats {
        for k in 0..m {
            out.push(a[b * n * n + diag_pos(k, offset, n)]);
        }
    }
    out
}

pub(crate) fn concat_backward(
    tape: &Tape,
    inputs: &[Var],
    axis: usize,
    y_shape: &[usize],
    g: &[f64],
) -> Vec<(Var, Vec<f64>)> {
    let outer: usize = y_shape[..axis].iter().product();
    let inner: usize = y_shape[axis + 1..].iter().product();
    let total = y_shape[axis] * inner;
    let mut out = Vec::with_capacity(inputs.len());
    let mut offset = 0;
    for &v in inputs {
        let chunk = tape.shape(v)[axis] * inner;
        if tape.requires_grad(v) {
            let mut d = Vec::with_capacity(outer * chunk);
            for o in 0..outer {
                d.extend_from_slice(&g[o * total + offset..o * total + offset + chunk]);
            }
            out.push((v, d));
        }
        offset += chunk;
    }
    out
}

pub(crate) fn slice_backward(x_shape: &[usize], axis: usize, start: usize, y_shape: &[usize], g: &[f64]) -> Vec<f64> {
    let outer: usize = x_shape[..axis].iter().product();
    let inner: usize = x_shape[axis + 1..].iter().product();
    let (n, len) = (x_shape[axis], y_shape[axis]);
    let mut dx = vec![0.0; outer * n * inner];
    for o in 0..outer {
        dx[(o * n + start) * inner..(o * n + start + len) * inner]
            .copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
    }
    dx
}
