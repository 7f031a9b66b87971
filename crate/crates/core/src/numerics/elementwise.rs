use super::tape::{Op, Tape, Var};
use super::tensor::{strides, Tensor};
use super::{NumericsError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum UnaryKind {
    Relu,
    LeakyRelu(f64),
    Gelu,
    Tanh,
    Sigmoid,
    Exp,
    Ln,
}

const SQRT_2: f64 = std::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl UnaryKind {
    fn apply(self, x: f64) -> f64 {
        match self {
            Self::Relu => x.max(0.0),
            Self::LeakyRelu(s) => {
                if x > 0.0 {
                    x
                } else {
                    s * x
                }
            }
            Self::Gelu => 0.5 * x * (1.0 + libm::erf(x / SQRT_2)),
            Self::Tanh => x.tanh(),
            Self::Sigmoid => sigmoid(x),
            Self::Exp => x.exp(),
            Self::Ln => x.ln(),
        }
    }

    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Self::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::LeakyRelu(s) => {
                if x > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Self::Gelu => 0.5 * (1.0 + libm::erf(x / SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp(),
            Self::Tanh => 1.0 - y * y,
            Self::Sigmoid => y * (1.0 - y),
            Self::Exp => y,
            Self::Ln => 1.0 / x,
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Broadcast layout of a binary op: operands are left-padded to the output
/// rank, and broadcast axes get stride 0.
struct Broadcast {
    out_shape: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
}

fn broadcast(op: &'static str, a: &[usize], b: &[usize]) -> Result<Broadcast> {
    let rank = a.len().max(b.len());
    let pad = |s: &[usize]| -> Vec<usize> {
        let mut v = vec![1; rank - s.len()];
        v.extend_from_slice(s);
        v
    };
    let (pa, pb) = (pad(a), pad(b));
    let mut out_shape = Vec::with_capacity(rank);
    for (&x, &y) in pa.iter().zip(&pb) {
        if x != y && x != 1 && y != 1 {
            return Err(NumericsError::shape(op, format!("cannot broadcast {a:?} with {b:?}")));
        }
        out_shape.push(x.max(y));
    }
    let masked = |padded: &[usize]| -> Vec<usize> {
        strides(padded).into_iter().zip(padded).map(|(s, &d)| if d == 1 { 0 } else { s }).collect()
    };
    Ok(Broadcast { a_strides: masked(&pa), b_strides: masked(&pb), out_shape })
}

/// Visits every output position with the matching operand offsets.
fn for_each_broadcast(bc: &Broadcast, mut f: impl FnMut(usize, usize, usize)) {
    let rank = bc.out_shape.len();
    let total: usize = bc.out_shape.iter().product();
    let mut idx = vec![0usize; rank];
    let (mut ia, mut ib) = (0usize, 0usize);
    for o in 0..total {
        f(o, ia, ib);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            ia += bc.a_strides[ax];
            ib += bc.b_strides[ax];
            if idx[ax] < bc.out_shape[ax] {
                break;
            }
            ia -= bc.a_strides[ax] * idx[ax];
            ib -= bc.b_strides[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
}

impl Tape {
    fn binary(&mut self, kind: BinaryKind, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let name = match kind {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
        };
        let (av, bv) = (self.value(a), self.value(b));
        let f = |x: f64, y: f64| match kind {
            BinaryKind::Add => x + y,
            BinaryKind::Sub => x - y,
            BinaryKind::Mul => x * y,
            BinaryKind::Div => x / y,
        };
        let (shape, data) = if av.shape() == bv.shape() {
            (av.shape().to_vec(), av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect())
        } else {
            let bc = broadcast(name, av.shape(), bv.shape())?;
            let mut out = vec![0.0; bc.out_shape.iter().product()];
            let (ad, bd) = (av.data(), bv.data());
            for_each_broadcast(&bc, |o, ia, ib| out[o] = f(ad[ia], bd[ib]));
            (bc.out_shape, out)
        };
        Ok(self.push(Tensor::new(shape, data)?, Op::Binary { kind, a, b }))
    }

    /// Element-wise sum with broadcasting over size-1 axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(BinaryKind::Div, a, b)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x).map(|e| e * factor);
        Ok(self.push(v, Op::Scale { x, factor }))
    }

    pub fn unary(&mut self, kind: UnaryKind, x: Var) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x).map(|e| kind.apply(e));
        Ok(self.push(v, Op::Unary { kind, x }))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Relu, x)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary(UnaryKind::LeakyRelu(slope), x)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Gelu, x)
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        self.unary(UnaryKind::Ln, x)
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.softmax_impl(x, None)
    }

    /// Softmax over the last axis restricted to positions where `mask` is
    /// true; excluded positions get probability zero. Every row needs at
    /// least one admitted position.
    pub fn masked_softmax(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        self.softmax_impl(x, Some(mask))
    }

    fn softmax_impl(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        let shape = xv.shape().to_vec();
        let Some(&cols) = shape.last() else {
            return Err(NumericsError::shape("softmax", "scalar input"));
        };
        if let Some(m) = mask {
            if m.len() != xv.len() {
                return Err(NumericsError::shape("softmax", format!("mask length {} vs {}", m.len(), xv.len())));
            }
        }
        let data = xv.data();
        let mut out = vec![0.0; data.len()];
        for (r, row) in data.chunks(cols).enumerate() {
            let admitted = |j: usize| mask.is_none_or(|m| m[r * cols + j]);
            let max = (0..cols).filter(|&j| admitted(j)).map(|j| row[j]).fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(NumericsError::arg("softmax", format!("row {r} has no admitted entries")));
            }
            let dst = &mut out[r * cols..(r + 1) * cols];
            let mut total = 0.0;
            for j in 0..cols {
                if admitted(j) {
                    dst[j] = (row[j] - max).exp();
                    total += dst[j];
                }
            }
            dst.iter_mut().for_each(|v| *v /= total);
        }
        Ok(self.push(Tensor::new(shape, out)?, Op::Softmax { x }))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.value(x).data().iter().sum();
        Ok(self.push(Tensor::scalar(s), Op::SumAll { x }))
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        Ok(self.push(Tensor::scalar(s), Op::MeanAll { x }))
    }

    /// Sum over one axis, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (shape, data) = self.reduce_axis("sum_axis", x, axis, 1.0)?;
        Ok(self.push(Tensor::new(shape, data)?, Op::SumAxis { x, axis }))
    }

    /// Mean over one axis, removing it.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check(x)?;
        let n = *self
            .shape(x)
            .get(axis)
            .ok_or_else(|| NumericsError::shape("mean_axis", format!("axis {axis} out of range")))?;
        let (shape, data) = self.reduce_axis("mean_axis", x, axis, 1.0 / n as f64)?;
        Ok(self.push(Tensor::new(shape, data)?, Op::MeanAxis { x, axis }))
    }

    fn reduce_axis(&self, op: &'static str, x: Var, axis: usize, scale: f64) -> Result<(Vec<usize>, Vec<f64>)> {
        self.check(x)?;
        let shape = self.shape(x);
        if axis >= shape.len() {
            return Err(NumericsError::shape(op, format!("axis {axis} out of range for {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let n = shape[axis];
        let data = self.value(x).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &data[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        out.iter_mut().for_each(|v| *v *= scale);
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        Ok((out_shape, out))
    }
}

pub(crate) fn binary_backward(
    tape: &Tape,
    kind: BinaryKind,
    a: Var,
    b: Var,
    y: &Tensor,
    g: &[f64],
) -> Vec<(Var, Vec<f64>)> {
    let (av, bv) = (tape.value(a), tape.value(b));
    let (ad, bd) = (av.data(), bv.data());
    let mut da = tape.requires_grad(a).then(|| vec![0.0; ad.len()]);
    let mut db = tape.requires_grad(b).then(|| vec![0.0; bd.len()]);
    let mut step = |o: usize, ia: usize, ib: usize| {
        let gv = g[o];
        let (x, z) = (ad[ia], bd[ib]);
        let (ga, gb) = match kind {
            BinaryKind::Add => (gv, gv),
            BinaryKind::Sub => (gv, -gv),
            BinaryKind::Mul => (gv * z, gv * x),
            BinaryKind::Div => (gv / z, -gv * x / (z * z)),
        };
        if let Some(d) = da.as_mut() {
            d[ia] += ga;
        }
        if let Some(d) = db.as_mut() {
            d[ib] += gb;
        }
    };
    if av.shape() == bv.shape() {
        (0..y.len()).for_each(|o| step(o, o, o));
    } else {
        let bc = broadcast("binary", av.shape(), bv.shape()).expect("validated in forward");
        for_each_broadcast(&bc, step);
    }
    let mut out = Vec::with_capacity(2);
    if let Some(d) = da {
        out.push((a, d));
    }
    if let Some(d) = db {
        out.push((b, d));
    }
    out
}

pub(crate) fn unary_backward(kind: UnaryKind, x: &Tensor, y: &Tensor, g: &[f64]) -> Vec<f64> {
    x.data().iter().zip(y.data()).zip(g).map(|((&xv, &yv), &gv)| gv * kind.derivative(xv, yv)).collect()
}

pub(crate) fn softmax_backward(y: &Tensor, g: &[f64]) -> Vec<f64> {
    let cols = *y.shape().last().expect("softmax output has an axis");
    let mut dx = vec![0.0; g.len()];
    for ((yr, gr), dr) in y.data().chunks(cols).zip(g.chunks(cols)).zip(dx.chunks_mut(cols)) {
        let dotp: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((d, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
            *d = yv * (gv - dotp);
        }
    }
    dx
}

/// Broadcasts a reduced gradient back over the removed axis.
pub(crate) fn expand_axis(shape: &[usize], axis: usize, g: &[f64], scale: f64) -> Vec<f64> {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let n = shape[axis];
    let mut out = vec![0.0; outer * n * inner];
    for o in 0..outer {
        for k in 0..n {
            let dst = &mut out[(o * n + k) * inner..(o * n + k + 1) * inner];
            for (d, s) in dst.iter_mut().zip(&g[o * inner..(o + 1) * inner]) {
                *d = s * scale;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_equal_row_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 4], 0.7));
        let y = tape.softmax(x).unwrap();
        for v in tape.value(y).data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn masked_softmax_zeroes_excluded_entries() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 3], vec![1.0, 5.0, 2.0, 0.0, 0.0, 0.0]).unwrap());
        let y = tape.masked_softmax(x, &[true, false, true, false, true, false]).unwrap();
        let v = tape.value(y).data();
        assert_eq!(v[1], 0.0);
        assert!((v[0] + v[2] - 1.0).abs() < 1e-15);
        assert_eq!(&v[3..], &[0.0, 1.0, 0.0]);
        let all_masked = tape.masked_softmax(x, &[false; 6]);
        assert!(all_masked.is_err());
    }

    #[test]
    fn bias_broadcast_over_channel_axis() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 3, 4]));
        let b = tape.constant(Tensor::new(vec![1, 3, 1], vec![1.0, 2.0, 3.0]).unwrap());
        let y = tape.add(x, b).unwrap();
        let v = tape.value(y);
        assert_eq!(v.shape(), &[2, 3, 4]);
        assert_eq!(v.at(&[1, 2, 3]), 3.0);
        assert_eq!(v.at(&[0, 1, 0]), 2.0);
    }

    #[test]
    fn incompatible_broadcast_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2, 3]));
        let y = tape.constant(Tensor::zeros(&[2, 4]));
        assert!(tape.mul(x, y).is_err());
    }

    #[test]
    fn mean_axis_removes_axis() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 5.0]).unwrap());
        let m = tape.mean_axis(x, 0).unwrap();
        assert_eq!(tape.value(m).data(), &[2.0, 3.5]);
    }
}
