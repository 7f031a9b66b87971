use super::linalg::gemm;
use super::tape::{Op, Tape, Var};
use super::tensor::Tensor;
use super::{NumericsError, Result};

/// Geometry of a 2-d cross-correlation; 1-d convolution uses `h = kh = 1`.
#[derive(Clone, Copy)]
struct Geom {
    batch: usize,
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: [usize; 2],
    pad: [usize; 2],
    oh: usize,
    ow: usize,
}

impl Geom {
    fn new(op: &'static str, x: [usize; 4], k: [usize; 4], stride: [usize; 2], pad: [usize; 2]) -> Result<Self> {
        let [batch, cin, h, w] = x;
        let [cout, kcin, kh, kw] = k;
        if kcin != cin {
            return Err(NumericsError::shape(op, format!("input has {cin} channels, kernel expects {kcin}")));
        }
        if stride.contains(&0) {
            return Err(NumericsError::arg(op, "stride must be positive"));
        }
        if h + 2 * pad[0] < kh || w + 2 * pad[1] < kw {
            return Err(NumericsError::shape(op, format!("kernel {kh}x{kw} larger than padded input {h}x{w}")));
        }
        let oh = (h + 2 * pad[0] - kh) / stride[0] + 1;
        let ow = (w + 2 * pad[1] - kw) / stride[1] + 1;
        Ok(Self { batch, cin, cout, h, w, kh, kw, stride, pad, oh, ow })
    }

    fn col_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Input offset feeding column entry `(c, ki, kj)` at output `(oi, oj)`.
    fn source(&self, ki: usize, kj: usize, oi: usize, oj: usize) -> Option<(usize, usize)> {
        let r = (oi * self.stride[0] + ki).checked_sub(self.pad[0])?;
        let c = (oj * self.stride[1] + kj).checked_sub(self.pad[1])?;
        (r < self.h && c < self.w).then_some((r, c))
    }

    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let n = self.col_cols();
        for c in 0..self.cin {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oi in 0..self.oh {
                        for oj in 0..self.ow {
                            dst[oi * self.ow + oj] = match self.source(ki, kj, oi, oj) {
                                Some((r, cc)) => x[(c * self.h + r) * self.w + cc],
                                None => 0.0,
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let n = self.col_cols();
        for c in 0..self.cin {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (c * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * n..(row + 1) * n];
                    for oi in 0..self.oh {
                        for oj in 0..self.ow {
                            if let Some((r, cc)) = self.source(ki, kj, oi, oj) {
                                dx[(c * self.h + r) * self.w + cc] += src[oi * self.ow + oj];
                            }
                        }
                    }
                }
            }
        }
    }
}

fn forward(g: &Geom, x: &[f64], w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let (rows, n) = (g.col_rows(), g.col_cols());
    let (in_sz, out_sz) = (g.cin * g.h * g.w, g.cout * n);
    let mut cols = vec![0.0; rows * n];
    let mut out = vec![0.0; g.batch * out_sz];
    for bi in 0..g.batch {
        g.im2col(&x[bi * in_sz..(bi + 1) * in_sz], &mut cols);
        let dst = &mut out[bi * out_sz..(bi + 1) * out_sz];
        if let Some(b) = b {
            for (co, chunk) in dst.chunks_mut(n).enumerate() {
                chunk.fill(b[co]);
            }
        }
        gemm(w, &cols, dst, g.cout, rows, n, false, false);
    }
    out
}

fn backward(tape: &Tape, g: &Geom, x: Var, w: Var, b: Option<Var>, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let (rows, n) = (g.col_rows(), g.col_cols());
    let (in_sz, out_sz) = (g.cin * g.h * g.w, g.cout * n);
    let (xv, wv) = (tape.value(x).data(), tape.value(w).data());
    let mut dx = tape.requires_grad(x).then(|| vec![0.0; xv.len()]);
    let mut dw = tape.requires_grad(w).then(|| vec![0.0; wv.len()]);
    let mut cols = vec![0.0; rows * n];
    let mut dcols = vec![0.0; rows * n];
    for bi in 0..g.batch {
        let gb = &grad[bi * out_sz..(bi + 1) * out_sz];
        if let Some(dw) = dw.as_mut() {
            g.im2col(&xv[bi * in_sz..(bi + 1) * in_sz], &mut cols);
            gemm(gb, &cols, dw, g.cout, n, rows, false, true);
        }
        if let Some(dx) = dx.as_mut() {
            dcols.fill(0.0);
            gemm(wv, gb, &mut dcols, rows, g.cout, n, true, false);
            g.col2im(&dcols, &mut dx[bi * in_sz..(bi + 1) * in_sz]);
        }
    }
    let mut out = Vec::with_capacity(3);
    if let Some(d) = dx {
        out.push((x, d));
    }
    if let Some(d) = dw {
        out.push((w, d));
    }
    if let Some(b) = b.filter(|&b| tape.requires_grad(b)) {
        let mut db = vec![0.0; g.cout];
        for gb in grad.chunks(out_sz) {
            for (co, chunk) in gb.chunks(n).enumerate() {
                db[co] += chunk.iter().sum::<f64>();
            }
        }
        out.push((b, db));
    }
    out
}

fn check_bias(tape: &Tape, op: &'static str, b: Option<Var>, cout: usize) -> Result<()> {
    if let Some(b) = b {
        tape.check(b)?;
        if tape.shape(b) != [cout] {
            return Err(NumericsError::shape(op, format!("bias {:?} for {cout} output channels", tape.shape(b))));
        }
    }
    Ok(())
}

fn geom1d(tape: &Tape, x: Var, w: Var, stride: usize, padding: usize) -> Result<Geom> {
    let (xs, ws) = (tape.shape(x), tape.shape(w));
    let (&[b, c, l], &[co, ci, k]) = (xs, ws) else {
        return Err(NumericsError::shape("conv1d", format!("input {xs:?}, kernel {ws:?}")));
    };
    Geom::new("conv1d", [b, c, 1, l], [co, ci, 1, k], [1, stride], [0, padding])
}

fn geom2d(tape: &Tape, x: Var, w: Var, stride: [usize; 2], padding: [usize; 2]) -> Result<Geom> {
    let (xs, ws) = (tape.shape(x), tape.shape(w));
    let (&[b, c, h, wd], &[co, ci, kh, kw]) = (xs, ws) else {
        return Err(NumericsError::shape("conv2d", format!("input {xs:?}, kernel {ws:?}")));
    };
    Geom::new("conv2d", [b, c, h, wd], [co, ci, kh, kw], stride, padding)
}

impl Tape {
    /// Cross-correlation of `x: [B, C_in, L]` with `w: [C_out, C_in, K]`,
    /// zero-padding both ends by `padding`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let g = geom1d(self, x, w, stride, padding)?;
        check_bias(self, "conv1d", b, g.cout)?;
        let out = forward(&g, self.value(x).data(), self.value(w).data(), b.map(|b| self.value(b).data()));
        let t = Tensor::new(vec![g.batch, g.cout, g.ow], out)?;
        Ok(self.push(t, Op::Conv1d { x, w, b, stride, padding }))
    }

    /// Cross-correlation of `x: [B, C_in, H, W]` with `w: [C_out, C_in, KH, KW]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: [usize; 2], padding: [usize; 2]) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let g = geom2d(self, x, w, stride, padding)?;
        check_bias(self, "conv2d", b, g.cout)?;
        let out = forward(&g, self.value(x).data(), self.value(w).data(), b.map(|b| self.value(b).data()));
        let t = Tensor::new(vec![g.batch, g.cout, g.oh, g.ow], out)?;
        Ok(self.push(t, Op::Conv2d { x, w, b, stride, padding }))
    }

    /// Max pooling over the last axis without padding. Ties go to the lowest
    /// index in the window.
    pub fn maxpool1d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        let Some(&l) = shape.last() else {
            return Err(NumericsError::shape("maxpool1d", "scalar input"));
        };
        if kernel == 0 || stride == 0 || kernel > l {
            return Err(NumericsError::arg("maxpool1d", format!("kernel {kernel}, stride {stride}, length {l}")));
        }
        let lo = (l - kernel) / stride + 1;
        let data = self.value(x).data();
        let rows = data.len() / l;
        let mut out = Vec::with_capacity(rows * lo);
        let mut argmax = Vec::with_capacity(rows * lo);
        for r in 0..rows {
            for o in 0..lo {
                let start = r * l + o * stride;
                let mut best = start;
                for i in start + 1..start + kernel {
                    if data[i] > data[best] {
                        best = i;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
        let mut out_shape = shape;
        *out_shape.last_mut().expect("rank checked") = lo;
        Ok(self.push(Tensor::new(out_shape, out)?, Op::MaxPool1d { x, argmax }))
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv1d_backward(
    tape: &Tape,
    x: Var,
    w: Var,
    b: Option<Var>,
    stride: usize,
    padding: usize,
    _y_shape: &[usize],
    g: &[f64],
) -> Vec<(Var, Vec<f64>)> {
    let geom = geom1d(tape, x, w, stride, padding).expect("validated in forward");
    backward(tape, &geom, x, w, b, g)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    tape: &Tape,
    x: Var,
    w: Var,
    b: Option<Var>,
    stride: [usize; 2],
    padding: [usize; 2],
    _y_shape: &[usize],
    g: &[f64],
) -> Vec<(Var, Vec<f64>)> {
    let geom = geom2d(tape, x, w, stride, padding).expect("validated in forward");
    backward(tape, &geom, x, w, b, g)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop cross-correlation.
    fn naive_conv1d(x: &Tensor, w: &Tensor, pad: usize) -> Vec<f64> {
        let (b, c, l) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let (co, k) = (w.shape()[0], w.shape()[2]);
        let lo = l + 2 * pad - k + 1;
        let mut out = vec![0.0; b * co * lo];
        for bi in 0..b {
            for o in 0..co {
                for t in 0..lo {
                    let mut s = 0.0;
                    for ci in 0..c {
                        for kk in 0..k {
                            let pos = t + kk;
                            if pos >= pad && pos - pad < l {
                                s += w.at(&[o, ci, kk]) * x.at(&[bi, ci, pos - pad]);
                            }
                        }
                    }
                    out[(bi * co + o) * lo + t] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv1d_matches_direct_loops() {
        let x = Tensor::from_fn(&[2, 3, 7], |i| ((i * 37) % 11) as f64 - 5.0);
        let w = Tensor::from_fn(&[4, 3, 3], |i| ((i * 13) % 7) as f64 * 0.25 - 0.5);
        let mut tape = Tape::new();
        let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
        let y = tape.conv1d(xv, wv, None, 1, 1).unwrap();
        assert_eq!(tape.shape(y), &[2, 4, 7]);
        let expect = naive_conv1d(&x, &w, 1);
        for (a, b) in tape.value(y).data().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv2d_column_kernel_collapses_rows() {
        // A (H,1) kernel over an H-row input yields one row per column.
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[1, 1, 3, 4], |i| i as f64));
        let w = tape.constant(Tensor::full(&[2, 1, 3, 1], 1.0));
        let y = tape.conv2d(x, w, None, [1, 1], [0, 0]).unwrap();
        assert_eq!(tape.shape(y), &[1, 2, 1, 4]);
        assert_eq!(&tape.value(y).data()[..4], &[12.0, 15.0, 18.0, 21.0]);
    }

    #[test]
    fn maxpool_breaks_ties_low() {
        let mut tape = Tape::new();
        let x = tape.variable(Tensor::new(vec![1, 4], vec![2.0, 2.0, -1.0, 3.0]).unwrap());
        let p = tape.maxpool1d(x, 2, 2).unwrap();
        assert_eq!(tape.value(p).data(), &[2.0, 3.0]);
        let s = tape.sum_all(p).unwrap();
        let g = tape.backward(s).unwrap().get(x).unwrap();
        assert_eq!(g.data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn channel_mismatch_is_reported() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 2, 5]));
        let w = tape.constant(Tensor::zeros(&[1, 3, 3]));
        let err = tape.conv1d(x, w, None, 1, 1).unwrap_err();
        assert!(matches!(err, NumericsError::ShapeMismatch { op: "conv1d", .. }));
    }
}
