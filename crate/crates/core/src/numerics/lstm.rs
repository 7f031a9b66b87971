use super::elementwise::sigmoid;
use super::linalg::gemm;
use super::tape::{Op, Tape, Var};
use super::tensor::Tensor;
use super::{NumericsError, Result};

/// Parameters of a single-layer bidirectional LSTM. Per direction:
/// `w_ih: [4H, D]`, `w_hh: [4H, H]`, `b: [4H]`, gates ordered
/// input, forget, cell, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub fwd_ih: Var,
    pub fwd_hh: Var,
    pub fwd_b: Var,
    pub bwd_ih: Var,
    pub bwd_hh: Var,
    pub bwd_b: Var,
}

impl LstmWeights {
    pub fn all(&self) -> [Var; 6] {
        [self.fwd_ih, self.fwd_hh, self.fwd_b, self.bwd_ih, self.bwd_hh, self.bwd_b]
    }

    fn direction(&self, reverse: bool) -> [Var; 3] {
        if reverse {
            [self.bwd_ih, self.bwd_hh, self.bwd_b]
        } else {
            [self.fwd_ih, self.fwd_hh, self.fwd_b]
        }
    }
}

/// Activations kept for BPTT, laid out `[direction][batch][time]`.
pub(crate) struct LstmCache {
    hidden: usize,
    /// Post-activation gates, `4H` per step.
    gates: Vec<f64>,
    /// Cell state, `H` per step.
    cell: Vec<f64>,
    /// Hidden state, `H` per step.
    h: Vec<f64>,
}

struct Dims {
    batch: usize,
    len: usize,
    input: usize,
    hidden: usize,
}

fn dims(tape: &Tape, x: Var, w: &LstmWeights) -> Result<Dims> {
    let xs = tape.shape(x);
    let &[batch, len, input] = xs else {
        return Err(NumericsError::shape("bilstm", format!("input {xs:?} is not [B, L, D]")));
    };
    let bs = tape.shape(w.fwd_b);
    let &[four_h] = bs else {
        return Err(NumericsError::shape("bilstm", format!("bias {bs:?}")));
    };
    if four_h % 4 != 0 {
        return Err(NumericsError::shape("bilstm", format!("bias length {four_h} not a multiple of 4")));
    }
    let hidden = four_h / 4;
    for reverse in [false, true] {
        let [ih, hh, b] = w.direction(reverse);
        if tape.shape(ih) != [four_h, input] || tape.shape(hh) != [four_h, hidden] || tape.shape(b) != [four_h] {
            return Err(NumericsError::shape(
                "bilstm",
                format!(
                    "weights {:?}/{:?}/{:?} for input {input}, hidden {hidden}",
                    tape.shape(ih),
                    tape.shape(hh),
                    tape.shape(b)
                ),
            ));
        }
    }
    Ok(Dims { batch, len, input, hidden })
}

impl Tape {
    /// Bidirectional LSTM over `x: [B, L, D]` from zero initial state.
    /// Returns `[B, L, 2H]` with the forward direction in the first `H`
    /// features.
    pub fn bilstm(&mut self, x: Var, weights: LstmWeights) -> Result<Var> {
        self.check(x)?;
        for v in weights.all() {
            self.check(v)?;
        }
        let Dims { batch, len, input, hidden: hd } = dims(self, x, &weights)?;
        let steps = 2 * batch * len;
        let mut cache = LstmCache {
            hidden: hd,
            gates: vec![0.0; steps * 4 * hd],
            cell: vec![0.0; steps * hd],
            h: vec![0.0; steps * hd],
        };
        let mut out = vec![0.0; batch * len * 2 * hd];
        let xd = self.value(x).data();
        let mut proj = vec![0.0; len * 4 * hd];
        for (dir, reverse) in [false, true].into_iter().enumerate() {
            let [ih, hh, b] = weights.direction(reverse);
            let (wih, whh, bias) = (self.value(ih).data(), self.value(hh).data(), self.value(b).data());
            for bi in 0..batch {
                for row in proj.chunks_mut(4 * hd) {
                    row.copy_from_slice(bias);
                }
                gemm(&xd[bi * len * input..(bi + 1) * len * input], wih, &mut proj, len, input, 4 * hd, false, true);
                let base = (dir * batch + bi) * len;
                let mut prev: Option<usize> = None;
                for s in 0..len {
                    let t = if reverse { len - 1 - s } else { s };
                    let z = &mut proj[t * 4 * hd..(t + 1) * 4 * hd];
                    if let Some(p) = prev {
                        let hp = &cache.h[(base + p) * hd..(base + p + 1) * hd];
                        for (r, zr) in z.iter_mut().enumerate() {
                            *zr += whh[r * hd..(r + 1) * hd].iter().zip(hp).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                    let slot = base + t;
                    for j in 0..hd {
                        let ig = sigmoid(z[j]);
                        let fg = sigmoid(z[hd + j]);
                        let gg = z[2 * hd + j].tanh();
                        let og = sigmoid(z[3 * hd + j]);
                        let c_prev = prev.map_or(0.0, |p| cache.cell[(base + p) * hd + j]);
                        let c = fg * c_prev + ig * gg;
                        let h = og * c.tanh();
                        let gates = &mut cache.gates[slot * 4 * hd..(slot + 1) * 4 * hd];
                        gates[j] = ig;
                        gates[hd + j] = fg;
                        gates[2 * hd + j] = gg;
                        gates[3 * hd + j] = og;
                        cache.cell[slot * hd + j] = c;
                        cache.h[slot * hd + j] = h;
                        out[(bi * len + t) * 2 * hd + dir * hd + j] = h;
                    }
                    prev = Some(t);
                }
            }
        }
        let t = Tensor::new(vec![batch, len, 2 * hd], out)?;
        Ok(self.push(t, Op::BiLstm { x, weights, cache: Box::new(cache) }))
    }
}

pub(crate) fn bilstm_backward(
    tape: &Tape,
    x: Var,
    weights: &LstmWeights,
    cache: &LstmCache,
    g: &[f64],
) -> Vec<(Var, Vec<f64>)> {
    let Dims { batch, len, input, hidden: hd } = dims(tape, x, weights).expect("validated in forward");
    debug_assert_eq!(hd, cache.hidden);
    let xd = tape.value(x).data();
    let mut dx = vec![0.0; xd.len()];
    let mut out = Vec::with_capacity(7);
    let mut dz_all = vec![0.0; len * 4 * hd];
    for (dir, reverse) in [false, true].into_iter().enumerate() {
        let [ih, hh, b] = weights.direction(reverse);
        let (wih, whh) = (tape.value(ih).data(), tape.value(hh).data());
        let mut dwih = vec![0.0; 4 * hd * input];
        let mut dwhh = vec![0.0; 4 * hd * hd];
        let mut db = vec![0.0; 4 * hd];
        for bi in 0..batch {
            let base = (dir * batch + bi) * len;
            let mut dh_next = vec![0.0; hd];
            let mut dc_next = vec![0.0; hd];
            for s in (0..len).rev() {
                let t = if reverse { len - 1 - s } else { s };
                let prev = (s > 0).then(|| if reverse { t + 1 } else { t - 1 });
                let slot = base + t;
                let gates = &cache.gates[slot * 4 * hd..(slot + 1) * 4 * hd];
                let dz = &mut dz_all[t * 4 * hd..(t + 1) * 4 * hd];
                for j in 0..hd {
                    let (ig, fg, gg, og) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
                    let c = cache.cell[slot * hd + j];
                    let tc = c.tanh();
                    let c_prev = prev.map_or(0.0, |p| cache.cell[(base + p) * hd + j]);
                    let dh = g[(bi * len + t) * 2 * hd + dir * hd + j] + dh_next[j];
                    let dc = dh * og * (1.0 - tc * tc) + dc_next[j];
                    dz[j] = dc * gg * ig * (1.0 - ig);
                    dz[hd + j] = dc * c_prev * fg * (1.0 - fg);
                    dz[2 * hd + j] = dc * ig * (1.0 - gg * gg);
                    dz[3 * hd + j] = dh * tc * og * (1.0 - og);
                    dc_next[j] = dc * fg;
                }
                dh_next.fill(0.0);
                if let Some(p) = prev {
                    let hp = &cache.h[(base + p) * hd..(base + p + 1) * hd];
                    for (r, &dzr) in dz.iter().enumerate() {
                        if dzr == 0.0 {
                            continue;
                        }
                        let wrow = &whh[r * hd..(r + 1) * hd];
                        let drow = &mut dwhh[r * hd..(r + 1) * hd];
                        for k in 0..hd {
                            dh_next[k] += dzr * wrow[k];
                            drow[k] += dzr * hp[k];
                        }
                    }
                }
            }
            // Input-side contributions for the whole sequence at once.
            let xb = &xd[bi * len * input..(bi + 1) * len * input];
            gemm(&dz_all, wih, &mut dx[bi * len * input..(bi + 1) * len * input], len, 4 * hd, input, false, false);
            gemm(&dz_all, xb, &mut dwih, 4 * hd, len, input, true, false);
            for row in dz_all.chunks(4 * hd) {
                db.iter_mut().zip(row).for_each(|(d, z)| *d += z);
            }
        }
        out.push((ih, dwih));
        out.push((hh, dwhh));
        out.push((b, db));
    }
    if tape.requires_grad(x) {
        out.push((x, dx));
    }
    out
}
