use super::tape::{Op, Tape, Var};
use super::tensor::Tensor;
use super::{NumericsError, Result};

/// How [`Tape::batch_norm`] obtains its normalisation statistics.
#[derive(Clone, Debug)]
pub enum BatchNormMode<'a> {
    /// Normalise with the statistics of the current batch.
    Train { eps: f64 },
    /// Normalise with stored running statistics.
    Eval { mean: &'a [f64], var: &'a [f64], eps: f64 },
}

/// Per-channel batch statistics observed in training mode. `var` is the
/// biased estimate used for normalisation; `count` is the number of values
/// per channel so callers can form the unbiased estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

impl BatchStats {
    /// Exponential running-average update with unbiased variance.
    pub fn update_running(&self, running_mean: &mut [f64], running_var: &mut [f64], momentum: f64) {
        let n = self.count as f64;
        let correction = if self.count > 1 { n / (n - 1.0) } else { 1.0 };
        for c in 0..self.mean.len() {
            running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * self.mean[c];
            running_var[c] = (1.0 - momentum) * running_var[c] + momentum * self.var[c] * correction;
        }
    }
}

pub(crate) struct BatchNormMemo {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_stats: bool,
}

/// (outer, channels, inner) decomposition with channels on axis 1.
fn layout(shape: &[usize]) -> Option<(usize, usize, usize)> {
    if shape.len() < 2 {
        return None;
    }
    Some((shape[0], shape[1], shape[2..].iter().product()))
}

impl Tape {
    /// Batch normalisation over axis 1 of `x` (`[B, C]` or `[B, C, ...]`)
    /// with affine parameters `gamma`, `beta` of shape `[C]`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
    ) -> Result<(Var, Option<BatchStats>)> {
        for v in [x, gamma, beta] {
            self.check(v)?;
        }
        let shape = self.shape(x).to_vec();
        let Some((outer, ch, inner)) = layout(&shape) else {
            return Err(NumericsError::shape("batch_norm", format!("input {shape:?} has no channel axis")));
        };
        if self.shape(gamma) != [ch] || self.shape(beta) != [ch] {
            return Err(NumericsError::shape("batch_norm", format!("affine params for {ch} channels")));
        }
        let xd = self.value(x).data();
        let count = outer * inner;
        let idx = |o: usize, c: usize, i: usize| (o * ch + c) * inner + i;
        let (mean, var, eps, batch_stats) = match mode {
            BatchNormMode::Train { eps } => {
                let mut mean = vec![0.0; ch];
                let mut var = vec![0.0; ch];
                for c in 0..ch {
                    let mut s = 0.0;
                    for o in 0..outer {
                        s += xd[idx(o, c, 0)..idx(o, c, 0) + inner].iter().sum::<f64>();
                    }
                    mean[c] = s / count as f64;
                    let mut v = 0.0;
                    for o in 0..outer {
                        v += xd[idx(o, c, 0)..idx(o, c, 0) + inner].iter().map(|e| (e - mean[c]).powi(2)).sum::<f64>();
                    }
                    var[c] = v / count as f64;
                }
                (mean, var, eps, true)
            }
            BatchNormMode::Eval { mean, var, eps } => {
                if mean.len() != ch || var.len() != ch {
                    return Err(NumericsError::shape("batch_norm", format!("running stats for {ch} channels")));
                }
                (mean.to_vec(), var.to_vec(), eps, false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let (gd, bd) = (self.value(gamma).data(), self.value(beta).data());
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for o in 0..outer {
            for c in 0..ch {
                for i in 0..inner {
                    let k = idx(o, c, i);
                    xhat[k] = (xd[k] - mean[c]) * inv_std[c];
                    out[k] = gd[c] * xhat[k] + bd[c];
                }
            }
        }
        let stats = batch_stats.then_some(BatchStats { mean, var, count });
        let memo = BatchNormMemo { xhat, inv_std, batch_stats };
        let y = self.push(Tensor::new(shape, out)?, Op::BatchNorm { x, gamma, beta, memo });
        Ok((y, stats))
    }
}

pub(crate) fn batch_norm_backward(
    tape: &Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    memo: &BatchNormMemo,
    g: &[f64],
) -> Vec<(Var, Vec<f64>)> {
    let (outer, ch, inner) = layout(tape.shape(x)).expect("validated in forward");
    let gd = tape.value(gamma).data();
    let idx = |o: usize, c: usize, i: usize| (o * ch + c) * inner + i;
    let mut dgamma = vec![0.0; ch];
    let mut dbeta = vec![0.0; ch];
    for o in 0..outer {
        for c in 0..ch {
            for i in 0..inner {
                let k = idx(o, c, i);
                dgamma[c] += g[k] * memo.xhat[k];
                dbeta[c] += g[k];
            }
        }
    }
    let mut out = Vec::with_capacity(3);
    if tape.requires_grad(x) {
        let mut dx = vec![0.0; g.len()];
        let n = (outer * inner) as f64;
        for c in 0..ch {
            let scale = gd[c] * memo.inv_std[c];
            for o in 0..outer {
                for i in 0..inner {
                    let k = idx(o, c, i);
                    dx[k] = if memo.batch_stats {
                        scale * (g[k] - dbeta[c] / n - memo.xhat[k] * dgamma[c] / n)
                    } else {
                        scale * g[k]
                    };
                }
            }
        }
        out.push((x, dx));
    }
    out.push((gamma, dgamma));
    out.push((beta, dbeta));
    out
}
