use rand::Rng;

use super::{glorot_uniform, kaiming_uniform, orthogonal, BnUpdate, BufferId, Mode, ParamId, ParamStore, Session};
use crate::numerics::{BatchNormMode, LstmWeights, Result, Tensor, Var};

/// Gain for layers followed by a rectifier-like activation.
const RELU_GAIN: f64 = std::f64::consts::SQRT_2;

/// `x W + b` over the last axis; `W: [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d_in: usize, d_out: usize, bias: bool, rng: &mut R) -> Self {
        let w = store.add(format!("{name}.w"), glorot_uniform(&[d_in, d_out], d_in, d_out, rng));
        let b = bias.then(|| store.add(format!("{name}.b"), Tensor::zeros(&[d_out])));
        Self { w, b }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let w = s.param(self.w);
        let y = s.tape.matmul(x, w)?;
        match self.b {
            Some(b) => {
                let b = s.param(b);
                s.tape.add(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub padding: usize,
}

impl Conv1d {
    /// Stride-1 convolution; `padding = kernel / 2` keeps odd kernels
    /// length-preserving.
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add(format!("{name}.w"), kaiming_uniform(&[c_out, c_in, kernel], c_in * kernel, RELU_GAIN, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[c_out]));
        Self { w, b, padding }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.w), s.param(self.b));
        s.tape.conv1d(x, w, Some(b), 1, self.padding)
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
}

impl Conv2d {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: [usize; 2],
        rng: &mut R,
    ) -> Self {
        let fan_in = c_in * kernel[0] * kernel[1];
        let shape = [c_out, c_in, kernel[0], kernel[1]];
        let w = store.add(format!("{name}.w"), kaiming_uniform(&shape, fan_in, RELU_GAIN, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(&[c_out]));
        Self { w, b }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let (w, b) = (s.param(self.w), s.param(self.b));
        s.tape.conv2d(x, w, Some(b), [1, 1], [0, 0])
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub eps: f64,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, eps: f64) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[channels], 1.0)),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), vec![0.0; channels]),
            running_var: store.add_buffer(format!("{name}.running_var"), vec![1.0; channels]),
            eps,
        }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let (g, b) = (s.param(self.gamma), s.param(self.beta));
        match s.mode() {
            Mode::Train => {
                let (y, stats) = s.tape.batch_norm(x, g, b, BatchNormMode::Train { eps: self.eps })?;
                let stats = stats.expect("training mode reports batch statistics");
                s.record_bn(BnUpdate { mean: self.running_mean, var: self.running_var, stats });
                Ok(y)
            }
            Mode::Eval => {
                let (mean, var) = (s.buffer(self.running_mean).to_vec(), s.buffer(self.running_var).to_vec());
                let mode = BatchNormMode::Eval { mean: &mean, var: &var, eps: self.eps };
                Ok(s.tape.batch_norm(x, g, b, mode)?.0)
            }
        }
    }
}

/// Single-layer bidirectional LSTM.
#[derive(Clone, Debug)]
pub struct BiLstm {
    ids: [ParamId; 6],
}

impl BiLstm {
    /// Input weights use fan-in scaling, recurrent weights are orthogonal per
    /// gate block, and the forget-gate bias starts at 1.
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, d_in: usize, hidden: usize, rng: &mut R) -> Self {
        let mut ids = Vec::with_capacity(6);
        for dir in ["fwd", "bwd"] {
            ids.push(store.add(format!("{name}.{dir}.w_ih"), kaiming_uniform(&[4 * hidden, d_in], d_in, 1.0, rng)));
            let mut whh = Vec::with_capacity(4 * hidden * hidden);
            for _ in 0..4 {
                whh.extend(orthogonal(hidden, rng));
            }
            let whh = Tensor::new(vec![4 * hidden, hidden], whh).expect("4 square blocks");
            ids.push(store.add(format!("{name}.{dir}.w_hh"), whh));
            let bias = Tensor::from_fn(&[4 * hidden], |k| if (hidden..2 * hidden).contains(&k) { 1.0 } else { 0.0 });
            ids.push(store.add(format!("{name}.{dir}.b"), bias));
        }
        Self { ids: ids.try_into().expect("six parameter tensors") }
    }

    pub fn forward(&self, s: &mut Session<'_>, x: Var) -> Result<Var> {
        let v: Vec<Var> = self.ids.iter().map(|&id| s.param(id)).collect();
        let w = LstmWeights { fwd_ih: v[0], fwd_hh: v[1], fwd_b: v[2], bwd_ih: v[3], bwd_hh: v[4], bwd_b: v[5] };
        s.tape.bilstm(x, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_kernel_conv_is_identity() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv = Conv1d::new(&mut store, "c", 1, 1, 1, 0, &mut rng);
        store.values_mut()[conv.w.index()] = Tensor::full(&[1, 1, 1], 1.0);
        let mut tape = Tape::new();
        let mut s = Session::new(&mut tape, &store, Mode::Eval);
        let x = s.tape.constant(Tensor::from_fn(&[2, 1, 5], |i| i as f64 - 3.0));
        let y = conv.forward(&mut s, x).unwrap();
        assert_eq!(s.tape.value(y), s.tape.value(x));
    }

    #[test]
    fn batch_norm_eval_is_affine() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 1, 0.0);
        *store.buffer_mut(bn.running_mean) = vec![2.0];
        *store.buffer_mut(bn.running_var) = vec![4.0];
        let mut tape = Tape::new();
        let mut s = Session::new(&mut tape, &store, Mode::Eval);
        let x = s.tape.constant(Tensor::new(vec![3, 1], vec![0.0, 2.0, 6.0]).unwrap());
        let y = bn.forward(&mut s, x).unwrap();
        assert_eq!(s.tape.value(y).data(), &[-1.0, 0.0, 2.0]);
        assert!(s.bn_updates().is_empty());
    }

    #[test]
    fn training_pass_updates_running_stats() {
        let mut store = ParamStore::new();
        let bn = BatchNorm::new(&mut store, "bn", 1, 1e-5);
        let updates = {
            let mut tape = Tape::new();
            let mut s = Session::new(&mut tape, &store, Mode::Train);
            let x = s.tape.constant(Tensor::new(vec![2, 1], vec![1.0, 3.0]).unwrap());
            bn.forward(&mut s, x).unwrap();
            s.take_bn_updates()
        };
        store.apply_bn_stats(&updates, 0.1);
        assert!((store.buffer(bn.running_mean)[0] - 0.2).abs() < 1e-15);
        assert!((store.buffer(bn.running_var)[0] - (0.9 + 0.1 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn lstm_forget_bias_is_one() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        BiLstm::new(&mut store, "l", 3, 2, &mut rng);
        let b = store.values()[2].data();
        assert_eq!(b, &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
