//! Named parameter storage and per-pass bindings onto a [`Tape`].
//!
//! Layers own [`ParamId`]s into a [`ParamStore`]; a [`Session`] turns those
//! ids into tape variables the first time a forward pass touches them, so a
//! store can serve any number of independent passes.

mod layers;

pub use layers::{BatchNorm, BiLstm, Conv1d, Conv2d, Linear};

use rand::Rng;

use crate::numerics::{BatchStats, Gradients, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Trainable tensors plus non-trainable buffers (batch-norm running
/// statistics), both kept in declaration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    buffer_names: Vec<String>,
    buffers: Vec<Vec<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, value: Vec<f64>) -> BufferId {
        self.buffer_names.push(name.into());
        self.buffers.push(value);
        BufferId(self.buffers.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor] {
        &mut self.values
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn buffer(&self, id: BufferId) -> &[f64] {
        &self.buffers[id.0]
    }

    pub fn buffer_mut(&mut self, id: BufferId) -> &mut Vec<f64> {
        &mut self.buffers[id.0]
    }

    pub fn buffers(&self) -> &[Vec<f64>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.buffers
    }

    pub fn buffer_names(&self) -> &[String] {
        &self.buffer_names
    }

    /// Folds training-mode batch statistics into the running buffers.
    pub fn apply_bn_stats(&mut self, stats: &[BnUpdate], momentum: f64) {
        for u in stats {
            let (lo, hi) = (u.mean.0.min(u.var.0), u.mean.0.max(u.var.0));
            let (a, b) = self.buffers.split_at_mut(hi);
            let (first, second) = (&mut a[lo], &mut b[0]);
            let (mean, var) = if u.mean.0 < u.var.0 { (first, second) } else { (second, first) };
            u.stats.update_running(mean, var, momentum);
        }
    }
}

/// How a forward pass treats parameters and batch normalisation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Parameters are differentiable; batch norm uses batch statistics.
    Train,
    /// Parameters are constants; batch norm uses running statistics.
    Eval,
}

/// Batch statistics observed by one batch-norm layer in a training pass.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub mean: BufferId,
    pub var: BufferId,
    pub stats: BatchStats,
}

/// One forward pass over a store.
pub struct Session<'a> {
    pub tape: &'a mut Tape,
    store: &'a ParamStore,
    vars: Vec<Option<Var>>,
    mode: Mode,
    bn_updates: Vec<BnUpdate>,
}

impl<'a> Session<'a> {
    pub fn new(tape: &'a mut Tape, store: &'a ParamStore, mode: Mode) -> Self {
        Self { tape, store, vars: vec![None; store.len()], mode, bn_updates: Vec::new() }
    }

    /// Session whose parameters are already recorded on `tape` as `vars`, in
    /// store order. Used to differentiate with respect to externally created
    /// leaves.
    pub fn bound(tape: &'a mut Tape, store: &'a ParamStore, vars: &[Var], mode: Mode) -> Self {
        assert_eq!(vars.len(), store.len(), "one bound variable per parameter");
        Self { tape, store, vars: vars.iter().copied().map(Some).collect(), mode, bn_updates: Vec::new() }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore {
        self.store
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.vars[id.0] {
            return v;
        }
        let t = self.store.get(id).clone();
        let v = match self.mode {
            Mode::Train => self.tape.variable(t),
            Mode::Eval => self.tape.constant(t),
        };
        self.vars[id.0] = Some(v);
        v
    }

    pub fn buffer(&self, id: BufferId) -> &[f64] {
        self.store.buffer(id)
    }

    pub(crate) fn record_bn(&mut self, update: BnUpdate) {
        self.bn_updates.push(update);
    }

    pub fn bn_updates(&self) -> &[BnUpdate] {
        &self.bn_updates
    }

    pub fn take_bn_updates(&mut self) -> Vec<BnUpdate> {
        std::mem::take(&mut self.bn_updates)
    }

    /// Gradient for every parameter in store order; parameters the pass never
    /// touched get zeros.
    pub fn param_grads(&self, grads: &Gradients) -> Vec<Tensor> {
        self.vars
            .iter()
            .zip(self.store.values())
            .map(|(v, t)| v.and_then(|v| grads.get(v)).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect()
    }
}

/// `U(-b, b)` with `b = gain * sqrt(3 / fan_in)`, i.e. variance `gain^2 / fan_in`.
pub fn kaiming_uniform<R: Rng>(shape: &[usize], fan_in: usize, gain: f64, rng: &mut R) -> Tensor {
    let b = gain * (3.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-b..=b))
}

/// `U(-b, b)` with `b = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let b = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-b..=b))
}

/// Square orthogonal matrix from Gram-Schmidt on a Gaussian draw.
pub fn orthogonal<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    loop {
        let mut m: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(rng)).collect();
        let mut ok = true;
        for r in 0..n {
            for p in 0..r {
                let d: f64 = (0..n).map(|c| m[r * n + c] * m[p * n + c]).sum();
                for c in 0..n {
                    m[r * n + c] -= d * m[p * n + c];
                }
            }
            let norm = (0..n).map(|c| m[r * n + c].powi(2)).sum::<f64>().sqrt();
            if norm < 1e-8 {
                ok = false;
                break;
            }
            for c in 0..n {
                m[r * n + c] /= norm;
            }
        }
        if ok {
            return m;
        }
    }
}
