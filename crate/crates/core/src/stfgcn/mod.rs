//! The full classifier: encoder, adjacency, stacked PoolGAT layers and the
//! GCN + mean-pool + linear head.
//!
//! ```text
//! (I/Q, |STFT|) -> encoder -> X [B,N,F] -> A(X) [B,N,N]
//!   -> PoolGAT_1 -> [B,N/D,h] -> ... -> PoolGAT_Ψ -> [B,N/D^Ψ,h]
//!   -> GCN -> mean over nodes -> Linear -> logits [B,ζ]
//! ```

mod checkpoint;
mod layers;
pub mod ops;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use layers::{GcnStack, PoolGatLayer, StageOut};

use crate::dsp::{DspError, StftPlan};
use crate::encoder::{batch_inputs, Encoder, EncoderConfig, InputMode};
use crate::graph::{adjacency_distance, adjacency_knn, correlation_adjacency_var, AdjacencyMethod, GraphError};
use crate::nn::{Linear, Mode, ParamStore, Session};
use crate::numerics::{grad_check, GradCheckReport, NumericsError, Tape, Tensor, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },
    #[error("I/O error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Which parts of the PoolGAT layer are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PoolGatVariant {
    #[default]
    Full,
    /// Soft-assignment pooling without attention.
    NoGat,
    /// Attention on the uncoarsened graph.
    NoDiffpool,
    /// Embedding GCN stack and fixed strided block-mean pooling.
    GcnOnly,
}

impl PoolGatVariant {
    pub const ALL: [PoolGatVariant; 4] = [Self::Full, Self::NoGat, Self::NoDiffpool, Self::GcnOnly];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoGat => "no-gat",
            Self::NoDiffpool => "no-diffpool",
            Self::GcnOnly => "gcn-only",
        }
    }

    pub fn coarsens(self) -> bool {
        self != Self::NoDiffpool
    }
}

impl fmt::Display for PoolGatVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PoolGatVariant {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| format!("unknown PoolGAT variant `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Frame length Γ; also the node count N.
    pub gamma: usize,
    pub n_dft: usize,
    pub win_len: usize,
    pub out_channels: usize,
    pub feat_dim: usize,
    /// Adjacency band half-width τ (KNN uses it as k).
    pub tau: usize,
    pub psi: usize,
    pub gcn_layers: usize,
    pub coarsen: usize,
    pub hidden: usize,
    pub n_classes: usize,
    pub leaky_slope: f64,
    pub bn_eps: f64,
    pub variant: PoolGatVariant,
    pub adjacency: AdjacencyMethod,
    pub inputs: InputMode,
    pub aux_loss: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            gamma: 128,
            n_dft: 128,
            win_len: 32,
            out_channels: 16,
            feat_dim: 16,
            tau: 11,
            psi: 2,
            gcn_layers: 4,
            coarsen: 4,
            hidden: 128,
            n_classes: 11,
            leaky_slope: 0.2,
            bn_eps: 1e-5,
            variant: PoolGatVariant::Full,
            adjacency: AdjacencyMethod::Correlation,
            inputs: InputMode::Full,
            aux_loss: false,
        }
    }
}

impl ModelConfig {
    /// Small model for CPU training runs at full frame length.
    pub fn desk(n_classes: usize) -> Self {
        Self { out_channels: 4, feat_dim: 8, gcn_layers: 2, hidden: 16, n_classes, ..Self::default() }
    }

    /// Tiny model for finite-difference checks.
    pub fn miniature() -> Self {
        Self {
            gamma: 16,
            n_dft: 16,
            win_len: 8,
            out_channels: 2,
            feat_dim: 4,
            tau: 3,
            psi: 2,
            gcn_layers: 2,
            coarsen: 2,
            hidden: 4,
            n_classes: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ModelError::Config(m));
        for (name, v) in [
            ("gamma", self.gamma),
            ("out_channels", self.out_channels),
            ("feat_dim", self.feat_dim),
            ("psi", self.psi),
            ("gcn_layers", self.gcn_layers),
            ("hidden", self.hidden),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.n_classes < 2 {
            return bad(format!("n_classes = {} (need at least 2)", self.n_classes));
        }
        if self.win_len < 4 || self.win_len > self.n_dft {
            return bad(format!("win_len = {} must lie in 4..={}", self.win_len, self.n_dft));
        }
        if self.tau == 0 || self.tau >= self.gamma {
            return bad(format!("tau = {} must lie in 1..{}", self.tau, self.gamma));
        }
        if self.variant.coarsens() {
            if self.coarsen < 2 {
                return bad(format!("coarsen = {} must be at least 2", self.coarsen));
            }
            let total = self.coarsen.checked_pow(self.psi as u32).unwrap_or(usize::MAX);
            if !self.gamma.is_multiple_of(total) {
                return bad(format!("N = {} not divisible by {}^{}", self.gamma, self.coarsen, self.psi));
            }
        }
        if !(self.leaky_slope.is_finite() && self.bn_eps > 0.0) {
            return bad("leaky_slope must be finite and bn_eps positive".into());
        }
        Ok(())
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            gamma: self.gamma,
            n_dft: self.n_dft,
            win_len: self.win_len,
            out_channels: self.out_channels,
            feat_dim: self.feat_dim,
            bn_eps: self.bn_eps,
            inputs: self.inputs,
        }
    }

    /// Node counts entering each PoolGAT layer, then the final count.
    pub fn node_trace(&self) -> Vec<usize> {
        let step = if self.variant.coarsens() { self.coarsen } else { 1 };
        (0..=self.psi).map(|l| self.gamma / step.pow(l as u32)).collect()
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("gamma", self.gamma.to_string()),
            ("n_dft", self.n_dft.to_string()),
            ("win_len", self.win_len.to_string()),
            ("out_channels", self.out_channels.to_string()),
            ("feat_dim", self.feat_dim.to_string()),
            ("tau", self.tau.to_string()),
            ("psi", self.psi.to_string()),
            ("gcn_layers", self.gcn_layers.to_string()),
            ("coarsen", self.coarsen.to_string()),
            ("hidden", self.hidden.to_string()),
            ("n_classes", self.n_classes.to_string()),
            ("leaky_slope", self.leaky_slope.to_string()),
            ("bn_eps", self.bn_eps.to_string()),
            ("variant", self.variant.to_string()),
            ("adjacency", self.adjacency.to_string()),
            ("inputs", self.inputs.to_string()),
            ("aux_loss", self.aux_loss.to_string()),
        ]
    }

    /// Applies one `key = value` setting; unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: FromStr>(key: &str, v: &str) -> Result<T>
        where
            T::Err: fmt::Display,
        {
            v.trim().parse().map_err(|e| ModelError::Config(format!("{key} = `{v}`: {e}")))
        }
        match key {
            "gamma" => self.gamma = p(key, value)?,
            "n_dft" => self.n_dft = p(key, value)?,
            "win_len" => self.win_len = p(key, value)?,
            "out_channels" => self.out_channels = p(key, value)?,
            "feat_dim" => self.feat_dim = p(key, value)?,
            "tau" => self.tau = p(key, value)?,
            "psi" => self.psi = p(key, value)?,
            "gcn_layers" => self.gcn_layers = p(key, value)?,
            "coarsen" => self.coarsen = p(key, value)?,
            "hidden" => self.hidden = p(key, value)?,
            "n_classes" => self.n_classes = p(key, value)?,
            "leaky_slope" => self.leaky_slope = p(key, value)?,
            "bn_eps" => self.bn_eps = p(key, value)?,
            "variant" => self.variant = p(key, value)?,
            "adjacency" => self.adjacency = p(key, value)?,
            "inputs" => self.inputs = p(key, value)?,
            "aux_loss" => self.aux_loss = p(key, value)?,
            _ => return Err(ModelError::Config(format!("unknown model key `{key}`"))),
        }
        Ok(())
    }

    pub fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Everything a forward pass produces that callers may inspect.
#[derive(Clone, Debug)]
pub struct ForwardOut {
    pub logits: Var,
    /// Node features `[B, N, F]` and their adjacency `[B, N, N]`.
    pub nodes: Var,
    pub adjacency: Var,
    pub stages: Vec<StageOut>,
    pub aux: Option<Var>,
}

pub struct Model {
    cfg: ModelConfig,
    store: ParamStore,
    plan: StftPlan,
    encoder: Encoder,
    layers: Vec<PoolGatLayer>,
    final_gcn: GcnStack,
    classifier: Linear,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let plan = StftPlan::new(cfg.n_dft, cfg.win_len)?;
        let encoder = Encoder::new(&mut store, cfg.encoder(), &mut rng);
        let trace = cfg.node_trace();
        let layers = (0..cfg.psi)
            .map(|l| {
                let d_in = if l == 0 { cfg.feat_dim } else { cfg.hidden };
                PoolGatLayer::new(
                    &mut store,
                    &format!("pool{}", l + 1),
                    cfg.variant,
                    trace[l],
                    d_in,
                    cfg.hidden,
                    cfg.gcn_layers,
                    cfg.coarsen,
                    cfg.leaky_slope,
                    &mut rng,
                )
            })
            .collect();
        let final_gcn = GcnStack::new(&mut store, "head.gcn", cfg.hidden, cfg.hidden, 1, false, &mut rng);
        let classifier = Linear::new(&mut store, "head.linear", cfg.hidden, cfg.n_classes, true, &mut rng);
        Ok(Self { cfg, store, plan, encoder, layers, final_gcn, classifier })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn plan(&self) -> &StftPlan {
        &self.plan
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// `(I/Q [B,2,Γ], spectrogram [B,1,f,Γ])` for a batch of frames.
    pub fn inputs(&self, frames: &[(&[f64], &[f64])]) -> Result<(Tensor, Tensor)> {
        Ok(batch_inputs(frames, &self.plan)?)
    }

    /// Adjacency of `nodes: [B, N, F]` by the configured method.
    pub fn adjacency(&self, tape: &mut Tape, nodes: Var) -> Result<Var> {
        if self.cfg.adjacency == AdjacencyMethod::Correlation {
            return Ok(correlation_adjacency_var(tape, nodes, self.cfg.tau)?);
        }
        let x = tape.value(nodes).clone();
        let [b, n, f] = *x.shape() else {
            return Err(GraphError::BadFeatures(x.shape().to_vec()).into());
        };
        let mut out = Vec::with_capacity(b * n * n);
        for k in 0..b {
            let xb = Tensor::new(vec![n, f], x.data()[k * n * f..(k + 1) * n * f].to_vec())?;
            let a = match self.cfg.adjacency {
                AdjacencyMethod::Distance => adjacency_distance(&xb, self.cfg.tau)?,
                _ => adjacency_knn(&xb, self.cfg.tau)?,
            };
            out.extend(a.a);
        }
        Ok(tape.constant(Tensor::new(vec![b, n, n], out)?))
    }

    pub fn forward(&self, s: &mut Session<'_>, iq: Var, spec: Var) -> Result<ForwardOut> {
        let nodes = self.encoder.forward(s, iq, spec)?;
        let adjacency = self.adjacency(s.tape, nodes)?;
        let (mut x, mut a) = (nodes, adjacency);
        let mut stages = Vec::with_capacity(self.layers.len());
        let mut aux: Option<Var> = None;
        for layer in &self.layers {
            let st = layer.forward(s, x, a, self.cfg.aux_loss)?;
            if let Some(p) = st.aux {
                aux = Some(match aux {
                    Some(acc) => s.tape.add(acc, p)?,
                    None => p,
                });
            }
            (x, a) = (st.x, st.a);
            stages.push(st);
        }
        let h = self.final_gcn.forward(s, x, a)?;
        let pooled = s.tape.mean_axis(h, 1)?;
        let logits = self.classifier.forward(s, pooled)?;
        Ok(ForwardOut { logits, nodes, adjacency, stages, aux })
    }

    /// Cross-entropy (plus assignment penalties when enabled) and the
    /// forward results.
    pub fn loss(&self, s: &mut Session<'_>, iq: Var, spec: Var, labels: &[usize]) -> Result<(Var, ForwardOut)> {
        let out = self.forward(s, iq, spec)?;
        let ce = s.tape.cross_entropy(out.logits, labels)?;
        let loss = match out.aux {
            Some(p) => s.tape.add(ce, p)?,
            None => ce,
        };
        Ok((loss, out))
    }

    /// Eval-mode logits `[B, ζ]` for a batch of frames.
    pub fn logits(&self, frames: &[(&[f64], &[f64])]) -> Result<Tensor> {
        let (iq, spec) = self.inputs(frames)?;
        let mut tape = Tape::new();
        let mut s = Session::new(&mut tape, &self.store, Mode::Eval);
        let (iq, spec) = (s.tape.constant(iq), s.tape.constant(spec));
        let out = self.forward(&mut s, iq, spec)?;
        Ok(s.tape.value(out.logits).clone())
    }

    /// Finite-difference check of the training loss (train-mode batch norm)
    /// with respect to every parameter, at the current parameter values.
    pub fn grad_check_loss(
        &self,
        frames: &[(&[f64], &[f64])],
        labels: &[usize],
        eps: f64,
        tolerance: f64,
    ) -> Result<GradCheckReport> {
        let (iq, spec) = self.inputs(frames)?;
        let f = |tape: &mut Tape, vars: &[Var]| -> std::result::Result<Var, NumericsError> {
            let mut s = Session::bound(tape, &self.store, vars, Mode::Train);
            let (iq, spec) = (s.tape.constant(iq.clone()), s.tape.constant(spec.clone()));
            match self.loss(&mut s, iq, spec, labels) {
                Ok((loss, _)) => Ok(loss),
                Err(ModelError::Numerics(e)) => Err(e),
                Err(other) => Err(NumericsError::arg("model", other.to_string())),
            }
        };
        Ok(grad_check(f, self.store.values(), eps, tolerance)?)
    }

    /// Eval-mode graphs for one frame: the initial node graph, then the
    /// output of each PoolGAT layer, as `(features [N, F], adjacency [N, N])`.
    pub fn graph_stages(&self, i: &[f64], q: &[f64]) -> Result<Vec<(Tensor, Tensor)>> {
        let (iq, spec) = self.inputs(&[(i, q)])?;
        let mut tape = Tape::new();
        let mut s = Session::new(&mut tape, &self.store, Mode::Eval);
        let (iq, spec) = (s.tape.constant(iq), s.tape.constant(spec));
        let out = self.forward(&mut s, iq, spec)?;
        let squeeze = |t: &Tensor| Tensor::new(t.shape()[1..].to_vec(), t.data().to_vec());
        let mut graphs = vec![(out.nodes, out.adjacency)];
        graphs.extend(out.stages.iter().map(|st| (st.x, st.a)));
        let mut res = Vec::with_capacity(graphs.len());
        for (x, a) in graphs {
            res.push((squeeze(s.tape.value(x))?, squeeze(s.tape.value(a))?));
        }
        Ok(res)
    }

    pub fn predict(&self, frames: &[(&[f64], &[f64])]) -> Result<Vec<usize>> {
        let logits = self.logits(frames)?;
        Ok(logits.data().chunks(self.cfg.n_classes).map(ops::argmax).collect())
    }
}
