//! Spatial/frequency preprocessing and fusion into graph node features.
//!
//! ```text
//! I/Q [B,2,Γ] -> BN -> Conv1d(k3) ------------------> x_sd [B,O,Γ]
//! |X| [B,1,f,Γ] -> Conv2d(f x 1) -> squeeze --------> x_fd [B,O,Γ]
//! concat [B,2O,Γ] -> Conv1d(k1) -> BN -> GeLU -> Conv1d(k1)
//!   -> transpose [B,Γ,2O] -> BiLSTM [B,Γ,2F] -> max-pool(2,2) on features -> [B,N,F]
//! ```

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::dsp::{DspError, StftPlan};
use crate::nn::{BatchNorm, BiLstm, Conv1d, Conv2d, ParamStore, Session};
use crate::numerics::{NumericsError, Result, Tensor, Var};

/// Which inputs reach the fusion block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum InputMode {
    #[default]
    Full,
    /// Both branches, but no rotation augmentation during training.
    NoRotation,
    /// Zeros in place of the frequency-domain branch.
    NoDstft,
    /// Zeros in place of the I/Q branch.
    NoIq,
}

impl InputMode {
    pub const ALL: [InputMode; 4] = [Self::Full, Self::NoRotation, Self::NoDstft, Self::NoIq];

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoRotation => "no-rotation",
            Self::NoDstft => "no-dstft",
            Self::NoIq => "no-iq",
        }
    }

    pub fn augments(self) -> bool {
        self != Self::NoRotation
    }
}

impl fmt::Display for InputMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InputMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| format!("unknown input variant `{s}`"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub gamma: usize,
    pub n_dft: usize,
    pub win_len: usize,
    /// Channels of each domain branch.
    pub out_channels: usize,
    /// Node feature width; also the LSTM hidden size per direction.
    pub feat_dim: usize,
    pub bn_eps: f64,
    pub inputs: InputMode,
}

pub struct Encoder {
    cfg: EncoderConfig,
    bn_iq: BatchNorm,
    conv_sd: Conv1d,
    conv_fd: Conv2d,
    fuse_inner: Conv1d,
    fuse_bn: BatchNorm,
    fuse_outer: Conv1d,
    lstm: BiLstm,
}

impl Encoder {
    pub fn new<R: Rng>(store: &mut ParamStore, cfg: EncoderConfig, rng: &mut R) -> Self {
        let (o, f) = (cfg.out_channels, cfg.feat_dim);
        Self {
            bn_iq: BatchNorm::new(store, "enc.bn_iq", 2, cfg.bn_eps),
            conv_sd: Conv1d::new(store, "enc.conv_sd", 2, o, 3, 1, rng),
            conv_fd: Conv2d::new(store, "enc.conv_fd", 1, o, [cfg.n_dft, 1], rng),
            fuse_inner: Conv1d::new(store, "enc.fuse_inner", 2 * o, 2 * o, 1, 0, rng),
            fuse_bn: BatchNorm::new(store, "enc.fuse_bn", 2 * o, cfg.bn_eps),
            fuse_outer: Conv1d::new(store, "enc.fuse_outer", 2 * o, 2 * o, 1, 0, rng),
            lstm: BiLstm::new(store, "enc.lstm", 2 * o, f, rng),
            cfg,
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    /// Domain features `(x_sd, x_fd)`, each `[B, O, Γ]`.
    pub fn preprocess(&self, s: &mut Session<'_>, iq: Var, spec: Var) -> Result<(Var, Var)> {
        let (gamma, o) = (self.cfg.gamma, self.cfg.out_channels);
        let iq_shape = s.tape.shape(iq).to_vec();
        let spec_shape = s.tape.shape(spec).to_vec();
        let batch = iq_shape[0];
        if iq_shape != [batch, 2, gamma] {
            return Err(NumericsError::shape("encoder", format!("I/Q input {iq_shape:?}, expected [B, 2, {gamma}]")));
        }
        if spec_shape != [batch, 1, self.cfg.n_dft, gamma] {
            return Err(NumericsError::shape(
                "encoder",
                format!("spectrogram {spec_shape:?}, expected [{batch}, 1, {}, {gamma}]", self.cfg.n_dft),
            ));
        }
        let x_sd = if self.cfg.inputs == InputMode::NoIq {
            s.tape.constant(Tensor::zeros(&[batch, o, gamma]))
        } else {
            let x = self.bn_iq.forward(s, iq)?;
            self.conv_sd.forward(s, x)?
        };
        let x_fd = if self.cfg.inputs == InputMode::NoDstft {
            s.tape.constant(Tensor::zeros(&[batch, o, gamma]))
        } else {
            let x = self.conv_fd.forward(s, spec)?;
            s.tape.reshape(x, &[batch, o, gamma])?
        };
        Ok((x_sd, x_fd))
    }

    /// Fusion block and sequence model: `[B, N, F]` node features.
    pub fn fuse(&self, s: &mut Session<'_>, x_sd: Var, x_fd: Var) -> Result<Var> {
        let x = s.tape.concat(&[x_sd, x_fd], 1)?;
        let x = self.fuse_inner.forward(s, x)?;
        let x = self.fuse_bn.forward(s, x)?;
        let x = s.tape.gelu(x)?;
        let x = self.fuse_outer.forward(s, x)?;
        let x = s.tape.transpose(x)?;
        let x = self.lstm.forward(s, x)?;
        s.tape.maxpool1d(x, 2, 2)
    }

    pub fn forward(&self, s: &mut Session<'_>, iq: Var, spec: Var) -> Result<Var> {
        let (sd, fd) = self.preprocess(s, iq, spec)?;
        self.fuse(s, sd, fd)
    }
}

/// Stacks frames into the encoder's two inputs: `[B, 2, Γ]` I/Q and
/// `[B, 1, f, Γ]` spectrogram magnitudes.
pub fn batch_inputs(frames: &[(&[f64], &[f64])], plan: &StftPlan) -> std::result::Result<(Tensor, Tensor), DspError> {
    let b = frames.len();
    let gamma = frames.first().map_or(0, |f| f.0.len());
    let f = plan.n_dft();
    let mut iq = Vec::with_capacity(b * 2 * gamma);
    let mut spec = Vec::with_capacity(b * f * gamma);
    for &(i, q) in frames {
        if i.len() != gamma || q.len() != gamma {
            return Err(DspError::LengthMismatch { i: i.len(), q: gamma });
        }
        iq.extend_from_slice(i);
        iq.extend_from_slice(q);
        spec.extend(plan.compute(i, q)?.mag);
    }
    let iq = Tensor::new(vec![b, 2, gamma], iq).expect("sizes match by construction");
    let spec = Tensor::new(vec![b, 1, f, gamma], spec).expect("sizes match by construction");
    Ok((iq, spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mode;
    use crate::numerics::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(inputs: InputMode) -> EncoderConfig {
        EncoderConfig { gamma: 32, n_dft: 16, win_len: 8, out_channels: 4, feat_dim: 6, bn_eps: 1e-5, inputs }
    }

    #[test]
    fn shapes_follow_the_pipeline() {
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, cfg(InputMode::Full), &mut ChaCha8Rng::seed_from_u64(1));
        let plan = StftPlan::new(16, 8).unwrap();
        let i: Vec<f64> = (0..32).map(|t| (t as f64 * 0.3).cos()).collect();
        let q: Vec<f64> = (0..32).map(|t| (t as f64 * 0.3).sin()).collect();
        let (iq, spec) = batch_inputs(&[(&i, &q), (&q, &i)], &plan).unwrap();
        let mut tape = Tape::new();
        let mut s = Session::new(&mut tape, &store, Mode::Train);
        let (iq, spec) = (s.tape.constant(iq), s.tape.constant(spec));
        let (sd, fd) = enc.preprocess(&mut s, iq, spec).unwrap();
        assert_eq!(s.tape.shape(sd), &[2, 4, 32]);
        assert_eq!(s.tape.shape(fd), &[2, 4, 32]);
        let x = enc.fuse(&mut s, sd, fd).unwrap();
        assert_eq!(s.tape.shape(x), &[2, 32, 6]);
    }

    #[test]
    fn spectrogram_length_must_match_frame() {
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, cfg(InputMode::Full), &mut ChaCha8Rng::seed_from_u64(1));
        let mut tape = Tape::new();
        let mut s = Session::new(&mut tape, &store, Mode::Eval);
        let iq = s.tape.constant(Tensor::zeros(&[1, 2, 32]));
        let spec = s.tape.constant(Tensor::zeros(&[1, 1, 16, 31]));
        assert!(enc.preprocess(&mut s, iq, spec).is_err());
    }

    #[test]
    fn ablated_branch_is_zero() {
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, cfg(InputMode::NoIq), &mut ChaCha8Rng::seed_from_u64(1));
        let mut tape = Tape::new();
        let mut s = Session::new(&mut tape, &store, Mode::Eval);
        let iq = s.tape.constant(Tensor::full(&[1, 2, 32], 1.0));
        let spec = s.tape.constant(Tensor::full(&[1, 1, 16, 32], 1.0));
        let (sd, _) = enc.preprocess(&mut s, iq, spec).unwrap();
        assert!(s.tape.value(sd).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn input_mode_names_parse() {
        for m in InputMode::ALL {
            assert_eq!(m.name().parse::<InputMode>().unwrap(), m);
        }
        assert!("bogus".parse::<InputMode>().is_err());
    }
}
