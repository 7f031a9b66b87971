//! Rotation augmentation and the short-time Fourier magnitude image.
//!
//! The transform treats a frame as the complex sequence `x = i + jq`, slides a
//! periodic Blackman window one sample at a time over a reflect-padded copy,
//! and zero-pads every windowed segment to `n_dft` points. With hop 1 and
//! `win_len / 2` samples of padding on the left (one fewer on the right) the
//! frame count equals the input length, and frame `m` is centred on sample `m`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::sigsynth::IQFrame;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DspError {
    #[error("window length {0} is below the minimum of 4")]
    WindowTooShort(usize),
    #[error("window length {win_len} exceeds the {n_dft}-point DFT")]
    WindowTooLong { win_len: usize, n_dft: usize },
    #[error("frame of {len} samples is too short for reflect padding of {pad}")]
    FrameTooShort { len: usize, pad: usize },
    #[error("I and Q lengths differ ({i} vs {q})")]
    LengthMismatch { i: usize, q: usize },
}

/// One of the four quadrant rotations used for augmentation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RotationAngle {
    Deg0,
    Deg90,
    Deg180,
    Deg270,
}

impl RotationAngle {
    pub const ALL: [RotationAngle; 4] = [Self::Deg0, Self::Deg90, Self::Deg180, Self::Deg270];

    /// Angle for `k mod 4` quarter turns.
    pub fn from_quarter_turns(k: usize) -> Self {
        Self::ALL[k % 4]
    }

    pub fn degrees(self) -> u32 {
        match self {
            Self::Deg0 => 0,
            Self::Deg90 => 90,
            Self::Deg180 => 180,
            Self::Deg270 => 270,
        }
    }
}

impl fmt::Display for RotationAngle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}°", self.degrees())
    }
}

/// Applies `[cos φ, -sin φ; sin φ, cos φ]` to every `(i, q)` column. The
/// quadrant angles only permute and negate, so the result is exact.
pub fn rotate_iq(i: &[f64], q: &[f64], phi: RotationAngle) -> (Vec<f64>, Vec<f64>) {
    match phi {
        RotationAngle::Deg0 => (i.to_vec(), q.to_vec()),
        RotationAngle::Deg90 => (q.iter().map(|v| -v).collect(), i.to_vec()),
        RotationAngle::Deg180 => (i.iter().map(|v| -v).collect(), q.iter().map(|v| -v).collect()),
        RotationAngle::Deg270 => (q.to_vec(), i.iter().map(|v| -v).collect()),
    }
}

pub fn rotate(frame: &IQFrame, phi: RotationAngle) -> IQFrame {
    let (i, q) = rotate_iq(&frame.i, &frame.q, phi);
    IQFrame { i, q, ..frame.clone() }
}

/// Magnitude time-frequency image, stored `[f_bins][frames]` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram {
    pub mag: Vec<f64>,
    pub f_bins: usize,
    pub frames: usize,
}

impl Spectrogram {
    pub fn at(&self, bin: usize, frame: usize) -> f64 {
        self.mag[bin * self.frames + frame]
    }
}

/// Periodic Blackman window (the `M + 1`-point symmetric window without its
/// last sample).
pub fn blackman(len: usize) -> Vec<f64> {
    let m = len as f64;
    (0..len)
        .map(|n| {
            let x = 2.0 * PI * n as f64 / m;
            0.42 - 0.5 * x.cos() + 0.08 * (2.0 * x).cos()
        })
        .collect()
}

/// Mirror padding without repeating the edge sample, as in numpy's `reflect`.
pub fn reflect_pad(x: &[Complex64], left: usize, right: usize) -> Vec<Complex64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + left + right);
    out.extend((1..=left).rev().map(|k| x[k]));
    out.extend_from_slice(x);
    out.extend((1..=right).map(|k| x[n - 1 - k]));
    out
}

/// Reusable transform state: window and FFT plan for one `(n_dft, win_len)`.
#[derive(Clone)]
pub struct StftPlan {
    n_dft: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for StftPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StftPlan").field("n_dft", &self.n_dft).field("win_len", &self.window.len()).finish()
    }
}

impl StftPlan {
    pub fn new(n_dft: usize, win_len: usize) -> Result<Self, DspError> {
        if win_len < 4 {
            return Err(DspError::WindowTooShort(win_len));
        }
        if win_len > n_dft {
            return Err(DspError::WindowTooLong { win_len, n_dft });
        }
        let fft = FftPlanner::new().plan_fft_forward(n_dft);
        Ok(Self { n_dft, window: blackman(win_len), fft })
    }

    pub fn n_dft(&self) -> usize {
        self.n_dft
    }

    pub fn win_len(&self) -> usize {
        self.window.len()
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Spectrogram of `i + jq`.
    pub fn compute(&self, i: &[f64], q: &[f64]) -> Result<Spectrogram, DspError> {
        if i.len() != q.len() {
            return Err(DspError::LengthMismatch { i: i.len(), q: q.len() });
        }
        let w = self.window.len();
        let (left, right) = (w / 2, w - 1 - w / 2);
        let len = i.len();
        if len <= left {
            return Err(DspError::FrameTooShort { len, pad: left });
        }
        let x: Vec<Complex64> = i.iter().zip(q).map(|(&re, &im)| Complex64::new(re, im)).collect();
        let padded = reflect_pad(&x, left, right);
        let mut buf = vec![Complex64::default(); self.n_dft];
        let mut scratch = vec![Complex64::default(); self.fft.get_inplace_scratch_len()];
        let mut mag = vec![0.0; self.n_dft * len];
        for m in 0..len {
            buf.fill(Complex64::default());
            for (n, (b, &wn)) in buf.iter_mut().zip(&self.window).enumerate() {
                *b = padded[m + n] * wn;
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (k, v) in buf.iter().enumerate() {
                mag[k * len + m] = v.norm();
            }
        }
        Ok(Spectrogram { mag, f_bins: self.n_dft, frames: len })
    }
}

/// One-shot transform of a frame; builds a fresh plan.
pub fn dstft(frame: &IQFrame, n_dft: usize, win_len: usize) -> Result<Spectrogram, DspError> {
    StftPlan::new(n_dft, win_len)?.compute(&frame.i, &frame.q)
}
