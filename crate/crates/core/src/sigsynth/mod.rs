//! Labelled I/Q frame synthesis through an impaired radio channel.
//!
//! A frame is produced in four stages, each drawing from its own ChaCha
//! sub-stream of the frame seed: modulation (symbols or analog message),
//! per-tap fading, clock impairments (sample-rate and carrier drift) and
//! additive noise. Keeping noise on its own stream means the same seed yields
//! the same clean signal with or without noise.

mod channel;
mod dataset;
mod modulation;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub use channel::{apply_channel, rician_gain};
pub use dataset::{record_seed, synthesize_dataset, DatasetSpec};
pub use modulation::{modulate, rrc_taps};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("unknown modulation scheme `{0}`")]
    UnknownScheme(String),
    #[error("unknown channel preset `{0}` (expected rml16-like, rml22-like or ideal)")]
    UnknownPreset(String),
    #[error("invalid channel: {0}")]
    InvalidChannel(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Store(#[from] crate::datastore::DatastoreError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Modulation {
    Bpsk,
    Qpsk,
    Psk8,
    Qam16,
    Qam64,
    Gfsk,
    Cpfsk,
    Pam4,
    Wbfm,
    AmDsb,
    AmSsb,
}

impl Modulation {
    pub const ALL: [Modulation; 11] = [
        Self::Bpsk,
        Self::Qpsk,
        Self::Psk8,
        Self::Qam16,
        Self::Qam64,
        Self::Gfsk,
        Self::Cpfsk,
        Self::Pam4,
        Self::Wbfm,
        Self::AmDsb,
        Self::AmSsb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Bpsk => "BPSK",
            Self::Qpsk => "QPSK",
            Self::Psk8 => "8PSK",
            Self::Qam16 => "QAM16",
            Self::Qam64 => "QAM64",
            Self::Gfsk => "GFSK",
            Self::Cpfsk => "CPFSK",
            Self::Pam4 => "PAM4",
            Self::Wbfm => "WBFM",
            Self::AmDsb => "AM-DSB",
            Self::AmSsb => "AM-SSB",
        }
    }

    pub fn is_analog(self) -> bool {
        matches!(self, Self::Wbfm | Self::AmDsb | Self::AmSsb)
    }
}

impl fmt::Display for Modulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modulation {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase();
        Self::ALL.into_iter().find(|m| m.name() == key).ok_or_else(|| SynthError::UnknownScheme(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModulationScheme {
    pub id: Modulation,
    pub samples_per_symbol: usize,
}

impl ModulationScheme {
    pub fn new(id: Modulation, samples_per_symbol: usize) -> Result<Self> {
        if samples_per_symbol == 0 {
            return Err(SynthError::InvalidRequest("samples_per_symbol must be at least 1".into()));
        }
        Ok(Self { id, samples_per_symbol })
    }
}

/// Tapped-delay-line channel with Rician fading and clock drift.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelConfig {
    pub tap_magnitudes_db: Vec<f64>,
    pub tap_delays_ns: Vec<f64>,
    pub max_doppler_hz: f64,
    pub num_sinusoids: usize,
    /// Rician K. `f64::INFINITY` gives a static unit-gain path.
    pub k_factor: f64,
    pub lo_max_dev_hz: f64,
    pub lo_std_per_sample: f64,
    pub sro_max_dev_hz: f64,
    pub sro_std_per_sample: f64,
    pub sample_rate_hz: f64,
}

impl ChannelConfig {
    /// Pass-through channel: one static tap, no drift.
    pub fn ideal() -> Self {
        Self {
            tap_magnitudes_db: vec![0.0],
            tap_delays_ns: vec![0.0],
            max_doppler_hz: 0.0,
            num_sinusoids: 1,
            k_factor: f64::INFINITY,
            lo_max_dev_hz: 0.0,
            lo_std_per_sample: 0.0,
            sro_max_dev_hz: 0.0,
            sro_std_per_sample: 0.0,
            sample_rate_hz: 200e3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::InvalidChannel(m));
        if self.tap_magnitudes_db.is_empty() {
            return bad("empty tap list".into());
        }
        if self.tap_magnitudes_db.len() != self.tap_delays_ns.len() {
            return bad(format!(
                "{} tap magnitudes but {} delays",
                self.tap_magnitudes_db.len(),
                self.tap_delays_ns.len()
            ));
        }
        if self.tap_delays_ns[0] != 0.0 {
            return bad("first tap delay must be 0".into());
        }
        if self.tap_delays_ns.iter().any(|&d| !(d >= 0.0 && d.is_finite())) {
            return bad("tap delays must be finite and nonnegative".into());
        }
        if self.tap_magnitudes_db.iter().any(|m| !m.is_finite()) {
            return bad("tap magnitudes must be finite".into());
        }
        if self.num_sinusoids == 0 {
            return bad("num_sinusoids must be positive".into());
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return bad("sample rate must be positive".into());
        }
        let nonneg = [
            ("max_doppler_hz", self.max_doppler_hz),
            ("k_factor", self.k_factor),
            ("lo_max_dev_hz", self.lo_max_dev_hz),
            ("lo_std_per_sample", self.lo_std_per_sample),
            ("sro_max_dev_hz", self.sro_max_dev_hz),
            ("sro_std_per_sample", self.sro_std_per_sample),
        ];
        if let Some((name, v)) = nonneg.iter().find(|(_, v)| !(*v >= 0.0)) {
            return bad(format!("{name} = {v} must be nonnegative"));
        }
        Ok(())
    }

    /// Integer sample offset of each tap.
    pub fn tap_offsets(&self) -> Vec<usize> {
        self.tap_delays_ns.iter().map(|d| (d * 1e-9 * self.sample_rate_hz).round() as usize).collect()
    }
}

/// A named bundle of channel, symbol rate, SNR grid and scheme list.
#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub channel: ChannelConfig,
    pub samples_per_symbol: usize,
    pub snrs: Vec<i32>,
    pub schemes: Vec<Modulation>,
}

impl Preset {
    pub const NAMES: [&'static str; 3] = ["rml16-like", "rml22-like", "ideal"];

    pub fn by_name(name: &str) -> Result<Self> {
        let all = Modulation::ALL.to_vec();
        match name {
            "rml16-like" => Ok(Self {
                name: "rml16-like",
                channel: ChannelConfig {
                    tap_magnitudes_db: vec![0.0, -0.97, -5.23],
                    tap_delays_ns: vec![0.0, 4.5, 8.5],
                    max_doppler_hz: 1.0,
                    num_sinusoids: 8,
                    k_factor: 4.0,
                    lo_max_dev_hz: 500.0,
                    lo_std_per_sample: 1e-2,
                    sro_max_dev_hz: 500.0,
                    sro_std_per_sample: 1e-2,
                    sample_rate_hz: 200e3,
                },
                samples_per_symbol: 8,
                snrs: (-20..=18).step_by(2).collect(),
                schemes: all,
            }),
            "rml22-like" => Ok(Self {
                name: "rml22-like",
                channel: ChannelConfig {
                    tap_magnitudes_db: vec![-1.0, -1.0, -1.0, 0.0, 0.0, 0.0, -3.0, -5.0, -7.0],
                    tap_delays_ns: vec![0.0, 50.0, 120.0, 200.0, 230.0, 500.0, 1600.0, 2300.0, 5000.0],
                    max_doppler_hz: 70.0,
                    num_sinusoids: 8,
                    k_factor: 0.0,
                    lo_max_dev_hz: 500.0,
                    lo_std_per_sample: 1e-2,
                    sro_max_dev_hz: 50.0,
                    sro_std_per_sample: 1e-3,
                    sample_rate_hz: 30e3,
                },
                samples_per_symbol: 2,
                snrs: (-20..=20).step_by(2).collect(),
                schemes: all,
            }),
            "ideal" => Ok(Self {
                name: "ideal",
                channel: ChannelConfig::ideal(),
                samples_per_symbol: 8,
                snrs: (-20..=18).step_by(2).collect(),
                schemes: all,
            }),
            other => Err(SynthError::UnknownPreset(other.to_string())),
        }
    }
}

/// One labelled frame; `i` and `q` hold `Γ` samples each.
#[derive(Clone, Debug, PartialEq)]
pub struct IQFrame {
    pub i: Vec<f64>,
    pub q: Vec<f64>,
    pub label: Modulation,
    pub snr_db: i32,
    pub seed: u64,
}

impl IQFrame {
    pub fn len(&self) -> usize {
        self.i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.i.is_empty()
    }

    pub fn power(&self) -> f64 {
        mean_power(&self.i, &self.q)
    }
}

pub(crate) fn mean_power(i: &[f64], q: &[f64]) -> f64 {
    i.iter().zip(q).map(|(a, b)| a * a + b * b).sum::<f64>() / i.len() as f64
}

/// Sub-stream indices of a frame seed.
pub(crate) mod stream {
    pub const SOURCE: u64 = 0;
    pub const FADING: u64 = 1;
    pub const CLOCK: u64 = 2;
    pub const NOISE: u64 = 3;
}

pub(crate) fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Noise-free frame normalised to unit mean power over its `gamma` samples.
pub fn synthesize_clean(
    scheme: &ModulationScheme,
    channel: &ChannelConfig,
    gamma: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    channel.validate()?;
    if gamma == 0 {
        return Err(SynthError::InvalidRequest("frame length must be positive".into()));
    }
    let offsets = channel.tap_offsets();
    let max_offset = offsets.iter().copied().max().unwrap_or(0);
    let filter_len = 8 * scheme.samples_per_symbol;
    // Enough lead-in to flush the pulse-shaping and multipath transients, and
    // enough tail for the resampler to drop samples.
    let warmup = filter_len + max_offset;
    let total = warmup + 2 * gamma + 16;
    let tx = modulate(scheme, total, gamma, &mut rng_for(seed, stream::SOURCE));
    let (mut i, mut q) = apply_channel(channel, &tx, warmup, gamma, seed);
    let p = mean_power(&i, &q);
    if !(p > 0.0 && p.is_finite()) {
        return Err(SynthError::InvalidRequest(format!("{} frame has zero power", scheme.id)));
    }
    let s = p.sqrt().recip();
    i.iter_mut().chain(q.iter_mut()).for_each(|v| *v *= s);
    Ok((i, q))
}

/// Clean frame plus complex white Gaussian noise of variance `10^(-snr/10)`.
pub fn synthesize_frame(
    scheme: &ModulationScheme,
    snr_db: i32,
    channel: &ChannelConfig,
    gamma: usize,
    seed: u64,
) -> Result<IQFrame> {
    let (mut i, mut q) = synthesize_clean(scheme, channel, gamma, seed)?;
    let sigma = (10f64.powf(-f64::from(snr_db) / 10.0) / 2.0).sqrt();
    let normal = Normal::new(0.0, sigma).expect("finite positive sigma");
    let mut rng = rng_for(seed, stream::NOISE);
    for (a, b) in i.iter_mut().zip(q.iter_mut()) {
        *a += normal.sample(&mut rng);
        *b += normal.sample(&mut rng);
    }
    Ok(IQFrame { i, q, label: scheme.id, snr_db, seed })
}
