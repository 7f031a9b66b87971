use std::path::Path;

use super::{synthesize_frame, ChannelConfig, Modulation, ModulationScheme, Result, SynthError};
use crate::datastore::{Dataset, Manifest, Record};

/// Everything needed to regenerate a synthetic dataset bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSpec {
    /// Label index `k` is `schemes[k]`.
    pub schemes: Vec<Modulation>,
    pub snrs: Vec<i32>,
    pub per_cell: usize,
    pub channel: ChannelConfig,
    pub samples_per_symbol: usize,
    pub gamma: usize,
    pub seed: u64,
    /// Recorded in the manifest only.
    pub preset: String,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `k`-th frame in the (`scheme`, `snr_db`) cell. Distinct cells
/// and indices give unrelated seeds.
pub fn record_seed(seed: u64, scheme: Modulation, snr_db: i32, k: usize) -> u64 {
    let mut h = splitmix(seed);
    h = splitmix(h ^ scheme as u64);
    h = splitmix(h ^ (snr_db as i64 as u64));
    splitmix(h ^ k as u64)
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SynthError::InvalidRequest(m.to_string()));
        if self.schemes.is_empty() {
            return bad("no modulation schemes requested");
        }
        if self.schemes.len() > usize::from(u8::MAX) {
            return bad("too many classes for an 8-bit label");
        }
        if self.snrs.is_empty() {
            return bad("empty SNR range");
        }
        if self.snrs.iter().any(|&s| i16::try_from(s).is_err()) {
            return bad("SNR outside the 16-bit range");
        }
        if self.per_cell == 0 {
            return bad("frames per cell must be at least 1");
        }
        if self.samples_per_symbol == 0 || self.gamma == 0 {
            return bad("samples per symbol and frame length must be positive");
        }
        self.channel.validate()
    }

    pub fn record_count(&self) -> usize {
        self.schemes.len() * self.snrs.len() * self.per_cell
    }

    /// Records ordered by scheme, then SNR, then index within the cell.
    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let mut ds = Dataset::new(self.gamma, self.schemes.len());
        ds.records.reserve(self.record_count());
        for (label, &m) in self.schemes.iter().enumerate() {
            let scheme = ModulationScheme::new(m, self.samples_per_symbol)?;
            for &snr in &self.snrs {
                for k in 0..self.per_cell {
                    let f =
                        synthesize_frame(&scheme, snr, &self.channel, self.gamma, record_seed(self.seed, m, snr, k))?;
                    ds.records.push(Record {
                        i: f.i.iter().map(|&v| v as f32).collect(),
                        q: f.q.iter().map(|&v| v as f32).collect(),
                        snr_db: snr as i16,
                        label: label as u8,
                    });
                }
            }
        }
        Ok(ds)
    }

    pub fn manifest(&self) -> Manifest {
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let c = &self.channel;
        Manifest::new(self.schemes.iter().map(|m| m.name().to_string()).collect())
            .with("generator", "sigsynth")
            .with("preset", &self.preset)
            .with("seed", self.seed)
            .with("gamma", self.gamma)
            .with("per_cell", self.per_cell)
            .with("snrs", self.snrs.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(","))
            .with("samples_per_symbol", self.samples_per_symbol)
            .with("tap_magnitudes_db", list(&c.tap_magnitudes_db))
            .with("tap_delays_ns", list(&c.tap_delays_ns))
            .with("max_doppler_hz", c.max_doppler_hz)
            .with("num_sinusoids", c.num_sinusoids)
            .with("k_factor", c.k_factor)
            .with("lo_max_dev_hz", c.lo_max_dev_hz)
            .with("lo_std_per_sample", c.lo_std_per_sample)
            .with("sro_max_dev_hz", c.sro_max_dev_hz)
            .with("sro_std_per_sample", c.sro_std_per_sample)
            .with("sample_rate_hz", c.sample_rate_hz)
    }
}

/// Generates the dataset and writes it, with its manifest, to `path`.
pub fn synthesize_dataset(spec: &DatasetSpec, path: &Path) -> Result<Dataset> {
    let ds = spec.generate()?;
    ds.write(path)?;
    spec.manifest().write(path)?;
    Ok(ds)
}
