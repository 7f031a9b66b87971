use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::num_complex::Complex64;

use super::{rng_for, stream, ChannelConfig};

/// Complex fading gain of one tap over `len` samples.
///
/// The scattered part is a sum of `num_sinusoids` equal-power Doppler
/// components with random arrival angles and phases; the direct path has
/// phase 0 at `t = 0` and carries `K / (K + 1)` of the power.
pub fn rician_gain(
    k_factor: f64,
    max_doppler_hz: f64,
    num_sinusoids: usize,
    sample_rate_hz: f64,
    len: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Complex64> {
    let (los, scatter) = if k_factor.is_infinite() {
        (1.0, 0.0)
    } else {
        ((k_factor / (k_factor + 1.0)).sqrt(), (1.0 / (k_factor + 1.0)).sqrt())
    };
    let wd = 2.0 * PI * max_doppler_hz / sample_rate_hz;
    let los_w = wd * rng.random_range(0.0..2.0 * PI).cos();
    let comps: Vec<(f64, f64)> = (0..num_sinusoids)
        .map(|_| (wd * rng.random_range(0.0..2.0 * PI).cos(), rng.random_range(0.0..2.0 * PI)))
        .collect();
    let norm = scatter / (num_sinusoids as f64).sqrt();
    (0..len)
        .map(|n| {
            let t = n as f64;
            let mut h = Complex64::from_polar(los, los_w * t);
            if norm > 0.0 {
                for &(w, phi) in &comps {
                    h += Complex64::from_polar(norm, w * t + phi);
                }
            }
            h
        })
        .collect()
}

/// Bounded Gaussian random walk starting uniformly inside `±max_dev`.
fn drift(max_dev: f64, std: f64, len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if max_dev == 0.0 {
        return vec![0.0; len];
    }
    let mut f = rng.random_range(-max_dev..max_dev);
    let step = Normal::new(0.0, std).expect("std validated nonnegative");
    (0..len)
        .map(|_| {
            f = (f + step.sample(rng)).clamp(-max_dev, max_dev);
            f
        })
        .collect()
}

/// Passes `tx` through the tapped delay line, resamples with the drifting
/// sample clock from `start`, rotates by the drifting carrier offset, and
/// returns `gamma` samples as separate I and Q vectors.
pub fn apply_channel(
    channel: &ChannelConfig,
    tx: &[Complex64],
    start: usize,
    gamma: usize,
    seed: u64,
) -> (Vec<f64>, Vec<f64>) {
    let n = tx.len();
    let mut fading_rng = rng_for(seed, stream::FADING);
    let mut rx = vec![Complex64::default(); n];
    for (&db, &offset) in channel.tap_magnitudes_db.iter().zip(&channel.tap_offsets()) {
        let amp = 10f64.powf(db / 20.0);
        let h = rician_gain(
            channel.k_factor,
            channel.max_doppler_hz,
            channel.num_sinusoids,
            channel.sample_rate_hz,
            n,
            &mut fading_rng,
        );
        for t in offset..n {
            rx[t] += tx[t - offset] * h[t] * amp;
        }
    }

    let fs = channel.sample_rate_hz;
    let mut clock_rng = rng_for(seed, stream::CLOCK);
    let sro = drift(channel.sro_max_dev_hz, channel.sro_std_per_sample, gamma, &mut clock_rng);
    let lo = drift(channel.lo_max_dev_hz, channel.lo_std_per_sample, gamma, &mut clock_rng);
    let mut phase = if channel.lo_max_dev_hz > 0.0 { clock_rng.random_range(0.0..2.0 * PI) } else { 0.0 };

    let mut pos = start as f64;
    let mut i = Vec::with_capacity(gamma);
    let mut q = Vec::with_capacity(gamma);
    for k in 0..gamma {
        let idx = (pos.round() as usize).min(n - 1);
        let v = rx[idx] * Complex64::from_polar(1.0, phase);
        i.push(v.re);
        q.push(v.im);
        pos += 1.0 + sro[k] / fs;
        phase += 2.0 * PI * lo[k] / fs;
    }
    (i, q)
}
