use std::f64::consts::{FRAC_1_SQRT_2, FRAC_PI_4, PI};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;

use super::{Modulation, ModulationScheme};

const RRC_ROLLOFF: f64 = 0.35;
const RRC_SPAN: usize = 8;
const GAUSS_BT: f64 = 0.35;
const GFSK_INDEX: f64 = 0.25;
const CPFSK_INDEX: f64 = 0.5;
const TONES: usize = 8;
const AM_DEPTH: f64 = 0.5;
/// Peak WBFM deviation in cycles per sample.
const FM_DEVIATION: f64 = 0.25;

/// Root-raised-cosine taps spanning `span` symbols, unit energy.
pub fn rrc_taps(sps: usize, beta: f64, span: usize) -> Vec<f64> {
    let n = span * sps + 1;
    let mid = (n / 2) as f64;
    let mut h: Vec<f64> = (0..n)
        .map(|k| {
            let t = (k as f64 - mid) / sps as f64;
            if t == 0.0 {
                1.0 - beta + 4.0 * beta / PI
            } else if beta > 0.0 && ((4.0 * beta * t).abs() - 1.0).abs() < 1e-12 {
                let a = PI / (4.0 * beta);
                beta / 2f64.sqrt() * ((1.0 + 2.0 / PI) * a.sin() + (1.0 - 2.0 / PI) * a.cos())
            } else {
                let num = (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
                num / (PI * t * (1.0 - (4.0 * beta * t).powi(2)))
            }
        })
        .collect();
    let e = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    h.iter_mut().for_each(|v| *v /= e);
    h
}

/// Gaussian-smoothed rectangular frequency pulse, normalised to unit sum.
fn gaussian_pulse(sps: usize, bt: f64) -> Vec<f64> {
    let span = 4;
    let n = span * sps + 1;
    let mid = (n / 2) as f64;
    let alpha = (2f64.ln() / 2.0).sqrt() / bt;
    let gauss: Vec<f64> = (0..n)
        .map(|k| {
            let t = (k as f64 - mid) / sps as f64;
            (-(PI * t / alpha).powi(2)).exp()
        })
        .collect();
    let mut pulse = vec![0.0; n + sps - 1];
    for (k, g) in gauss.iter().enumerate() {
        for j in 0..sps {
            pulse[k + j] += g;
        }
    }
    let s: f64 = pulse.iter().sum();
    pulse.iter_mut().for_each(|v| *v /= s);
    pulse
}

fn constellation_point(m: Modulation, rng: &mut ChaCha8Rng) -> Complex64 {
    let level = |rng: &mut ChaCha8Rng, k: i32| f64::from(2 * rng.random_range(0..k) - (k - 1));
    match m {
        Modulation::Bpsk => Complex64::new(if rng.random::<bool>() { 1.0 } else { -1.0 }, 0.0),
        Modulation::Qpsk => Complex64::from_polar(1.0, FRAC_PI_4 + f64::from(rng.random_range(0..4)) * PI / 2.0),
        Modulation::Psk8 => Complex64::from_polar(1.0, f64::from(rng.random_range(0..8)) * PI / 4.0),
        Modulation::Qam16 => Complex64::new(level(rng, 4), level(rng, 4)) / 10f64.sqrt(),
        Modulation::Qam64 => Complex64::new(level(rng, 8), level(rng, 8)) / 42f64.sqrt(),
        Modulation::Pam4 => Complex64::new(level(rng, 4) / 5f64.sqrt(), 0.0),
        _ => unreachable!("not a linear scheme"),
    }
}

fn convolve(x: &[Complex64], h: &[f64], len: usize) -> Vec<Complex64> {
    let mut y = vec![Complex64::default(); len];
    for (n, yn) in y.iter_mut().enumerate() {
        for (k, &hk) in h.iter().enumerate().take(n + 1) {
            if let Some(&xv) = x.get(n - k) {
                *yn += xv * hk;
            }
        }
    }
    y
}

fn linear(m: Modulation, sps: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    let n_sym = len.div_ceil(sps);
    let mut up = vec![Complex64::default(); n_sym * sps];
    for s in 0..n_sym {
        up[s * sps] = constellation_point(m, rng);
    }
    convolve(&up, &rrc_taps(sps, RRC_ROLLOFF, RRC_SPAN), len)
}

/// Continuous-phase FSK with binary symbols: the phase advances by
/// `π h a_k` over each symbol's frequency pulse.
fn cpm(sps: usize, len: usize, index: f64, pulse: &[f64], rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    let n_sym = len.div_ceil(sps) + 1;
    let mut freq = vec![0.0; n_sym * sps + pulse.len()];
    for s in 0..n_sym {
        let a = if rng.random::<bool>() { 1.0 } else { -1.0 };
        for (k, p) in pulse.iter().enumerate() {
            freq[s * sps + k] += a * p;
        }
    }
    let mut phase = rng.random_range(0.0..2.0 * PI);
    (0..len)
        .map(|n| {
            phase += PI * index * freq[n];
            Complex64::from_polar(1.0, phase)
        })
        .collect()
}

/// Band-limited message: a random multi-tone sum, peak-normalised, with an
/// optional silent stretch of at most 75% of `frame` samples, so any
/// `frame`-long window keeps some signal. Returns the message and its
/// quadrature (Hilbert) companion.
fn message(len: usize, frame: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let tones: Vec<(f64, f64, f64)> = (0..TONES)
        .map(|_| (rng.random_range(0.002..0.04), rng.random_range(0.2..1.0), rng.random_range(0.0..2.0 * PI)))
        .collect();
    let mut m = vec![0.0; len];
    let mut h = vec![0.0; len];
    for (n, (mv, hv)) in m.iter_mut().zip(h.iter_mut()).enumerate() {
        for &(f, a, p) in &tones {
            let arg = 2.0 * PI * f * n as f64 + p;
            *mv += a * arg.cos();
            *hv += a * arg.sin();
        }
    }
    let peak = m.iter().chain(&h).fold(0.0f64, |acc, v| acc.max(v.abs())).max(f64::MIN_POSITIVE);
    m.iter_mut().chain(h.iter_mut()).for_each(|v| *v /= peak);
    if rng.random::<bool>() {
        let gap = ((rng.random_range(0.0..0.75) * frame as f64) as usize).min(len);
        let start = rng.random_range(0..=len - gap);
        for k in start..start + gap {
            m[k] = 0.0;
            h[k] = 0.0;
        }
    }
    (m, h)
}

/// Baseband transmit signal of `len` samples, to be observed through
/// windows of `frame` samples.
pub fn modulate(scheme: &ModulationScheme, len: usize, frame: usize, rng: &mut ChaCha8Rng) -> Vec<Complex64> {
    let sps = scheme.samples_per_symbol;
    match scheme.id {
        m @ (Modulation::Bpsk
        | Modulation::Qpsk
        | Modulation::Psk8
        | Modulation::Qam16
        | Modulation::Qam64
        | Modulation::Pam4) => linear(m, sps, len, rng),
        Modulation::Gfsk => cpm(sps, len, GFSK_INDEX, &gaussian_pulse(sps, GAUSS_BT), rng),
        Modulation::Cpfsk => cpm(sps, len, CPFSK_INDEX, &vec![1.0 / sps as f64; sps], rng),
        Modulation::AmDsb => {
            let (m, _) = message(len, frame, rng);
            m.iter().map(|v| Complex64::new(1.0 + AM_DEPTH * v, 0.0)).collect()
        }
        Modulation::AmSsb => {
            let (m, h) = message(len, frame, rng);
            m.iter().zip(&h).map(|(&a, &b)| Complex64::new(a, b) * FRAC_1_SQRT_2).collect()
        }
        Modulation::Wbfm => {
            let (m, _) = message(len, frame, rng);
            let mut phase = rng.random_range(0.0..2.0 * PI);
            m.iter()
                .map(|v| {
                    phase += 2.0 * PI * FM_DEVIATION * v;
                    Complex64::from_polar(1.0, phase)
                })
                .collect()
        }
    }
}
