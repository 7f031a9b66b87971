//! Empirical checks on the synthesis channel and the fusion block.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stfgcn_core::encoder::Encoder;
use stfgcn_core::nn::{Mode, ParamStore, Session};
use stfgcn_core::numerics::{Tape, Tensor};
use stfgcn_core::sigsynth::{rician_gain, synthesize_clean, synthesize_frame, Modulation, ModulationScheme, Preset};
use stfgcn_core::stfgcn::ModelConfig;

fn power(i: &[f64], q: &[f64]) -> f64 {
    i.iter().chain(q).map(|v| v * v).sum::<f64>() / i.len() as f64
}

#[test]
fn measured_snr_matches_request_over_many_frames() {
    let preset = Preset::by_name("rml16-like").unwrap();
    for snr in [-10, 0, 10, 18] {
        let (mut sig, mut noise) = (0.0, 0.0);
        for k in 0..1000u64 {
            let m = Modulation::ALL[k as usize % Modulation::ALL.len()];
            let scheme = ModulationScheme::new(m, 8).unwrap();
            let seed = 7_000 + k;
            let (ci, cq) = synthesize_clean(&scheme, &preset.channel, 128, seed).unwrap();
            let f = synthesize_frame(&scheme, snr, &preset.channel, 128, seed).unwrap();
            let ni: Vec<f64> = f.i.iter().zip(&ci).map(|(a, b)| a - b).collect();
            let nq: Vec<f64> = f.q.iter().zip(&cq).map(|(a, b)| a - b).collect();
            sig += power(&ci, &cq);
            noise += power(&ni, &nq);
        }
        let measured = 10.0 * (sig / noise).log10();
        assert!((measured - f64::from(snr)).abs() <= 1.0, "requested {snr} dB, measured {measured:.3} dB");
    }
}

#[test]
fn strong_line_of_sight_fading_has_near_constant_envelope() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let g = rician_gain(1e6, 70.0, 8, 30e3, 20_000, &mut rng);
    let env: Vec<f64> = g.iter().map(|c| c.norm()).collect();
    let mean = env.iter().sum::<f64>() / env.len() as f64;
    let var = env.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / env.len() as f64;
    assert!(var < 1e-3, "envelope variance {var}");
}

/// Asymptotic two-sample Kolmogorov-Smirnov p-value.
fn ks_p_value(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    let lambda = (ne + 0.12 + 0.11 / ne) * d;
    let q: f64 = (1..=100i32)
        .map(|k| {
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            2.0 * sign * (-2.0 * f64::from(k * k) * lambda * lambda).exp()
        })
        .sum();
    q.clamp(0.0, 1.0)
}

#[test]
fn ks_statistic_separates_shifted_samples() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
    let b: Vec<f64> = (0..200).map(|_| rng.random::<f64>() + 0.5).collect();
    assert!(ks_p_value(a.clone(), b) < 1e-6);
    let c: Vec<f64> = (0..200).map(|_| rng.random::<f64>()).collect();
    assert!(ks_p_value(a, c) > 0.01);
}

#[test]
fn fusion_treats_both_domains_alike_under_random_init() {
    let cfg = ModelConfig::default().encoder();
    let (o, g) = (cfg.out_channels, cfg.gamma);
    let (mut straight, mut swapped) = (Vec::new(), Vec::new());
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let enc = Encoder::new(&mut store, cfg.clone(), &mut rng);
        let mut input =
            || Tensor::new(vec![1, o, g], (0..o * g).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let (a, b) = (input(), input());
        for (first, second, out) in [(&a, &b, &mut straight), (&b, &a, &mut swapped)] {
            let mut tape = Tape::new();
            let mut s = Session::new(&mut tape, &store, Mode::Eval);
            let (x, y) = (s.tape.constant(first.clone()), s.tape.constant(second.clone()));
            let z = enc.fuse(&mut s, x, y).unwrap();
            out.push(s.tape.value(z).data().iter().map(|v| v * v).sum::<f64>().sqrt());
        }
    }
    let p = ks_p_value(straight, swapped);
    assert!(p > 0.01, "KS p-value {p}");
}
