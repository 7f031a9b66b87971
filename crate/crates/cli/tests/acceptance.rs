//! Acceptance suite. Each criterion prints one PASS or FAIL line; the
//! process exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stfgcn_core::dsp::{rotate_iq, RotationAngle, StftPlan};
use stfgcn_core::graph::adjacency_correlation;
use stfgcn_core::numerics::{Tape, Tensor};
use stfgcn_core::sigsynth::{DatasetSpec, Modulation, Preset};
use stfgcn_core::stfgcn::ops::{attention, block_mean_assignment, coarsen};
use stfgcn_core::stfgcn::{Model, ModelConfig};
use stfgcn_core::training::{evaluate, examples, split, train, Confusion, TrainConfig};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn random_frame(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<f64>) {
    let i = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let q = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    (i, q)
}

/// Direct evaluation: centred window of `w` periodic-Blackman taps on the
/// mirror-padded frame, `n_dft`-point DFT by explicit sums, hop 1.
fn direct_stft(i: &[f64], q: &[f64], n_dft: usize, w: usize) -> Vec<f64> {
    let len = i.len();
    let win: Vec<f64> = (0..w)
        .map(|n| {
            let x = 2.0 * PI * n as f64 / w as f64;
            0.42 - 0.5 * x.cos() + 0.08 * (2.0 * x).cos()
        })
        .collect();
    let mirror = |t: isize| -> usize {
        let last = len as isize - 1;
        let t = if t < 0 { -t } else { t };
        (if t > last { 2 * last - t } else { t }) as usize
    };
    let mut out = vec![0.0; n_dft * len];
    for m in 0..len {
        let seg: Vec<(f64, f64)> = (0..w)
            .map(|n| {
                let t = mirror(m as isize + n as isize - (w / 2) as isize);
                (i[t] * win[n], q[t] * win[n])
            })
            .collect();
        for k in 0..n_dft {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, &(a, b)) in seg.iter().enumerate() {
                let th = -2.0 * PI * (k * n % n_dft) as f64 / n_dft as f64;
                let (s, c) = th.sin_cos();
                re += a * c - b * s;
                im += a * s + b * c;
            }
            out[k * len + m] = re.hypot(im);
        }
    }
    out
}

fn dstft_oracle() -> Outcome {
    let start = Instant::now();
    let plan = StftPlan::new(128, 32).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (i, q) = random_frame(&mut rng, 128);
        let got = plan.compute(&i, &q).map_err(|e| e.to_string())?;
        let want = direct_stft(&i, &q, 128, 32);
        let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = got.mag.iter().zip(&want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale;
        worst = worst.max(err);
    }
    let t = start.elapsed();
    check(worst <= 1e-9, format!("max relative error {worst:.2e}"))?;
    check(t < Duration::from_secs(10), format!("took {t:?}"))?;
    Ok(format!("100 frames, max relative error {worst:.2e}, {t:.2?}"))
}

fn rotation() -> Outcome {
    let plan = StftPlan::new(128, 32).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let (i, q) = random_frame(&mut rng, 128);
        let base = plan.compute(&i, &q).map_err(|e| e.to_string())?;
        for phi in RotationAngle::ALL {
            let (ri, rq) = rotate_iq(&i, &q, phi);
            let s = plan.compute(&ri, &rq).map_err(|e| e.to_string())?;
            worst = s.mag.iter().zip(&base.mag).fold(worst, |m, (a, b)| m.max((a - b).abs()));
        }
        let (ri, rq) = rotate_iq(&i, &q, RotationAngle::Deg90);
        let neg_q: Vec<f64> = q.iter().map(|v| -v).collect();
        check(ri == neg_q && rq == i, "90 degree rotation is not (i, q) -> (-q, i)")?;
    }
    check(worst <= 1e-9, format!("magnitude deviation {worst:.2e}"))?;
    Ok(format!("100 frames x 4 angles, max deviation {worst:.2e}; 90 degrees exact"))
}

fn adjacency() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for inst in 0..1000 {
        let tau = rng.random_range(1..=5usize);
        let n = rng.random_range(tau + 1..=16);
        let f = rng.random_range(1..=8usize);
        let data: Vec<f64> = (0..n * f).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = Tensor::new(vec![n, f], data.clone()).map_err(|e| e.to_string())?;
        let a = adjacency_correlation(&x, tau).map_err(|e| e.to_string())?;
        for i in 0..n {
            for j in 0..n {
                let want = if i != j && i.abs_diff(j) <= tau {
                    (0..f).map(|k| data[i * f + k] * data[j * f + k]).fold(f64::NEG_INFINITY, f64::max).max(0.0)
                } else {
                    0.0
                };
                let got = a.get(i, j);
                check(
                    (got - want).abs() <= 1e-12 * (1.0 + want.abs()),
                    format!("instance {inst}: a[{i}][{j}] = {got}, brute force {want}"),
                )?;
                check(got >= 0.0 && got == a.get(j, i), format!("instance {inst}: sign or symmetry at ({i}, {j})"))?;
            }
        }
        for c in [0.5, 3.0] {
            let cx = Tensor::new(vec![n, f], data.iter().map(|v| v * c).collect()).map_err(|e| e.to_string())?;
            let b = adjacency_correlation(&cx, tau).map_err(|e| e.to_string())?;
            for (u, v) in a.a.iter().zip(&b.a) {
                check(
                    (c * c * u - v).abs() <= 1e-9 * (1.0 + v.abs()),
                    format!("instance {inst}: scaling law fails for c = {c}"),
                )?;
            }
        }
    }
    Ok("1000 instances match brute force; symmetric, zero diagonal, banded, nonnegative; scaling law holds".into())
}

fn diffpool_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut asym, mut row_err) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let n = rng.random_range(2..=16usize);
        let k = rng.random_range(1..=n);
        let mut tape = Tape::new();
        let logits = Tensor::new(vec![n, k], (0..n * k).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap();
        let l = tape.constant(logits);
        let s = tape.softmax(l).map_err(|e| e.to_string())?;
        let mut raw = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..i {
                let v = rng.random_range(0.0..2.0);
                raw[i * n + j] = v;
                raw[j * n + i] = v;
            }
        }
        let a = tape.constant(Tensor::new(vec![n, n], raw).unwrap());
        let z = tape.constant(Tensor::zeros(&[n, 1]));
        let (_, ah) = coarsen(&mut tape, s, z, a).map_err(|e| e.to_string())?;
        for row in tape.value(s).data().chunks(k) {
            row_err = row_err.max((row.iter().sum::<f64>() - 1.0).abs());
        }
        let ah = tape.value(ah).data();
        for i in 0..k {
            for j in 0..k {
                asym = asym.max((ah[i * k + j] - ah[j * k + i]).abs());
            }
        }
    }
    check(asym <= 1e-12, format!("asymmetry {asym:.2e}"))?;
    check(row_err <= 1e-12, format!("row-sum error {row_err:.2e}"))?;

    let mut tape = Tape::new();
    let k4: Vec<f64> = (0..16).map(|k| if k % 5 == 0 { 0.0 } else { 1.0 }).collect();
    let a = tape.constant(Tensor::new(vec![4, 4], k4).unwrap());
    let s = tape.constant(Tensor::new(vec![4, 1], vec![1.0; 4]).unwrap());
    let z = tape.constant(Tensor::zeros(&[4, 1]));
    let (_, ah) = coarsen(&mut tape, s, z, a).map_err(|e| e.to_string())?;
    check(tape.value(ah).data() == [12.0], format!("K4 pooled to {:?}", tape.value(ah).data()))?;
    let b = block_mean_assignment(8, 4);
    check(b.data().chunks(2).all(|r| r.iter().sum::<f64>() == 0.25), "block assignment rows")?;
    Ok(format!("200 random S: asymmetry {asym:.1e}, row-sum error {row_err:.1e}; K4 -> [[12]] exact"))
}

fn attention_rows() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut row_err = 0.0f64;
    for inst in 0..1000 {
        let n = rng.random_range(1..=12usize);
        let d = rng.random_range(1..=6usize);
        let mut adj = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..i {
                if rng.random_bool(0.4) {
                    let w = rng.random_range(0.1..2.0);
                    adj[i * n + j] = w;
                    adj[j * n + i] = w;
                }
            }
        }
        let h: Vec<f64> = (0..n * d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut tape = Tape::new();
        let hv = tape.constant(Tensor::new(vec![n, d], h.clone()).unwrap());
        let av = tape.constant(Tensor::new(vec![n, n], adj.clone()).unwrap());
        let bs = tape.constant(Tensor::new(vec![d, 1], (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap());
        let bd = tape.constant(Tensor::new(vec![d, 1], (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap());
        let (out, alpha) = attention(&mut tape, hv, av, bs, bd, 0.2).map_err(|e| e.to_string())?;
        let (out, alpha) = (tape.value(out).data(), tape.value(alpha).data());
        for i in 0..n {
            let row = &alpha[i * n..(i + 1) * n];
            row_err = row_err.max((row.iter().sum::<f64>() - 1.0).abs());
            let nbrs: Vec<usize> = (0..n).filter(|&j| j == i || adj[i * n + j] > 0.0).collect();
            if nbrs.len() == 1 {
                check(row[i] == 1.0, format!("instance {inst}: isolated node {i} self-weight {}", row[i]))?;
            }
            for c in 0..d {
                let (lo, hi) = nbrs
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &j| (l.min(h[j * d + c]), u.max(h[j * d + c])));
                let o = out[i * d + c];
                check(o >= lo - 1e-12 && o <= hi + 1e-12, format!("instance {inst}: output outside neighbour hull"))?;
            }
        }
    }
    check(row_err <= 1e-12, format!("row-sum error {row_err:.2e}"))?;
    Ok(format!("1000 instances: row-sum error {row_err:.1e}, outputs in neighbour hull, isolated nodes self-attend"))
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let model = Model::new(ModelConfig::miniature(), 21).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let frames: Vec<_> = (0..2).map(|_| random_frame(&mut rng, 16)).collect();
    let refs: Vec<(&[f64], &[f64])> = frames.iter().map(|(i, q)| (i.as_slice(), q.as_slice())).collect();
    let report = model.grad_check_loss(&refs, &[0, 3], 1e-5, 1e-3).map_err(|e| e.to_string())?;
    let t = start.elapsed();
    let err = report.max_rel_error();
    check(report.passed(), format!("max relative error {err:.2e}"))?;
    check(t < Duration::from_secs(300), format!("took {t:?}"))?;
    Ok(format!("{} parameters, max relative error {err:.2e}, {t:.2?}", model.num_params()))
}

fn shape_law() -> Outcome {
    let cfg = ModelConfig::default();
    check(cfg.node_trace() == [128, 32, 8], format!("node trace {:?}", cfg.node_trace()))?;
    let model = Model::new(cfg, 1).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let (i, q) = random_frame(&mut rng, 128);
    let stages = model.graph_stages(&i, &q).map_err(|e| e.to_string())?;
    let shapes: Vec<Vec<usize>> = stages.iter().map(|(x, _)| x.shape().to_vec()).collect();
    check(shapes[0] == [128, 16], format!("node features {:?}", shapes[0]))?;
    check(shapes[1][0] == 32 && shapes[2][0] == 8, format!("pooled shapes {shapes:?}"))?;
    let logits = model.logits(&[(&i, &q)]).map_err(|e| e.to_string())?;
    check(logits.shape() == [1, 11], format!("logits {:?}", logits.shape()))?;
    let p = model.num_params();
    check((140_000..=560_000).contains(&p), format!("{p} parameters"))?;
    Ok(format!("2x128 -> 128x16 -> 32 -> 8 nodes -> 11 logits; {p} parameters"))
}

fn desk_run(
    schemes: Vec<Modulation>,
    snrs: Vec<i32>,
    epochs: usize,
) -> Result<(f64, Confusion, usize, Duration), String> {
    let start = Instant::now();
    let preset = Preset::by_name("rml16-like").map_err(|e| e.to_string())?;
    let n = schemes.len();
    let spec = DatasetSpec {
        schemes,
        snrs,
        per_cell: 400,
        channel: preset.channel,
        samples_per_symbol: 8,
        gamma: 128,
        seed: 1,
        preset: preset.name.into(),
    };
    let ds = spec.generate().map_err(|e| e.to_string())?;
    let sp = split(&ds, [0.6, 0.2, 0.2], 1).map_err(|e| e.to_string())?;
    let (tr, va, te) = (examples(&ds, &sp.train), examples(&ds, &sp.val), examples(&ds, &sp.test));
    let mut model = Model::new(ModelConfig::desk(n), 1).map_err(|e| e.to_string())?;
    let cfg = TrainConfig { batch: 64, lr: 1e-3, epochs, seed: 1, ..TrainConfig::default() };
    let out = train(&mut model, &tr, &va, &cfg, |r| {
        eprintln!("    epoch {:>2}: val_loss {:.4} val_acc {:.4}", r.epoch, r.val_loss, r.val_acc)
    })
    .map_err(|e| e.to_string())?;
    let rep = evaluate(&model, &te, 256).map_err(|e| e.to_string())?;
    Ok((rep.overall_acc, rep.confusion, out.history.len(), start.elapsed()))
}

fn desk_four_class() -> Outcome {
    let schemes = vec![Modulation::Bpsk, Modulation::Qpsk, Modulation::Pam4, Modulation::Gfsk];
    let (acc, _, epochs, t) = desk_run(schemes, vec![10, 18], 5)?;
    check(acc >= 0.90, format!("test accuracy {acc:.4}"))?;
    check(t < Duration::from_secs(1800), format!("took {t:?}"))?;
    Ok(format!("test accuracy {acc:.4} after {epochs} epochs, {t:.0?}"))
}

fn desk_eleven_class() -> Outcome {
    let (acc, conf, epochs, t) = desk_run(Modulation::ALL.to_vec(), vec![18], 10)?;
    let mut off: Vec<(u64, usize, usize)> = Vec::new();
    for i in 0..conf.n_classes() {
        for j in 0..conf.n_classes() {
            if i != j && conf.get(i, j) > 0 {
                off.push((conf.get(i, j), i, j));
            }
        }
    }
    off.sort_unstable_by(|a, b| b.cmp(a));
    let top: Vec<String> = off
        .iter()
        .take(3)
        .map(|&(c, i, j)| format!("{}->{} x{c}", Modulation::ALL[i].name(), Modulation::ALL[j].name()))
        .collect();
    check(acc >= 0.70, format!("test accuracy {acc:.4}"))?;
    Ok(format!("test accuracy {acc:.4} after {epochs} epochs, {t:.0?}; largest confusions: {}", top.join(", ")))
}

fn cli(args: &[&str]) -> i32 {
    stfgcn_cli::run(std::iter::once("stfgcn").chain(args.iter().copied()))
}

fn small_setup(dir: &Path) -> Result<(String, String), String> {
    let data = dir.join("d.stfg").to_string_lossy().into_owned();
    let cfg = dir.join("small.ini");
    fs::write(
        &cfg,
        "[model]\nout_channels = 4\nfeat_dim = 8\ngcn_layers = 2\nhidden = 16\n\n[train]\nepochs = 2\nbatch = 16\n",
    )
    .map_err(|e| e.to_string())?;
    let code = cli(&[
        "synth",
        "--preset",
        "rml16-like",
        "--per-cell",
        "10",
        "--schemes",
        "BPSK,QPSK,PAM4,GFSK",
        "--snrs",
        "10,18",
        "--out",
        &data,
    ]);
    check(code == 0, format!("synth exited {code}"))?;
    Ok((data, cfg.to_string_lossy().into_owned()))
}

fn tau_sweep() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (data, cfg) = small_setup(dir.path())?;
    let out = dir.path().join("sweep");
    let code =
        cli(&["ablate", "--config", &cfg, "--dataset", &data, "--out", &out.to_string_lossy(), "--tau", "3,11,15"]);
    check(code == 0, format!("ablate exited {code}"))?;
    let csv = fs::read_to_string(out.join("ablation.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    check(rows.len() == 3, format!("{} rows", rows.len()))?;
    for (row, tau) in rows.iter().zip(["3", "11", "15"]) {
        check(row.starts_with(&format!("tau,{tau},")), format!("unexpected row `{row}`"))?;
    }
    Ok(format!(
        "3 rows: {}",
        rows.iter().map(|r| r.split(',').take(3).collect::<Vec<_>>().join(" ")).collect::<Vec<_>>().join("; ")
    ))
}

fn metrics_oracle() -> Outcome {
    let c = Confusion::from_rows(&[vec![50, 0], vec![25, 25]]);
    let (acc, f1, kappa) = (c.accuracy(), c.macro_f1(), c.kappa());
    check((acc - 0.75).abs() < 1e-12, format!("accuracy {acc}"))?;
    check((f1 - 0.7333).abs() <= 1e-4, format!("macro-F1 {f1}"))?;
    check((kappa - 0.5).abs() <= 1e-4, format!("kappa {kappa}"))?;
    Ok(format!("accuracy {acc}, macro-F1 {f1:.4}, kappa {kappa:.4}"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (data, cfg) = small_setup(dir.path())?;
    let runs = ["a", "b"].map(|r| dir.path().join(r));
    for r in &runs {
        let code = cli(&[
            "train",
            "--config",
            &cfg,
            "--dataset",
            &data,
            "--out",
            &r.to_string_lossy(),
            "--deterministic",
            "--seed",
            "1",
        ]);
        check(code == 0, format!("train exited {code}"))?;
    }
    for f in ["history.csv", "checkpoint.stfw"] {
        let (a, b) = (
            fs::read(runs[0].join(f)).map_err(|e| e.to_string())?,
            fs::read(runs[1].join(f)).map_err(|e| e.to_string())?,
        );
        check(a == b, format!("{f} differs between runs"))?;
    }
    Ok("history.csv and checkpoint.stfw byte-identical across two runs".into())
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("DSTFT oracle", dstft_oracle),
        ("rotation invariance", rotation),
        ("adjacency oracle", adjacency),
        ("diffpool algebra", diffpool_algebra),
        ("attention", attention_rows),
        ("gradient check", gradient_check),
        ("shape law", shape_law),
        ("desk 4-class training", desk_four_class),
        ("desk 11-class at +18 dB", desk_eleven_class),
        ("tau sweep harness", tau_sweep),
        ("metrics oracle", metrics_oracle),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        match res {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
