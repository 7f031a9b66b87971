//! Randomised invariants across the numerical kernels, graph builders and
//! the dataset container.

use proptest::prelude::*;
use stfgcn_core::datastore::{Dataset, Record};
use stfgcn_core::dsp::{rotate_iq, RotationAngle, StftPlan};
use stfgcn_core::graph::{adjacency_correlation, adjacency_distance, adjacency_knn};
use stfgcn_core::numerics::{grad_check, Tape, Tensor, Var};
use stfgcn_core::stfgcn::ops::{attention, coarsen};

fn tensor(shape: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let len = shape.iter().product::<usize>();
    prop::collection::vec(-2.0f64..2.0, len).prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
}

/// Reduces `y` to a scalar with fixed uneven weights so every output entry
/// contributes a distinct gradient.
fn weigh(tape: &mut Tape, y: Var) -> Var {
    let shape = tape.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|k| 0.3 + ((k * 7) % 11) as f64 / 10.0).collect()).unwrap();
    let w = tape.constant(w);
    let p = tape.mul(y, w).unwrap();
    tape.sum_all(p).unwrap()
}

/// A batched `[2, m, k]` left operand and a shared `[k, n]` right operand.
fn matmul_operands() -> impl Strategy<Value = (Tensor, Tensor)> {
    (1usize..5, 1usize..5, 1usize..5).prop_flat_map(|(m, k, n)| (tensor(vec![2, m, k]), tensor(vec![k, n])))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn matmul_gradients((a, b) in matmul_operands()) {
        let r = grad_check(|t, v| { let y = t.matmul(v[0], v[1])?; Ok(weigh(t, y)) }, &[a, b], 1e-5, 1e-4).unwrap();
        prop_assert!(r.passed(), "{}", r.max_rel_error());
    }

    #[test]
    fn gcn_normalize_gradients(n in 2usize..6, raw in prop::collection::vec(0.0f64..2.0, 36)) {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                d[i * n + j] = raw[i.min(j) * 6 + i.max(j)];
            }
        }
        let a = Tensor::new(vec![n, n], d).unwrap();
        let r = grad_check(|t, v| { let y = t.gcn_normalize(v[0])?; Ok(weigh(t, y)) }, &[a], 1e-5, 1e-4).unwrap();
        prop_assert!(r.passed(), "{}", r.max_rel_error());
    }

    #[test]
    fn masked_softmax_gradients(x in tensor(vec![3, 4]), mask in prop::collection::vec(any::<bool>(), 12)) {
        // Keep at least one live entry per row.
        let mask: Vec<bool> = mask.iter().enumerate().map(|(k, &m)| m || k % 4 == k / 4).collect();
        let r = grad_check(|t, v| { let y = t.masked_softmax(v[0], &mask)?; Ok(weigh(t, y)) }, &[x], 1e-5, 1e-4).unwrap();
        prop_assert!(r.passed(), "{}", r.max_rel_error());
    }

    #[test]
    fn cross_entropy_gradients(x in tensor(vec![3, 5]), labels in prop::collection::vec(0usize..5, 3)) {
        let r = grad_check(|t, v| t.cross_entropy(v[0], &labels), &[x], 1e-5, 1e-4).unwrap();
        prop_assert!(r.passed(), "{}", r.max_rel_error());
    }

    #[test]
    fn conv1d_gradients(x in tensor(vec![2, 2, 7]), w in tensor(vec![3, 2, 3]), b in tensor(vec![3])) {
        let r = grad_check(
            |t, v| { let y = t.conv1d(v[0], v[1], Some(v[2]), 1, 1)?; Ok(weigh(t, y)) },
            &[x, w, b],
            1e-5,
            1e-4,
        ).unwrap();
        prop_assert!(r.passed(), "{}", r.max_rel_error());
    }

    #[test]
    fn coarsen_gradients(s in tensor(vec![6, 2]), z in tensor(vec![6, 3]), a in tensor(vec![6, 6])) {
        let r = grad_check(
            |t, v| {
                let (x, ah) = coarsen(t, v[0], v[1], v[2])?;
                let (x, ah) = (weigh(t, x), weigh(t, ah));
                t.add(x, ah)
            },
            &[s, z, a],
            1e-5,
            1e-4,
        ).unwrap();
        prop_assert!(r.passed(), "{}", r.max_rel_error());
    }

    #[test]
    fn adjacency_invariants(n in 2usize..17, f in 1usize..9, tau in 1usize..6, data in prop::collection::vec(-3.0f64..3.0, 16 * 8)) {
        prop_assume!(tau < n);
        let x = Tensor::new(vec![n, f], data[..n * f].to_vec()).unwrap();
        for a in [adjacency_correlation(&x, tau).unwrap(), adjacency_distance(&x, tau).unwrap(), adjacency_knn(&x, tau).unwrap()] {
            prop_assert!(a.check_invariants());
        }
    }

    #[test]
    fn correlation_scales_quadratically(n in 4usize..17, f in 1usize..9, data in prop::collection::vec(-3.0f64..3.0, 16 * 8), c in 0.1f64..4.0) {
        let x = Tensor::new(vec![n, f], data[..n * f].to_vec()).unwrap();
        let cx = Tensor::new(vec![n, f], x.data().iter().map(|v| v * c).collect()).unwrap();
        let (a, b) = (adjacency_correlation(&x, 3).unwrap(), adjacency_correlation(&cx, 3).unwrap());
        for (u, v) in a.a.iter().zip(&b.a) {
            prop_assert!((c * c * u - v).abs() <= 1e-9 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn attention_rows_are_convex(n in 1usize..8, d in 1usize..4, data in prop::collection::vec(-2.0f64..2.0, 8 * 3 + 6), edges in prop::collection::vec(any::<bool>(), 64)) {
        let mut adj = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..i {
                if edges[i * 8 + j] {
                    adj[i * n + j] = 1.0;
                    adj[j * n + i] = 1.0;
                }
            }
        }
        let mut tape = Tape::new();
        let h = tape.constant(Tensor::new(vec![n, d], data[..n * d].to_vec()).unwrap());
        let a = tape.constant(Tensor::new(vec![n, n], adj.clone()).unwrap());
        let bs = tape.constant(Tensor::new(vec![d, 1], data[24..24 + d].to_vec()).unwrap());
        let bd = tape.constant(Tensor::new(vec![d, 1], data[27..27 + d].to_vec()).unwrap());
        let (out, alpha) = attention(&mut tape, h, a, bs, bd, 0.2).unwrap();
        let (out, alpha, hv) = (tape.value(out), tape.value(alpha), &data[..n * d]);
        for i in 0..n {
            let row = &alpha.data()[i * n..(i + 1) * n];
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for j in 0..n {
                if j != i && adj[i * n + j] == 0.0 {
                    prop_assert_eq!(row[j], 0.0);
                }
            }
            for c in 0..d {
                let nb = (0..n).filter(|&j| j == i || adj[i * n + j] > 0.0).map(|j| hv[j * d + c]);
                let (lo, hi) = nb.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
                let o = out.data()[i * d + c];
                prop_assert!(o >= lo - 1e-12 && o <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn soft_assignment_pooling_preserves_symmetry(n in 2usize..10, k in 1usize..4, logits in prop::collection::vec(-3.0f64..3.0, 40), raw in prop::collection::vec(0.0f64..2.0, 100)) {
        let mut tape = Tape::new();
        let l = tape.constant(Tensor::new(vec![n, k], logits[..n * k].to_vec()).unwrap());
        let s = tape.softmax(l).unwrap();
        let mut adj = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                adj[i * n + j] = raw[i.min(j) * 10 + i.max(j)];
            }
        }
        let a = tape.constant(Tensor::new(vec![n, n], adj).unwrap());
        let z = tape.constant(Tensor::zeros(&[n, 1]));
        let (_, ah) = coarsen(&mut tape, s, z, a).unwrap();
        for row in tape.value(s).data().chunks(k) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let ah = tape.value(ah).data();
        for i in 0..k {
            for j in 0..k {
                prop_assert!((ah[i * k + j] - ah[j * k + i]).abs() <= 1e-12 * (1.0 + ah[i * k + j].abs()));
            }
        }
    }

    #[test]
    fn rotation_preserves_norm_and_spectrogram(i in prop::collection::vec(-1.0f64..1.0, 32), q in prop::collection::vec(-1.0f64..1.0, 32)) {
        let plan = StftPlan::new(16, 8).unwrap();
        let base = plan.compute(&i, &q).unwrap();
        let norm = |i: &[f64], q: &[f64]| i.iter().chain(q).map(|v| v * v).sum::<f64>();
        for k in 0..4 {
            let (ri, rq) = rotate_iq(&i, &q, RotationAngle::from_quarter_turns(k));
            prop_assert!((norm(&ri, &rq) - norm(&i, &q)).abs() < 1e-12);
            let s = plan.compute(&ri, &rq).unwrap();
            for (a, b) in s.mag.iter().zip(&base.mag) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn datastore_round_trips(gamma in 1usize..16, n_classes in 1usize..12, recs in prop::collection::vec((any::<u8>(), -30i16..30, any::<u64>()), 0..20)) {
        let mut ds = Dataset::new(gamma, n_classes);
        for (label, snr, seed) in recs {
            let val = |k: usize| ((seed.wrapping_mul(k as u64 + 1) % 1000) as f32 - 500.0) / 37.0;
            ds.records.push(Record {
                i: (0..gamma).map(val).collect(),
                q: (0..gamma).map(|k| -val(k + 3)).collect(),
                snr_db: snr,
                label: label % n_classes as u8,
            });
        }
        let mut bytes = Vec::new();
        ds.encode(&mut bytes).unwrap();
        prop_assert_eq!(bytes.len() as u64, ds.encoded_len());
        prop_assert_eq!(Dataset::decode(&bytes).unwrap(), ds);
    }
}
