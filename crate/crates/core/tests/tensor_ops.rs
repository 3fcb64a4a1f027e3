use comatch_core::tensor::{grad_check, BiLstmVars, LstmVars, Matrix, Tape, Var};
use comatch_core::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type M = Matrix<f64>;

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;
const TRIALS: u64 = 100;

fn rand_m(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> M {
    M::random_uniform(rows, cols, -1.0, 1.0, rng)
}

/// sum(v ⊙ R) for a fixed random R, so every output entry gets a distinct
/// upstream gradient.
fn weighted_sum(t: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var> {
    let (r, c) = t.shape(v);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = t.constant(rand_m(&mut rng, r, c));
    let p = t.mul(v, w)?;
    Ok(t.sum(p))
}

fn check_trials(name: &str, f: impl Fn(&mut ChaCha8Rng, u64) -> f64) {
    let mut worst: f64 = 0.0;
    for seed in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let err = f(&mut rng, seed);
        worst = worst.max(err);
        assert!(err < TOL, "{name}: seed {seed} rel-err {err:e}");
    }
    eprintln!("{name}: worst rel-err over {TRIALS} trials = {worst:e}");
}

#[test]
fn matmul_gradient() {
    check_trials("matmul", |rng, seed| {
        let (m, k, n) = (
            rng.gen_range(1..5),
            rng.gen_range(1..5),
            rng.gen_range(1..5),
        );
        let inputs = [rand_m(rng, m, k), rand_m(rng, k, n)];
        grad_check(&inputs, EPS, |t, v| {
            let c = t.matmul(v[0], v[1])?;
            weighted_sum(t, c, seed)
        })
        .unwrap()
    });
}

#[test]
fn matmul_sum_gradient_3x4_by_4x2() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inputs = [rand_m(&mut rng, 3, 4), rand_m(&mut rng, 4, 2)];
    let err = grad_check(&inputs, EPS, |t, v| {
        let c = t.matmul(v[0], v[1])?;
        Ok(t.sum(c))
    })
    .unwrap();
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn bias_broadcast_gradient() {
    check_trials("add_bias_broadcast", |rng, seed| {
        let (l, n) = (rng.gen_range(1..5), rng.gen_range(1..6));
        let inputs = [rand_m(rng, l, n), rand_m(rng, l, 1)];
        grad_check(&inputs, EPS, |t, v| {
            let y = t.add_bias(v[0], v[1])?;
            weighted_sum(t, y, seed)
        })
        .unwrap()
    });
}

#[test]
fn softmax_gradient_with_and_without_mask() {
    check_trials("softmax_columns", |rng, seed| {
        let (r, c) = (rng.gen_range(1..6), rng.gen_range(1..5));
        let valid: Vec<bool> = (0..r).map(|i| i == 0 || rng.gen_bool(0.7)).collect();
        let inputs = [rand_m(rng, r, c)];
        let masked = grad_check(&inputs, EPS, |t, v| {
            let y = t.softmax_columns_row_masked(v[0], &valid)?;
            weighted_sum(t, y, seed)
        })
        .unwrap();
        let plain = grad_check(&inputs, EPS, |t, v| {
            let y = t.softmax_columns(v[0], None)?;
            weighted_sum(t, y, seed)
        })
        .unwrap();
        masked.max(plain)
    });
}

#[test]
fn elementwise_gradients() {
    check_trials("elementwise_sub/mul", |rng, seed| {
        let (r, c) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let inputs = [rand_m(rng, r, c), rand_m(rng, r, c)];
        grad_check(&inputs, EPS, |t, v| {
            let d = t.sub(v[0], v[1])?;
            let p = t.mul(v[0], v[1])?;
            let both = t.concat_rows(d, p)?;
            weighted_sum(t, both, seed)
        })
        .unwrap()
    });
}

#[test]
fn sum_of_product_gradients_are_the_other_factor() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_m(&mut rng, 2, 3);
    let b = rand_m(&mut rng, 2, 3);
    let mut t = Tape::new();
    let (va, vb) = (t.leaf(a.clone(), true), t.leaf(b.clone(), true));
    let p = t.mul(va, vb).unwrap();
    let s = t.sum(p);
    t.backward(s).unwrap();
    assert_eq!(t.grad(va).unwrap(), &b);
    assert_eq!(t.grad(vb).unwrap(), &a);
}

#[test]
fn activation_gradients() {
    check_trials("relu/sigmoid/tanh", |rng, seed| {
        let (r, c) = (rng.gen_range(1..5), rng.gen_range(1..5));
        let inputs = [rand_m(rng, r, c)];
        grad_check(&inputs, EPS, |t, v| {
            let a = t.relu(v[0]);
            let b = t.sigmoid(v[0]);
            let c = t.tanh(v[0]);
            let ab = t.concat_rows(a, b)?;
            let abc = t.concat_rows(ab, c)?;
            weighted_sum(t, abc, seed)
        })
        .unwrap()
    });
}

#[test]
fn relu_gradient_masks_negatives() {
    let x = M::from_rows(&[[-0.5, 0.25, -2.0, 3.0]]);
    let mut t = Tape::new();
    let v = t.leaf(x, true);
    let r = t.relu(v);
    let s = t.sum(r);
    t.backward(s).unwrap();
    assert_eq!(t.grad(v).unwrap().data(), &[0.0, 1.0, 0.0, 1.0]);
}

#[test]
fn structural_op_gradients() {
    check_trials("concat/slice/transpose", |rng, seed| {
        let (r1, r2, c) = (
            rng.gen_range(1..4),
            rng.gen_range(1..4),
            rng.gen_range(1..4),
        );
        let inputs = [rand_m(rng, r1, c), rand_m(rng, r2, c)];
        grad_check(&inputs, EPS, |t, v| {
            let stacked = t.concat_rows(v[0], v[1])?;
            let mid = t.slice_rows(stacked, 1, r1 + r2 - 1)?;
            let tr = t.transpose(mid);
            let side = t.concat_cols(&[tr, tr])?;
            weighted_sum(t, side, seed)
        })
        .unwrap()
    });
}

#[test]
fn max_pool_gradient() {
    check_trials("row_max_pool", |rng, seed| {
        let (r, c) = (rng.gen_range(1..5), rng.gen_range(1..6));
        let mask: Vec<bool> = (0..c).map(|i| i == 0 || rng.gen_bool(0.7)).collect();
        let inputs = [rand_m(rng, r, c)];
        grad_check(&inputs, EPS, |t, v| {
            let p = t.row_max_pool(v[0], Some(&mask))?;
            weighted_sum(t, p, seed)
        })
        .unwrap()
    });
}

#[test]
fn max_pool_gradient_is_one_hot_at_argmax() {
    let mut t = Tape::new();
    let m = t.leaf(M::from_rows(&[[1.0, 3.0, 2.0], [0.0, -1.0, 5.0]]), true);
    let p = t.row_max_pool(m, None).unwrap();
    let s = t.sum(p);
    t.backward(s).unwrap();
    assert_eq!(
        t.grad(m).unwrap(),
        &M::from_rows(&[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    );
}

#[test]
fn cross_entropy_gradient() {
    check_trials("candidate_loss", |rng, _| {
        let k = rng.gen_range(2..6);
        let gold = rng.gen_range(0..k);
        let inputs = [rand_m(rng, k, 1)];
        grad_check(&inputs, EPS, |t, v| t.cross_entropy(v[0], gold)).unwrap()
    });
}

struct LstmInit {
    w_ih: M,
    w_hh: M,
    bias: M,
}

fn lstm_init(rng: &mut ChaCha8Rng, d: usize, h: usize) -> LstmInit {
    LstmInit {
        w_ih: rand_m(rng, 4 * h, d),
        w_hh: rand_m(rng, 4 * h, h),
        bias: rand_m(rng, 4 * h, 1),
    }
}

fn lstm_vars(v: &[Var]) -> LstmVars {
    LstmVars {
        w_ih: v[0],
        w_hh: v[1],
        bias: v[2],
    }
}

/// Straight-line single LSTM step written without the tape.
fn reference_cell(x: &[f64], h: &[f64], c: &[f64], w: &LstmInit) -> (Vec<f64>, Vec<f64>) {
    let hid = h.len();
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let mut z = vec![0.0; 4 * hid];
    for (r, zr) in z.iter_mut().enumerate() {
        let mut acc = w.bias[(r, 0)];
        for (k, xk) in x.iter().enumerate() {
            acc += w.w_ih[(r, k)] * xk;
        }
        for (k, hk) in h.iter().enumerate() {
            acc += w.w_hh[(r, k)] * hk;
        }
        *zr = acc;
    }
    let mut h_new = vec![0.0; hid];
    let mut c_new = vec![0.0; hid];
    for r in 0..hid {
        let i = sig(z[r]);
        let f = sig(z[hid + r]);
        let g = z[2 * hid + r].tanh();
        let o = sig(z[3 * hid + r]);
        c_new[r] = f * c[r] + i * g;
        h_new[r] = o * c_new[r].tanh();
    }
    (h_new, c_new)
}

#[test]
fn zero_lstm_gives_zero_state() {
    let mut t = Tape::<f64>::new();
    let w = LstmVars {
        w_ih: t.constant(M::zeros(12, 2)),
        w_hh: t.constant(M::zeros(12, 3)),
        bias: t.constant(M::zeros(12, 1)),
    };
    let x = t.constant(M::zeros(2, 1));
    let h0 = t.constant(M::zeros(3, 1));
    let (h, c) = t.lstm_cell(x, h0, h0, w).unwrap();
    assert_eq!(t.value(h).data(), &[0.0; 3]);
    assert_eq!(t.value(c).data(), &[0.0; 3]);
}

#[test]
fn lstm_cell_matches_straight_line_reference() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h) = (3, 4);
        let w = LstmInit {
            w_ih: M::random_uniform(4 * h, d, -0.1, 0.1, &mut rng),
            w_hh: M::random_uniform(4 * h, h, -0.1, 0.1, &mut rng),
            bias: M::random_uniform(4 * h, 1, -0.1, 0.1, &mut rng),
        };
        let x = rand_m(&mut rng, d, 1);
        let h0 = rand_m(&mut rng, h, 1);
        let c0 = rand_m(&mut rng, h, 1);
        let (rh, rc) = reference_cell(x.data(), h0.data(), c0.data(), &w);

        let mut t = Tape::new();
        let vars = LstmVars {
            w_ih: t.constant(w.w_ih.clone()),
            w_hh: t.constant(w.w_hh.clone()),
            bias: t.constant(w.bias.clone()),
        };
        let (xv, hv, cv) = (t.constant(x), t.constant(h0), t.constant(c0));
        let (ht, ct) = t.lstm_cell(xv, hv, cv, vars).unwrap();
        for r in 0..h {
            assert!((t.value(ht)[(r, 0)] - rh[r]).abs() < 1e-12);
            assert!((t.value(ct)[(r, 0)] - rc[r]).abs() < 1e-12);
        }
    }
}

#[test]
fn fused_sequence_matches_unrolled_cells() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h, steps) = (3, 2, 5);
        let w = lstm_init(&mut rng, d, h);
        let x = rand_m(&mut rng, d, steps);
        let inputs = [w.w_ih.clone(), w.w_hh.clone(), w.bias.clone(), x.clone()];

        // values
        let mut t = Tape::new();
        let v: Vec<Var> = inputs.iter().map(|m| t.leaf(m.clone(), true)).collect();
        let fused = t.lstm_sequence(v[3], lstm_vars(&v), None, false).unwrap();
        let mut hs = t.constant(M::zeros(h, 1));
        let mut cs = hs;
        let mut cols = Vec::new();
        for step in 0..steps {
            let xt = t.constant(M::column_vector(x.column(step)));
            let (hn, cn) = t.lstm_cell(xt, hs, cs, lstm_vars(&v)).unwrap();
            hs = hn;
            cs = cn;
            cols.push(hn);
        }
        let unrolled = t.concat_cols(&cols).unwrap();
        assert!(t.value(fused).max_abs_diff(t.value(unrolled)) < 1e-12);
    }
}

#[test]
fn unrolled_cells_gradient_five_steps() {
    check_trials("lstm_cell x5", |rng, seed| {
        let (d, h, steps) = (2, 3, 5);
        let w = lstm_init(rng, d, h);
        let x = rand_m(rng, d, steps);
        let h0 = rand_m(rng, h, 1);
        let c0 = rand_m(rng, h, 1);
        let inputs = [w.w_ih, w.w_hh, w.bias, x, h0, c0];
        grad_check(&inputs, EPS, |t, v| {
            let (mut hs, mut cs) = (v[4], v[5]);
            let mut outs = Vec::new();
            for step in 0..steps {
                let xt = t.transpose(v[3]);
                let row = t.slice_rows(xt, step, 1)?;
                let col = t.transpose(row);
                let (hn, cn) = t.lstm_cell(col, hs, cs, lstm_vars(v))?;
                hs = hn;
                cs = cn;
                outs.push(hn);
            }
            let all = t.concat_cols(&outs)?;
            weighted_sum(t, all, seed)
        })
        .unwrap()
    });
}

#[test]
fn fused_sequence_gradient_masked_and_reversed() {
    check_trials("lstm_sequence", |rng, seed| {
        let (d, h, steps) = (
            rng.gen_range(1..4),
            rng.gen_range(1..4),
            rng.gen_range(1..7),
        );
        let mask: Vec<bool> = (0..steps).map(|i| i == 0 || rng.gen_bool(0.75)).collect();
        let reverse = rng.gen_bool(0.5);
        let w = lstm_init(rng, d, h);
        let inputs = [w.w_ih, w.w_hh, w.bias, rand_m(rng, d, steps)];
        grad_check(&inputs, EPS, |t, v| {
            let out = t.lstm_sequence(v[3], lstm_vars(v), Some(&mask), reverse)?;
            weighted_sum(t, out, seed)
        })
        .unwrap()
    });
}

#[test]
fn bilstm_gradient_full_sequence() {
    check_trials("bilstm_encode", |rng, seed| {
        let (d, h, steps) = (3, 2, rng.gen_range(1..7));
        let f = lstm_init(rng, d, h);
        let b = lstm_init(rng, d, h);
        let inputs = [
            f.w_ih,
            f.w_hh,
            f.bias,
            b.w_ih,
            b.w_hh,
            b.bias,
            rand_m(rng, d, steps),
        ];
        grad_check(&inputs, EPS, |t, v| {
            let w = BiLstmVars {
                forward: lstm_vars(&v[0..3]),
                backward: lstm_vars(&v[3..6]),
            };
            let out = t.bilstm(v[6], w, None)?;
            weighted_sum(t, out, seed)
        })
        .unwrap()
    });
}

#[test]
fn bilstm_single_step_shape_and_empty_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut t = Tape::<f64>::new();
    let mk = |t: &mut Tape<f64>, rng: &mut ChaCha8Rng| {
        let w = lstm_init(rng, 3, 2);
        LstmVars {
            w_ih: t.constant(w.w_ih),
            w_hh: t.constant(w.w_hh),
            bias: t.constant(w.bias),
        }
    };
    let w = BiLstmVars {
        forward: mk(&mut t, &mut rng),
        backward: mk(&mut t, &mut rng),
    };
    let x = t.constant(rand_m(&mut rng, 3, 1));
    let out = t.bilstm(x, w, None).unwrap();
    assert_eq!(t.shape(out), (4, 1));
    let empty = t.constant(M::zeros(3, 0));
    assert!(matches!(
        t.bilstm(empty, w, None),
        Err(comatch_core::Error::EmptySequence(_))
    ));
}

#[test]
fn reversed_input_swaps_directions() {
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, h, steps) = (3, 2, 6);
        let f = lstm_init(&mut rng, d, h);
        let b = lstm_init(&mut rng, d, h);
        let x = rand_m(&mut rng, d, steps);
        let mut xr = M::zeros(d, steps);
        for c in 0..steps {
            xr.set_column(steps - 1 - c, &x.column(c));
        }
        let mut t = Tape::new();
        let bind = |t: &mut Tape<f64>, w: &LstmInit| LstmVars {
            w_ih: t.constant(w.w_ih.clone()),
            w_hh: t.constant(w.w_hh.clone()),
            bias: t.constant(w.bias.clone()),
        };
        let (fv, bv) = (bind(&mut t, &f), bind(&mut t, &b));
        let xv = t.constant(x);
        let xrv = t.constant(xr);
        let out = t
            .bilstm(
                xv,
                BiLstmVars {
                    forward: fv,
                    backward: bv,
                },
                None,
            )
            .unwrap();
        let swapped = t
            .bilstm(
                xrv,
                BiLstmVars {
                    forward: bv,
                    backward: fv,
                },
                None,
            )
            .unwrap();
        let (o, s) = (t.value(out), t.value(swapped));
        for c in 0..steps {
            for r in 0..h {
                assert_eq!(o[(h + r, c)].to_bits(), s[(r, steps - 1 - c)].to_bits());
                assert_eq!(o[(r, c)].to_bits(), s[(h + r, steps - 1 - c)].to_bits());
            }
        }
    }
}

#[test]
fn masked_steps_are_skipped_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (d, h) = (3, 2);
    let w = lstm_init(&mut rng, d, h);
    let x = rand_m(&mut rng, d, 4);
    let mut padded = M::zeros(d, 6);
    for c in 0..4 {
        padded.set_column(c, &x.column(c));
    }
    let mask = [true, true, true, true, false, false];
    for reverse in [false, true] {
        let mut t = Tape::new();
        let wv = LstmVars {
            w_ih: t.constant(w.w_ih.clone()),
            w_hh: t.constant(w.w_hh.clone()),
            bias: t.constant(w.bias.clone()),
        };
        let (xv, pv) = (t.constant(x.clone()), t.constant(padded.clone()));
        let a = t.lstm_sequence(xv, wv, None, reverse).unwrap();
        let b = t.lstm_sequence(pv, wv, Some(&mask), reverse).unwrap();
        for c in 0..4 {
            for r in 0..h {
                assert_eq!(t.value(a)[(r, c)].to_bits(), t.value(b)[(r, c)].to_bits());
            }
        }
        assert_eq!(t.value(b).column(5), vec![0.0; h]);
    }
}

#[test]
fn matmul_associativity() {
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b, c) = (
            rand_m(&mut rng, 3, 4),
            rand_m(&mut rng, 4, 2),
            rand_m(&mut rng, 2, 5),
        );
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        assert!(left.max_abs_diff(&right) < 1e-9);
    }
}

#[test]
fn concat_then_split_round_trips_values_and_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (a, b) = (rand_m(&mut rng, 2, 3), rand_m(&mut rng, 3, 3));
    let upstream = rand_m(&mut rng, 5, 3);
    let mut t = Tape::new();
    let (va, vb) = (t.leaf(a.clone(), true), t.leaf(b.clone(), true));
    let c = t.concat_rows(va, vb).unwrap();
    let top = t.slice_rows(c, 0, 2).unwrap();
    let bottom = t.slice_rows(c, 2, 3).unwrap();
    assert!(t.value(top).bit_eq(&a));
    assert!(t.value(bottom).bit_eq(&b));
    let w = t.constant(upstream.clone());
    let p = t.mul(c, w).unwrap();
    let s = t.sum(p);
    t.backward(s).unwrap();
    assert_eq!(t.grad(va).unwrap().data(), &upstream.data()[..6]);
    assert_eq!(t.grad(vb).unwrap().data(), &upstream.data()[6..]);
}

#[test]
fn tape_replay_is_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let w = lstm_init(&mut rng, 3, 2);
        let x = rand_m(&mut rng, 3, 5);
        let mut t = Tape::new();
        let v: Vec<Var> = [w.w_ih, w.w_hh, w.bias, x]
            .into_iter()
            .map(|m| t.leaf(m, true))
            .collect();
        let out = t.lstm_sequence(v[3], lstm_vars(&v), None, true).unwrap();
        let s = weighted_sum(&mut t, out, 1).unwrap();
        t.backward(s).unwrap();
        let grads: Vec<M> = v.iter().map(|&x| t.grad(x).unwrap().clone()).collect();
        (t.value(out).clone(), grads)
    };
    let (o1, g1) = run();
    let (o2, g2) = run();
    assert!(o1.bit_eq(&o2));
    for (a, b) in g1.iter().zip(&g2) {
        assert!(a.bit_eq(b));
    }
}

proptest! {
    #[test]
    fn softmax_columns_are_distributions(
        rows in 1usize..7,
        cols in 1usize..5,
        seed in any::<u64>(),
        scale in 0.1f64..50.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = M::random_uniform(rows, cols, -scale, scale, &mut rng);
        let mask: Vec<bool> = (0..rows * cols).map(|i| i < cols || rng.gen_bool(0.6)).collect();
        let mut t = Tape::new();
        let v = t.constant(m);
        let y = t.softmax_columns(v, Some(&mask)).unwrap();
        let y = t.value(y);
        for c in 0..cols {
            let total: f64 = y.column(c).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            for r in 0..rows {
                let p = y[(r, c)];
                prop_assert!((0.0..=1.0).contains(&p));
                if !mask[r * cols + c] {
                    prop_assert_eq!(p, 0.0);
                }
            }
        }
    }
}
