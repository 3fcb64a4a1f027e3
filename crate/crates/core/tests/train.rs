use comatch_core::data::{EmbeddingTable, EncodedExample, Subset, Vocabulary, PAD};
use comatch_core::model::{Dims, ModelParams, Variant};
use comatch_core::tensor::Matrix;
use comatch_core::train::*;
use comatch_core::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type M = Matrix<f64>;

fn tiny_config(variant: Variant) -> TrainConfig {
    TrainConfig {
        embed: 4,
        hidden: 4,
        epochs: 2,
        batch_size: 5,
        seed: 3,
        variant,
        ..TrainConfig::default()
    }
}

fn synthetic(
    n: usize,
    seed: u64,
    d: usize,
) -> (Vocabulary, Vec<EncodedExample>, EmbeddingTable<f64>) {
    let (vocab, exs) = synthetic_dataset(n, seed).unwrap();
    let emb = EmbeddingTable::random(vocab.len(), d, seed);
    (vocab, exs, emb)
}

fn step_once(
    value: &mut M,
    grad: &M,
    state: &mut AdamState<f64>,
    lr: f64,
) -> comatch_core::Result<()> {
    let mut p = [AdamParam {
        name: "theta",
        value,
        grad,
    }];
    adam_step(&mut p, state, lr)
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut theta = M::from_rows(&[[0.5]]);
    let mut state = AdamState::new([(1, 1)]);
    step_once(&mut theta, &M::from_rows(&[[1.0]]), &mut state, 1e-3).unwrap();
    // m̂ = 1 and v̂ = 1 after bias correction, so the step is lr/(1+ε).
    let expected = 0.5 - 1e-3 / (1.0 + 1e-8);
    assert!((theta[(0, 0)] - expected).abs() < 1e-15);
    assert_eq!(state.step, 1);
}

#[test]
fn adam_zero_gradient_keeps_params_and_counts_the_step() {
    let mut theta = M::from_rows(&[[0.5, -2.0]]);
    let before = theta.clone();
    let mut state = AdamState::new([(1, 2)]);
    step_once(&mut theta, &M::zeros(1, 2), &mut state, 1e-3).unwrap();
    assert!(theta.bit_eq(&before));
    assert_eq!(state.step, 1);
}

#[test]
fn adam_groups_update_independently() {
    let mut a = M::from_rows(&[[1.0]]);
    let mut b = M::from_rows(&[[1.0]]);
    let (ga, gb) = (M::from_rows(&[[2.0]]), M::from_rows(&[[0.0]]));
    let mut state = AdamState::new([(1, 1), (1, 1)]);
    let mut ps = [
        AdamParam {
            name: "a",
            value: &mut a,
            grad: &ga,
        },
        AdamParam {
            name: "b",
            value: &mut b,
            grad: &gb,
        },
    ];
    adam_step(&mut ps, &mut state, 0.01).unwrap();
    assert!(a[(0, 0)] < 1.0);
    assert_eq!(b[(0, 0)], 1.0);
}

#[test]
fn adam_rejects_non_finite_gradient_by_name() {
    let mut theta = M::from_rows(&[[0.5]]);
    let mut state = AdamState::new([(1, 1)]);
    let err = step_once(&mut theta, &M::from_rows(&[[f64::NAN]]), &mut state, 1e-3).unwrap_err();
    assert!(err.to_string().contains("theta"), "{err}");
    assert_eq!(theta[(0, 0)], 0.5);
    assert_eq!(state.step, 0);
}

proptest! {
    #[test]
    fn adam_step_descends_a_convex_quadratic(
        seed in any::<u64>(),
        n in 1usize..6,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..4.0)).collect();
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut theta = M::random_uniform(1, n, -2.0, 2.0, &mut rng);
        let f = |t: &M| (0..n).map(|i| 0.5 * a[i] * (t.data()[i] - c[i]).powi(2)).sum::<f64>();
        let grad = M::from_vec(1, n, (0..n).map(|i| a[i] * (theta.data()[i] - c[i])).collect()).unwrap();
        prop_assume!(grad.data().iter().all(|g| g.abs() > 1e-3));
        let before = f(&theta);
        let mut state = AdamState::new([(1, n)]);
        step_once(&mut theta, &grad, &mut state, 1e-4).unwrap();
        prop_assert!(f(&theta) < before);
    }

    #[test]
    fn clipping_bounds_the_global_norm(
        seed in any::<u64>(),
        scale in 0.01f64..100.0,
        clip in 0.1f64..10.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = M::random_uniform(3, 2, -scale, scale, &mut rng);
        let mut b = M::random_uniform(1, 4, -scale, scale, &mut rng);
        let (a0, b0) = (a.clone(), b.clone());
        let pre = clip_global_norm(&mut [&mut a, &mut b], clip);
        let post = global_norm(&[&a, &b]);
        if pre > clip {
            prop_assert!(post <= clip + 1e-9);
            prop_assert!((post - clip).abs() < 1e-9);
        } else {
            prop_assert!(a.bit_eq(&a0) && b.bit_eq(&b0));
        }
    }
}

fn random_checkpoint(seed: u64) -> Checkpoint<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let variant = Variant::ALL[rng.gen_range(0..3)];
    let d = rng.gen_range(1..6);
    let l = 2 * rng.gen_range(1..4);
    let mut params = ModelParams::init(Dims::new(d, l).unwrap(), variant, seed).unwrap();
    for t in params.tensors_mut() {
        let (r, c) = t.shape();
        t.value = M::random_uniform(r, c, -3.0, 3.0, &mut rng);
    }
    let words: Vec<String> = (0..rng.gen_range(0..20))
        .map(|i| format!("tok{i}-{}", rng.gen::<u16>()))
        .collect();
    let vocab = Vocabulary::from_tokens(words).unwrap();
    let trainable = rng.gen_bool(0.5);
    let mut vectors = M::random_uniform(d, vocab.len(), -1.0, 1.0, &mut rng);
    for r in 0..d {
        vectors[(r, PAD)] = 0.0;
    }
    let config = TrainConfig {
        embed: d,
        hidden: l,
        lr: rng.gen_range(1e-5..1e-1),
        seed,
        variant,
        trainable_embeddings: trainable,
        ..TrainConfig::default()
    };
    Checkpoint {
        params,
        embeddings: EmbeddingTable::new(vectors, trainable),
        vocab,
        config,
    }
}

fn assert_same_checkpoint(a: &Checkpoint<f64>, b: &Checkpoint<f64>) {
    for ((na, ta), (nb, tb)) in a
        .params
        .named_tensors()
        .iter()
        .zip(b.params.named_tensors())
    {
        assert_eq!(*na, nb);
        assert!(ta.value.bit_eq(&tb.value), "{na}");
    }
    assert!(a
        .embeddings
        .vectors
        .value
        .bit_eq(&b.embeddings.vectors.value));
    assert_eq!(a.embeddings.trainable(), b.embeddings.trainable());
    assert_eq!(a.vocab, b.vocab);
    assert_eq!(a.config, b.config);
    assert_eq!(a.params.variant, b.params.variant);
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..50 {
        let ckpt = random_checkpoint(seed);
        let path = dir.path().join(format!("{seed}.ckpt"));
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint::<f64>(&path).unwrap();
        assert_same_checkpoint(&ckpt, &back);
    }
}

#[test]
fn checkpoint_layout_starts_with_magic_and_version() {
    let bytes = encode_checkpoint(&random_checkpoint(1)).unwrap();
    assert_eq!(&bytes[..4], b"CMC1");
    assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
    assert_eq!(&bytes[8..12], &24u32.to_le_bytes());
}

#[test]
fn corrupt_checkpoints_report_offsets() {
    let bytes = encode_checkpoint(&random_checkpoint(2)).unwrap();

    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    match decode_checkpoint::<f64>(&bad) {
        Err(Error::CorruptCheckpoint { offset: 0, .. }) => {}
        other => panic!("{other:?}"),
    }

    let mut bad = bytes.clone();
    bad[4] = 9;
    match decode_checkpoint::<f64>(&bad) {
        Err(Error::CorruptCheckpoint { offset: 4, .. }) => {}
        other => panic!("{other:?}"),
    }

    for cut in [3, 10, 40, bytes.len() / 2, bytes.len() - 1] {
        match decode_checkpoint::<f64>(&bytes[..cut]) {
            Err(Error::CorruptCheckpoint { offset, .. }) => assert!(offset <= cut),
            other => panic!("cut {cut}: {other:?}"),
        }
    }

    let mut long = bytes.clone();
    long.push(0);
    assert!(matches!(
        decode_checkpoint::<f64>(&long),
        Err(Error::CorruptCheckpoint { .. })
    ));
}

#[test]
fn mismatched_dims_are_explicit() {
    let ckpt = random_checkpoint(4);
    let (d, l) = (ckpt.config.embed, ckpt.config.hidden);
    assert!(ckpt.expect_dims(d, l).is_ok());
    assert!(matches!(
        ckpt.expect_dims(d + 1, l),
        Err(Error::Mismatch(_))
    ));
    assert!(matches!(
        ckpt.expect_dims(d, l + 2),
        Err(Error::Mismatch(_))
    ));
}

#[test]
fn zero_epochs_returns_initial_params() {
    let (vocab, exs, emb) = synthetic(6, 1, 4);
    let cfg = TrainConfig {
        epochs: 0,
        ..tiny_config(Variant::Full)
    };
    let out = train(&cfg, &vocab, emb.clone(), &exs, &exs, |_| Ok(())).unwrap();
    let init = ModelParams::<f64>::init(cfg.dims().unwrap(), cfg.variant, cfg.seed).unwrap();
    assert_eq!(out.best.params, init);
    assert_eq!(out.best_epoch, 0);
    assert!(out.metrics.is_empty());
    assert!(out.best.embeddings.vectors.value.bit_eq(&emb.vectors.value));
}

#[test]
fn empty_training_set_is_rejected() {
    let (vocab, _, emb) = synthetic(1, 1, 4);
    assert!(
        train(&tiny_config(Variant::Full), &vocab, emb, &[], &[], |_| Ok(
            ()
        ))
        .is_err()
    );
}

fn run(cfg: &TrainConfig, n: usize) -> TrainOutcome<f64> {
    let (vocab, exs, emb) = synthetic(n, 7, cfg.embed);
    train(cfg, &vocab, emb, &exs[..n - 4], &exs[n - 4..], |_| Ok(())).unwrap()
}

#[test]
fn same_seed_gives_identical_loss_curve() {
    for variant in Variant::ALL {
        let cfg = TrainConfig {
            dropout: 0.2,
            trainable_embeddings: true,
            ..tiny_config(variant)
        };
        let (a, b) = (run(&cfg, 12), run(&cfg, 12));
        let curve = |o: &TrainOutcome<f64>| {
            o.metrics
                .iter()
                .map(|m| (m.train_loss.to_bits(), m.dev_accuracy))
                .collect::<Vec<_>>()
        };
        assert_eq!(curve(&a), curve(&b));
        assert_same_checkpoint(&a.last, &b.last);
        let other = run(
            &TrainConfig {
                seed: cfg.seed + 1,
                ..cfg.clone()
            },
            12,
        );
        assert_ne!(curve(&a), curve(&other));
    }
}

#[test]
fn thread_count_does_not_change_training() {
    let cfg = tiny_config(Variant::Full);
    let pool = |n| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
    };
    let a = pool(1).install(|| run(&cfg, 12));
    let b = pool(3).install(|| run(&cfg, 12));
    assert_same_checkpoint(&a.last, &b.last);
}

#[test]
fn nan_loss_aborts_with_batch_id() {
    let (vocab, exs, mut emb) = synthetic(6, 2, 4);
    emb.vectors.value.fill(f64::NAN);
    let err = train(&tiny_config(Variant::Full), &vocab, emb, &exs, &[], |_| {
        Ok(())
    })
    .unwrap_err();
    match err {
        Error::NonFinite(msg) => assert!(msg.contains("batch"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn trainable_embeddings_move_but_pad_stays_zero() {
    let cfg = TrainConfig {
        trainable_embeddings: true,
        ..tiny_config(Variant::Full)
    };
    let (vocab, exs, emb) = synthetic(8, 3, cfg.embed);
    let out = train(&cfg, &vocab, emb.clone(), &exs, &[], |_| Ok(())).unwrap();
    let after = &out.last.embeddings.vectors.value;
    assert!(!after.bit_eq(&emb.vectors.value));
    assert!((0..cfg.embed).all(|r| after[(r, PAD)] == 0.0));

    let frozen = train(
        &tiny_config(Variant::Full),
        &vocab,
        emb.clone(),
        &exs,
        &[],
        |_| Ok(()),
    )
    .unwrap();
    assert!(frozen
        .last
        .embeddings
        .vectors
        .value
        .bit_eq(&emb.vectors.value));
}

#[test]
fn best_checkpoint_tracks_dev_accuracy() {
    let cfg = TrainConfig {
        epochs: 4,
        ..tiny_config(Variant::Full)
    };
    let out = run(&cfg, 14);
    let accs: Vec<f64> = out
        .metrics
        .iter()
        .map(|m| m.dev_accuracy.unwrap())
        .collect();
    let best = accs.iter().copied().fold(f64::MIN, f64::max);
    let first_best = accs.iter().position(|&a| a == best).unwrap() + 1;
    assert_eq!(out.best_epoch, first_best);
}

#[test]
fn metrics_lines_are_json_with_documented_keys() {
    let mut buf = Vec::new();
    let cfg = tiny_config(Variant::Flat);
    let (vocab, exs, emb) = synthetic(8, 5, cfg.embed);
    train(&cfg, &vocab, emb, &exs, &exs, |m| {
        write_metrics_line(&mut buf, m)
    })
    .unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 2);
    for (i, line) in text.lines().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let obj = v.as_object().unwrap();
        let mut keys: Vec<&str> = obj.keys().map(String::as_str).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            ["dev_accuracy", "epoch", "train_loss", "wall_seconds"]
        );
        assert_eq!(obj["epoch"], i + 1);
    }
}

#[test]
fn evaluation_ignores_batch_size_and_threads() {
    let (_, exs, emb) = synthetic(20, 9, 4);
    let params = ModelParams::init(Dims::new(4, 4).unwrap(), Variant::Full, 9).unwrap();
    let reference = evaluate_batched(&params, &emb, &exs, 1).unwrap();
    for b in [2, 7, 32] {
        assert_eq!(evaluate_batched(&params, &emb, &exs, b).unwrap(), reference);
    }
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| evaluate(&params, &emb, &exs).unwrap());
    assert_eq!(single, reference);
}

#[test]
fn evaluation_of_nothing_is_an_error() {
    let (_, _, emb) = synthetic(1, 9, 4);
    let params = ModelParams::init(Dims::new(4, 4).unwrap(), Variant::Full, 9).unwrap();
    assert!(matches!(
        evaluate(&params, &emb, &[]),
        Err(Error::Validation(_))
    ));
}

#[test]
fn random_four_way_guessing_is_near_a_quarter() {
    let (_, exs) = synthetic_dataset(4000, 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let report =
        EvalReport::from_predictions(exs.iter().map(|e| (e, rng.gen_range(0..4)))).unwrap();
    assert!(
        (report.accuracy() - 0.25).abs() < 0.02,
        "{}",
        report.accuracy()
    );
}

#[test]
fn middle_only_data_leaves_high_bucket_empty() {
    let (_, mut exs) = synthetic_dataset(10, 2).unwrap();
    exs.iter_mut().for_each(|e| e.subset = Subset::Middle);
    let report = EvalReport::from_predictions(exs.iter().map(|e| (e, 0))).unwrap();
    assert_eq!(report.high.count, 0);
    assert_eq!(report.high.accuracy, None);
    assert_eq!(report.middle.count, 10);
}
