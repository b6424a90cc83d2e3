use oml_core::dataset::{generate_synthetic, SynthConfig};
use oml_core::evaluation::{prequential_run, telescoping_check, Method, RunModel};
use oml_core::knn::NeighborStore;
use oml_core::metric_learner::{Hyperparams, ModelState, UpdateRule};
use oml_core::projection::Projection;
use oml_core::{Example, Matrix, MetricV};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn small_synth(seed: u64) -> oml_core::StreamDataset {
    generate_synthetic(&SynthConfig {
        n: 200,
        p: 6,
        q: 4,
        latent_dim: 2,
        noise_std: 0.2,
        label_threshold: 0.3,
        rng_seed: seed,
    })
    .unwrap()
}

fn hp(q: usize) -> Hyperparams {
    Hyperparams {
        d: Some(q - 1),
        ..Hyperparams::default()
    }
}

/// P = I on 2 features, V = I, seed store holding one example.
fn identity_state(seed_x: &[f64], seed_y: &[u8]) -> ModelState {
    let proj = Projection::from_matrix(Matrix::identity(2), 0.0).unwrap();
    let metric = MetricV::from_matrix(Matrix::identity(2)).unwrap();
    let mut store = NeighborStore::new(2, 2);
    store.push(seed_x, seed_y, seed_x).unwrap();
    ModelState::from_parts(proj, metric, store, 0, 0.0).unwrap()
}

#[test]
fn duplicate_neighbor_is_passive() {
    let mut state = identity_state(&[1.0, 0.0], &[1, 0]);
    let before = state.metric().matrix().clone();
    let out = state
        .online_round(&[1.0, 0.0], &[1, 0], &Hyperparams::default())
        .unwrap();
    assert_eq!(out.loss, 0.0);
    assert_eq!(out.lambda, None);
    assert_eq!(state.metric().matrix().as_slice(), before.as_slice());
    assert_eq!(state.store().len(), 2);
    assert_eq!(state.round(), 1);
    assert_eq!(state.cumulative_loss(), 0.0);
}

#[test]
fn positive_loss_moves_metric() {
    // u = (0.25, −0.5), v = (−0.75, 0.5): loss = 2 − (0.3125 − 0.8125)
    let mut state = identity_state(&[0.0, 0.0], &[0, 1]);
    let hp = Hyperparams {
        lambda_max: 0.1,
        ..Hyperparams::default()
    };
    let out = state.online_round(&[0.25, 0.5], &[1, 0], &hp).unwrap();
    assert_eq!(out.loss, 2.5);
    let lambda = out.lambda.unwrap();
    assert!((hp.lambda_min..=hp.lambda_max).contains(&lambda));
    assert_ne!(state.metric().matrix(), &Matrix::identity(2));
    let post = out.post_loss.unwrap();
    assert!(post.is_finite() && post >= 0.0);
    assert_eq!(state.positive_rounds(), 1);
    assert_eq!(state.cumulative_loss(), out.loss);
}

#[test]
fn cumulative_loss_is_sum_of_round_losses() {
    let ds = small_synth(3);
    let hp = hp(ds.q());
    let (seed, stream) = ds.examples().split_at(40);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut state = ModelState::initialize(seed, &hp, &mut rng).unwrap();
    let mut sum = 0.0;
    let mut positive = 0;
    for e in stream {
        let out = state.online_round(&e.features, &e.labels, &hp).unwrap();
        sum += out.loss;
        positive += u64::from(out.loss > 0.0);
        if out.loss == 0.0 {
            assert!(out.lambda.is_none() && out.post_loss.is_none());
        }
    }
    assert_eq!(state.cumulative_loss(), sum);
    assert_eq!(state.positive_rounds(), positive);
    assert_eq!(state.store().len(), ds.len());
    assert_eq!(state.round(), stream.len() as u64);
}

#[test]
fn online_rounds_are_deterministic() {
    let ds = small_synth(4);
    let hp = Hyperparams {
        update_rule: UpdateRule::Exact,
        ..hp(ds.q())
    };
    let run = || {
        let (seed, stream) = ds.examples().split_at(50);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut s = ModelState::initialize(seed, &hp, &mut rng).unwrap();
        for e in stream {
            s.online_round(&e.features, &e.labels, &hp).unwrap();
        }
        (s.metric().matrix().clone(), s.cumulative_loss())
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a.as_slice(), b.as_slice());
    assert_eq!(la.to_bits(), lb.to_bits());
}

#[test]
fn predict_caps_k_at_store_size() {
    let mut state = identity_state(&[1.0, 0.0], &[1, 1]);
    assert_eq!(state.predict(&[0.9, 0.1], 10, 0.5).unwrap(), vec![1, 1]);
}

#[test]
fn knn_baseline_never_changes_a_metric() {
    let ds = small_synth(5);
    let out = prequential_run(&ds, &hp(ds.q()), Method::KnnEuclidean, 10).unwrap();
    assert!(out.diagnostics.snapshots.is_empty());
    assert_eq!(out.cumulative_loss(), 0.0);
    assert_eq!(out.positive_loss_rounds, 0);
    assert!(matches!(out.model, RunModel::KnnEuclidean(_)));
    assert_eq!(out.seed_size + out.stream_size, ds.len());
}

#[test]
fn same_seed_gives_identical_curves() {
    let ds = small_synth(6);
    for method in [Method::Oml, Method::KnnEuclidean] {
        let a = prequential_run(&ds, &hp(ds.q()), method, 7).unwrap();
        let b = prequential_run(&ds, &hp(ds.q()), method, 7).unwrap();
        assert_eq!(a.report.curve(), b.report.curve());
        let bits = |r: &oml_core::RunOutput| -> Vec<u64> {
            r.report
                .curve()
                .iter()
                .flat_map(|c| {
                    [
                        c.macro_f1,
                        c.micro_f1,
                        c.example_f1,
                        c.hamming_loss,
                        c.cumulative_loss,
                    ]
                })
                .map(f64::to_bits)
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }
}

#[test]
fn curve_rows_land_on_checkpoints_and_final_round() {
    let ds = small_synth(7);
    let out = prequential_run(&ds, &hp(ds.q()), Method::Oml, 15).unwrap();
    let rounds: Vec<u64> = out.report.curve().iter().map(|c| c.round).collect();
    let total = out.stream_size as u64;
    let mut want: Vec<u64> = (1..=total).filter(|r| r % 15 == 0).collect();
    if want.last() != Some(&total) {
        want.push(total);
    }
    assert_eq!(rounds, want);
    assert_eq!(out.diagnostics.snapshots.len(), want.len() + 1);
    assert_eq!(out.report.examples(), total);
    let max_sq = ds
        .examples()
        .iter()
        .map(|e: &Example| e.features.iter().map(|x| x * x).sum::<f64>())
        .fold(0.0, f64::max);
    assert!(out.report.r_hat() <= max_sq);
}

#[test]
fn telescoping_with_initial_metric_and_single_step() {
    let ds = small_synth(8);
    let out = prequential_run(&ds, &hp(ds.q()), Method::Oml, 1).unwrap();
    let v1 = out.diagnostics.snapshots[0].1.clone();
    let res = telescoping_check(&out.diagnostics, &v1).unwrap();
    assert!(res <= 1e-6, "residual {res}");

    let mut two = out.diagnostics.clone();
    two.snapshots.truncate(2);
    let res = telescoping_check(&two, &v1).unwrap();
    assert!(res <= 1e-12 * (1.0 + v1.frobenius_sq()), "residual {res}");

    let last = out.diagnostics.snapshots.last().unwrap().1.clone();
    let scale = 1.0 + v1.sub(&last).unwrap().frobenius_sq();
    assert!(telescoping_check(&out.diagnostics, &last).unwrap() <= 1e-6 * scale);
}

#[test]
fn telescoping_for_random_targets() {
    let ds = small_synth(9);
    let out = prequential_run(&ds, &hp(ds.q()), Method::Oml, 1).unwrap();
    let v1 = &out.diagnostics.snapshots[0].1;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..10 {
        let u = Matrix::from_vec(
            v1.rows(),
            v1.cols(),
            (0..v1.rows() * v1.cols())
                .map(|_| rng.sample(StandardNormal))
                .collect(),
        )
        .unwrap();
        let scale = 1.0 + v1.sub(&u).unwrap().frobenius_sq();
        assert!(telescoping_check(&out.diagnostics, &u).unwrap() <= 1e-6 * scale);
    }
    let wrong = Matrix::zeros(v1.rows() + 1, v1.cols());
    assert!(telescoping_check(&out.diagnostics, &wrong).is_err());
}

#[test]
fn emotions_shaped_stream_runs_with_defaults() {
    // 593 instances, 72 features, 6 labels
    let ds = generate_synthetic(&SynthConfig {
        n: 593,
        p: 72,
        q: 6,
        latent_dim: 4,
        ..SynthConfig::default()
    })
    .unwrap();
    let out = prequential_run(&ds, &Hyperparams::default(), Method::Oml, 10).unwrap();
    assert_eq!(out.seed_size, 119);
    assert_eq!(out.stream_size, 474);
    let last = out.report.curve().last().unwrap();
    assert_eq!(last.round, 474);
    for m in [
        last.macro_f1,
        last.micro_f1,
        last.example_f1,
        last.hamming_loss,
    ] {
        assert!((0.0..=1.0).contains(&m));
    }
}
