use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::pipeline::{FeatureVector, RawWindow};

fn schema() -> LabelSchema {
    LabelSchema::new(
        vec!["run".into(), "sit".into()],
        vec!["bag".into()],
        vec!["u0".into(), "u1".into()],
    )
    .unwrap()
}

/// Two activities separated by feature sign and window frequency; the
/// user shifts a second feature, the context a third.
fn dataset(n: usize, seed: u64) -> Vec<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let act = i % 2;
            let user = (i / 2) % 2;
            let bag = rng.random_bool(0.5);
            let sign = if act == 0 { 1.0 } else { -1.0 };
            let freq = if act == 0 { 1.0 } else { 3.0 };
            let data = Array2::from_shape_fn((2, 8), |(c, t)| {
                (freq * t as f64 * 0.7 + c as f64).sin() + rng.random_range(-0.1..0.1)
            });
            let values = vec![
                sign + rng.random_range(-0.3..0.3),
                if user == 0 { 1.0 } else { -1.0 } + rng.random_range(-0.3..0.3),
                if bag { 1.0 } else { -1.0 } + rng.random_range(-0.3..0.3),
            ];
            let mut users = vec![false; 2];
            users[user] = true;
            Instance {
                window: RawWindow { data, start_time: 0.0, end_time: 1.0, missing_channels: vec![false; 2] },
                features: FeatureVector { values, missing: vec![false; 3] },
                labels: LabelSet::new(vec![act == 0, act == 1], vec![bag], users).unwrap(),
                user_id: format!("u{user}"),
            }
        })
        .collect()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        max_epochs: 5,
        learning_rate: 0.01,
        patience: 100,
        hidden_size: 4,
        d_t: 3,
        seed: 3,
        ..Default::default()
    }
}

#[test]
fn batches_cover_and_drop() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let b = make_batches(10, 4, false, &mut rng);
    assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![4, 4, 2]);
    let mut all: Vec<usize> = b.concat();
    all.sort_unstable();
    assert_eq!(all, (0..10).collect::<Vec<_>>());
    let b = make_batches(9, 4, true, &mut rng);
    assert_eq!(b.len(), 2);
    assert!(b.iter().all(|x| x.len() == 4));
    // a lone short batch is kept
    assert_eq!(make_batches(3, 4, true, &mut rng).len(), 1);
}

#[test]
fn ablation_switches() {
    let w = LossWeights { alpha: 0.5, gamma1: 0.7, gamma2: 0.9 };
    assert_eq!(Ablation::NoUi.loss_weights(w).gamma2, 0.0);
    assert_eq!(Ablation::NoCl.loss_weights(w).alpha, 0.0);
    assert_eq!(Ablation::NoTs.loss_weights(w), w);
    assert!(!Ablation::NoTs.use_encoder());
    for a in Ablation::ALL {
        assert_eq!(a.as_str().parse::<Ablation>().unwrap(), a);
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(json, format!("\"{}\"", a.as_str()));
    }
    assert!("no_XY".parse::<Ablation>().is_err());
}

#[test]
fn grid_expansion() {
    let base = small_config();
    let one = GridSpec { alpha: vec![0.3], gamma1: vec![1.0], gamma2: vec![1.0], learning_rate: vec![1e-3], d_t: vec![5] };
    let e = one.expand(&base);
    assert_eq!(e.len(), 1);
    assert_eq!(e[0].loss_weights.alpha, 0.3);
    assert_eq!(e[0].d_t, 5);
    let two = GridSpec { alpha: vec![0.1, 0.5], learning_rate: vec![1e-3, 1e-2], ..one };
    assert_eq!(two.expand(&base).len(), 4);
    assert_eq!(GridSpec::default().len(), 27);
}

#[test]
fn selection_tie_breaks() {
    let mk = |alpha, lr| TrainConfig { loss_weights: LossWeights { alpha, ..Default::default() }, learning_rate: lr, ..Default::default() };
    let (a, b, c, d) = (mk(0.5, 1e-3), mk(0.1, 1e-2), mk(0.1, 1e-3), mk(1.0, 1e-4));
    assert_eq!(select_best(&[(0.8, &a), (0.8, &b), (0.8, &c), (0.7, &d)]), Some(2));
    assert_eq!(select_best(&[(0.8, &a), (0.9, &d)]), Some(1));
    assert_eq!(select_best(&[]), None);
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let s = schema();
    let data = dataset(40, 1);
    let cfg = TrainConfig { learning_rate: 0.0, max_epochs: 3, ..small_config() };
    let (model, history) = train(&cfg, &s, &data[..30], &data[30..]).unwrap();
    let fresh = Model::new(cfg.model_config(&s, &data[0])).unwrap();
    assert_eq!(model.params, fresh.params);
    let first = &history.epochs[0].val;
    assert!(history.epochs.iter().all(|e| &e.val == first));
}

#[test]
fn loss_decreases_on_separable_data() {
    let s = schema();
    let data = dataset(64, 2);
    let cfg = TrainConfig { batch_size: 64, ..small_config() };
    let (_, history) = train(&cfg, &s, &data, &data[..16]).unwrap();
    let totals: Vec<f64> = history.epochs.iter().map(|e| e.train.total).collect();
    assert_eq!(totals.len(), 5);
    assert!(totals.windows(2).all(|w| w[1] < w[0]), "{totals:?}");
}

#[test]
fn no_cl_reports_but_ignores_contrastive() {
    let s = schema();
    let data = dataset(48, 3);
    let cfg = TrainConfig { ablation: Ablation::NoCl, max_epochs: 2, ..small_config() };
    let (_, history) = train(&cfg, &s, &data[..32], &data[32..]).unwrap();
    for e in &history.epochs {
        let l = e.train;
        assert!(l.l_d > 0.0);
        assert!((l.total - (l.l_a + l.l_pp + l.l_u)).abs() < 1e-9);
    }
}

#[test]
fn training_is_deterministic() {
    let s = schema();
    let data = dataset(48, 4);
    let cfg = TrainConfig { max_epochs: 3, ..small_config() };
    let (m1, h1) = train(&cfg, &s, &data[..32], &data[32..]).unwrap();
    let (m2, h2) = train(&cfg, &s, &data[..32], &data[32..]).unwrap();
    assert_eq!(h1, h2);
    assert_eq!(m1.params, m2.params);
}

#[test]
fn early_stopping() {
    let s = schema();
    let data = dataset(40, 5);
    let cfg = TrainConfig { learning_rate: 0.0, patience: 2, max_epochs: 20, ..small_config() };
    let (_, h) = train(&cfg, &s, &data[..30], &data[30..]).unwrap();
    assert_eq!(h.epochs.len(), 3);
    assert!(h.stopped_early);
    assert_eq!(h.best_epoch, 0);
}

#[test]
fn nan_loss_names_the_batch() {
    let s = schema();
    let mut data = dataset(40, 6);
    for inst in &mut data {
        inst.features.values[0] = f64::NAN;
    }
    let cfg = TrainConfig { batch_size: 8, ..small_config() };
    match train(&cfg, &s, &data[..32], &data[32..]) {
        Err(Error::NonFiniteLoss { epoch, batch, .. }) => assert_eq!((epoch, batch), (0, 0)),
        other => panic!("expected non-finite loss, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn rigged_grid_picks_the_dominant_trial() {
    let s = schema();
    let data = dataset(64, 7);
    let base = TrainConfig { max_epochs: 10, batch_size: 8, ..small_config() };
    let mut configs = Vec::new();
    for (i, alpha) in [0.1, 0.5, 1.0].into_iter().enumerate() {
        let lr = if i == 2 { 0.1 } else { 0.0 };
        configs.push(TrainConfig { loss_weights: LossWeights { alpha, ..base.loss_weights }, learning_rate: lr, ..base.clone() });
    }
    let r = grid_search_configs(configs, &s, &data[..48], &data[48..]).unwrap();
    assert_eq!(r.trials.len(), 3);
    assert_eq!(r.best, 2, "scores {:?}", r.trials.iter().map(|t| t.val_mcc).collect::<Vec<_>>());
    assert!(grid_search_configs(vec![], &s, &data, &data).is_err());
}

#[test]
fn ablation_runs_every_variant() {
    let s = schema();
    let data = dataset(60, 8);
    let cfg = TrainConfig { max_epochs: 2, ..small_config() };
    let runs = ablate(&cfg, &Ablation::ALL, &s, &data[..36], &data[36..48], &data[48..]).unwrap();
    assert_eq!(runs.len(), 4);
    for (run, model) in &runs {
        assert_eq!(run.encoder_params == 0, run.variant == Ablation::NoTs);
        assert_eq!(model.params.num_encoder_params(), run.encoder_params);
        assert_eq!(run.test.heads().len(), 3);
    }
}

#[test]
fn rejects_bad_configs() {
    let s = schema();
    let data = dataset(20, 9);
    let cfg = TrainConfig { batch_size: 1, ..small_config() };
    assert!(train(&cfg, &s, &data, &data).is_err());
    let cfg = TrainConfig { batch_size: 1, ablation: Ablation::NoCl, max_epochs: 1, ..small_config() };
    assert!(train(&cfg, &s, &data, &data).is_ok());
    assert!(train(&small_config(), &s, &[], &data).is_err());
}

