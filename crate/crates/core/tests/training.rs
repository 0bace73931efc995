mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use cliptime::encoders::VisionArch;
use cliptime::par::Exec;
use cliptime::training::{batch_gradients, fit_prepared, Optimizer, OptimizerKind, TimeScale, TrainConfig};
use cliptime::Error;

use common::{eval_items, objective, random_samples, tiny_model};

#[test]
fn one_small_step_descends() {
    let mut successes = 0;
    for trial in 0..20u64 {
        let mut model = tiny_model(VisionArch::PatchMlp, true, 100 + trial);
        let samples = random_samples(&model, 8, 32, 200 + trial);
        let before = objective(&model, &samples, 1.0, 1.0);
        let (_, grads) = batch_gradients(&model, &eval_items(&samples), 1.0, 1.0, Exec::default()).unwrap();
        let mut opt = Optimizer::new(OptimizerKind::Adam, 1e-4, model.params.len());
        opt.step(&mut model.params, &grads);
        if objective(&model, &samples, 1.0, 1.0) < before {
            successes += 1;
        }
    }
    assert!(successes >= 18, "{successes} / 20");
}

#[test]
fn parallel_and_sequential_gradients_are_bit_identical() {
    let model = tiny_model(VisionArch::CompactConv, true, 1);
    let samples = random_samples(&model, 13, 32, 2);
    let (sa, ga) = batch_gradients(&model, &eval_items(&samples), 1.0, 1.0, Exec::Sequential).unwrap();
    let (sb, gb) = batch_gradients(&model, &eval_items(&samples), 1.0, 1.0, Exec::Parallel).unwrap();
    assert_eq!(sa, sb);
    assert_eq!(ga.data(), gb.data());
}

fn small_fit(seed: u64) -> cliptime::training::FitOutput {
    let mut model = tiny_model(VisionArch::PatchMlp, true, seed);
    let mut samples = random_samples(&model, 75, 32, 5);
    let val = samples.split_off(60);
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 16,
        learning_rate: 1e-3,
        seed,
        neutral_prompt_rate: 0.5,
        ..TrainConfig::default()
    };
    fit_prepared(&mut model, &samples, &val, TimeScale::new(0.0, 720.0).unwrap(), &cfg, Exec::default()).unwrap()
}

#[test]
fn fit_bookkeeping_and_determinism() {
    let a = small_fit(4);
    assert_eq!(a.history.epochs.len(), 2);
    for (i, e) in a.history.epochs.iter().enumerate() {
        assert_eq!(e.epoch, i + 1);
        for l in [e.train, e.val] {
            assert!((l.l_total - (l.l_class + l.l_time)).abs() <= 1e-9);
        }
    }
    let best_epoch = a.best_checkpoint.epoch;
    let best_val = a.history.epochs[best_epoch - 1].val.l_total;
    assert!(a.history.epochs.iter().all(|e| e.val.l_total >= best_val));
    assert_eq!(a.final_checkpoint.epoch, 2);
    assert_eq!(a.final_checkpoint.time_scale, TimeScale::new(0.0, 720.0).unwrap());

    let b = small_fit(4);
    assert_eq!(a.history.to_tsv(), b.history.to_tsv());
    assert_eq!(a.final_checkpoint.model.params.data(), b.final_checkpoint.model.params.data());
}

#[test]
fn empty_splits_and_bad_weights_are_rejected() {
    let mut model = tiny_model(VisionArch::PatchMlp, true, 0);
    let samples = random_samples(&model, 4, 32, 0);
    let scale = TimeScale::new(0.0, 1.0).unwrap();
    let cfg = TrainConfig::default();
    let err = fit_prepared(&mut model, &samples, &[], scale, &cfg, Exec::default()).unwrap_err();
    assert!(matches!(err, Error::Data(_)));
    let bad = TrainConfig {
        alpha: 0.0,
        beta: 0.0,
        ..TrainConfig::default()
    };
    assert!(matches!(
        fit_prepared(&mut model, &samples, &samples, scale, &bad, Exec::default()),
        Err(Error::Config(_))
    ));
}

#[test]
fn divergence_is_reported_with_its_location() {
    let mut model = tiny_model(VisionArch::PatchMlp, false, 3);
    let mut samples = random_samples(&model, 8, 32, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    samples[5].image.data.iter_mut().for_each(|v| *v = rng.gen::<f64>() * f64::MAX);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let err = fit_prepared(&mut model, &samples, &samples, TimeScale::new(0.0, 1.0).unwrap(), &cfg, Exec::default())
        .unwrap_err();
    match err {
        Error::NonFinite { epoch, .. } => assert_eq!(epoch, 1),
        other => panic!("unexpected {other}"),
    }
}
