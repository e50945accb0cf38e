mod common;

use automr_core::data::Split;
use automr_core::model::{preset, ForwardCtx, ModelInstance};
use automr_core::tape::{Graph, Tape};
use automr_core::tensor::{softmax_cross_entropy, Tensor};
use automr_core::train::{
    checkpoint_bytes, checkpoint_from_bytes, clip_global_norm, evaluate, global_norm, read_events,
    AdamW, CheckpointError, Scheduler, StepSize, TrainConfig, TrainError, Trainer, BEST_CHECKPOINT,
    EVENT_LOG, LAST_CHECKPOINT,
};
use automr_core::data::synthetic::{synthetic_dataset, SyntheticConfig};
use common::{tiny_dataset, tiny_model_config, tiny_train_config};
use proptest::prelude::*;

fn tiny_model(seed: u64) -> ModelInstance {
    ModelInstance::build(tiny_model_config(), seed).unwrap()
}

fn params_of(m: &ModelInstance) -> Vec<Tensor<f32>> {
    m.state_tensors().into_iter().map(|(_, t)| t).collect()
}

#[test]
fn zero_epochs_is_a_no_op() {
    let ds = tiny_dataset(0);
    let model = tiny_model(1);
    let before = params_of(&model);
    let out = Trainer::new(model, &ds, tiny_train_config(0, 0)).unwrap().run().unwrap();
    assert!(out.history.is_empty());
    assert_eq!(params_of(&out.best.model), before);
    assert_eq!(out.last.epoch, 0);
}

#[test]
fn identical_runs_have_identical_losses() {
    let ds = tiny_dataset(0);
    let run = || {
        Trainer::new(tiny_model(3), &ds, tiny_train_config(3, 7))
            .unwrap()
            .run()
            .unwrap()
            .history
            .iter()
            .map(|h| (h.train.loss.to_bits(), h.test.loss.to_bits()))
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn resume_from_checkpoint_matches_uninterrupted_run() {
    let ds = tiny_dataset(2);
    let config = tiny_train_config(10, 11);

    let straight = Trainer::new(tiny_model(5), &ds, config.clone()).unwrap().run().unwrap();

    let mut first = Trainer::new(tiny_model(5), &ds, config.clone()).unwrap();
    first.run_until(5).unwrap();
    let bytes = checkpoint_bytes(first.config(), first.state());
    let restored = checkpoint_from_bytes(&bytes).unwrap();
    assert_eq!(restored.config, config);
    let resumed = Trainer::resume(restored.state, &ds, restored.config)
        .unwrap()
        .run()
        .unwrap();

    let a = straight.history.last().unwrap();
    let b = resumed.history.last().unwrap();
    assert_eq!(a.epoch, b.epoch);
    assert_eq!(a.train.loss.to_bits(), b.train.loss.to_bits());
    assert_eq!(a.test.loss.to_bits(), b.test.loss.to_bits());
    assert_eq!(params_of(&straight.last.model), params_of(&resumed.last.model));
}

#[test]
fn checkpoint_round_trip_reproduces_forward() {
    let ds = tiny_dataset(0);
    let mut t = Trainer::new(tiny_model(0), &ds, tiny_train_config(2, 0)).unwrap();
    t.run_until(2).unwrap();
    let restored = checkpoint_from_bytes(&checkpoint_bytes(t.config(), t.state())).unwrap();
    let (x, _) = ds.batch(&[0, 1, 2, 3]);
    let a = t.state().model.infer(x.clone()).unwrap();
    let b = restored.state.model.infer(x).unwrap();
    for (p, q) in a.data().iter().zip(b.data()) {
        assert!((p - q).abs() <= 1e-7);
    }
    assert_eq!(restored.state.optimizer, t.state().optimizer);
    assert_eq!(restored.state.best, t.state().best);
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let ds = tiny_dataset(0);
    let t = Trainer::new(tiny_model(0), &ds, tiny_train_config(1, 0)).unwrap();
    let bytes = checkpoint_bytes(t.config(), t.state());

    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"NOPE");
    let err = checkpoint_from_bytes(&bad).unwrap_err();
    assert!(matches!(err, CheckpointError::NotACheckpoint));
    assert_eq!(err.to_string(), "not a checkpoint");

    let mut bad = bytes.clone();
    bad[4] = 9;
    assert!(matches!(
        checkpoint_from_bytes(&bad),
        Err(CheckpointError::UnsupportedVersion(9))
    ));
    for cut in [6, bytes.len() / 3, bytes.len() - 3] {
        assert!(checkpoint_from_bytes(&bytes[..cut]).is_err(), "cut {cut}");
    }

    // A checkpoint whose tensors disagree with its model config.
    let other = ModelInstance::build(
        automr_core::model::QuartzConfig {
            head_channels: 16,
            ..tiny_model_config()
        },
        0,
    )
    .unwrap();
    let t2 = Trainer::new(other, &ds, tiny_train_config(1, 0)).unwrap();
    let other_bytes = checkpoint_bytes(t2.config(), t2.state());
    let header_len = |b: &[u8]| u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize;
    let mut spliced = bytes[..12 + header_len(&bytes)].to_vec();
    spliced.extend_from_slice(&other_bytes[12 + header_len(&other_bytes)..]);
    assert!(matches!(
        checkpoint_from_bytes(&spliced),
        Err(CheckpointError::ShapeMismatch(_))
    ));
}

#[test]
fn event_log_has_two_finite_records_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(0);
    let config = TrainConfig {
        scheduler: Scheduler::Cosine,
        ..tiny_train_config(3, 0)
    };
    let lr0 = config.learning_rate;
    Trainer::new(tiny_model(0), &ds, config)
        .unwrap()
        .with_event_log(&dir.path().join(EVENT_LOG))
        .run()
        .unwrap();
    let events = read_events(&dir.path().join(EVENT_LOG)).unwrap();
    assert_eq!(events.len(), 6);
    for e in &events {
        assert!(e.loss.is_finite() && e.accuracy.is_finite() && e.macro_f1.is_finite());
    }
    let lrs: Vec<f64> = events
        .iter()
        .filter(|e| e.split == Split::Train)
        .map(|e| e.lr)
        .collect();
    for (e, lr) in lrs.iter().enumerate() {
        let expected = lr0 * 0.5 * (1.0 + (std::f64::consts::PI * e as f64 / 3.0).cos());
        assert!((lr - expected).abs() < 1e-15);
    }
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn unwritable_event_log_does_not_stop_training() {
    let ds = tiny_dataset(0);
    let out = Trainer::new(tiny_model(0), &ds, tiny_train_config(1, 0))
        .unwrap()
        .with_event_log(std::path::Path::new("/nonexistent/dir/events.ndjson"))
        .run()
        .unwrap();
    assert_eq!(out.history.len(), 1);
}

#[test]
fn best_checkpoint_tracks_max_test_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let ds = tiny_dataset(4);
    let out = Trainer::new(tiny_model(2), &ds, tiny_train_config(6, 3))
        .unwrap()
        .with_checkpoint_dir(dir.path())
        .run()
        .unwrap();
    let max = out
        .history
        .iter()
        .map(|h| h.test.accuracy)
        .fold(f64::NEG_INFINITY, f64::max);
    let first_max = out.history.iter().find(|h| h.test.accuracy == max).unwrap().epoch;
    let best = out.last.best.unwrap();
    assert_eq!((best.accuracy, best.epoch), (max, first_max));
    let saved = automr_core::train::load_checkpoint(&dir.path().join(BEST_CHECKPOINT)).unwrap();
    assert_eq!(saved.state.epoch, first_max);
    assert_eq!(evaluate(&saved.state.model, &ds, Split::Test).unwrap().accuracy, max);
    assert!(dir.path().join(LAST_CHECKPOINT).exists());
}

#[test]
fn persistent_nan_terminates_after_one_retry() {
    let ds = tiny_dataset(0);
    let mut windows = ds.windows().clone();
    windows.data_mut()[5] = f32::NAN;
    let poisoned = automr_core::data::WindowedDataset::from_parts(
        ds.schema().clone(),
        windows,
        ds.labels().to_vec(),
        ds.split_tags().to_vec(),
        ds.recordings().to_vec(),
        ds.provenance().to_vec(),
        ds.normalization().cloned(),
    )
    .unwrap();
    let config = tiny_train_config(2, 0);
    let lr = config.learning_rate;
    let err = Trainer::new(tiny_model(0), &poisoned, config).unwrap().run().unwrap_err();
    match err {
        TrainError::Anomaly { epoch, lr: last_lr, .. } => {
            assert_eq!(epoch, 1);
            assert_eq!(last_lr, lr * 0.5);
        }
        other => panic!("expected an anomaly, got {other}"),
    }
}

#[test]
fn mismatched_model_is_rejected() {
    let ds = tiny_dataset(0);
    let model = ModelInstance::build(
        automr_core::model::QuartzConfig {
            in_channels: 4,
            ..tiny_model_config()
        },
        0,
    )
    .unwrap();
    assert!(matches!(
        Trainer::new(model, &ds, tiny_train_config(1, 0)),
        Err(TrainError::Incompatible { .. })
    ));
}

#[test]
fn loss_on_a_fixed_batch_descends() {
    let ds = synthetic_dataset(&SyntheticConfig::default()).normalize().unwrap();
    let batch: Vec<usize> = ds.indices(Split::Train).into_iter().step_by(9).take(32).collect();
    let (x, y) = ds.batch(&batch);
    for seed in 0..5 {
        let mut model: ModelInstance = ModelInstance::build(preset("base", 3, 3).unwrap(), seed).unwrap();
        let mut opt = AdamW::new(model.params().iter().map(|p| p.value.shape()));
        let mut losses = Vec::new();
        for step in 0..6 {
            let mut tape = Tape::new();
            let logits = model.forward(&mut tape, x.clone(), ForwardCtx::train(seed, step)).unwrap();
            let ce = softmax_cross_entropy(tape.value(&logits), &y).unwrap();
            losses.push(ce.loss);
            let mut grads = tape.backward(logits, ce.grad_logits).unwrap();
            let mut flat: Vec<Tensor<f32>> =
                (0..model.params().len()).map(|i| grads.params.remove(&i).unwrap()).collect();
            clip_global_norm(&mut flat, 1.0);
            let mut params: Vec<&mut Tensor<f32>> =
                model.params_mut().iter_mut().map(|p| &mut p.value).collect();
            opt.step(&mut params, &flat, StepSize { lr: 1e-3, weight_decay: 0.0 });
        }
        assert!(losses[5] < losses[0], "seed {seed}: {losses:?}");
    }
}

proptest! {
    #[test]
    fn clipping_caps_norm_and_preserves_direction(
        values in prop::collection::vec(-100.0f32..100.0, 2..40),
        max_norm in 0.01f64..10.0,
    ) {
        let split = values.len() / 2;
        let original = vec![
            Tensor::new(vec![split], values[..split].to_vec()).unwrap(),
            Tensor::new(vec![values.len() - split], values[split..].to_vec()).unwrap(),
        ];
        let mut clipped = original.clone();
        let before = clip_global_norm(&mut clipped, max_norm);
        let after = global_norm(&clipped);
        prop_assert!(after <= max_norm + 1e-6);
        if before > max_norm && before > 0.0 {
            let dot: f64 = original.iter().zip(&clipped)
                .flat_map(|(a, b)| a.data().iter().zip(b.data()))
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum();
            let cosine = dot / (before * after);
            prop_assert!((cosine - 1.0).abs() < 1e-6);
        }
    }
}
