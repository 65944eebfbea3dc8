use super::*;
use crate::decoder::{BOS, EOS, RESERVED_TOKENS};
use crate::error::Error;
use crate::flops::Family;
use crate::model::{DlaMode, ModelConfig};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

fn small_task() -> ToyTask {
    ToyTask {
        vocab: 6,
        min_len: 2,
        max_len: 4,
        frames_per_token: 3,
        feature_dim: 6,
        ..ToyTask::default()
    }
}

fn small_model(task: &ToyTask, family: Family) -> ModelConfig {
    ModelConfig {
        family,
        d_model: 16,
        heads: 2,
        ffn_dim: 32,
        encoder_layers: 1,
        decoder_layers: 1,
        n_latents: 8,
        input_dim: task.feature_dim,
        use_input_processor: false,
        conv_channels: 8,
        conv_kernel: 3,
        conv_layers: 1,
        conv_stride: 1,
        vocab: task.model_vocab(),
        dropout: 0.0,
    }
}

#[test]
fn generation_is_deterministic_and_splits_differ() {
    let task = ToyTask::default();
    let a = task.generate(Split::Train, 20).unwrap();
    assert_eq!(a, task.generate(Split::Train, 20).unwrap());
    assert_ne!(a, task.generate(Split::Valid, 20).unwrap());
    let other = ToyTask { seed: 2, ..task.clone() };
    assert_ne!(a, other.generate(Split::Train, 20).unwrap());
    for ex in &a {
        let t = ex.content().len();
        assert!((task.min_len..=task.max_len).contains(&t));
        assert_eq!(ex.target[0], BOS);
        assert_eq!(*ex.target.last().unwrap(), EOS);
        assert!(ex.content().iter().all(|&tok| (RESERVED_TOKENS..task.model_vocab()).contains(&tok)));
        assert_eq!(ex.spectrogram.shape(), &[t * task.frames_per_token, task.feature_dim]);
    }
}

#[test]
fn noiseless_frames_repeat_the_token_pattern() {
    let task = ToyTask {
        noise_std: 0.0,
        ..ToyTask::default()
    };
    let patterns = task.patterns();
    for ex in task.generate(Split::Test, 5).unwrap() {
        for (i, &tok) in ex.content().iter().enumerate() {
            for f in 0..task.frames_per_token {
                assert_eq!(ex.spectrogram.row(i * task.frames_per_token + f), patterns.row(tok - RESERVED_TOKENS));
            }
        }
    }
}

#[test]
fn reverse_mode_reverses_the_target_only() {
    let copy = ToyTask::default();
    let rev = ToyTask {
        mode: TaskMode::Reverse,
        ..copy.clone()
    };
    for (c, r) in copy.generate(Split::Train, 10).unwrap().iter().zip(rev.generate(Split::Train, 10).unwrap()) {
        assert_eq!(c.spectrogram, r.spectrogram);
        let mut reversed = c.content().to_vec();
        reversed.reverse();
        assert_eq!(r.content(), reversed.as_slice());
    }
}

#[test]
fn task_validation_names_keys() {
    let bad = ToyTask {
        min_len: 9,
        max_len: 3,
        ..ToyTask::default()
    };
    assert!(matches!(bad.generate(Split::Train, 1), Err(Error::Config { key, .. }) if key == "min_len"));
}

fn store(values: &[(&str, Vec<f32>)]) -> ParamStore<f32> {
    let mut s = ParamStore::new();
    for (name, v) in values {
        s.add(*name, Tensor::new(&[v.len()], v.clone()).unwrap());
    }
    s
}

#[test]
fn averaging_hand_cases() {
    let a = store(&[("w", vec![1.0, 2.0])]);
    let b = store(&[("w", vec![3.0, 4.0])]);
    let avg = average_checkpoints(&[a.clone(), b.clone()]).unwrap();
    assert_eq!(avg.iter().next().unwrap().1.data(), &[2.0, 3.0]);
    let swapped = average_checkpoints(&[b, a.clone()]).unwrap();
    assert_eq!(swapped.iter().next().unwrap().1.data(), &[2.0, 3.0]);
    let neg = store(&[("w", vec![-1.0, -2.0])]);
    let zero = average_checkpoints(&[a.clone(), neg]).unwrap();
    assert_eq!(zero.iter().next().unwrap().1.data(), &[0.0, 0.0]);
}

#[test]
fn averaging_duplicates_is_exact() {
    let a = store(&[("w", vec![0.1, -3.7, 1e-30]), ("b", vec![7.25])]);
    for copies in 1..=4 {
        let avg = average_checkpoints(&vec![a.clone(); copies]).unwrap();
        for ((na, ta), (nb, tb)) in a.iter().zip(avg.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta.data(), tb.data());
        }
    }
}

#[test]
fn averaging_rejects_mismatches() {
    let a = store(&[("w", vec![1.0, 2.0])]);
    assert!(matches!(average_checkpoints(&[a.clone(), store(&[("v", vec![1.0, 2.0])])]), Err(Error::Incompatible(_))));
    assert!(matches!(average_checkpoints(&[a.clone(), store(&[("w", vec![1.0])])]), Err(Error::Incompatible(_))));
    assert!(average_checkpoints(&[]).is_err());
}

fn quick_train_config() -> TrainConfig {
    TrainConfig {
        lr: 3e-3,
        warmup: 20,
        batch_size: 4,
        max_epochs: 3,
        patience: 10,
        label_smoothing: 0.1,
        k: 4,
        keep_best: 2,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic_given_the_seed() {
    let task = small_task();
    let train_set = task.generate(Split::Train, 12).unwrap();
    let valid = task.generate(Split::Valid, 4).unwrap();
    let mut cfg_model = small_model(&task, Family::Perceiver);
    cfg_model.dropout = 0.1;
    let cfg = quick_train_config();
    let a = train(cfg_model.clone(), &cfg, &train_set, &valid, None).unwrap();
    let b = train(cfg_model.clone(), &cfg, &train_set, &valid, None).unwrap();
    assert_eq!(a.log, b.log);
    for ((_, x), (_, y)) in a.model.params.iter().zip(b.model.params.iter()) {
        assert_eq!(x.data(), y.data());
    }
    let c = train(cfg_model, &TrainConfig { seed: 2, ..cfg }, &train_set, &valid, None).unwrap();
    assert_ne!(a.log, c.log);
    assert_eq!(a.steps, 9);
    assert_eq!(a.best.len(), 2);
    assert!(a.best[0].valid_token_acc >= a.best[1].valid_token_acc);
}

#[test]
fn metric_log_has_one_line_per_epoch() {
    let task = small_task();
    let train_set = task.generate(Split::Train, 8).unwrap();
    let valid = task.generate(Split::Valid, 4).unwrap();
    let mut buf = Vec::new();
    let out = train(small_model(&task, Family::Transformer), &quick_train_config(), &train_set, &valid, Some(&mut buf)).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], EpochMetrics::HEADER);
    assert_eq!(lines.len(), 1 + out.log.len());
    assert_eq!(out.stop, StopReason::MaxEpochs);
}

#[test]
fn a_single_batch_is_memorized() {
    let task = small_task();
    let batch = task.generate(Split::Train, 8).unwrap();
    let cfg = TrainConfig {
        lr: 5e-3,
        warmup: 30,
        batch_size: 8,
        max_epochs: 500,
        patience: 500,
        label_smoothing: 0.0,
        k: 8,
        ..TrainConfig::default()
    };
    let out = train(small_model(&task, Family::Perceiver), &cfg, &batch, &batch, None).unwrap();
    let last = out.log.last().unwrap();
    assert!(last.train_loss < 0.01, "loss {}", last.train_loss);
    assert_eq!(last.valid_token_acc, 1.0);
}

#[test]
fn step_cap_and_target_stop_training() {
    let task = small_task();
    let train_set = task.generate(Split::Train, 8).unwrap();
    let valid = task.generate(Split::Valid, 4).unwrap();
    let capped = TrainConfig {
        max_steps: Some(3),
        max_epochs: 10,
        ..quick_train_config()
    };
    let out = train(small_model(&task, Family::Perceiver), &capped, &train_set, &valid, None).unwrap();
    assert_eq!((out.steps, out.stop), (3, StopReason::MaxSteps));
    let target = TrainConfig {
        target_accuracy: Some(0.0),
        ..quick_train_config()
    };
    let out = train(small_model(&task, Family::Perceiver), &target, &train_set, &valid, None).unwrap();
    assert_eq!((out.log.len(), out.stop), (1, StopReason::TargetReached));
}

#[test]
fn invalid_sampling_size_is_rejected() {
    let task = small_task();
    let set = task.generate(Split::Train, 2).unwrap();
    let cfg = TrainConfig {
        k: 9,
        ..quick_train_config()
    };
    let err = train(small_model(&task, Family::Perceiver), &cfg, &set, &set, None).err().unwrap();
    assert!(matches!(err, Error::Config { key, .. } if key == "k"));
}

#[test]
fn evaluation_is_deterministic_and_full_ignores_the_seed() {
    let task = small_task();
    let model = crate::model::Model::<f32>::new(small_model(&task, Family::Perceiver), 3).unwrap();
    let set = task.generate(Split::Test, 6).unwrap();
    let a = evaluate(&model, &set, DlaMode::Full, 2, 1).unwrap();
    assert_eq!(a, evaluate(&model, &set, DlaMode::Full, 2, 99).unwrap());
    let r = evaluate(&model, &set, DlaMode::Random(3), 2, 5).unwrap();
    assert_eq!(r, evaluate(&model, &set, DlaMode::Random(3), 2, 5).unwrap());
    let d = evaluate(&model, &set, DlaMode::Diverse(3), 2, 5).unwrap();
    assert!(d.flops_per_example < a.flops_per_example);
    assert_eq!(d.flops_per_example, r.flops_per_example);
    assert!(matches!(evaluate(&model, &set, DlaMode::Diverse(9), 2, 5), Err(Error::KPrime { .. })));
}

#[test]
fn lr_schedule_examples() {
    assert_eq!(lr_schedule(250, 1e-3, 500), 5e-4);
    assert_eq!(lr_schedule(500, 1e-3, 500), 1e-3);
    assert!((lr_schedule(2000, 1e-3, 500) - 5e-4).abs() < 1e-18);
}
