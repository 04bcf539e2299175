mod common;

use common::*;
use unipunc_core::acoustic::VIRTUAL;
use unipunc_core::data::make_batches;
use unipunc_core::synthetic::{build_vocab, overfit_corpus, to_samples};
use unipunc_core::train::{load_checkpoint, save_checkpoint, Checkpoint, TrainConfig, Trainer};
use unipunc_core::{Error, ModelConfig, Sample};

fn corpus(count: usize) -> (usize, Vec<Sample>) {
    let items = overfit_corpus(7, count);
    let vocab = build_vocab(&items).unwrap();
    (vocab.len(), to_samples(&items, &vocab).unwrap())
}

#[test]
fn smoke_ten_steps_on_a_mixed_corpus() {
    let (v, samples) = corpus(4);
    assert!(samples.iter().any(|s| s.has_audio()) && samples.iter().any(|s| !s.has_audio()));
    let mut t = Trainer::new(TrainConfig {
        batch_size: 2,
        ..small_train_config(v)
    })
    .unwrap();
    let stats = t.train_steps(&samples, 10).unwrap();
    assert_eq!(stats.len(), 10);
    assert!(stats.iter().all(|s| s.loss.is_finite() && s.lr > 0.0));
    assert_eq!(t.step, 10);
    assert_eq!(t.optimizer.t, 10);
}

#[test]
fn loss_on_a_fixed_batch_strictly_decreases() {
    let (v, samples) = corpus(4);
    let batch = make_batches(&samples, 4, None).unwrap().remove(0);
    let cfg = TrainConfig {
        dropout: 0.0,
        ..small_train_config(v)
    };
    let cfg = TrainConfig {
        base_lr: TrainConfig::default().base_lr,
        warmup_steps: TrainConfig::default().warmup_steps,
        ..cfg
    };
    let mut t = Trainer::new(cfg).unwrap();
    let losses: Vec<f64> = (0..21).map(|_| t.step_on(&batch).unwrap().loss).collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "loss went from {} to {}", w[0], w[1]);
    }
}

#[test]
fn virtual_embedding_moves_only_with_audio_free_samples() {
    let (v, samples) = corpus(8);
    let audio: Vec<Sample> = samples.iter().filter(|s| s.has_audio()).cloned().collect();
    let mut t = Trainer::new(small_train_config(v)).unwrap();
    let before = t.params.value(VIRTUAL).unwrap().clone();
    t.train_steps(&audio, 5).unwrap();
    assert_eq!(t.params.value(VIRTUAL).unwrap(), &before);
    t.train_steps(&samples, 2).unwrap();
    assert_ne!(t.params.value(VIRTUAL).unwrap(), &before);
}

#[test]
fn identical_seeds_give_identical_traces() {
    let (v, samples) = corpus(8);
    let run = || Trainer::new(small_train_config(v)).unwrap().train_steps(&samples, 10).unwrap();
    let (a, b) = (run(), run());
    for (x, y) in a.iter().zip(&b) {
        assert!((x.loss - y.loss).abs() <= 1e-12);
    }
    let other = Trainer::new(TrainConfig {
        seed: 12,
        ..small_train_config(v)
    })
    .unwrap()
    .train_steps(&samples, 10)
    .unwrap();
    assert_ne!(a, other);
}

#[test]
fn resume_matches_uninterrupted_training() {
    let dir = tempfile::tempdir().unwrap();
    let (v, samples) = corpus(8);
    let mut straight = Trainer::new(small_train_config(v)).unwrap();
    straight.train_steps(&samples, 20).unwrap();

    let mut first = Trainer::new(small_train_config(v)).unwrap();
    first.train_steps(&samples, 10).unwrap();
    let path = dir.path().join("mid.upck");
    save_checkpoint(&path, &first.checkpoint()).unwrap();
    drop(first);
    let mut resumed = Trainer::from_checkpoint(load_checkpoint(&path).unwrap()).unwrap();
    assert_eq!(resumed.step, 10);
    resumed.train_steps(&samples, 10).unwrap();
    for ((n, a), (_, b)) in straight.params.iter().zip(resumed.params.iter()) {
        assert_eq!(a.value, b.value, "{n} differs after resume");
    }
}

#[test]
fn checkpoint_with_wrong_width_names_the_parameter() {
    let (v, _) = corpus(4);
    let t = Trainer::new(small_train_config(v)).unwrap();
    let mut ckpt: Checkpoint = t.checkpoint();
    ckpt.config.model = ModelConfig {
        d_model: 32,
        ..ckpt.config.model
    };
    match Trainer::from_checkpoint(ckpt) {
        Err(Error::ShapeMismatch { name, .. }) => assert!(!name.is_empty()),
        other => panic!("expected a shape mismatch, got {other:?}"),
    }
}

#[test]
fn run_writes_log_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let (v, samples) = corpus(8);
    let mut t = Trainer::new(TrainConfig {
        max_steps: 12,
        eval_interval: 5,
        ..small_train_config(v)
    })
    .unwrap();
    let out = t.run(&samples, Some(&samples), Some(dir.path())).unwrap();
    assert_eq!(out.steps.len(), 12);
    let steps: Vec<u64> = out.records.iter().map(|r| r.step).collect();
    assert_eq!(steps, [5, 10, 12]);
    let log = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 3);
    for line in log.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["overall_f1"].is_number() && v["classes"].as_array().unwrap().len() == 3);
    }
    assert!(dir.path().join("best.upck").exists());
    let last = load_checkpoint(dir.path().join("last.upck")).unwrap();
    assert_eq!(last.step, 12);
}

#[test]
fn non_finite_loss_reports_step_and_lr() {
    let (v, samples) = corpus(4);
    let mut t = Trainer::new(small_train_config(v)).unwrap();
    t.train_steps(&samples, 2).unwrap();
    for x in t.params.value_mut("cls.weight").unwrap().data_mut() {
        *x = f64::MAX;
    }
    match t.train_steps(&samples, 1) {
        Err(Error::NonFiniteLoss { step, lr }) => {
            assert_eq!(step, 3);
            assert!(lr > 0.0);
        }
        other => panic!("expected a non-finite loss, got {other:?}"),
    }
}
