//! Fixtures shared by the benchmarks in `benches/`.

use unipunc_core::synthetic::{build_vocab, overfit_corpus, to_samples, FEAT_DIM};
use unipunc_core::train::{TrainConfig, Trainer};
use unipunc_core::{Batch, ModelConfig, Sample, Tensor};

/// Deterministic `rows×cols` matrix with values in [-1, 1).
pub fn matrix(rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols).map(|i| ((i * 7919) % 2000) as f64 / 1000.0 - 1.0).collect();
    Tensor::new(vec![rows, cols], data).expect("shape matches")
}

/// The 32-sample mixed corpus and a d=64 trainer for it.
pub fn desk_setup() -> (Vec<Sample>, Trainer) {
    let items = overfit_corpus(1, 32);
    let vocab = build_vocab(&items).expect("non-empty corpus");
    let samples = to_samples(&items, &vocab).expect("valid corpus");
    let trainer = Trainer::new(TrainConfig {
        base_lr: 1e-3,
        warmup_steps: 100,
        max_steps: u64::MAX,
        model: ModelConfig {
            vocab_size: vocab.len(),
            feat_dim: FEAT_DIM,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    })
    .expect("valid config");
    (samples, trainer)
}

/// First batch of eight, mixing audio and audio-free samples.
pub fn mixed_batch(samples: &[Sample]) -> Batch {
    Batch::from_samples(&samples[..8].iter().collect::<Vec<_>>()).expect("equal-length labels")
}
