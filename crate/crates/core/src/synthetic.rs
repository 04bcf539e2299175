//! Synthetic corpora with known labelling rules, for functional training
//! runs and tests.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::acoustic::{write_features, AcousticFeatures};
use crate::autodiff::Tensor;
use crate::data::{derive_labels, render, PunctuationLabel, Sample};
use crate::error::{Error, Result};
use crate::lexical::{tokens_from_words, Vocabulary};

/// Channels per synthetic feature frame.
pub const FEAT_DIM: usize = 16;
pub const FRAME_RATE_HZ: f64 = 100.0;

const WORDS: &[&str] = &[
    "we", "you", "they", "went", "see", "home", "today", "really", "the", "market", "is", "open", "it", "rains", "now", "again",
];

/// One punctuated sentence with optional features.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticItem {
    pub text: String,
    pub audio: Option<AcousticFeatures>,
}

/// Gaussian noise frames, `frames×FEAT_DIM`.
pub fn noise_features<R: Rng + ?Sized>(rng: &mut R, frames: usize) -> AcousticFeatures {
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    let data = (0..frames * FEAT_DIM).map(|_| normal.sample(rng)).collect();
    AcousticFeatures::new(Tensor::new(vec![frames, FEAT_DIM], data).expect("shape matches"), FRAME_RATE_HZ).expect("finite")
}

/// A noisy pitch contour: a Gaussian bump over channels whose centre moves
/// steadily up (`rising`) or down across the utterance. Both directions span
/// the same channel range, so only the direction of motion differs.
pub fn intonation<R: Rng + ?Sized>(rng: &mut R, rising: bool, frames: usize) -> AcousticFeatures {
    let noise = Normal::new(0.0, 0.1).expect("valid normal");
    let span = 8.0;
    let low = rng.random_range(2.0..(FEAT_DIM as f64 - 3.0 - span));
    let mut data = Vec::with_capacity(frames * FEAT_DIM);
    for t in 0..frames {
        let frac = t as f64 / (frames - 1) as f64;
        let centre = if rising { low + span * frac } else { low + span * (1.0 - frac) };
        for c in 0..FEAT_DIM {
            let z = c as f64 - centre;
            data.push((-z * z / 2.0).exp() + noise.sample(rng));
        }
    }
    AcousticFeatures::new(Tensor::new(vec![frames, FEAT_DIM], data).expect("shape matches"), FRAME_RATE_HZ).expect("finite")
}

/// Rule-labelled sentences: the word before "but" takes a comma, and the
/// final word takes a question mark when the sentence starts with "what",
/// a full stop otherwise. Even-indexed items carry noise features, odd ones
/// are audio-free.
pub fn overfit_corpus(seed: u64, count: usize) -> Vec<SyntheticItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let len = rng.random_range(4..=9);
            let mut words: Vec<&str> = (0..len).map(|_| *WORDS.choose(&mut rng).expect("non-empty")).collect();
            let question = rng.random_bool(0.5);
            if question {
                words[0] = "what";
            }
            if rng.random_bool(0.5) {
                let at = rng.random_range(2..len - 1);
                words.insert(at, "but");
            }
            let mut labels = vec![PunctuationLabel::None; words.len()];
            for j in 1..words.len() {
                if words[j] == "but" {
                    labels[j - 1] = PunctuationLabel::Comma;
                }
            }
            *labels.last_mut().expect("non-empty") = if question {
                PunctuationLabel::Question
            } else {
                PunctuationLabel::FullStop
            };
            let audio = (i % 2 == 0).then(|| {
                let frames = rng.random_range(90..=160);
                noise_features(&mut rng, frames)
            });
            SyntheticItem {
                text: render(&words, &labels),
                audio,
            }
        })
        .collect()
}

/// Sentences whose text never reveals the final mark: every text appears
/// with both a rising contour (question) and a falling one (full stop).
pub fn discrimination_corpus(seed: u64, count: usize) -> Vec<SyntheticItem> {
    const TEXTS: &[&str] = &["you are going home", "it rains again today", "they see the market"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let rising = i % 2 == 0;
            let base = TEXTS[(i / 2) % TEXTS.len()];
            let mark = if rising { '?' } else { '.' };
            let frames = rng.random_range(100..=180);
            SyntheticItem {
                text: format!("{base}{mark}"),
                audio: Some(intonation(&mut rng, rising, frames)),
            }
        })
        .collect()
}

pub fn build_vocab(items: &[SyntheticItem]) -> Result<Vocabulary> {
    let words = items
        .iter()
        .map(|it| derive_labels(&it.text).map(|(w, _)| w))
        .collect::<Result<Vec<_>>>()?;
    Vocabulary::build(words, 1)
}

/// In-memory samples; feature paths are synthetic placeholders.
pub fn to_samples(items: &[SyntheticItem], vocab: &Vocabulary) -> Result<Vec<Sample>> {
    items
        .iter()
        .enumerate()
        .map(|(i, it)| {
            let (words, labels) = derive_labels(&it.text)?;
            let audio = it.audio.clone().map(|a| (feature_name(i), Arc::new(a)));
            Sample::new(tokens_from_words(words, vocab), labels, audio)
        })
        .collect()
}

/// The same samples with their audio removed.
pub fn strip_audio(samples: &[Sample]) -> Vec<Sample> {
    samples
        .iter()
        .map(|s| Sample {
            feature_path: None,
            audio: None,
            ..s.clone()
        })
        .collect()
}

fn feature_name(i: usize) -> PathBuf {
    PathBuf::from("features").join(format!("{i:04}.upft"))
}

/// Writes `corpus.jsonl` plus one feature file per audio item under `dir`,
/// which then serves as the feature root. Returns the corpus path.
pub fn write_corpus(dir: impl AsRef<Path>, items: &[SyntheticItem]) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let feats = dir.join("features");
    fs::create_dir_all(&feats).map_err(|e| Error::io(&feats, e))?;
    let mut lines = String::new();
    for (i, it) in items.iter().enumerate() {
        let mut obj = serde_json::Map::new();
        obj.insert("text".into(), it.text.clone().into());
        if let Some(a) = &it.audio {
            let rel = feature_name(i);
            write_features(dir.join(&rel), a)?;
            obj.insert("audio".into(), rel.to_string_lossy().into_owned().into());
        }
        lines.push_str(&serde_json::Value::Object(obj).to_string());
        lines.push('\n');
    }
    let path = dir.join("corpus.jsonl");
    fs::write(&path, lines).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
