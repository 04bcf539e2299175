//! Corpus ingestion: punctuation labels derived from punctuated text,
//! optional acoustic feature files, and padded mixed-modality batches.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acoustic::{load_features, AcousticFeatures};
use crate::error::{Error, Result};
use crate::lexical::{TokenSequence, Vocabulary, PAD};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PunctuationLabel {
    None = 0,
    Comma = 1,
    FullStop = 2,
    Question = 3,
}

impl PunctuationLabel {
    pub const ALL: [Self; 4] = [Self::None, Self::Comma, Self::FullStop, Self::Question];
    /// The three marks that are scored.
    pub const MARKS: [Self; 3] = [Self::Comma, Self::FullStop, Self::Question];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Label for a trailing mark character, if it is one we recognize.
    pub fn from_mark(c: char) -> Option<Self> {
        match c {
            ',' | ':' => Some(Self::Comma),
            '.' | '!' | ';' => Some(Self::FullStop),
            '?' => Some(Self::Question),
            _ => None,
        }
    }

    /// Text appended after a word carrying this label.
    pub fn mark(self) -> &'static str {
        match self {
            Self::None => "",
            Self::Comma => ",",
            Self::FullStop => ".",
            Self::Question => "?",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "NONE",
            Self::Comma => "COMMA",
            Self::FullStop => "FULLSTOP",
            Self::Question => "QUESTION",
        }
    }
}

impl fmt::Display for PunctuationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Splits punctuated text into lowercased words and one label per word.
///
/// One trailing mark is stripped from each word. A token that is nothing but
/// a mark attaches its label to the preceding word, overwriting any label it
/// already had.
pub fn derive_labels(text: &str) -> Result<(Vec<String>, Vec<PunctuationLabel>)> {
    let mut words: Vec<String> = Vec::new();
    let mut labels: Vec<PunctuationLabel> = Vec::new();
    for raw in text.split_whitespace() {
        let (residue, label) = match raw.chars().last().and_then(PunctuationLabel::from_mark) {
            Some(label) => (&raw[..raw.len() - 1], label),
            None => (raw, PunctuationLabel::None),
        };
        if residue.is_empty() {
            if let Some(last) = labels.last_mut() {
                *last = label;
            }
            continue;
        }
        words.push(residue.to_lowercase());
        labels.push(label);
    }
    if !words.iter().any(|w| w.chars().any(char::is_alphanumeric)) {
        return Err(Error::NoWords);
    }
    Ok((words, labels))
}

/// Attaches each label's mark directly to its word, space-separated.
pub fn render<S: AsRef<str>>(words: &[S], labels: &[PunctuationLabel]) -> String {
    words
        .iter()
        .zip(labels)
        .map(|(w, l)| format!("{}{}", w.as_ref(), l.mark()))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub tokens: TokenSequence,
    pub labels: Vec<PunctuationLabel>,
    pub feature_path: Option<PathBuf>,
    pub audio: Option<Arc<AcousticFeatures>>,
}

impl Sample {
    pub fn new(tokens: TokenSequence, labels: Vec<PunctuationLabel>, audio: Option<(PathBuf, Arc<AcousticFeatures>)>) -> Result<Self> {
        if tokens.len() != labels.len() || tokens.is_empty() {
            return Err(Error::SequenceMismatch {
                index: 0,
                reason: format!("{} tokens vs {} labels", tokens.len(), labels.len()),
            });
        }
        let (feature_path, audio) = audio.map_or((None, None), |(p, a)| (Some(p), Some(a)));
        Ok(Self {
            tokens,
            labels,
            feature_path,
            audio,
        })
    }

    pub fn has_audio(&self) -> bool {
        self.audio.is_some()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusLine {
    text: String,
    audio: Option<String>,
}

/// One parsed corpus line before vocabulary lookup.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecord {
    pub line: usize,
    pub words: Vec<String>,
    pub labels: Vec<PunctuationLabel>,
    pub audio: Option<String>,
}

/// Parses a JSON-lines corpus. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<RawRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let corpus_err = |reason: String| Error::Corpus {
            path: path.to_path_buf(),
            line: i + 1,
            reason,
        };
        let parsed: CorpusLine = serde_json::from_str(line).map_err(|e| corpus_err(e.to_string()))?;
        let (words, labels) = derive_labels(&parsed.text).map_err(|e| corpus_err(e.to_string()))?;
        out.push(RawRecord {
            line: i + 1,
            words,
            labels,
            audio: parsed.audio,
        });
    }
    Ok(out)
}

/// Loads a corpus, resolving feature paths against `feature_root` and
/// reading every referenced feature file up front.
pub fn load_corpus(path: impl AsRef<Path>, vocab: &Vocabulary, feature_root: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let records = read_corpus(path)?;
    samples_from_records(path, records, vocab, feature_root.as_ref())
}

pub fn samples_from_records(path: &Path, records: Vec<RawRecord>, vocab: &Vocabulary, feature_root: &Path) -> Result<Vec<Sample>> {
    records
        .into_iter()
        .map(|r| {
            let audio = match &r.audio {
                Some(rel) => {
                    let full = feature_root.join(rel);
                    let features = load_features(&full).map_err(|e| Error::Corpus {
                        path: path.to_path_buf(),
                        line: r.line,
                        reason: format!("feature file: {e}"),
                    })?;
                    Some((full, Arc::new(features)))
                }
                None => None,
            };
            let tokens = crate::lexical::tokens_from_words(r.words, vocab);
            Sample::new(tokens, r.labels, audio)
        })
        .collect()
}

/// A padded stack of samples. Rows are padded to the longest sample with
/// `PAD` ids, `NONE` labels and a false mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub ids: Vec<Vec<usize>>,
    pub labels: Vec<Vec<PunctuationLabel>>,
    pub mask: Vec<Vec<bool>>,
    pub audio: Vec<Option<Arc<AcousticFeatures>>>,
    pub lengths: Vec<usize>,
}

impl Batch {
    pub fn from_samples(samples: &[&Sample]) -> Result<Self> {
        let n = samples.iter().map(|s| s.len()).max().ok_or(Error::Empty("batch"))?;
        let mut batch = Batch {
            ids: Vec::with_capacity(samples.len()),
            labels: Vec::with_capacity(samples.len()),
            mask: Vec::with_capacity(samples.len()),
            audio: Vec::with_capacity(samples.len()),
            lengths: Vec::with_capacity(samples.len()),
        };
        for s in samples {
            let pad = n - s.len();
            batch
                .ids
                .push(s.tokens.ids.iter().copied().chain(std::iter::repeat_n(PAD, pad)).collect());
            batch.labels.push(
                s.labels
                    .iter()
                    .copied()
                    .chain(std::iter::repeat_n(PunctuationLabel::None, pad))
                    .collect(),
            );
            batch.mask.push((0..n).map(|i| i < s.len()).collect());
            batch.audio.push(s.audio.clone());
            batch.lengths.push(s.len());
        }
        Ok(batch)
    }

    pub fn size(&self) -> usize {
        self.ids.len()
    }

    /// Padded sequence length.
    pub fn seq_len(&self) -> usize {
        self.ids.first().map_or(0, Vec::len)
    }

    pub fn has_audio(&self, i: usize) -> bool {
        self.audio[i].is_some()
    }
}

/// Groups samples into batches of `batch_size` (the last may be smaller),
/// after an optional seeded shuffle.
pub fn make_batches(samples: &[Sample], batch_size: usize, shuffle_seed: Option<u64>) -> Result<Vec<Batch>> {
    if samples.is_empty() {
        return Err(Error::Empty("sample list"));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    let mut order: Vec<&Sample> = samples.iter().collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order.chunks(batch_size).map(Batch::from_samples).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sentences: usize,
    pub audio: usize,
    pub avg_sentence_words: f64,
    /// `None` when no sample has audio.
    pub avg_audio_secs: Option<f64>,
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>10} {:>10} {:>12}", "", "# sent.", "# audio", "sent. len.")?;
        let audio_len = self.avg_audio_secs.map_or_else(|| "n/a".to_string(), |s| format!("{s:.1}"));
        writeln!(
            f,
            "{:<12} {:>10} {:>10} {:>12.1}",
            "corpus", self.sentences, self.audio, self.avg_sentence_words
        )?;
        write!(f, "avg audio length (s): {audio_len}")
    }
}

pub fn corpus_stats(samples: &[Sample]) -> CorpusStats {
    let sentences = samples.len();
    let words: usize = samples.iter().map(Sample::len).sum();
    let durations: Vec<f64> = samples.iter().filter_map(|s| s.audio.as_ref().map(|a| a.duration_secs())).collect();
    CorpusStats {
        sentences,
        audio: durations.len(),
        avg_sentence_words: if sentences == 0 { 0.0 } else { words as f64 / sentences as f64 },
        avg_audio_secs: (!durations.is_empty()).then(|| durations.iter().sum::<f64>() / durations.len() as f64),
    }
}
