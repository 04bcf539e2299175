use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Word-level vocabulary with dense ids; `<pad>` is 0 and `<unk>` is 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps every word seen at least `min_count` times. Ids are assigned by
    /// descending frequency, ties broken lexicographically.
    pub fn build<I, S>(corpus: I, min_count: usize) -> Result<Self>
    where
        I: IntoIterator,
        I::Item: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut sentences = 0;
        for sentence in corpus {
            sentences += 1;
            for w in sentence {
                *counts.entry(w.as_ref().to_string()).or_default() += 1;
            }
        }
        if sentences == 0 {
            return Err(Error::Empty("vocabulary corpus"));
        }
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= min_count && w != PAD_TOKEN && w != UNK_TOKEN)
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(Self::from_tokens(
            [PAD_TOKEN.to_string(), UNK_TOKEN.to_string()]
                .into_iter()
                .chain(words.into_iter().map(|(w, _)| w))
                .collect(),
        ))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `word`, or [`UNK`] when absent.
    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                reason: format!("vocabulary must start with {PAD_TOKEN} and {UNK_TOKEN}"),
            });
        }
        let vocab = Self::from_tokens(tokens);
        if vocab.index.len() != vocab.tokens.len() {
            return Err(Error::Malformed {
                path: path.to_path_buf(),
                reason: "duplicate token".into(),
            });
        }
        Ok(vocab)
    }
}

/// Token ids with their surface words, one id per word.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub words: Vec<String>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Whitespace tokenization of already lowercased, punctuation-free text.
pub fn tokenize(text: &str, vocab: &Vocabulary) -> Result<TokenSequence> {
    let words: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    if words.is_empty() {
        return Err(Error::Empty("text to tokenize"));
    }
    Ok(tokens_from_words(words, vocab))
}

pub fn tokens_from_words(words: Vec<String>, vocab: &Vocabulary) -> TokenSequence {
    TokenSequence {
        ids: words.iter().map(|w| vocab.id(w)).collect(),
        words,
    }
}
