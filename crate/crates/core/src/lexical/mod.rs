//! Text side: vocabulary, tokenization and the contextual encoder.

mod encoder;
mod vocab;

pub use encoder::{encode, init_params, sinusoidal_positions, LexicalOutput};
pub use vocab::{tokenize, tokens_from_words, TokenSequence, Vocabulary, PAD, PAD_TOKEN, UNK, UNK_TOKEN};
