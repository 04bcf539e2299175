//! Multimodal punctuation restoration for mixed audio / audio-free text.
//!
//! A lexical encoder embeds the unpunctuated words, an acoustic assistant
//! turns optional audio features into acoustic embeddings (or substitutes a
//! learned virtual embedding when audio is missing), and a stack of
//! coordinate bootstrapper layers fuses both into a hybrid representation
//! that a linear classifier maps to one of four punctuation labels per word.

pub mod acoustic;
pub mod autodiff;
pub mod bootstrapper;
pub mod data;
pub mod error;
pub mod eval;
pub mod lexical;
pub mod model;
pub mod nn;
pub mod params;
pub mod synthetic;
pub mod train;

pub use autodiff::{Graph, Tensor, Var};
pub use data::{Batch, PunctuationLabel, Sample};
pub use error::{Error, Result};
pub use eval::{ConfusionMatrix, EvalReport};
pub use model::{Mode, ModelConfig, UniPunc};
pub use params::ParamStore;
