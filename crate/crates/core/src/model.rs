//! The full model: lexical encoder → acoustic assistant → stacked
//! bootstrapper layers → classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::acoustic::{self, acoustic_or_virtual, AcousticInput};
use crate::autodiff::{Tensor, Var};
use crate::bootstrapper::{self, bootstrapper_layer, classify, NUM_CLASSES};
use crate::data::{Batch, PunctuationLabel};
use crate::error::{Error, Result};
use crate::lexical;
use crate::params::ParamStore;

pub use crate::nn::{Mode, Session};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub boot_layers: usize,
    pub ffn_dim: usize,
    /// Channels per acoustic feature frame.
    pub feat_dim: usize,
    pub conv_channels: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    /// Rows in the virtual embedding.
    pub ve_len: usize,
    pub position_encoding: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 2,
            d_model: 64,
            heads: 4,
            enc_layers: 2,
            boot_layers: 2,
            ffn_dim: 256,
            feat_dim: 80,
            conv_channels: 64,
            conv_kernel: 15,
            conv_stride: 5,
            ve_len: 5,
            position_encoding: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidArgument(msg));
        if self.vocab_size < 2 {
            return fail("vocabulary must hold at least <pad> and <unk>".into());
        }
        if self.d_model == 0 || self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return fail(format!("{} heads must divide d_model {}", self.heads, self.d_model));
        }
        if self.ffn_dim == 0 || self.feat_dim == 0 || self.conv_channels == 0 || self.ve_len == 0 {
            return fail("ffn_dim, feat_dim, conv_channels and ve_len must be positive".into());
        }
        if self.conv_kernel == 0 || self.conv_stride == 0 {
            return fail("conv kernel and stride must be positive".into());
        }
        Ok(())
    }

    /// Fewest feature frames an audio sample may have.
    pub fn min_audio_frames(&self) -> usize {
        acoustic::min_frames(self.conv_kernel, self.conv_stride)
    }
}

/// Output of a batched forward pass.
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// `B×n×4` logits.
    pub logits: Var,
    /// Per-sample `n×4` logits.
    pub per_sample: Vec<Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UniPunc {
    pub config: ModelConfig,
}

impl UniPunc {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    /// Freshly initialized parameters, deterministic in `seed`.
    pub fn init_params(&self, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cfg = &self.config;
        lexical::init_params(&mut store, &mut rng, cfg);
        acoustic::init_params(&mut store, &mut rng, cfg);
        for l in 0..cfg.boot_layers {
            bootstrapper::init_layer(&mut store, &mut rng, l, cfg.d_model);
        }
        bootstrapper::init_classifier(&mut store, &mut rng, cfg.d_model);
        store
    }

    /// `n×4` logits for one padded sequence.
    pub fn forward_sample(&self, sess: &mut Session, ids: &[usize], mask: &[bool], acoustic: AcousticInput) -> Result<Var> {
        let cfg = &self.config;
        let lex = lexical::encode(sess, cfg, ids, mask)?;
        let ac = acoustic_or_virtual(sess, cfg, acoustic)?;
        let mut h = lex.hidden;
        for l in 0..cfg.boot_layers {
            h = bootstrapper_layer(sess, l, h, ac, mask, cfg.heads)?.hybrid;
        }
        classify(sess, h)
    }

    pub fn forward(&self, sess: &mut Session, batch: &Batch) -> Result<ForwardOutput> {
        let per_sample = (0..batch.size())
            .map(|i| {
                let input = match &batch.audio[i] {
                    Some(f) => AcousticInput::Audio(f),
                    None => AcousticInput::Missing,
                };
                self.forward_sample(sess, &batch.ids[i], &batch.mask[i], input)
            })
            .collect::<Result<Vec<_>>>()?;
        let flat = sess.graph.concat_rows(&per_sample)?;
        let logits = sess.graph.reshape(flat, vec![batch.size(), batch.seq_len(), NUM_CLASSES])?;
        Ok(ForwardOutput { logits, per_sample })
    }

    /// Mean cross-entropy over unpadded positions of the batch.
    pub fn loss(&self, sess: &mut Session, batch: &Batch) -> Result<Var> {
        let out = self.forward(sess, batch)?;
        let flat = sess.graph.reshape(out.logits, vec![batch.size() * batch.seq_len(), NUM_CLASSES])?;
        let targets: Vec<usize> = batch.labels.iter().flatten().map(|l| l.index()).collect();
        let mask: Vec<bool> = batch.mask.iter().flatten().copied().collect();
        sess.graph.cross_entropy(flat, &targets, &mask)
    }

    /// Predicted labels for the unpadded positions of each sample.
    pub fn predict(&self, store: &ParamStore, batch: &Batch) -> Result<Vec<Vec<PunctuationLabel>>> {
        let mut sess = Session::eval(store);
        let out = self.forward(&mut sess, batch)?;
        Ok(out
            .per_sample
            .iter()
            .zip(&batch.lengths)
            .map(|(v, &len)| {
                let mut labels = bootstrapper::predict(sess.value(*v));
                labels.truncate(len);
                labels
            })
            .collect())
    }

    /// Logits for one unpadded sequence in evaluation mode.
    pub fn logits(&self, store: &ParamStore, ids: &[usize], acoustic: AcousticInput) -> Result<Tensor> {
        let mut sess = Session::eval(store);
        let v = self.forward_sample(&mut sess, ids, &vec![true; ids.len()], acoustic)?;
        Ok(sess.value(v).clone())
    }
}
