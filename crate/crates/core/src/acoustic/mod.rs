//! Audio side: feature I/O, a log-mel fallback extractor, the strided
//! convolution down-sampler, and the virtual embedding used when a sample
//! has no audio.

mod features;
mod logmel;

use rand::Rng;

pub use features::{load_features, write_features, AcousticFeatures, MAGIC, VERSION};
pub use logmel::{frame_count, hz_to_mel, logmel, mel_filterbank, mel_to_hz, LOG_FLOOR};

use crate::autodiff::{conv_out_len, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::{init_linear, Session};
use crate::params::{glorot_tensor, normal_tensor, ParamStore};

pub const VIRTUAL: &str = "ac.virtual";
const CONV_LAYERS: usize = 2;

pub fn init_params<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, cfg: &ModelConfig) {
    let (k, c) = (cfg.conv_kernel, cfg.conv_channels);
    let mut c_in = cfg.feat_dim;
    for layer in 1..=CONV_LAYERS {
        store.insert(format!("ac.conv{layer}.weight"), glorot_tensor(rng, &[k, c_in, c], k * c_in, k * c));
        store.insert(format!("ac.conv{layer}.bias"), Tensor::zeros(&[c]));
        c_in = c;
    }
    init_linear(store, rng, "ac.proj", c, cfg.d_model);
    store.insert(VIRTUAL, normal_tensor(rng, &[cfg.ve_len, cfg.d_model], 0.02));
}

/// Rows left after the down-sampling stack, or `None` if `frames` is too short.
pub fn downsampled_len(frames: usize, kernel: usize, stride: usize) -> Option<usize> {
    (0..CONV_LAYERS).try_fold(frames, |len, _| conv_out_len(len, kernel, stride))
}

/// Smallest frame count the down-sampling stack accepts.
pub fn min_frames(kernel: usize, stride: usize) -> usize {
    (0..CONV_LAYERS - 1).fold(kernel, |len, _| (len - 1) * stride + kernel)
}

/// conv → ReLU → conv → ReLU → linear projection to the model dimension.
pub fn downsample(sess: &mut Session, cfg: &ModelConfig, features: &AcousticFeatures) -> Result<Var> {
    let m = features.num_frames();
    if downsampled_len(m, cfg.conv_kernel, cfg.conv_stride).is_none() {
        return Err(Error::AudioTooShort {
            len: m,
            min: min_frames(cfg.conv_kernel, cfg.conv_stride),
        });
    }
    if features.dim() != cfg.feat_dim {
        return Err(Error::Dimension {
            op: "downsample",
            lhs: features.frames.shape().to_vec(),
            rhs: vec![m, cfg.feat_dim],
        });
    }
    let mut x = sess.constant(features.frames.clone())?;
    for layer in 1..=CONV_LAYERS {
        let w = sess.param(&format!("ac.conv{layer}.weight"))?;
        let b = sess.param(&format!("ac.conv{layer}.bias"))?;
        x = sess.graph.conv1d(x, w, b, cfg.conv_stride)?;
        x = sess.graph.relu(x)?;
    }
    let h = sess.linear("ac.proj", x)?;
    sess.dropout(h)
}

/// Where a sample's acoustic-side rows come from.
#[derive(Clone, Copy, Debug)]
pub enum AcousticInput<'a> {
    /// Real audio features, run through the down-sampler.
    Audio(&'a AcousticFeatures),
    /// No audio; the virtual embedding stands in.
    Missing,
    /// Already-embedded acoustic rows (`m×d`), bypassing the down-sampler.
    Embedded(&'a Tensor),
}

impl<'a> AcousticInput<'a> {
    /// Checks that the audio flag and the presence of features agree.
    pub fn from_parts(has_audio: bool, features: Option<&'a AcousticFeatures>) -> Result<Self> {
        match (has_audio, features) {
            (true, Some(f)) => Ok(Self::Audio(f)),
            (false, None) => Ok(Self::Missing),
            (has_audio, f) => Err(Error::AudioConsistency {
                has_audio,
                features: f.is_some(),
            }),
        }
    }
}

/// `H_a` for audio samples, the virtual embedding table otherwise.
pub fn acoustic_or_virtual(sess: &mut Session, cfg: &ModelConfig, input: AcousticInput) -> Result<Var> {
    match input {
        AcousticInput::Audio(f) => downsample(sess, cfg, f),
        AcousticInput::Missing => sess.param(VIRTUAL),
        AcousticInput::Embedded(t) => {
            if t.expect_2d("acoustic embedding")?.1 != cfg.d_model {
                return Err(Error::Dimension {
                    op: "acoustic embedding",
                    lhs: t.shape().to_vec(),
                    rhs: vec![t.rows(), cfg.d_model],
                });
            }
            sess.constant(t.clone())
        }
    }
}
