//! Cross-modal fusion.
//!
//! Each layer computes lexical self-attention `S_l`, lexical-to-acoustic
//! cross-attention `S_a` (queries from the lexical rows, keys and values from
//! the acoustic rows), and returns `layer_norm(S_l + S_a + H)`. The output
//! always has one row per token, whether the acoustic side came from real
//! audio or from the virtual embedding.

use rand::Rng;

use crate::autodiff::{Tensor, Var};
use crate::data::PunctuationLabel;
use crate::error::{Error, Result};
use crate::nn::{init_layer_norm, init_linear, Session};
use crate::params::ParamStore;

pub const NUM_CLASSES: usize = 4;

/// Attention output together with the per-head weight matrices (`nq×nk`).
#[derive(Clone, Debug)]
pub struct Attended {
    pub output: Var,
    pub weights: Vec<Var>,
}

pub(crate) fn init_attention<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, prefix: &str, d: usize) {
    for proj in ["q", "k", "v", "o"] {
        init_linear(store, rng, &format!("{prefix}.{proj}"), d, d);
    }
}

/// Multi-head scaled dot-product attention with learned projections
/// `{prefix}.{q,k,v,o}`. Keys with `key_mask[j] == false` get zero weight.
pub fn attention(sess: &mut Session, prefix: &str, query_in: Var, kv_in: Var, key_mask: Option<&[bool]>, heads: usize) -> Result<Attended> {
    let d = sess.value(query_in).cols();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(Error::InvalidArgument(format!("{heads} heads do not divide model dimension {d}")));
    }
    let q = sess.linear(&format!("{prefix}.q"), query_in)?;
    let k = sess.linear(&format!("{prefix}.k"), kv_in)?;
    let v = sess.linear(&format!("{prefix}.v"), kv_in)?;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let g = &mut sess.graph;
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                g.slice_cols(q, h * dh, dh)?,
                g.slice_cols(k, h * dh, dh)?,
                g.slice_cols(v, h * dh, dh)?,
            )
        };
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale)?;
        let w = g.masked_softmax_rows(scores, key_mask)?;
        outs.push(g.matmul(w, vh)?);
        weights.push(w);
    }
    let joined = if heads == 1 { outs[0] } else { sess.graph.concat_cols(&outs)? };
    let output = sess.linear(&format!("{prefix}.o"), joined)?;
    Ok(Attended { output, weights })
}

pub(crate) fn init_layer<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, layer: usize, d: usize) {
    let p = layer_prefix(layer);
    init_attention(store, rng, &format!("{p}.self"), d);
    init_attention(store, rng, &format!("{p}.cross"), d);
    init_layer_norm(store, &format!("{p}.ln"), d);
}

pub fn layer_prefix(layer: usize) -> String {
    format!("boot{layer}")
}

/// Intermediate values of one fusion layer, exposed for inspection.
#[derive(Clone, Debug)]
pub struct LayerOutput {
    pub hybrid: Var,
    pub self_attn: Attended,
    pub cross_attn: Attended,
}

/// One fusion layer: `layer_norm(S_l + S_a + H)`.
pub fn bootstrapper_layer(
    sess: &mut Session,
    layer: usize,
    lexical: Var,
    acoustic: Var,
    lex_mask: &[bool],
    heads: usize,
) -> Result<LayerOutput> {
    let n = sess.value(lexical).rows();
    if lex_mask.len() != n {
        return Err(Error::Dimension {
            op: "bootstrapper_layer",
            lhs: sess.value(lexical).shape().to_vec(),
            rhs: vec![lex_mask.len()],
        });
    }
    let (m, da) = sess.value(acoustic).expect_2d("bootstrapper_layer")?;
    if m == 0 || da != sess.value(lexical).cols() {
        return Err(Error::Dimension {
            op: "bootstrapper_layer",
            lhs: sess.value(lexical).shape().to_vec(),
            rhs: vec![m, da],
        });
    }
    let p = layer_prefix(layer);
    let self_attn = attention(sess, &format!("{p}.self"), lexical, lexical, Some(lex_mask), heads)?;
    let cross_attn = attention(sess, &format!("{p}.cross"), lexical, acoustic, None, heads)?;
    let s_l = sess.dropout(self_attn.output)?;
    let s_a = sess.dropout(cross_attn.output)?;
    let sum = sess.graph.add(s_l, s_a)?;
    let sum = sess.graph.add(sum, lexical)?;
    let hybrid = sess.layer_norm(&format!("{p}.ln"), sum)?;
    Ok(LayerOutput {
        hybrid,
        self_attn,
        cross_attn,
    })
}

pub(crate) fn init_classifier<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, d: usize) {
    init_linear(store, rng, "cls", d, NUM_CLASSES);
}

/// Per-token logits over the four punctuation classes.
pub fn classify(sess: &mut Session, hybrid: Var) -> Result<Var> {
    sess.linear("cls", hybrid)
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn predict(logits: &Tensor) -> Vec<PunctuationLabel> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let best = row.iter().enumerate().fold(0, |best, (j, &v)| if v > row[best] { j } else { best });
            PunctuationLabel::from_index(best).expect("classifier emits four classes")
        })
        .collect()
}
