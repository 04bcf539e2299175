use rand::Rng;

use crate::autodiff::{Tensor, Var};
use crate::bootstrapper::{attention, init_attention};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::{init_layer_norm, init_linear, Session};
use crate::params::{normal_tensor, ParamStore};

pub const EMBED: &str = "lex.embed";

fn block_prefix(layer: usize) -> String {
    format!("lex.enc{layer}")
}

pub fn init_params<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, cfg: &ModelConfig) {
    let d = cfg.d_model;
    store.insert(EMBED, normal_tensor(rng, &[cfg.vocab_size, d], 0.02));
    for l in 0..cfg.enc_layers {
        let p = block_prefix(l);
        init_attention(store, rng, &format!("{p}.attn"), d);
        init_layer_norm(store, &format!("{p}.ln1"), d);
        init_linear(store, rng, &format!("{p}.ffn1"), d, cfg.ffn_dim);
        init_linear(store, rng, &format!("{p}.ffn2"), cfg.ffn_dim, d);
        init_layer_norm(store, &format!("{p}.ln2"), d);
    }
}

/// Fixed sinusoidal position table, `n×d`.
pub fn sinusoidal_positions(n: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(&[n, d]);
    let data = t.data_mut();
    for pos in 0..n {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f64 / d as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    t
}

/// Contextual embeddings `H_l` for one (possibly padded) sequence.
#[derive(Clone, Debug)]
pub struct LexicalOutput {
    pub hidden: Var,
    /// Self-attention weights, indexed `[layer][head]`.
    pub attention: Vec<Vec<Var>>,
}

/// Embeds `ids` and runs the self-attention encoder stack. `mask[i]` is
/// false at padding; padded keys receive no attention weight.
pub fn encode(sess: &mut Session, cfg: &ModelConfig, ids: &[usize], mask: &[bool]) -> Result<LexicalOutput> {
    if ids.len() != mask.len() {
        return Err(Error::Dimension {
            op: "encode",
            lhs: vec![ids.len()],
            rhs: vec![mask.len()],
        });
    }
    let table = sess.param(EMBED)?;
    let mut x = sess.graph.embedding(table, ids)?;
    if cfg.position_encoding {
        let pe = sess.constant(sinusoidal_positions(ids.len(), cfg.d_model))?;
        x = sess.graph.add(x, pe)?;
    }
    x = sess.dropout(x)?;
    let mut weights = Vec::with_capacity(cfg.enc_layers);
    for l in 0..cfg.enc_layers {
        let p = block_prefix(l);
        let att = attention(sess, &format!("{p}.attn"), x, x, Some(mask), cfg.heads)?;
        let a = sess.dropout(att.output)?;
        let r = sess.graph.add(x, a)?;
        let h = sess.layer_norm(&format!("{p}.ln1"), r)?;
        let f = sess.linear(&format!("{p}.ffn1"), h)?;
        let f = sess.graph.relu(f)?;
        let f = sess.linear(&format!("{p}.ffn2"), f)?;
        let f = sess.dropout(f)?;
        let r = sess.graph.add(h, f)?;
        x = sess.layer_norm(&format!("{p}.ln2"), r)?;
        weights.push(att.weights);
    }
    Ok(LexicalOutput {
        hidden: x,
        attention: weights,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::lexical::PAD;

    fn setup(position_encoding: bool) -> (ModelConfig, ParamStore) {
        let cfg = ModelConfig {
            vocab_size: 20,
            position_encoding,
            ..ModelConfig::default()
        };
        let mut store = ParamStore::new();
        init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(11), &cfg);
        (cfg, store)
    }

    #[test]
    fn output_shape_matches_input() {
        let (cfg, store) = setup(true);
        let mut sess = Session::eval(&store);
        for ids in [vec![3, 4, 5, 6, 7, 8, 9], vec![2, 2, 3, PAD, PAD, PAD, PAD]] {
            let mask: Vec<bool> = ids.iter().map(|&i| i != PAD).collect();
            let out = encode(&mut sess, &cfg, &ids, &mask).unwrap();
            assert_eq!(sess.value(out.hidden).shape(), &[7, 64]);
        }
    }

    #[test]
    fn permutation_equivariant_without_positions() {
        let (cfg, store) = setup(false);
        let ids = [4, 9, 2, 13, 7];
        let perm = [3, 0, 4, 1, 2];
        let permuted: Vec<usize> = perm.iter().map(|&p| ids[p]).collect();
        let mask = [true; 5];
        let mut sess = Session::eval(&store);
        let a = encode(&mut sess, &cfg, &ids, &mask).unwrap().hidden;
        let b = encode(&mut sess, &cfg, &permuted, &mask).unwrap().hidden;
        for (row, &src) in perm.iter().enumerate() {
            for (x, y) in sess.value(b).row(row).iter().zip(sess.value(a).row(src)) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn padding_gets_no_attention() {
        let (cfg, store) = setup(true);
        let ids = [5, 6, 7, PAD, PAD];
        let mask = [true, true, true, false, false];
        let mut sess = Session::eval(&store);
        let out = encode(&mut sess, &cfg, &ids, &mask).unwrap();
        for layer in &out.attention {
            for w in layer {
                let w = sess.value(*w);
                for i in 0..3 {
                    assert_eq!(w.get(i, 3), 0.0);
                    assert_eq!(w.get(i, 4), 0.0);
                }
            }
        }
    }

    #[test]
    fn pad_embedding_does_not_leak_into_real_rows() {
        let (cfg, mut store) = setup(true);
        let ids = [5, 6, 7, PAD, PAD];
        let mask = [true, true, true, false, false];
        let before = {
            let mut sess = Session::eval(&store);
            let h = encode(&mut sess, &cfg, &ids, &mask).unwrap().hidden;
            sess.value(h).clone()
        };
        let table = store.value_mut(EMBED).unwrap();
        for v in &mut table.data_mut()[..cfg.d_model] {
            *v += 3.7;
        }
        let mut sess = Session::eval(&store);
        let h = encode(&mut sess, &cfg, &ids, &mask).unwrap().hidden;
        for i in 0..3 {
            for (x, y) in sess.value(h).row(i).iter().zip(before.row(i)) {
                assert!((x - y).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn eval_mode_is_pure() {
        let (cfg, store) = setup(true);
        let ids = [3, 8, 1];
        let run = || {
            let mut sess = Session::eval(&store);
            let h = encode(&mut sess, &cfg, &ids, &[true; 3]).unwrap().hidden;
            sess.value(h).clone()
        };
        assert_eq!(run(), run());
    }
}
