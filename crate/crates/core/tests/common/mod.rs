#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use unipunc_core::acoustic::AcousticFeatures;
use unipunc_core::data::{Batch, Sample};
use unipunc_core::lexical::TokenSequence;
use unipunc_core::model::{ModelConfig, Session, UniPunc};
use unipunc_core::train::TrainConfig;
use unipunc_core::{Graph, ParamStore, PunctuationLabel, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Error relative to max(|a|, |n|), floored at 1e-3 so near-zero entries
/// are compared absolutely.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
        .fold(0.0, f64::max)
}

/// Central differences of `f` w.r.t. every element of every input.
pub fn fd_gradients(inputs: &[Tensor], f: impl Fn(&[Tensor]) -> f64) -> Vec<Vec<f64>> {
    let mut work = inputs.to_vec();
    (0..inputs.len())
        .map(|t| {
            (0..inputs[t].numel())
                .map(|i| {
                    let orig = work[t].data()[i];
                    work[t].data_mut()[i] = orig + FD_STEP;
                    let plus = f(&work);
                    work[t].data_mut()[i] = orig - FD_STEP;
                    let minus = f(&work);
                    work[t].data_mut()[i] = orig;
                    (plus - minus) / (2.0 * FD_STEP)
                })
                .collect()
        })
        .collect()
}

/// Builds `op` on leaves, reduces with a fixed non-uniform probe and returns
/// the worst relative error between backprop and finite differences.
pub fn op_error(inputs: &[Tensor], op: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let eval = |ts: &[Tensor], grads: bool| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ts.iter().map(|t| g.leaf(t.clone()).unwrap()).collect();
        let out = op(&mut g, &vars);
        let n = g.value(out).numel();
        let probe = Tensor::new(g.shape(out).to_vec(), (0..n).map(|i| 0.25 + 0.13 * (i % 5) as f64).collect()).unwrap();
        let probe = g.constant(probe).unwrap();
        let prod = g.mul(out, probe).unwrap();
        let loss = g.sum(prod).unwrap();
        let value = g.value(loss).data()[0];
        let mut out_grads = Vec::new();
        if grads {
            g.backward(loss).unwrap();
            for v in &vars {
                out_grads.push(g.grad(*v).map_or_else(|| vec![0.0; g.value(*v).numel()], <[f64]>::to_vec));
            }
        }
        (value, out_grads)
    };
    let (_, analytic) = eval(inputs, true);
    let numeric = fd_gradients(inputs, |ts| eval(ts, false).0);
    analytic.iter().zip(&numeric).map(|(a, n)| max_rel_err(a, n)).fold(0.0, f64::max)
}

/// Gradient error of every differentiable op on random inputs.
pub fn op_gradient_suite() -> Vec<(&'static str, f64)> {
    let mut r = rng(5);
    let mut out = Vec::new();
    let a = random_tensor(&mut r, &[3, 4]);
    let b = random_tensor(&mut r, &[4, 2]);
    out.push(("matmul", op_error(&[a.clone(), b], |g, v| g.matmul(v[0], v[1]).unwrap())));
    let c = random_tensor(&mut r, &[3, 4]);
    out.push(("add", op_error(&[a.clone(), c.clone()], |g, v| g.add(v[0], v[1]).unwrap())));
    out.push(("mul", op_error(&[a.clone(), c], |g, v| g.mul(v[0], v[1]).unwrap())));
    let bias = random_tensor(&mut r, &[4]);
    out.push(("add_bias", op_error(&[a.clone(), bias], |g, v| g.add_bias(v[0], v[1]).unwrap())));
    out.push(("scale", op_error(std::slice::from_ref(&a), |g, v| g.scale(v[0], -1.7).unwrap())));
    out.push(("relu", op_error(std::slice::from_ref(&a), |g, v| g.relu(v[0]).unwrap())));
    out.push(("sum", op_error(std::slice::from_ref(&a), |g, v| g.sum(v[0]).unwrap())));
    out.push(("transpose", op_error(std::slice::from_ref(&a), |g, v| g.transpose(v[0]).unwrap())));
    out.push((
        "reshape",
        op_error(std::slice::from_ref(&a), |g, v| g.reshape(v[0], vec![2, 6]).unwrap()),
    ));
    let logits = random_tensor(&mut r, &[3, 5]).data().iter().map(|x| 3.0 * x).collect();
    let logits = Tensor::new(vec![3, 5], logits).unwrap();
    out.push((
        "softmax_rows",
        op_error(std::slice::from_ref(&logits), |g, v| g.softmax_rows(v[0]).unwrap()),
    ));
    out.push((
        "masked_softmax_rows",
        op_error(std::slice::from_ref(&logits), |g, v| {
            g.masked_softmax_rows(v[0], Some(&[true, false, true, true, false])).unwrap()
        }),
    ));
    let x = random_tensor(&mut r, &[4, 8]);
    let gain = random_tensor(&mut r, &[8]);
    let shift = random_tensor(&mut r, &[8]);
    out.push((
        "layer_norm",
        op_error(&[x, gain, shift], |g, v| g.layer_norm(v[0], v[1], v[2]).unwrap()),
    ));
    let table = random_tensor(&mut r, &[6, 3]);
    out.push(("embedding", op_error(&[table], |g, v| g.embedding(v[0], &[3, 0, 3, 5]).unwrap())));
    let xs = random_tensor(&mut r, &[20, 3]);
    let w = random_tensor(&mut r, &[4, 3, 2]);
    let cb = random_tensor(&mut r, &[2]);
    out.push(("conv1d", op_error(&[xs, w, cb], |g, v| g.conv1d(v[0], v[1], v[2], 3).unwrap())));
    out.push((
        "cross_entropy",
        op_error(std::slice::from_ref(&logits), |g, v| {
            g.cross_entropy(v[0], &[1, 4, 0], &[true, true, false]).unwrap()
        }),
    ));
    out.push((
        "dropout",
        op_error(std::slice::from_ref(&a), |g, v| g.dropout(v[0], 0.3, true, &mut rng(9)).unwrap()),
    ));
    let d = random_tensor(&mut r, &[2, 4]);
    out.push((
        "concat_rows",
        op_error(&[a.clone(), d], |g, v| g.concat_rows(&[v[0], v[1]]).unwrap()),
    ));
    out.push((
        "slice_rows",
        op_error(std::slice::from_ref(&a), |g, v| g.slice_rows(v[0], 1, 2).unwrap()),
    ));
    let e = random_tensor(&mut r, &[3, 2]);
    out.push((
        "concat_cols",
        op_error(&[a.clone(), e], |g, v| g.concat_cols(&[v[0], v[1]]).unwrap()),
    ));
    out.push(("slice_cols", op_error(&[a], |g, v| g.slice_cols(v[0], 1, 2).unwrap())));
    out
}

/// d=8, one encoder layer, one bootstrapper layer, V=10.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 10,
        d_model: 8,
        heads: 2,
        enc_layers: 1,
        boot_layers: 1,
        ffn_dim: 12,
        feat_dim: 3,
        conv_channels: 4,
        conv_kernel: 15,
        conv_stride: 5,
        ve_len: 5,
        position_encoding: true,
    }
}

pub fn random_features(rng: &mut impl Rng, frames: usize, dim: usize) -> AcousticFeatures {
    AcousticFeatures::new(random_tensor(rng, &[frames, dim]), 100.0).unwrap()
}

pub fn sample(ids: &[usize], labels: &[usize], audio: Option<AcousticFeatures>) -> Sample {
    let tokens = TokenSequence {
        ids: ids.to_vec(),
        words: ids.iter().map(|i| format!("w{i}")).collect(),
    };
    let labels = labels.iter().map(|&l| PunctuationLabel::from_index(l).unwrap()).collect();
    Sample::new(tokens, labels, audio.map(|a| ("synthetic.upft".into(), std::sync::Arc::new(a)))).unwrap()
}

/// A padded batch with one audio sample (135 frames, three rows after
/// down-sampling) and one shorter audio-free sample.
pub fn tiny_batch(cfg: &ModelConfig) -> Batch {
    let mut r = rng(21);
    let a = sample(&[2, 5, 9, 3], &[0, 1, 0, 2], Some(random_features(&mut r, 135, cfg.feat_dim)));
    let b = sample(&[4, 7, 1], &[0, 0, 3], None);
    Batch::from_samples(&[&a, &b]).unwrap()
}

pub fn loss_value(model: &UniPunc, store: &ParamStore, batch: &Batch) -> f64 {
    let mut sess = Session::eval(store);
    let l = model.loss(&mut sess, batch).unwrap();
    sess.value(l).data()[0]
}

/// Backprop gradients of the batch loss (no dropout), written into `store`.
pub fn backprop(model: &UniPunc, store: &mut ParamStore, batch: &Batch) {
    store.zero_grads();
    let graph = {
        let mut sess = Session::eval(store);
        let l = model.loss(&mut sess, batch).unwrap();
        sess.graph.backward(l).unwrap();
        sess.graph
    };
    graph.accumulate_param_grads(store).unwrap();
}

/// Worst finite-difference error per parameter tensor of the tiny model.
pub fn end_to_end_errors() -> Vec<(String, f64)> {
    let cfg = tiny_config();
    let model = UniPunc::new(cfg.clone()).unwrap();
    let mut store = model.init_params(4);
    let batch = tiny_batch(&cfg);
    backprop(&model, &mut store, &batch);
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let mut work = store.clone();
    names
        .into_iter()
        .map(|name| {
            let analytic = store.grad(&name).unwrap().to_vec();
            let numeric: Vec<f64> = (0..analytic.len())
                .map(|i| {
                    let orig = work.value(&name).unwrap().data()[i];
                    work.value_mut(&name).unwrap().data_mut()[i] = orig + FD_STEP;
                    let plus = loss_value(&model, &work, &batch);
                    work.value_mut(&name).unwrap().data_mut()[i] = orig - FD_STEP;
                    let minus = loss_value(&model, &work, &batch);
                    work.value_mut(&name).unwrap().data_mut()[i] = orig;
                    (plus - minus) / (2.0 * FD_STEP)
                })
                .collect();
            let err = max_rel_err(&analytic, &numeric);
            (name, err)
        })
        .collect()
}

/// Small config for fast training tests.
pub fn small_train_config(vocab_size: usize) -> TrainConfig {
    TrainConfig {
        base_lr: 1e-3,
        warmup_steps: 10,
        batch_size: 4,
        max_steps: 20,
        seed: 11,
        eval_interval: 10,
        model: ModelConfig {
            vocab_size,
            d_model: 16,
            heads: 2,
            enc_layers: 1,
            boot_layers: 1,
            ffn_dim: 32,
            feat_dim: unipunc_core::synthetic::FEAT_DIM,
            conv_channels: 8,
            ..ModelConfig::default()
        },
        ..TrainConfig::default()
    }
}
