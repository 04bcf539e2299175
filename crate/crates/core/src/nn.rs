//! Forward-pass context and the small layer helpers shared by every block.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::Result;
use crate::params::{glorot_tensor, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass: the graph being recorded, the parameters it reads, and
/// the dropout configuration.
pub struct Session<'p> {
    pub graph: Graph,
    pub store: &'p ParamStore,
    pub mode: Mode,
    pub dropout: f64,
    rng: ChaCha8Rng,
}

impl<'p> Session<'p> {
    pub fn new(store: &'p ParamStore, mode: Mode, dropout: f64, rng: ChaCha8Rng) -> Self {
        Self {
            graph: Graph::new(),
            store,
            mode,
            dropout,
            rng,
        }
    }

    /// Inference session: dropout off, RNG unused.
    pub fn eval(store: &'p ParamStore) -> Self {
        Self::new(store, Mode::Eval, 0.0, ChaCha8Rng::seed_from_u64(0))
    }

    pub fn param(&mut self, name: &str) -> Result<Var> {
        self.graph.param(self.store, name)
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.graph.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.graph.value(v)
    }

    pub fn dropout(&mut self, x: Var) -> Result<Var> {
        let training = self.mode == Mode::Train;
        self.graph.dropout(x, self.dropout, training, &mut self.rng)
    }

    pub fn rng(&mut self) -> &mut impl Rng {
        &mut self.rng
    }

    /// `x · W + b` with `W = {prefix}.weight` and `b = {prefix}.bias`.
    pub fn linear(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let w = self.param(&format!("{prefix}.weight"))?;
        let b = self.param(&format!("{prefix}.bias"))?;
        let h = self.graph.matmul(x, w)?;
        self.graph.add_bias(h, b)
    }

    pub fn layer_norm(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let gain = self.param(&format!("{prefix}.gain"))?;
        let bias = self.param(&format!("{prefix}.bias"))?;
        self.graph.layer_norm(x, gain, bias)
    }
}

pub(crate) fn init_linear<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, prefix: &str, fan_in: usize, fan_out: usize) {
    store.insert(format!("{prefix}.weight"), glorot_tensor(rng, &[fan_in, fan_out], fan_in, fan_out));
    store.insert(format!("{prefix}.bias"), Tensor::zeros(&[fan_out]));
}

pub(crate) fn init_layer_norm(store: &mut ParamStore, prefix: &str, d: usize) {
    store.insert(format!("{prefix}.gain"), Tensor::full(&[d], 1.0));
    store.insert(format!("{prefix}.bias"), Tensor::zeros(&[d]));
}
