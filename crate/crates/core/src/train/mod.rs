//! Adam under a warm-up schedule, on mixed audio / audio-free batches, with
//! periodic evaluation and checkpointing.

mod adam;
mod checkpoint;
mod schedule;

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use schedule::{noam_lr, peak_scaled_lr};

use crate::data::{make_batches, Batch, PunctuationLabel, Sample};
use crate::error::{Error, Result};
use crate::eval::{confusion, report, ConfusionMatrix, EvalReport};
use crate::model::{Mode, ModelConfig, Session, UniPunc};
use crate::params::ParamStore;

pub const BEST_CHECKPOINT: &str = "best.upck";
pub const LAST_CHECKPOINT: &str = "last.upck";
pub const METRICS_LOG: &str = "metrics.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Peak learning rate, reached at the end of warm-up.
    pub base_lr: f64,
    pub warmup_steps: u64,
    pub dropout: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub eval_interval: u64,
    /// Stop once overall F1 on the evaluation corpus reaches this value.
    pub early_stop_f1: Option<f64>,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            base_lr: 1e-5,
            warmup_steps: 8000,
            dropout: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 8,
            max_steps: 20_000,
            seed: 0,
            clip_norm: 1.0,
            eval_interval: 500,
            early_stop_f1: None,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let fail = |msg: String| Err(Error::InvalidArgument(msg));
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} not in [0, 1)", self.dropout));
        }
        if self.warmup_steps < 1 {
            return fail("warmup_steps must be >= 1".into());
        }
        if self.batch_size < 1 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return fail(format!("learning rate {} must be positive", self.base_lr));
        }
        if self.eval_interval < 1 {
            return fail("eval_interval must be >= 1".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn lr_at(&self, step: u64) -> Result<f64> {
        peak_scaled_lr(step, self.model.d_model, self.warmup_steps, self.base_lr)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: PunctuationLabel,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// One line of the metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub classes: Vec<ClassMetrics>,
    pub overall_f1: Option<f64>,
}

impl MetricRecord {
    fn new(stats: StepStats, report: Option<&EvalReport>) -> Self {
        Self {
            step: stats.step,
            loss: stats.loss,
            lr: stats.lr,
            classes: report.map_or_else(Vec::new, |r| {
                r.classes
                    .iter()
                    .map(|c| ClassMetrics {
                        label: c.label,
                        precision: c.scores.precision,
                        recall: c.scores.recall,
                        f1: c.scores.f1,
                    })
                    .collect()
            }),
            overall_f1: report.map(|r| r.overall.f1),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainOutcome {
    pub steps: Vec<StepStats>,
    pub records: Vec<MetricRecord>,
    pub best_f1: Option<f64>,
}

/// Model, parameters and optimizer state for one training run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: UniPunc,
    pub config: TrainConfig,
    pub params: ParamStore,
    pub optimizer: AdamState,
    /// Optimizer steps completed so far.
    pub step: u64,
    epoch_cache: Option<(u64, Vec<Batch>)>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = UniPunc::new(config.model.clone())?;
        let params = model.init_params(config.seed);
        let optimizer = AdamState::new(&params);
        Ok(Self {
            model,
            config,
            params,
            optimizer,
            step: 0,
            epoch_cache: None,
        })
    }

    /// Restores a run. Parameter names and shapes must match what the stored
    /// model configuration produces.
    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let mut trainer = Self::new(ckpt.config)?;
        trainer.params.copy_values_from(&ckpt.params)?;
        trainer.optimizer = ckpt.optimizer;
        trainer.step = ckpt.step;
        trainer.config.seed = ckpt.seed;
        Ok(trainer)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            step: self.step,
            seed: self.config.seed,
            params: self.params.clone(),
            optimizer: self.optimizer.clone(),
        }
    }

    /// Dropout randomness for a given step depends only on (seed, step).
    fn step_rng(&self, step: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(step);
        rng
    }

    /// One optimizer step on `batch`.
    pub fn step_on(&mut self, batch: &Batch) -> Result<StepStats> {
        let step = self.step + 1;
        let lr = self.config.lr_at(step)?;
        let non_finite = |e: Error| match e {
            Error::NonFinite { .. } | Error::NonFiniteGradient(_) => Error::NonFiniteLoss { step, lr },
            other => other,
        };
        self.params.zero_grads();
        let loss = {
            let mut sess = Session::new(&self.params, Mode::Train, self.config.dropout, self.step_rng(step));
            let loss = self.model.loss(&mut sess, batch).map_err(non_finite)?;
            sess.graph.backward(loss)?;
            let value = sess.value(loss).data()[0];
            let grads = sess.graph;
            (value, grads)
        };
        let (loss, graph) = loss;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, lr });
        }
        graph.accumulate_param_grads(&mut self.params)?;
        drop(graph);
        let grad_norm = self.params.grad_norm();
        if self.config.clip_norm > 0.0 && grad_norm > self.config.clip_norm {
            let k = self.config.clip_norm / grad_norm;
            for (_, p) in self.params.iter_mut() {
                for g in &mut p.grad {
                    *g *= k;
                }
            }
        }
        adam_step(&mut self.params, &mut self.optimizer, lr, self.config.adam()).map_err(non_finite)?;
        self.step = step;
        Ok(StepStats { step, loss, lr, grad_norm })
    }

    /// The batch used for optimizer step `step` (1-based): each epoch is a
    /// fresh seeded shuffle of `samples`.
    fn batch_for(&mut self, samples: &[Sample], step: u64) -> Result<Batch> {
        let per_epoch = samples.len().div_ceil(self.config.batch_size) as u64;
        if per_epoch == 0 {
            return Err(Error::Empty("training corpus"));
        }
        let epoch = (step - 1) / per_epoch;
        if self.epoch_cache.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let seed = self.config.seed ^ (epoch + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            self.epoch_cache = Some((epoch, make_batches(samples, self.config.batch_size, Some(seed))?));
        }
        let (_, batches) = self.epoch_cache.as_ref().expect("filled above");
        Ok(batches[((step - 1) % per_epoch) as usize].clone())
    }

    /// Runs `n` optimizer steps over `samples`.
    pub fn train_steps(&mut self, samples: &[Sample], n: u64) -> Result<Vec<StepStats>> {
        (0..n)
            .map(|_| {
                let batch = self.batch_for(samples, self.step + 1)?;
                self.step_on(&batch)
            })
            .collect()
    }

    pub fn evaluate(&self, samples: &[Sample]) -> Result<EvalReport> {
        evaluate(&self.model, &self.params, samples, self.config.batch_size)
    }

    /// Trains until `config.max_steps`, evaluating every `eval_interval`
    /// steps and at the end. With `out_dir`, appends to the metric log and
    /// writes the best and final checkpoints there.
    pub fn run(&mut self, train: &[Sample], eval: Option<&[Sample]>, out_dir: Option<&Path>) -> Result<TrainOutcome> {
        if train.is_empty() {
            return Err(Error::Empty("training corpus"));
        }
        let mut log = match out_dir {
            Some(dir) => {
                fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join(METRICS_LOG);
                Some((fs::File::create(&path).map_err(|e| Error::io(&path, e))?, path))
            }
            None => None,
        };
        let mut outcome = TrainOutcome::default();
        while self.step < self.config.max_steps {
            let stats = self.train_steps(train, 1)?[0];
            outcome.steps.push(stats);
            let at_end = self.step == self.config.max_steps;
            if !self.step.is_multiple_of(self.config.eval_interval) && !at_end {
                continue;
            }
            let report = eval.map(|e| self.evaluate(e)).transpose()?;
            let record = MetricRecord::new(stats, report.as_ref());
            if let Some((file, path)) = &mut log {
                let line = serde_json::to_string(&record).expect("record serializes");
                writeln!(file, "{line}").map_err(|e| Error::io(path.as_path(), e))?;
            }
            let f1 = record.overall_f1;
            outcome.records.push(record);
            if let Some(f1) = f1 {
                if outcome.best_f1.is_none_or(|b| f1 > b) {
                    outcome.best_f1 = Some(f1);
                    if let Some(dir) = out_dir {
                        save_checkpoint(dir.join(BEST_CHECKPOINT), &self.checkpoint())?;
                    }
                }
                if self.config.early_stop_f1.is_some_and(|target| f1 >= target) {
                    break;
                }
            }
        }
        if let Some(dir) = out_dir {
            save_checkpoint(dir.join(LAST_CHECKPOINT), &self.checkpoint())?;
        }
        Ok(outcome)
    }
}

/// Scores `samples` with the model in evaluation mode.
pub fn evaluate(model: &UniPunc, params: &ParamStore, samples: &[Sample], batch_size: usize) -> Result<EvalReport> {
    let mut cm = ConfusionMatrix::default();
    if !samples.is_empty() {
        for batch in make_batches(samples, batch_size, None)? {
            let hyps = model.predict(params, &batch)?;
            let refs: Vec<&[PunctuationLabel]> = batch.labels.iter().zip(&batch.lengths).map(|(l, &n)| &l[..n]).collect();
            cm += confusion(&refs, &hyps, None)?;
        }
    }
    Ok(report(&cm))
}
