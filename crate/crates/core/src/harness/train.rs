use std::f64::consts::PI;
use std::fs::{File, OpenOptions};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::data::Dataset;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::params::ParamStore;
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    AdamW,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F64,
}

/// Desk-scale recipe. Defaults: AdamW, lr 1e-3 with cosine decay, weight
/// decay 0.05, label smoothing 0.1, batch 128.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Heavy-ball momentum for SGD.
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub deterministic: bool,
    pub label_smoothing: f64,
    pub precision: Precision,
    /// Random flip and padded crop. Off for the synthetic gratings, whose
    /// class is their orientation.
    pub augment: bool,
    pub cosine: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: OptimizerKind::AdamW,
            lr: 1e-3,
            weight_decay: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            momentum: 0.9,
            batch_size: 128,
            epochs: 10,
            seed: 0,
            deterministic: false,
            label_smoothing: 0.1,
            precision: Precision::F64,
            augment: false,
            cosine: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        // zero is allowed: it is the frozen-weights sanity run
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be finite and >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::config("label smoothing must lie in [0, 1)"));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return Err(Error::config("weight decay must be finite and >= 0"));
        }
        Ok(())
    }

    /// Learning rate at `step` of `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        if !self.cosine || total == 0 {
            return self.lr;
        }
        0.5 * self.lr * (1.0 + (PI * step as f64 / total as f64).cos())
    }
}

/// Model and training configuration as stored in a JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let run: RunConfig = serde_json::from_str(&text)?;
        run.model.validate()?;
        run.train.validate()?;
        Ok(run)
    }
}

/// Optimizer state for one [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: TrainConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    steps: u64,
}

impl Optimizer {
    pub fn new(config: &TrainConfig, params: &ParamStore) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Optimizer {
            config: config.clone(),
            first: zeros(),
            second: match config.optimizer {
                OptimizerKind::AdamW => zeros(),
                OptimizerKind::Sgd => Vec::new(),
            },
            steps: 0,
        }
    }

    /// Apply one update with learning rate `lr`. Weight decay touches
    /// matrices only; biases, norms, tokens and α are left alone.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor], lr: f64) {
        self.steps += 1;
        let c = &self.config;
        let t = self.steps as i32;
        let (bc1, bc2) = (1.0 - c.beta1.powi(t), 1.0 - c.beta2.powi(t));
        for (id, g) in grads.iter().enumerate() {
            let p = params.get_mut(id);
            let decay = if p.rank() >= 2 { c.weight_decay } else { 0.0 };
            let m = self.first[id].data_mut();
            match c.optimizer {
                OptimizerKind::AdamW => {
                    let v = self.second[id].data_mut();
                    for (((w, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                        *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                        *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                        let update = (*m / bc1) / ((*v / bc2).sqrt() + c.adam_eps);
                        *w -= lr * (update + decay * *w);
                    }
                }
                OptimizerKind::Sgd => {
                    for ((w, &g), m) in p.data_mut().iter_mut().zip(g.data()).zip(m) {
                        *m = c.momentum * *m + g + decay * *w;
                        *w -= lr * *m;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_acc: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub checkpoint: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
}

/// Appends epoch rows to a CSV file, writing the header only when the file
/// starts out empty.
pub struct MetricsLog {
    writer: csv::Writer<File>,
}

impl MetricsLog {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let fresh = file.metadata()?.len() == 0;
        let writer = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
        Ok(MetricsLog { writer })
    }

    pub fn append(&mut self, row: &EpochMetrics) -> Result<()> {
        self.writer.serialize(row)?;
        self.writer.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    let mut reader = csv::Reader::from_path(path)?;
    reader
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

fn check_geometry(config: &ModelConfig, data: &Dataset) -> Result<()> {
    if data.image_size != config.image_size {
        return Err(Error::config(format!(
            "model expects {}px images, dataset holds {}px",
            config.image_size, data.image_size
        )));
    }
    if data.num_classes > config.num_classes {
        return Err(Error::config(format!(
            "dataset has {} classes, model predicts {}",
            data.num_classes, config.num_classes
        )));
    }
    Ok(())
}

/// Evaluation batch size; affects speed only.
pub const EVAL_BATCH: usize = 250;

/// Logits for every sample, in dataset order.
pub fn predict_dataset(model: &Model, data: &Dataset) -> Result<Vec<Tensor>> {
    check_geometry(&model.config, data)?;
    let indices: Vec<usize> = (0..data.len()).collect();
    indices
        .chunks(EVAL_BATCH)
        .map(|chunk| model.predict(&data.batch(chunk).0))
        .collect()
}

/// Top-1 accuracy of `model` on `data`.
pub fn evaluate_model(model: &Model, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::contract("evaluation on an empty dataset"));
    }
    let s = model.config.num_classes;
    let mut correct = 0usize;
    let mut offset = 0;
    for logits in predict_dataset(model, data)? {
        for row in logits.data().chunks(s) {
            correct += usize::from(argmax(row) == data.labels[offset]);
            offset += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

pub fn evaluate(checkpoint: &Checkpoint, data: &Dataset) -> Result<f64> {
    evaluate_model(&checkpoint.to_model()?, data)
}

fn non_finite_error(label: &str, params: &ParamStore) -> Error {
    let first = params.first_non_finite().unwrap_or("none");
    Error::NonFinite(format!("{label} (first non-finite parameter: {first})"))
}

/// Train a freshly initialized model. Metrics rows go to `log` as each
/// epoch finishes. Eval accuracy is `NaN` when no eval set is given.
pub fn train(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
    log: Option<&mut MetricsLog>,
) -> Result<TrainOutcome> {
    let model = Model::new(model_config.clone(), train_config.seed)?;
    train_model(model, train_config, train_set, eval_set, log)
}

/// Train an existing model in place of initialization.
pub fn train_model(
    mut model: Model,
    tc: &TrainConfig,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
    mut log: Option<&mut MetricsLog>,
) -> Result<TrainOutcome> {
    tc.validate()?;
    model.config.validate()?;
    if train_set.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    check_geometry(&model.config, train_set)?;
    if let Some(e) = eval_set {
        check_geometry(&model.config, e)?;
    }

    // Separate streams so augmentation never shifts batch composition.
    let mut order_rng = ChaCha8Rng::seed_from_u64(tc.seed ^ 0x5348_5654);
    let mut aug_rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut opt = Optimizer::new(tc, &model.params);
    let batches_per_epoch = train_set.len().div_ceil(tc.batch_size);
    let total = batches_per_epoch * tc.epochs;
    let s = model.config.num_classes;
    let mut step = 0usize;
    let mut metrics = Vec::with_capacity(tc.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 0..tc.epochs {
        order.shuffle(&mut order_rng);
        let epoch_lr = tc.lr_at(step, total);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(tc.batch_size) {
            let (images, labels) = if tc.augment {
                train_set.batch_augmented(chunk, &mut aug_rng)
            } else {
                train_set.batch(chunk)
            };
            let mut tape = Tape::new();
            let vars = model.params.bind(&mut tape);
            let x = tape.input(images);
            let result = model
                .forward(&mut tape, &vars, x)
                .and_then(|logits| Ok((logits, tape.cross_entropy(logits, &labels, tc.label_smoothing)?)));
            let (logits, loss) = match result {
                Ok(v) => v,
                Err(Error::NonFinite(what)) => return Err(non_finite_error(&what, &model.params)),
                Err(e) => return Err(e),
            };
            let loss_value = tape.value(loss).item()?;
            loss_sum += loss_value * chunk.len() as f64;
            for (row, &label) in tape.value(logits).data().chunks(s).zip(&labels) {
                correct += usize::from(argmax(row) == label);
            }
            let grads = tape.backward(loss)?;
            let grads: Vec<Tensor> = (0..model.params.len())
                .map(|id| grads.param(id).unwrap_or_else(|| Tensor::zeros(model.params.get(id).shape())))
                .collect();
            if let Some(id) = grads.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient of {} at step {step}",
                    model.params.name(id)
                )));
            }
            opt.step(&mut model.params, &grads, tc.lr_at(step, total));
            if let Some(name) = model.params.first_non_finite() {
                return Err(Error::NonFinite(format!("parameter {name} after step {step}")));
            }
            step += 1;
        }
        let eval_acc = match eval_set {
            Some(e) => evaluate_model(&model, e)?,
            None => f64::NAN,
        };
        let row = EpochMetrics {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            eval_acc,
            lr: epoch_lr,
        };
        if let Some(log) = log.as_deref_mut() {
            log.append(&row)?;
        }
        metrics.push(row);
    }

    let checkpoint = Checkpoint::from_model(&model, Some(tc.clone()), step as u64, tc.seed);
    Ok(TrainOutcome {
        model,
        checkpoint,
        metrics,
    })
}
