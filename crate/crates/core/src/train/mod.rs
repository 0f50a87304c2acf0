//! Mini-batch training, evaluation metrics and epoch history.

mod history;
mod metrics;

pub use history::{export_history, read_history, EpochStats, HISTORY_HEADER};
pub use metrics::{MetricsReport, DECISION_THRESHOLD};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::forward_record;
use crate::data::{load_inputs, stack, ImageRecord, Manifest, Quality, Split, WeightedSampler};
use crate::data::{DEFAULT_WEIGHT_HIGH, DEFAULT_WEIGHT_LOW};
use crate::error::{Error, Result};
use crate::model::{forward, ModelSpec, Parameters};
use crate::optim::{adam_step, bce_grad, bce_loss, AdamConfig, AdamState};
use crate::tensor::{BatchNormMode, Tensor};

/// Images per forward pass during evaluation.
pub const EVAL_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Train on every row regardless of split and skip validation.
    pub fine_tune: bool,
    pub weight_low: f64,
    pub weight_high: f64,
    pub input_size: usize,
    pub width_multiplier: f64,
    /// Upper bound on the fixed train subset scored after each epoch.
    pub stats_subsample: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            fine_tune: false,
            weight_low: DEFAULT_WEIGHT_LOW,
            weight_high: DEFAULT_WEIGHT_HIGH,
            input_size: 64,
            width_multiplier: 1.0,
            stats_subsample: 512,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::param("epochs and batch size must be at least 1"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::param(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.stats_subsample == 0 {
            return Err(Error::param("stats subsample must be at least 1"));
        }
        Ok(())
    }
}

/// Side length of the square input the model expects.
pub fn input_size(spec: &ModelSpec) -> Result<usize> {
    match spec.input_shape {
        [h, w, 3] if h == w => Ok(h),
        s => Err(Error::Capability(format!(
            "only square RGB inputs are supported, model expects {s:?}"
        ))),
    }
}

fn labels_of(records: &[&ImageRecord]) -> Vec<u8> {
    records.iter().map(|r| r.label as u8).collect()
}

fn label_tensor(labels: &[u8]) -> Result<Tensor<f32>> {
    Tensor::from_vec(vec![labels.len(), 1], labels.iter().map(|&l| l as f32).collect())
}

/// Infer-mode probabilities for preprocessed `[H, W, 3]` inputs.
pub fn predict_inputs(spec: &ModelSpec, params: &Parameters, inputs: &[&Tensor<f32>]) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(EVAL_BATCH) {
        let y = forward(spec, params, &stack(chunk)?, BatchNormMode::Infer)?;
        out.extend_from_slice(y.data());
    }
    Ok(out)
}

/// Loads, preprocesses and scores the given records.
pub fn predict_records(
    spec: &ModelSpec,
    params: &Parameters,
    manifest: &Manifest,
    records: &[&ImageRecord],
) -> Result<Vec<f32>> {
    let inputs = load_inputs(manifest, records, input_size(spec)?)?;
    predict_inputs(spec, params, &inputs.iter().collect::<Vec<_>>())
}

/// Image-level metrics on one split at threshold 0.5.
pub fn evaluate(spec: &ModelSpec, params: &Parameters, manifest: &Manifest, split: Split) -> Result<MetricsReport> {
    manifest.validate()?;
    let records: Vec<&ImageRecord> = manifest.in_split(split).collect();
    if records.is_empty() {
        return Err(Error::Data(format!("manifest has no {split} rows")));
    }
    let probs = predict_records(spec, params, manifest, &records)?;
    MetricsReport::from_probabilities(&labels_of(&records), &probs)
}

fn loss_and_accuracy(
    spec: &ModelSpec,
    params: &Parameters,
    inputs: &[&Tensor<f32>],
    labels: &[u8],
) -> Result<(f64, f64)> {
    let probs = predict_inputs(spec, params, inputs)?;
    let yhat = Tensor::from_vec(vec![probs.len(), 1], probs.clone())?;
    let loss = bce_loss(&label_tensor(labels)?, &yhat)?;
    let acc = MetricsReport::from_probabilities(labels, &probs)?.accuracy;
    Ok((loss, acc))
}

fn with_position(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, batch {batch}: {m}")),
        other => other,
    }
}

fn train_step(
    spec: &ModelSpec,
    params: &mut Parameters,
    adam: &mut AdamState,
    x: &Tensor<f32>,
    y: &Tensor<f32>,
) -> Result<()> {
    let rec = forward_record(spec, params, x, BatchNormMode::Train)?;
    let loss = bce_loss(y, &rec.output)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("loss is {loss}")));
    }
    let grads = rec.backward(&bce_grad(y, &rec.output)?)?;
    adam_step(params, &grads, adam)?;
    rec.apply_running_updates(params)
}

/// [`train_with_progress`] without a progress callback.
pub fn train(
    spec: &ModelSpec,
    params: Parameters,
    manifest: &Manifest,
    config: &TrainConfig,
) -> Result<(Parameters, Vec<EpochStats>)> {
    train_with_progress(spec, params, manifest, config, |_| {})
}

/// Mini-batch Adam training on BCE. Each epoch draws `ceil(N / batch)`
/// batches from the quality-weighted sampler, then scores a fixed train
/// subset and (unless fine-tuning) the test split in infer mode.
pub fn train_with_progress(
    spec: &ModelSpec,
    mut params: Parameters,
    manifest: &Manifest,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<(Parameters, Vec<EpochStats>)> {
    config.validate()?;
    let size = input_size(spec)?;
    if size != config.input_size {
        return Err(Error::param(format!(
            "config input size {} but model expects {size}",
            config.input_size
        )));
    }
    params.check_against(spec)?;
    manifest.validate()?;

    let train_rows: Vec<&ImageRecord> = if config.fine_tune {
        manifest.records.iter().collect()
    } else {
        manifest.in_split(Split::Train).collect()
    };
    if train_rows.is_empty() {
        return Err(Error::Data("manifest has no training rows".into()));
    }
    let val_rows: Vec<&ImageRecord> = if config.fine_tune {
        Vec::new()
    } else {
        manifest.in_split(Split::Test).collect()
    };
    if !config.fine_tune && val_rows.is_empty() {
        return Err(Error::Data("manifest has no test rows for validation".into()));
    }

    let train_inputs = load_inputs(manifest, &train_rows, size)?;
    let train_labels = labels_of(&train_rows);
    let val_inputs = load_inputs(manifest, &val_rows, size)?;
    let val_labels = labels_of(&val_rows);
    let val_refs: Vec<&Tensor<f32>> = val_inputs.iter().collect();

    let n = train_rows.len();
    let mut subset = sample(
        &mut ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed),
        n,
        n.min(config.stats_subsample),
    )
    .into_vec();
    subset.sort_unstable();
    let subset_inputs: Vec<&Tensor<f32>> = subset.iter().map(|&i| &train_inputs[i]).collect();
    let subset_labels: Vec<u8> = subset.iter().map(|&i| train_labels[i]).collect();

    let qualities: Vec<Quality> = train_rows.iter().map(|r| r.quality).collect();
    let mut sampler = WeightedSampler::new(&qualities, config.weight_low, config.weight_high, config.seed)?;
    let mut adam = AdamState::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let batches = n.div_ceil(config.batch_size);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        for batch in 1..=batches {
            let idx: Vec<usize> = sampler.by_ref().take(config.batch_size).collect();
            let x = stack(&idx.iter().map(|&i| &train_inputs[i]).collect::<Vec<_>>())?;
            let y = label_tensor(&idx.iter().map(|&i| train_labels[i]).collect::<Vec<_>>())?;
            train_step(spec, &mut params, &mut adam, &x, &y)
                .map_err(|e| with_position(e, epoch, batch))?;
        }

        let (train_loss, train_acc) = loss_and_accuracy(spec, &params, &subset_inputs, &subset_labels)?;
        let (val_loss, val_acc) = if config.fine_tune {
            (None, None)
        } else {
            let (l, a) = loss_and_accuracy(spec, &params, &val_refs, &val_labels)?;
            (Some(l), Some(a))
        };
        let stats = EpochStats {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok((params, history))
}
