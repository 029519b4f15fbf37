use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::callbacks::{EarlyStopping, ReduceLrOnPlateau};
use super::checkpoint::{checkpoint_file_name, Checkpoint, CheckpointMeta};
use super::optim::{clip_by_global_norm, AdamState};
use crate::autodiff::{ParamSet, Tape};
use crate::data::{batch, Batch, CaptionedExample};
use crate::error::{Error, Result};
use crate::features::FeatureGrid;
use crate::models::{CaptionModel, FeatureInput};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub clipnorm: f64,
    pub label_epsilon: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub early_stop_patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            clipnorm: 1.0,
            label_epsilon: 0.1,
            plateau_patience: 1,
            plateau_factor: 0.5,
            early_stop_patience: 3,
            max_epochs: 30,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.clipnorm > 0.0) {
            return bad(format!("clipnorm must be positive, got {}", self.clipnorm));
        }
        if !(0.0..1.0).contains(&self.label_epsilon) {
            return bad(format!("label_epsilon must lie in [0, 1), got {}", self.label_epsilon));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return bad(format!("plateau_factor must lie in (0, 1), got {}", self.plateau_factor));
        }
        for (name, v) in [
            ("plateau_patience", self.plateau_patience),
            ("early_stop_patience", self.early_stop_patience),
            ("max_epochs", self.max_epochs),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

/// One row of the loss curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

/// Sum of per-token losses and gradients over a padded batch.
#[derive(Clone, Debug)]
pub struct BatchGradients {
    pub loss_sum: f64,
    pub tokens: usize,
    pub grads: ParamSet,
}

fn accumulate(acc: &mut ParamSet, g: &ParamSet) {
    for (name, a) in acc.iter_mut() {
        if let Some(g) = g.get(name) {
            a.data_mut()
                .iter_mut()
                .zip(g.data())
                .for_each(|(x, y)| *x += y);
        }
    }
}

/// Real (unmasked) prefix of a padded row.
fn unpadded<'a>(b: &'a Batch, row: usize) -> &'a [usize] {
    let len = b.mask[row].iter().take_while(|&&m| m).count();
    &b.ids[row][..len]
}

/// Teacher-forced loss and gradients of every row in `b`, summed in row order.
/// Padded positions contribute nothing; an all-pad row is skipped.
pub fn batch_gradients(
    model: &CaptionModel,
    features: &[&FeatureGrid],
    b: &Batch,
    epsilon: f64,
) -> Result<BatchGradients> {
    if features.len() != b.ids.len() {
        return Err(Error::contract(format!(
            "{} feature grids for {} batch rows",
            features.len(),
            b.ids.len()
        )));
    }
    let mut grads = model.params().zeros_like();
    let mut loss_sum = 0.0;
    let mut tokens = 0;
    for (row, grid) in features.iter().enumerate() {
        let caption = unpadded(b, row);
        if caption.is_empty() {
            continue;
        }
        let mut tape = Tape::new();
        let bound = model.params().bind(&mut tape);
        let loss = model.caption_loss(&mut tape, &bound, FeatureInput::Grid(grid), caption, epsilon)?;
        loss_sum += tape.value(loss).item();
        tokens += caption.len() - 1;
        accumulate(&mut grads, &bound.grads(&tape.backward(loss)?));
    }
    Ok(BatchGradients {
        loss_sum,
        tokens,
        grads,
    })
}

/// Token-level mean loss over every reference of every example.
pub fn evaluate_loss(model: &CaptionModel, examples: &[CaptionedExample], epsilon: f64) -> Result<f64> {
    let mut sum = 0.0;
    let mut tokens = 0;
    for ex in examples {
        for r in &ex.references {
            let mut tape = Tape::new();
            let bound = model.params().bind_frozen(&mut tape);
            let loss = model.caption_loss(&mut tape, &bound, (&ex.features).into(), r, epsilon)?;
            sum += tape.value(loss).item();
            tokens += r.len() - 1;
        }
    }
    if tokens == 0 {
        return Err(Error::contract("no examples to evaluate"));
    }
    Ok(sum / tokens as f64)
}

/// Order of `(example, reference)` pairs for `epoch`; a pure function of
/// the seed and epoch so resumed runs replay it.
pub fn epoch_order(items: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..items).collect();
    order.shuffle(&mut rng);
    order
}

/// Model, optimizer and callback state of a run in progress.
#[derive(Clone, Debug)]
pub struct TrainSession {
    pub model: CaptionModel,
    pub adam: AdamState,
    pub meta: CheckpointMeta,
}

impl TrainSession {
    pub fn new(model: CaptionModel, config: TrainingConfig, vocab: Option<Vec<String>>) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(model.params());
        let meta = CheckpointMeta {
            epoch: 0,
            model: model.config().clone(),
            lr: config.learning_rate,
            plateau: ReduceLrOnPlateau::new(config.plateau_patience, config.plateau_factor),
            early_stop: EarlyStopping::new(config.early_stop_patience),
            training: config,
            history: Vec::new(),
            adam_step: 0,
            stopped: false,
            vocab,
        };
        Ok(Self { model, adam, meta })
    }

    pub fn resume(ckpt: Checkpoint) -> Self {
        Self {
            model: ckpt.model,
            adam: ckpt.adam,
            meta: ckpt.meta,
        }
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut meta = self.meta.clone();
        meta.adam_step = self.adam.t;
        Checkpoint {
            model: self.model.clone(),
            adam: self.adam.clone(),
            meta,
        }
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.meta.training
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.meta.history
    }

    pub fn is_finished(&self) -> bool {
        self.meta.stopped || self.meta.epoch >= self.meta.training.max_epochs
    }

    /// One pass over `train`, then validation and callbacks.
    pub fn run_epoch(&mut self, train: &[CaptionedExample], val: &[CaptionedExample]) -> Result<EpochRecord> {
        if train.is_empty() || val.is_empty() {
            return Err(Error::contract("training and validation splits must be nonempty"));
        }
        let cfg = self.meta.training.clone();
        let epoch = self.meta.epoch + 1;
        let items: Vec<(usize, usize)> = train
            .iter()
            .enumerate()
            .flat_map(|(i, ex)| (0..ex.references.len()).map(move |r| (i, r)))
            .collect();
        let order = epoch_order(items.len(), cfg.seed, epoch);
        let lr = self.meta.lr;
        let mut sum = 0.0;
        let mut tokens = 0;
        for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let picked: Vec<(usize, usize)> = chunk.iter().map(|&k| items[k]).collect();
            let seqs: Vec<Vec<usize>> = picked.iter().map(|&(i, r)| train[i].references[r].clone()).collect();
            let pad_to = seqs.iter().map(Vec::len).max().unwrap_or(0);
            let b = batch(&seqs, pad_to)?;
            let grids: Vec<&FeatureGrid> = picked.iter().map(|&(i, _)| &train[i].features).collect();
            let mut out = batch_gradients(&self.model, &grids, &b, cfg.label_epsilon)?;
            let mean = out.loss_sum / out.tokens as f64;
            if !mean.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_no + 1,
                    value: mean,
                });
            }
            let scale = 1.0 / out.tokens as f64;
            for (_, g) in out.grads.iter_mut() {
                g.data_mut().iter_mut().for_each(|x| *x *= scale);
            }
            clip_by_global_norm(&mut out.grads, cfg.clipnorm)?;
            self.adam.update(self.model.params_mut(), &out.grads, lr)?;
            sum += out.loss_sum;
            tokens += out.tokens;
        }
        let val_loss = evaluate_loss(&self.model, val, cfg.label_epsilon)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: 0,
                value: val_loss,
            });
        }
        let record = EpochRecord {
            epoch,
            train_loss: sum / tokens as f64,
            val_loss,
            lr,
        };
        self.meta.lr = self.meta.plateau.on_epoch_end(val_loss, lr);
        self.meta.stopped = self.meta.early_stop.on_epoch_end(epoch, val_loss);
        self.meta.epoch = epoch;
        self.meta.history.push(record);
        self.meta.adam_step = self.adam.t;
        Ok(record)
    }
}

/// Where a training run writes its artifacts; both optional.
#[derive(Clone, Copy, Debug, Default)]
pub struct TrainOutputs<'a> {
    /// One `epoch_NNN.ckpt` per epoch.
    pub checkpoint_dir: Option<&'a Path>,
    /// Rewritten after every epoch.
    pub loss_csv: Option<&'a Path>,
}

/// Runs epochs until early stopping or `max_epochs`, calling `on_epoch` after
/// each one.
pub fn train<F>(
    session: &mut TrainSession,
    train: &[CaptionedExample],
    val: &[CaptionedExample],
    outputs: TrainOutputs<'_>,
    mut on_epoch: F,
) -> Result<()>
where
    F: FnMut(&TrainSession, &EpochRecord) -> Result<()>,
{
    if let Some(dir) = outputs.checkpoint_dir {
        fs::create_dir_all(dir)?;
    }
    while !session.is_finished() {
        let record = session.run_epoch(train, val)?;
        if let Some(dir) = outputs.checkpoint_dir {
            session
                .checkpoint()
                .save(dir.join(checkpoint_file_name(record.epoch)))?;
        }
        if let Some(path) = outputs.loss_csv {
            fs::write(path, loss_csv(session.history()))?;
        }
        on_epoch(session, &record)?;
    }
    Ok(())
}

/// `epoch,train_loss,val_loss,lr` with one row per record.
pub fn loss_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,lr\n");
    for r in history {
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.val_loss, r.lr);
    }
    out
}
