//! Joint optimization steps and the best-on-dev training protocol.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{GroupValues, ModelConfig, TrainConfig};
use crate::data::{encode_batch, Batch, Example, LabelMaps, Splits};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, EvalMetrics};
use crate::layers::Mode;
use crate::model::{Ctran, LossWeights};
use crate::substrate::{Graph, ParamStore};

use super::checkpoint::Checkpoint;
use super::optimizer::{clip_global_norm, trainable_grad_norm, AdamW, AdamWConfig};
use super::scheduler::StepLr;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub intent: f64,
    pub slot: f64,
    pub total: f64,
    /// Gradient norm before clipping.
    pub grad_norm: f64,
}

/// Model, optimizer state and the random stream for shuffling and dropout.
pub struct Trainer {
    pub model: Ctran<f32>,
    pub config: TrainConfig,
    optimizer: AdamW<f32>,
    scheduler: StepLr,
    rng: ChaCha8Rng,
    steps: u64,
}

impl Trainer {
    pub fn new(model: Ctran<f32>, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let optimizer = AdamW::new(&model.params, AdamWConfig::from(&config));
        let scheduler = StepLr::from_config(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(Trainer { model, config, optimizer, scheduler, rng, steps: 0 })
    }

    pub fn rates(&self) -> GroupValues {
        self.scheduler.current()
    }

    pub fn epoch(&self) -> usize {
        self.scheduler.epoch()
    }

    fn weights(&self) -> LossWeights {
        LossWeights { intent: self.config.intent_loss_weight, slot: self.config.slot_loss_weight }
    }

    /// Forward in train mode, one backward pass from the summed loss,
    /// clipping, then an AdamW update at the current rates.
    pub fn joint_step(&mut self, batch: &Batch) -> Result<StepLosses> {
        self.model.params.zero_grad();
        let weights = self.weights();
        let mut g = Graph::new();
        let mut mode = Mode::Train { dropout: self.config.dropout, rng: &mut self.rng };
        let loss = self.model.joint_loss(&mut g, batch, &mut mode, weights)?;
        let value = |v| g.value(v).item() as f64;
        let (intent, slot, total) = (value(loss.intent), value(loss.slot), value(loss.total));
        if !total.is_finite() {
            return Err(Error::NonFinite(format!(
                "step {}: intent loss {intent}, slot loss {slot}, batch {:?}",
                self.steps + 1,
                batch.ids
            )));
        }
        g.backward(loss.total, &mut self.model.params)?;
        let grad_norm = trainable_grad_norm(&self.model.params);
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite(format!(
                "step {}: gradient norm {grad_norm} with finite loss {total}, batch {:?}",
                self.steps + 1,
                batch.ids
            )));
        }
        if let Some(max) = self.config.clip_norm {
            clip_global_norm(&mut self.model.params, max);
        }
        self.optimizer.step(&mut self.model.params, &self.scheduler.current());
        self.steps += 1;
        Ok(StepLosses { intent, slot, total, grad_norm })
    }

    /// One shuffled pass over `examples`; returns the per-step losses.
    pub fn train_epoch(&mut self, examples: &[Example], maps: &LabelMaps) -> Result<Vec<StepLosses>> {
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut self.rng);
        let mut losses = Vec::with_capacity(order.len().div_ceil(self.config.batch_size));
        for idx in order.chunks(self.config.batch_size) {
            let chunk: Vec<Example> = idx.iter().map(|&i| examples[i].clone()).collect();
            let batch = encode_batch(&chunk, maps, self.config.strip_punct)?;
            losses.push(self.joint_step(&batch)?);
        }
        self.scheduler.scheduler_step();
        Ok(losses)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanLosses {
    pub intent: f64,
    pub slot: f64,
    pub total: f64,
}

impl MeanLosses {
    pub fn of(steps: &[StepLosses]) -> Self {
        let n = steps.len().max(1) as f64;
        MeanLosses {
            intent: steps.iter().map(|s| s.intent).sum::<f64>() / n,
            slot: steps.iter().map(|s| s.slot).sum::<f64>() / n,
            total: steps.iter().map(|s| s.total).sum::<f64>() / n,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: MeanLosses,
    pub dev: EvalMetrics,
    /// Rates used during this epoch.
    pub learning_rate: GroupValues,
    pub seconds: f64,
}

pub struct TrainOutcome {
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub best_dev: EvalMetrics,
    pub history: Vec<EpochRecord>,
    /// Total loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

/// Higher slot F1 wins, then higher intent accuracy; the earlier epoch keeps ties.
fn improves(candidate: &EvalMetrics, best: Option<&EvalMetrics>) -> bool {
    match best {
        None => true,
        Some(b) => {
            candidate.slot_f1 > b.slot_f1
                || (candidate.slot_f1 == b.slot_f1 && candidate.intent_accuracy > b.intent_accuracy)
        }
    }
}

/// Trains for `config.epochs` epochs, evaluating on dev after each, and keeps
/// the parameters of the best dev epoch. `on_epoch` sees every record as it is produced.
pub fn train_run(
    splits: &Splits,
    model_config: &ModelConfig,
    config: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if splits.train.is_empty() {
        return Err(Error::EmptyBatch("training split is empty".into()));
    }
    if splits.dev.is_empty() {
        return Err(Error::EmptyBatch("dev split is empty; best-epoch selection needs it".into()));
    }
    let maps = LabelMaps::build(&splits.train)?;
    let model = Ctran::new(model_config, &maps, seed)?;
    let mut trainer = Trainer::new(model, config.clone(), seed)?;
    let mut history = Vec::with_capacity(config.epochs);
    let mut step_losses = Vec::new();
    let mut best: Option<(usize, EvalMetrics, ParamStore<f32>)> = None;
    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let learning_rate = trainer.rates();
        let steps = trainer.train_epoch(&splits.train, &maps)?;
        step_losses.extend(steps.iter().map(|s| s.total));
        let dev = evaluate(&trainer.model, &splits.dev, &maps, config.strip_punct, config.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: MeanLosses::of(&steps),
            dev,
            learning_rate,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} dev slot F1 {:.4} intent acc {:.4} ({:.1}s)",
            record.train_loss.total,
            dev.slot_f1,
            dev.intent_accuracy,
            record.seconds
        );
        on_epoch(&record);
        if improves(&dev, best.as_ref().map(|b| &b.1)) {
            best = Some((epoch, dev, trainer.model.params.clone()));
        }
        history.push(record);
    }
    let mut model = trainer.model;
    let (best_epoch, best_dev) = match best {
        Some((e, m, params)) => {
            model.params = params;
            (e, m)
        }
        None => (0, EvalMetrics::default()),
    };
    model.params.zero_grad();
    Ok(TrainOutcome {
        best: Checkpoint { model, train: config.clone(), labels: maps },
        best_epoch,
        best_dev,
        history,
        step_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selection_prefers_f1_then_intent_then_earlier() {
        let m = |f, a| EvalMetrics { slot_f1: f, intent_accuracy: a, ..Default::default() };
        assert!(improves(&m(0.5, 0.1), None));
        assert!(improves(&m(0.6, 0.0), Some(&m(0.5, 1.0))));
        assert!(improves(&m(0.5, 0.9), Some(&m(0.5, 0.8))));
        assert!(!improves(&m(0.5, 0.8), Some(&m(0.5, 0.8))));
        assert!(!improves(&m(0.4, 1.0), Some(&m(0.5, 0.0))));
    }
}
