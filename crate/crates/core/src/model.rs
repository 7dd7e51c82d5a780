//! The joint network: embeddings, shared encoder, intent decoder and slot decoder.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::data::{Batch, LabelMaps, BOS_TAG, PAD_TAG, UNK_TAG};
use crate::decoders::{intent_log_probs, teacher_forced_inputs, IntentDecoder, SlotDecoder};
use crate::embeddings::Embedder;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::layers::{dropout, Mode};
use crate::substrate::{Graph, ParamGroup, ParamStore, Scalar, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Ctran<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub embedder: Embedder,
    pub encoder: Encoder,
    pub intent: IntentDecoder,
    pub slot: SlotDecoder,
    num_intents: usize,
    num_tag_ids: usize,
}

/// Graph handles of a teacher-forced forward pass.
#[derive(Clone, Copy, Debug)]
pub struct JointForward {
    pub memory: Var,
    pub intent_logits: Var,
    pub slot_logits: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct JointLoss {
    pub intent: Var,
    pub slot: Var,
    pub total: Var,
}

/// Relative weights of the two task losses; both 1 by default.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub intent: f64,
    pub slot: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { intent: 1.0, slot: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub intent: usize,
    pub intent_log_probs: Vec<f64>,
    /// One tag id per input token.
    pub slots: Vec<usize>,
}

impl<T: Scalar> Ctran<T> {
    /// Fresh parameters drawn from `seed`; output sizes come from `maps`.
    pub fn new(config: &ModelConfig, maps: &LabelMaps, seed: u64) -> Result<Self> {
        Self::with_sizes(config, maps.vocab_size(), maps.num_intents(), maps.num_tag_ids(), seed)
    }

    pub fn with_sizes(
        config: &ModelConfig,
        vocab_size: usize,
        num_intents: usize,
        num_tag_ids: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let embedder = Embedder::new(&mut params, &mut rng, &config.embedding, vocab_size)?;
        let encoder = Encoder::new(&mut params, &mut rng, config)?;
        let intent = IntentDecoder::new(&mut params, &mut rng, config, num_intents)?;
        let slot = SlotDecoder::new(&mut params, &mut rng, config, num_tag_ids)?;
        Ok(Ctran {
            config: config.clone(),
            params,
            embedder,
            encoder,
            intent,
            slot,
            num_intents,
            num_tag_ids,
        })
    }

    pub fn num_intents(&self) -> usize {
        self.num_intents
    }

    pub fn num_tag_ids(&self) -> usize {
        self.num_tag_ids
    }

    /// Same network with parameters converted to another precision.
    pub fn cast<U: Scalar>(&self) -> Ctran<U> {
        Ctran {
            config: self.config.clone(),
            params: self.params.cast(),
            embedder: self.embedder.clone(),
            encoder: self.encoder.clone(),
            intent: self.intent,
            slot: self.slot.clone(),
            num_intents: self.num_intents,
            num_tag_ids: self.num_tag_ids,
        }
    }

    /// Shared encoder output `[B x L x d_model]`.
    pub fn encode(&self, g: &mut Graph<T>, batch: &Batch, mode: &mut Mode<'_>) -> Result<Var> {
        let x = self.embedder.embed(g, &self.params, batch)?;
        let x = dropout(g, x, ParamGroup::Embedding, mode)?;
        self.encoder.forward(g, &self.params, x, &batch.lengths, mode)
    }

    pub fn intent_logits(&self, g: &mut Graph<T>, memory: Var, batch: &Batch, mode: &mut Mode<'_>) -> Result<Var> {
        self.intent.forward(g, &self.params, memory, &batch.lengths, mode)
    }

    /// Slot logits `[B x L x num_tag_ids]` with gold tags fed as decoder inputs.
    pub fn teacher_forced_slots(&self, g: &mut Graph<T>, memory: Var, batch: &Batch, mode: &mut Mode<'_>) -> Result<Var> {
        let inputs = teacher_forced_inputs(&batch.slot_ids, &batch.lengths, batch.max_len);
        self.slot.forward(g, &self.params, &inputs, memory, &batch.lengths, mode)
    }

    pub fn forward(&self, g: &mut Graph<T>, batch: &Batch, mode: &mut Mode<'_>) -> Result<JointForward> {
        let memory = self.encode(g, batch, mode)?;
        let intent_logits = self.intent_logits(g, memory, batch, mode)?;
        let slot_logits = self.teacher_forced_slots(g, memory, batch, mode)?;
        Ok(JointForward {
            memory,
            intent_logits,
            slot_logits,
        })
    }

    /// Intent cross-entropy plus slot cross-entropy (padding ignored).
    pub fn joint_loss(
        &self,
        g: &mut Graph<T>,
        batch: &Batch,
        mode: &mut Mode<'_>,
        weights: LossWeights,
    ) -> Result<JointLoss> {
        let fwd = self.forward(g, batch, mode)?;
        let intent = g.cross_entropy(fwd.intent_logits, &batch.intent_ids, self.num_intents)?;
        let slot = g.cross_entropy(fwd.slot_logits, &batch.slot_ids, PAD_TAG)?;
        let wi = if weights.intent == 1.0 { intent } else { g.scale(intent, T::of(weights.intent)) };
        let ws = if weights.slot == 1.0 { slot } else { g.scale(slot, T::of(weights.slot)) };
        let total = g.add(wi, ws)?;
        Ok(JointLoss { intent, slot, total })
    }

    /// Intent argmax and greedy left-to-right slot decoding, one tag per token.
    pub fn predict(&self, batch: &Batch) -> Result<Vec<Prediction>> {
        let mut g = Graph::new();
        let memory = self.encode(&mut g, batch, &mut Mode::Eval)?;
        let logits = self.intent_logits(&mut g, memory, batch, &mut Mode::Eval)?;
        let log_probs = intent_log_probs(g.value(logits));
        let memory = g.value(memory).clone();
        let slots = self.greedy_slots(&memory, batch)?;
        Ok(slots
            .into_iter()
            .enumerate()
            .map(|(b, slots)| {
                let row: Vec<f64> = log_probs.row(b).iter().map(|v| v.as_f64()).collect();
                Prediction {
                    intent: argmax(&row, 0),
                    intent_log_probs: row,
                    slots,
                }
            })
            .collect())
    }

    /// Greedy decoding against a precomputed encoder output. Step `t` feeds
    /// `BOS` followed by the tags already emitted and keeps the argmax at `t`.
    pub fn greedy_slots(&self, memory: &Tensor<T>, batch: &Batch) -> Result<Vec<Vec<usize>>> {
        let (b, l) = (batch.batch_size(), batch.max_len);
        if memory.shape()[..2] != [b, l] {
            return Err(Error::shape(format!(
                "memory {:?} does not match batch [{b}, {l}]",
                memory.shape()
            )));
        }
        let mut emitted: Vec<Vec<usize>> = batch.lengths.iter().map(|&n| Vec::with_capacity(n)).collect();
        for t in 0..l {
            let steps = t + 1;
            let mut inputs = vec![PAD_TAG; b * steps];
            for (r, tags) in emitted.iter().enumerate() {
                for s in 0..steps.min(batch.lengths[r]) {
                    inputs[r * steps + s] = if s == 0 { BOS_TAG } else { tags[s - 1] };
                }
            }
            let mut g = Graph::new();
            let mem = g.constant(memory.clone());
            let logits = self
                .slot
                .forward(&mut g, &self.params, &inputs, mem, &batch.lengths, &mut Mode::Eval)?;
            let lv = g.value(logits);
            for (r, tags) in emitted.iter_mut().enumerate() {
                if t < batch.lengths[r] {
                    let row: Vec<f64> = lv.row(r * steps + t).iter().map(|v| v.as_f64()).collect();
                    tags.push(argmax(&row, UNK_TAG));
                }
            }
        }
        Ok(emitted)
    }
}

/// Index of the largest entry at or after `from`; ties go to the lowest index.
fn argmax(row: &[f64], from: usize) -> usize {
    let mut best = from;
    for (i, &v) in row.iter().enumerate().skip(from) {
        if v > row[best] {
            best = i;
        }
    }
    best
}
