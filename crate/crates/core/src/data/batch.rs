use log::warn;

use crate::data::labels::{LabelMaps, PAD_TAG, PAD_TOKEN};
use crate::data::Example;
use crate::error::{Error, Result};
use crate::substrate::{Scalar, Tensor};

/// Padded numeric view of a group of examples; flat arrays are row-major `[B x L_max]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub token_ids: Vec<usize>,
    pub slot_ids: Vec<usize>,
    pub intent_ids: Vec<usize>,
    pub lengths: Vec<usize>,
    /// Example ids, used to look up precomputed embeddings.
    pub ids: Vec<String>,
    pub max_len: usize,
}

impl Batch {
    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    /// `[B x L_max]` mask holding `0` at real positions and `-inf` at padding.
    pub fn pad_mask<T: Scalar>(&self) -> Tensor<T> {
        let l = self.max_len;
        Tensor::from_fn(&[self.batch_size(), l], |i| {
            if i % l < self.lengths[i / l] {
                T::zero()
            } else {
                T::neg_infinity()
            }
        })
    }

    /// Slot ids of row `b` without padding.
    pub fn row_slots(&self, b: usize) -> &[usize] {
        &self.slot_ids[b * self.max_len..b * self.max_len + self.lengths[b]]
    }

    pub fn row_tokens(&self, b: usize) -> &[usize] {
        &self.token_ids[b * self.max_len..b * self.max_len + self.lengths[b]]
    }
}

/// True for tokens made only of ASCII punctuation.
pub fn is_punctuation(token: &str) -> bool {
    token.chars().all(|c| c.is_ascii_punctuation())
}

/// Drops tokens made only of ASCII punctuation that are tagged `O`. A
/// punctuation token inside a gold span is kept and a warning is logged.
pub fn strip_punctuation(example: &Example) -> Example {
    let mut out = Example {
        id: example.id.clone(),
        tokens: Vec::with_capacity(example.len()),
        slots: Vec::with_capacity(example.len()),
        intent: example.intent.clone(),
    };
    for (tok, tag) in example.tokens.iter().zip(&example.slots) {
        if is_punctuation(tok) {
            if tag == "O" {
                continue;
            }
            warn!(
                "keeping punctuation token {tok:?} tagged {tag:?} in example {}",
                example.id.as_deref().unwrap_or("?")
            );
        }
        out.tokens.push(tok.clone());
        out.slots.push(tag.clone());
    }
    if out.tokens.is_empty() {
        warn!(
            "example {} is punctuation only; left unstripped",
            example.id.as_deref().unwrap_or("?")
        );
        return example.clone();
    }
    out
}

/// Maps examples to ids and pads them to the longest row.
///
/// Unknown tokens map to `UNK_TOKEN`, unseen tags to `UNK_TAG` and unseen
/// intents to the reserved unknown-intent id.
pub fn encode_batch(examples: &[Example], maps: &LabelMaps, strip_punct: bool) -> Result<Batch> {
    if examples.is_empty() {
        return Err(Error::EmptyBatch("encode_batch needs at least one example".into()));
    }
    let stripped: Vec<Example>;
    let rows: &[Example] = if strip_punct {
        stripped = examples.iter().map(strip_punctuation).collect();
        &stripped
    } else {
        examples
    };
    for (i, ex) in rows.iter().enumerate() {
        ex.validate()
            .map_err(|m| Error::shape(format!("example {i}: {m}")))?;
    }
    let max_len = rows.iter().map(Example::len).max().unwrap_or(1);
    let b = rows.len();
    let mut batch = Batch {
        token_ids: vec![PAD_TOKEN; b * max_len],
        slot_ids: vec![PAD_TAG; b * max_len],
        intent_ids: Vec::with_capacity(b),
        lengths: Vec::with_capacity(b),
        ids: Vec::with_capacity(b),
        max_len,
    };
    for (r, ex) in rows.iter().enumerate() {
        for (j, (tok, tag)) in ex.tokens.iter().zip(&ex.slots).enumerate() {
            batch.token_ids[r * max_len + j] = maps.token_id(tok);
            batch.slot_ids[r * max_len + j] = maps.slot_id(tag);
        }
        batch.intent_ids.push(maps.intent_id(&ex.intent));
        batch.lengths.push(ex.len());
        batch.ids.push(ex.id.clone().unwrap_or_else(|| r.to_string()));
    }
    Ok(batch)
}
