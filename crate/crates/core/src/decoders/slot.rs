use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::config::{DecoderAlignment, ModelConfig};
use crate::data::{BOS_TAG, PAD_TAG};
use crate::decoders::MaskMatrix;
use crate::error::{Error, Result};
use crate::layers::{self, dropout, FeedForward, LayerNorm, Linear, Mode, MultiHeadAttention};
use crate::substrate::{Graph, ParamGroup, ParamId, ParamStore, Scalar, Tensor, Var};

const GROUP: ParamGroup = ParamGroup::Decoder;

#[derive(Clone, Copy, Debug)]
pub struct SfDecoderLayer {
    pub self_attention: MultiHeadAttention,
    pub self_norm: LayerNorm,
    pub cross_attention: MultiHeadAttention,
    pub cross_norm: LayerNorm,
    pub ffn: FeedForward,
    pub ffn_norm: LayerNorm,
}

/// Intermediate values of one decoder layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerTrace {
    /// `C = D + LN(MultiHead(D, D, D, causal))`
    pub causal: Var,
    /// `F = C + LN(MultiHead(C, e, e, memory mask))`
    pub cross: Var,
    /// `O = LN(FFN(F)) + F`
    pub output: Var,
    /// Cross-attention weights `[B x H x T x S]`.
    pub cross_weights: Var,
}

impl SfDecoderLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        d: Var,
        memory: Var,
        self_mask: &Rc<Tensor<T>>,
        cross_mask: &Rc<Tensor<T>>,
        mode: &mut Mode<'_>,
    ) -> Result<LayerTrace> {
        let a = self.self_attention.forward(g, p, d, d, self_mask)?.output;
        let a = self.self_norm.forward(g, p, a)?;
        let a = dropout(g, a, GROUP, mode)?;
        let causal = g.add(d, a)?;

        let cross_out = self.cross_attention.forward(g, p, causal, memory, cross_mask)?;
        let x = self.cross_norm.forward(g, p, cross_out.output)?;
        let x = dropout(g, x, GROUP, mode)?;
        let cross = g.add(causal, x)?;

        let f = self.ffn.forward(g, p, cross, GROUP, mode)?;
        let f = self.ffn_norm.forward(g, p, f)?;
        let f = dropout(g, f, GROUP, mode)?;
        let output = g.add(f, cross)?;
        Ok(LayerTrace {
            causal,
            cross,
            output,
            cross_weights: cross_out.weights,
        })
    }
}

/// Transformer decoder over tag embeddings whose cross-attention reads the
/// encoder output, followed by a linear layer over tag ids.
#[derive(Clone, Debug)]
pub struct SlotDecoder {
    pub tag_embedding: ParamId,
    pub layers: Vec<SfDecoderLayer>,
    pub classifier: Linear,
    pub alignment: DecoderAlignment,
    pub positional_encoding: bool,
}

/// Decoder inputs for teacher forcing: `BOS` at position 0, then the gold tag
/// of the previous position; padding positions get `PAD_TAG`.
pub fn teacher_forced_inputs(slot_ids: &[usize], lengths: &[usize], max_len: usize) -> Vec<usize> {
    let mut out = vec![PAD_TAG; lengths.len() * max_len];
    for (b, &n) in lengths.iter().enumerate() {
        for t in 0..n {
            out[b * max_len + t] = if t == 0 { BOS_TAG } else { slot_ids[b * max_len + t - 1] };
        }
    }
    out
}

impl SlotDecoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        cfg: &ModelConfig,
        num_tag_ids: usize,
    ) -> Result<Self> {
        let d = cfg.d_model();
        let s = &cfg.slot;
        let mut table = layers::uniform::<T>(rng, &[num_tag_ids, d], 0.1);
        table.data_mut()[PAD_TAG * d..(PAD_TAG + 1) * d].fill(T::zero());
        let tag_embedding = store.insert("slot.tag_embedding", table, GROUP)?;
        let mut layer_list = Vec::with_capacity(s.decoder_layers);
        for i in 0..s.decoder_layers {
            let name = format!("slot.{i}");
            let eps = cfg.layer_norm_eps;
            layer_list.push(SfDecoderLayer {
                self_attention: MultiHeadAttention::new(store, rng, &format!("{name}.self_attention"), d, s.heads, GROUP)?,
                self_norm: LayerNorm::new(store, &format!("{name}.self_norm"), d, eps, GROUP)?,
                cross_attention: MultiHeadAttention::new(store, rng, &format!("{name}.cross_attention"), d, s.heads, GROUP)?,
                cross_norm: LayerNorm::new(store, &format!("{name}.cross_norm"), d, eps, GROUP)?,
                ffn: FeedForward::new(store, rng, &format!("{name}.ffn"), d, s.ffn_dim, GROUP)?,
                ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), d, eps, GROUP)?,
            });
        }
        Ok(SlotDecoder {
            tag_embedding,
            layers: layer_list,
            classifier: Linear::new(store, rng, "slot.classifier", d, num_tag_ids, GROUP)?,
            alignment: s.alignment,
            positional_encoding: s.positional_encoding,
        })
    }

    /// Causal self-attention mask and memory mask for `target_len` decoder
    /// positions over `source_len` encoder positions.
    pub fn masks<T: Scalar>(
        &self,
        target_len: usize,
        source_len: usize,
        lengths: &[usize],
    ) -> Result<(Rc<Tensor<T>>, Rc<Tensor<T>>)> {
        let self_lengths: Vec<usize> = lengths.iter().map(|&n| n.min(target_len)).collect();
        let causal = MaskMatrix::causal(target_len, target_len)?.with_padding(&self_lengths)?;
        let memory = match self.alignment {
            DecoderAlignment::Aligned => MaskMatrix::zero_diagonal(target_len, source_len)?,
            DecoderAlignment::Regular => MaskMatrix::open(target_len, source_len)?,
        };
        Ok((causal, memory.with_padding(lengths)?))
    }

    /// Embedded decoder input `[B x T x d]` for tag ids `[B x T]`.
    pub fn embed_tags<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        tag_inputs: &[usize],
        batch: usize,
        target_len: usize,
    ) -> Result<Var> {
        let table = g.param(p, self.tag_embedding);
        let x = g.embedding(table, tag_inputs, &[batch, target_len], Some(PAD_TAG))?;
        if self.positional_encoding {
            layers::add_positions(g, x)
        } else {
            Ok(x)
        }
    }

    /// Tag logits `[B x T x num_tag_ids]` for decoder inputs `[B x T]`, `T <= L`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        tag_inputs: &[usize],
        memory: Var,
        lengths: &[usize],
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let (batch, source_len) = (g.shape(memory)[0], g.shape(memory)[1]);
        if tag_inputs.len() % batch != 0 {
            return Err(Error::shape("tag inputs do not divide into the batch"));
        }
        let target_len = tag_inputs.len() / batch;
        if target_len > source_len {
            return Err(Error::shape(format!(
                "decoder length {target_len} exceeds encoder length {source_len}"
            )));
        }
        let (self_mask, cross_mask) = self.masks(target_len, source_len, lengths)?;
        let mut x = self.embed_tags(g, p, tag_inputs, batch, target_len)?;
        x = dropout(g, x, GROUP, mode)?;
        for layer in &self.layers {
            x = layer.forward(g, p, x, memory, &self_mask, &cross_mask, mode)?.output;
        }
        self.classifier.forward(g, p, x)
    }
}

impl SlotDecoder {
    /// Runs layer `index` on a full-length decoder input: `D` is `[B x L x d]`
    /// and must match the memory length.
    pub fn layer_forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        index: usize,
        d: Var,
        memory: Var,
        lengths: &[usize],
        mode: &mut Mode<'_>,
    ) -> Result<LayerTrace> {
        let (target_len, source_len) = (g.shape(d)[1], g.shape(memory)[1]);
        if target_len != source_len {
            return Err(Error::shape(format!(
                "decoder input length {target_len} differs from memory length {source_len}"
            )));
        }
        let layer = self
            .layers
            .get(index)
            .ok_or_else(|| Error::config(format!("no decoder layer {index}")))?;
        let (self_mask, cross_mask) = self.masks(target_len, source_len, lengths)?;
        layer.forward(g, p, d, memory, &self_mask, &cross_mask, mode)
    }
}
