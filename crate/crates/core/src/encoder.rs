//! Shared encoder: convolution bank, window feature sequence, Transformer encoder stack.

use rand_chacha::ChaCha8Rng;

use crate::config::{EncoderConfig, ModelConfig};
use crate::decoders::MaskMatrix;
use crate::error::{Error, Result};
use crate::layers::{self, dropout, FeedForward, LayerNorm, Mode, MultiHeadAttention};
use crate::substrate::{Activation, Graph, ParamGroup, ParamId, ParamStore, Tensor, Var};
use crate::substrate::Scalar;

const GROUP: ParamGroup = ParamGroup::Encoder;

#[derive(Clone, Copy, Debug)]
pub struct ConvFilter {
    pub kernel: usize,
    pub filter: ParamId,
    pub bias: ParamId,
}

/// One convolution per kernel size, each with `total_filters / kernels` output
/// channels, concatenated per token into the window feature sequence.
#[derive(Clone, Debug)]
pub struct ConvBank {
    pub convs: Vec<ConvFilter>,
    pub activation: Activation,
}

impl ConvBank {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        d_in: usize,
        cfg: &EncoderConfig,
    ) -> Result<Self> {
        if cfg.kernel_sizes.is_empty() || cfg.total_filters % cfg.kernel_sizes.len() != 0 {
            return Err(Error::config("total_filters must split evenly across kernel sizes"));
        }
        let per = cfg.total_filters / cfg.kernel_sizes.len();
        let mut convs = Vec::with_capacity(cfg.kernel_sizes.len());
        for (j, &k) in cfg.kernel_sizes.iter().enumerate() {
            if k == 0 {
                return Err(Error::config("kernel size must be >= 1"));
            }
            let limit = 1.0 / ((k * d_in) as f64).sqrt();
            let filter = store.insert(
                &format!("conv.{j}.k{k}.filter"),
                layers::uniform(rng, &[k, d_in, per], limit),
                GROUP,
            )?;
            let bias = store.insert(
                &format!("conv.{j}.k{k}.bias"),
                layers::uniform(rng, &[per], limit),
                GROUP,
            )?;
            convs.push(ConvFilter { kernel: k, filter, bias });
        }
        Ok(ConvBank {
            convs,
            activation: cfg.activation,
        })
    }

    /// `[B x L x d_in] -> [B x L x total_filters]`; row `i` of the output
    /// concatenates every filter's response at token `i`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let mut maps = Vec::with_capacity(self.convs.len());
        for c in &self.convs {
            let f = g.param(p, c.filter);
            let b = g.param(p, c.bias);
            let y = g.conv1d(x, f, b)?;
            maps.push(g.activation(y, self.activation));
        }
        if maps.len() == 1 {
            return Ok(maps[0]);
        }
        g.concat_last(&maps)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub attention_norm: LayerNorm,
    pub ffn: FeedForward,
    pub ffn_norm: LayerNorm,
}

impl EncoderLayer {
    /// `h = x + LN(MultiHead(x))`, then `h + LN(FFN(h))`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        x: Var,
        mask: &std::rc::Rc<Tensor<T>>,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let a = self.attention.forward(g, p, x, x, mask)?.output;
        let a = self.attention_norm.forward(g, p, a)?;
        let a = dropout(g, a, GROUP, mode)?;
        let h = g.add(x, a)?;
        let f = self.ffn.forward(g, p, h, GROUP, mode)?;
        let f = self.ffn_norm.forward(g, p, f)?;
        let f = dropout(g, f, GROUP, mode)?;
        g.add(h, f)
    }
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub bank: ConvBank,
    pub layers: Vec<EncoderLayer>,
    pub positional_encoding: bool,
    pub d_model: usize,
}

impl Encoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Result<Self> {
        let enc = &cfg.encoder;
        let d = enc.total_filters;
        if enc.heads == 0 || d % enc.heads != 0 {
            return Err(Error::config(format!("d_model {d} not divisible by {} heads", enc.heads)));
        }
        let bank = ConvBank::new(store, rng, cfg.embedding.dim, enc)?;
        let mut layers = Vec::with_capacity(enc.encoder_layers);
        for i in 0..enc.encoder_layers {
            let name = format!("encoder.{i}");
            layers.push(EncoderLayer {
                attention: MultiHeadAttention::new(store, rng, &format!("{name}.attention"), d, enc.heads, GROUP)?,
                attention_norm: LayerNorm::new(store, &format!("{name}.attention_norm"), d, cfg.layer_norm_eps, GROUP)?,
                ffn: FeedForward::new(store, rng, &format!("{name}.ffn"), d, enc.ffn_dim, GROUP)?,
                ffn_norm: LayerNorm::new(store, &format!("{name}.ffn_norm"), d, cfg.layer_norm_eps, GROUP)?,
            });
        }
        Ok(Encoder {
            bank,
            layers,
            positional_encoding: cfg.positional_encoding(),
            d_model: d,
        })
    }

    /// Window feature sequence of the embeddings; padding rows are zeroed
    /// first so they act as convolution zero padding.
    pub fn conv_bank_wfs<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        x: Var,
        lengths: &[usize],
    ) -> Result<Var> {
        let shape = g.shape(x).to_vec();
        let x = g.mul_const(x, layers::length_row_mask(lengths, shape[1], shape[2]))?;
        self.bank.forward(g, p, x)
    }

    /// Optional positions, then every encoder layer under the key-padding mask.
    pub fn encoder_stack<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        r: Var,
        lengths: &[usize],
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let shape = g.shape(r).to_vec();
        if shape.len() != 3 || shape[2] != self.d_model {
            return Err(Error::shape(format!(
                "encoder stack expects [B x L x {}], got {shape:?}",
                self.d_model
            )));
        }
        if self.layers.is_empty() {
            return Ok(r);
        }
        let mut x = if self.positional_encoding { layers::add_positions(g, r)? } else { r };
        let mask = MaskMatrix::open(shape[1], shape[1])?.with_padding(lengths)?;
        for layer in &self.layers {
            x = layer.forward(g, p, x, &mask, mode)?;
        }
        Ok(x)
    }

    /// Embeddings `[B x L x d_emb]` to the shared representation `[B x L x d_model]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        x: Var,
        lengths: &[usize],
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let r = self.conv_bank_wfs(g, p, x, lengths)?;
        let r = dropout(g, r, GROUP, mode)?;
        self.encoder_stack(g, p, r, lengths, mode)
    }
}
