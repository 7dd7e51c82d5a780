use rand_chacha::ChaCha8Rng;

use crate::config::{ModelConfig, Pooling};
use crate::decoders::MaskMatrix;
use crate::error::Result;
use crate::layers::{dropout, LayerNorm, Linear, Mode, MultiHeadAttention};
use crate::substrate::{Graph, ParamGroup, ParamStore, Scalar, Tensor, Var};

const GROUP: ParamGroup = ParamGroup::Decoder;

/// Self-attention with residual and layer norm, pooled and classified:
/// `S = e + LN(MultiHead(e))`, logits `= W * pool(S) + b`.
#[derive(Clone, Copy, Debug)]
pub struct IntentDecoder {
    pub attention: MultiHeadAttention,
    pub norm: LayerNorm,
    pub classifier: Linear,
    pub pooling: Pooling,
}

impl IntentDecoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        cfg: &ModelConfig,
        num_intents: usize,
    ) -> Result<Self> {
        let d = cfg.d_model();
        Ok(IntentDecoder {
            attention: MultiHeadAttention::new(store, rng, "intent.attention", d, cfg.intent.heads, GROUP)?,
            norm: LayerNorm::new(store, "intent.norm", d, cfg.layer_norm_eps, GROUP)?,
            classifier: Linear::new(store, rng, "intent.classifier", d, num_intents, GROUP)?,
            pooling: cfg.intent.pooling,
        })
    }

    /// Intent logits `[B x num_intents]` from encoder output `[B x L x d]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        e: Var,
        lengths: &[usize],
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let l = g.shape(e)[1];
        let mask = MaskMatrix::open(l, l)?.with_padding(lengths)?;
        let a = self.attention.forward(g, p, e, e, &mask)?.output;
        let a = self.norm.forward(g, p, a)?;
        let a = dropout(g, a, GROUP, mode)?;
        let s = g.add(e, a)?;
        let pooled = match self.pooling {
            Pooling::Mean => g.mean_pool(s, lengths)?,
            Pooling::First => g.select_first(s)?,
        };
        self.classifier.forward(g, p, pooled)
    }
}

/// Row-wise log-softmax of intent logits.
pub fn intent_log_probs<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let probs = crate::substrate::ops::softmax(logits);
    let mut out = probs;
    out.data_mut().iter_mut().for_each(|v| *v = v.ln());
    out
}
