//! Intent decoder and the aligned Transformer slot decoder.

mod intent;
mod masks;
mod slot;

pub use intent::{intent_log_probs, IntentDecoder};
pub use masks::{build_causal_mask, build_zero_diag_mask, MaskMatrix};
pub use slot::{teacher_forced_inputs, LayerTrace, SfDecoderLayer, SlotDecoder};
