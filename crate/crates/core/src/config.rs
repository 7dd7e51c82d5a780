//! Model and training hyperparameters. Every struct rejects unknown keys when
//! deserialized and fills missing keys from its `Default`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::substrate::{Activation, ParamGroup};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    /// Trainable lookup table.
    LearnedStatic,
    /// Precomputed per-example vectors read from disk, never updated.
    FrozenFile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmbeddingProviderConfig {
    pub kind: EmbeddingKind,
    pub dim: usize,
    /// Directory holding `manifest.json` and `vectors.bin` (frozen_file only).
    pub file: Option<PathBuf>,
    pub trainable: bool,
}

impl Default for EmbeddingProviderConfig {
    fn default() -> Self {
        EmbeddingProviderConfig {
            kind: EmbeddingKind::LearnedStatic,
            dim: 128,
            file: None,
            trainable: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub kernel_sizes: Vec<usize>,
    /// Filters across all kernel sizes; also the model width.
    pub total_filters: usize,
    pub encoder_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub activation: Activation,
    /// Sinusoidal positions added after the window feature sequence.
    /// `None` means on for learned embeddings and off for frozen vectors.
    pub positional_encoding: Option<bool>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            kernel_sizes: vec![1, 2, 3, 5],
            total_filters: 512,
            encoder_layers: 2,
            heads: 8,
            ffn_dim: 2048,
            activation: Activation::Relu,
            positional_encoding: None,
        }
    }
}

/// Kernel-size sets compared in the kernel ablation.
pub const KERNEL_MENU: [&[usize]; 7] = [&[1], &[2], &[3], &[1, 3], &[1, 3, 5], &[2, 3, 5], &[1, 2, 3, 5]];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Mean over non-padding positions.
    #[default]
    Mean,
    /// First position, for CLS-style vectors.
    First,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntentDecoderConfig {
    pub heads: usize,
    pub pooling: Pooling,
}

impl Default for IntentDecoderConfig {
    fn default() -> Self {
        IntentDecoderConfig {
            heads: 8,
            pooling: Pooling::Mean,
        }
    }
}

/// Cross-attention mask used by the slot decoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderAlignment {
    /// Zero-diagonal memory mask: output position i reads encoder position i only.
    #[default]
    Aligned,
    /// Unrestricted memory attention (padding still masked).
    Regular,
}

impl std::str::FromStr for DecoderAlignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aligned" => Ok(DecoderAlignment::Aligned),
            "regular" => Ok(DecoderAlignment::Regular),
            _ => Err(Error::config(format!("unknown decoder {s:?}; expected aligned or regular"))),
        }
    }
}

impl std::fmt::Display for DecoderAlignment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DecoderAlignment::Aligned => "aligned",
            DecoderAlignment::Regular => "regular",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SfDecoderConfig {
    pub decoder_layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub alignment: DecoderAlignment,
    /// Sinusoidal positions added to the tag input embeddings.
    pub positional_encoding: bool,
}

impl Default for SfDecoderConfig {
    fn default() -> Self {
        SfDecoderConfig {
            decoder_layers: 2,
            heads: 8,
            ffn_dim: 2048,
            alignment: DecoderAlignment::Aligned,
            positional_encoding: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embedding: EmbeddingProviderConfig,
    pub encoder: EncoderConfig,
    pub intent: IntentDecoderConfig,
    pub slot: SfDecoderConfig,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embedding: EmbeddingProviderConfig::default(),
            encoder: EncoderConfig::default(),
            intent: IntentDecoderConfig::default(),
            slot: SfDecoderConfig::default(),
            layer_norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn d_model(&self) -> usize {
        self.encoder.total_filters
    }

    /// A narrow configuration for tests, examples and toy corpora.
    pub fn tiny() -> Self {
        ModelConfig {
            embedding: EmbeddingProviderConfig {
                dim: 16,
                ..Default::default()
            },
            encoder: EncoderConfig {
                total_filters: 32,
                heads: 4,
                ffn_dim: 64,
                ..Default::default()
            },
            intent: IntentDecoderConfig {
                heads: 4,
                ..Default::default()
            },
            slot: SfDecoderConfig {
                heads: 4,
                ffn_dim: 64,
                ..Default::default()
            },
            layer_norm_eps: 1e-5,
        }
    }

    /// Switches to `kernel_sizes`, rounding `total_filters` down to the nearest
    /// width every kernel count and head count divides.
    pub fn set_kernel_sizes(&mut self, kernel_sizes: Vec<usize>) {
        let mut step = kernel_sizes.len().max(1);
        for h in [self.encoder.heads, self.intent.heads, self.slot.heads] {
            step = lcm(step, h.max(1));
        }
        self.encoder.kernel_sizes = kernel_sizes;
        self.encoder.total_filters = (self.encoder.total_filters / step).max(1) * step;
    }

    pub fn positional_encoding(&self) -> bool {
        self.encoder
            .positional_encoding
            .unwrap_or(self.embedding.kind == EmbeddingKind::LearnedStatic)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        let emb = &self.embedding;
        if emb.dim == 0 {
            problems.push("embedding.dim must be positive".to_string());
        }
        if emb.kind == EmbeddingKind::FrozenFile && emb.file.is_none() {
            problems.push("embedding.file is required for frozen_file".to_string());
        }
        let enc = &self.encoder;
        if enc.kernel_sizes.is_empty() {
            problems.push("encoder.kernel_sizes must not be empty".to_string());
        }
        if enc.kernel_sizes.iter().any(|&k| k == 0) {
            problems.push("encoder.kernel_sizes entries must be >= 1".to_string());
        }
        if enc.total_filters == 0
            || (!enc.kernel_sizes.is_empty() && enc.total_filters % enc.kernel_sizes.len() != 0)
        {
            problems.push(format!(
                "encoder.total_filters {} must be a positive multiple of {} kernel sizes",
                enc.total_filters,
                enc.kernel_sizes.len()
            ));
        }
        let d = enc.total_filters.max(1);
        for (name, heads) in [
            ("encoder.heads", enc.heads),
            ("intent.heads", self.intent.heads),
            ("slot.heads", self.slot.heads),
        ] {
            if heads == 0 || d % heads != 0 {
                problems.push(format!("{name} = {heads} must divide d_model = {d}"));
            }
        }
        if enc.ffn_dim == 0 || self.slot.ffn_dim == 0 {
            problems.push("ffn_dim must be positive".to_string());
        }
        if self.slot.decoder_layers == 0 {
            problems.push("slot.decoder_layers must be >= 1".to_string());
        }
        if self.layer_norm_eps <= 0.0 {
            problems.push("layer_norm_eps must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

fn lcm(a: usize, b: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 { a } else { gcd(b, a % b) }
    }
    a / gcd(a, b) * b
}

/// One value per parameter group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupValues {
    pub embedding: f64,
    pub encoder: f64,
    pub decoder: f64,
}

impl GroupValues {
    pub const fn splat(v: f64) -> Self {
        GroupValues {
            embedding: v,
            encoder: v,
            decoder: v,
        }
    }

    pub fn get(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Embedding => self.embedding,
            ParamGroup::Encoder => self.encoder,
            ParamGroup::Decoder => self.decoder,
        }
    }

    pub fn get_mut(&mut self, group: ParamGroup) -> &mut f64 {
        match group {
            ParamGroup::Embedding => &mut self.embedding,
            ParamGroup::Encoder => &mut self.encoder,
            ParamGroup::Decoder => &mut self.decoder,
        }
    }
}

/// Optimizer, schedule and protocol settings.
///
/// The per-group defaults are desk-scale choices, not published values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: GroupValues,
    /// StepLR multiplier applied every `step_size` epochs.
    pub decay: GroupValues,
    pub dropout: GroupValues,
    pub step_size: usize,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub batch_size: usize,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub intent_loss_weight: f64,
    pub slot_loss_weight: f64,
    pub strip_punct: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: GroupValues {
                embedding: 1e-4,
                encoder: 5e-4,
                decoder: 5e-4,
            },
            decay: GroupValues::splat(0.95),
            dropout: GroupValues::splat(0.1),
            step_size: 1,
            clip_norm: Some(0.5),
            batch_size: 16,
            epochs: 50,
            seeds: (1..=10).collect(),
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            intent_loss_weight: 1.0,
            slot_loss_weight: 1.0,
            strip_punct: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                problems.push(format!("clip_norm must be > 0, got {c}"));
            }
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be >= 1".to_string());
        }
        if self.step_size == 0 {
            problems.push("step_size must be >= 1".to_string());
        }
        for g in ParamGroup::ALL {
            let r = self.dropout.get(g);
            if !(0.0..1.0).contains(&r) {
                problems.push(format!("dropout.{g} must lie in [0, 1), got {r}"));
            }
            if self.learning_rate.get(g) < 0.0 {
                problems.push(format!("learning_rate.{g} must be >= 0"));
            }
        }
        if self.seeds.is_empty() {
            problems.push("seeds must not be empty".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }
}

/// Contents of a `--config` file.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config schema: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_menu_widths() {
        for ks in KERNEL_MENU {
            let mut cfg = ModelConfig::default();
            cfg.set_kernel_sizes(ks.to_vec());
            cfg.validate().unwrap();
            assert!(cfg.d_model() <= 512 && cfg.d_model() > 480, "{ks:?} -> {}", cfg.d_model());
        }
        let mut cfg = ModelConfig::default();
        cfg.set_kernel_sizes(vec![1, 3, 5]);
        assert_eq!(cfg.d_model(), 504);
    }

    #[test]
    fn defaults_validate() {
        RunConfig::default().validate().unwrap();
        ModelConfig::tiny().validate().unwrap();
        let enc = EncoderConfig::default();
        assert_eq!(enc.total_filters / enc.kernel_sizes.len(), 128);
        assert_eq!(enc.encoder_layers, 2);
        let t = TrainConfig::default();
        assert_eq!(t.batch_size, 16);
        assert_eq!(t.epochs, 50);
        assert_eq!(t.seeds.len(), 10);
        assert_eq!(t.clip_norm, Some(0.5));
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_json(r#"{"model": {"encoder": {"kernels": [1]}}}"#).unwrap_err();
        assert!(err.to_string().contains("kernels"), "{err}");
        assert!(RunConfig::from_json(r#"{"train": {"epochs": 3}}"#).is_ok());
    }

    #[test]
    fn uneven_filter_split_rejected() {
        let mut m = ModelConfig::default();
        m.encoder.kernel_sizes = vec![1, 3, 5];
        assert!(matches!(m.validate(), Err(Error::Config(_))));
        m.encoder.total_filters = 513;
        m.encoder.kernel_sizes = vec![1];
        assert!(m.validate().is_err());
    }

    #[test]
    fn frozen_file_requires_path() {
        let mut m = ModelConfig::default();
        m.embedding.kind = EmbeddingKind::FrozenFile;
        assert!(m.validate().is_err());
        assert!(!ModelConfig {
            embedding: EmbeddingProviderConfig {
                kind: EmbeddingKind::FrozenFile,
                file: Some("v".into()),
                ..Default::default()
            },
            ..Default::default()
        }
        .positional_encoding());
    }
}
