//! Architecture description and head addressing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Final/block normalization flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    /// LayerNorm with learned scale and bias (GPT-2 family).
    PreLayerNorm,
    /// RMSNorm, scale only, no re-centering (Llama family).
    RmsNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PositionKind {
    /// Learned absolute position embeddings added at the input.
    LearnedAbsolute,
    /// Rotary embeddings applied to queries and keys.
    Rotary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MlpKind {
    /// Two-layer MLP with tanh-approximated GELU (GPT-2 family).
    Gelu2Layer,
    /// Gated SiLU MLP (Llama family).
    GatedSilu,
}

/// Frequency rescaling applied to rotary embeddings (long-context variants
/// of the rotary family).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RopeScaling {
    pub factor: f32,
    pub low_freq_factor: f32,
    pub high_freq_factor: f32,
    pub original_max_position_embeddings: usize,
}

impl RopeScaling {
    /// Rescale one inverse frequency: low-frequency components divide by
    /// `factor`, high-frequency ones pass through, the band between
    /// interpolates smoothly.
    pub fn apply(&self, inv_freq: f32) -> f32 {
        let wavelen = 2.0 * std::f32::consts::PI / inv_freq;
        let low_freq_wavelen = self.original_max_position_embeddings as f32 / self.low_freq_factor;
        let high_freq_wavelen =
            self.original_max_position_embeddings as f32 / self.high_freq_factor;
        if wavelen > low_freq_wavelen {
            inv_freq / self.factor
        } else if wavelen < high_freq_wavelen {
            inv_freq
        } else {
            let smooth = (self.original_max_position_embeddings as f32 / wavelen
                - self.low_freq_factor)
                / (self.high_freq_factor - self.low_freq_factor);
            (1.0 - smooth) * inv_freq / self.factor + smooth * inv_freq
        }
    }
}

/// Static shape and flavor information for a loaded model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    /// Key/value head count; equals `n_heads` without grouped attention.
    pub n_kv_heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub vocab_size: usize,
    pub max_context: usize,
    pub norm_kind: NormKind,
    pub position_kind: PositionKind,
    pub mlp_kind: MlpKind,
    #[serde(default = "default_rope_theta")]
    pub rope_theta: f32,
    #[serde(default = "default_norm_eps")]
    pub norm_eps: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rope_scaling: Option<RopeScaling>,
}

fn default_rope_theta() -> f32 {
    10_000.0
}

fn default_norm_eps() -> f32 {
    1e-5
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("d_model", self.d_model),
            ("d_head", self.d_head),
            ("vocab_size", self.vocab_size),
            ("max_context", self.max_context),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be > 0")));
            }
        }
        if self.n_heads % self.n_kv_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "n_heads ({}) must be divisible by n_kv_heads ({})",
                self.n_heads, self.n_kv_heads
            )));
        }
        if self.position_kind == PositionKind::Rotary && self.d_head % 2 != 0 {
            return Err(Error::InvalidConfig(
                "rotary embeddings require an even d_head".into(),
            ));
        }
        Ok(())
    }

    /// Attention projection width (`n_heads * d_head`).
    pub fn attn_width(&self) -> usize {
        self.n_heads * self.d_head
    }

    /// Query heads per key/value head.
    pub fn group_size(&self) -> usize {
        self.n_heads / self.n_kv_heads
    }

    pub fn n_total_heads(&self) -> usize {
        self.n_layers * self.n_heads
    }
}

/// Address of one attention head: `(layer, head)`, both 0-based.
/// Serializes as the compact `L<layer>H<head>` notation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HeadId {
    pub layer: usize,
    pub head: usize,
}

impl HeadId {
    pub fn new(layer: usize, head: usize) -> Self {
        Self { layer, head }
    }

    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        if self.layer >= config.n_layers || self.head >= config.n_heads {
            return Err(Error::HeadOutOfRange {
                head: *self,
                n_layers: config.n_layers,
                n_heads: config.n_heads,
            });
        }
        Ok(())
    }
}

impl std::fmt::Display for HeadId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "L{}H{}", self.layer, self.head)
    }
}

impl std::str::FromStr for HeadId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = || -> Option<HeadId> {
            let rest = s.strip_prefix('L')?;
            let (l, h) = rest.split_once('H')?;
            Some(HeadId::new(l.parse().ok()?, h.parse().ok()?))
        };
        parse().ok_or_else(|| {
            Error::InvalidConfig(format!("'{s}' is not of the form L<layer>H<head>"))
        })
    }
}

impl Serialize for HeadId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HeadId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 4,
            n_kv_heads: 4,
            d_model: 32,
            d_head: 8,
            vocab_size: 300,
            max_context: 64,
            norm_kind: NormKind::PreLayerNorm,
            position_kind: PositionKind::LearnedAbsolute,
            mlp_kind: MlpKind::Gelu2Layer,
            rope_theta: 10_000.0,
            norm_eps: 1e-5,
            rope_scaling: None,
        }
    }

    #[test]
    fn validate_accepts_base() {
        base().validate().unwrap();
    }

    #[test]
    fn validate_rejects_zero_counts_and_bad_grouping() {
        let mut c = base();
        c.n_layers = 0;
        assert!(c.validate().is_err());

        let mut c = base();
        c.n_kv_heads = 3;
        assert!(c.validate().is_err());
    }

    #[test]
    fn head_id_bounds() {
        let c = base();
        assert!(HeadId::new(1, 3).check(&c).is_ok());
        assert!(HeadId::new(2, 0).check(&c).is_err());
        assert!(HeadId::new(0, 4).check(&c).is_err());
    }

    #[test]
    fn head_id_string_round_trip() {
        let head = HeadId::new(16, 25);
        let json = serde_json::to_string(&head).unwrap();
        assert_eq!(json, "\"L16H25\"");
        let back: HeadId = serde_json::from_str(&json).unwrap();
        assert_eq!(back, head);
        assert!("H16L25".parse::<HeadId>().is_err());
    }

    #[test]
    fn rope_scaling_bands() {
        let scaling = RopeScaling {
            factor: 8.0,
            low_freq_factor: 1.0,
            high_freq_factor: 4.0,
            original_max_position_embeddings: 8192,
        };
        let tau = 2.0 * std::f32::consts::PI;
        // short wavelength (high frequency): untouched
        let hi = tau / 100.0;
        assert_eq!(scaling.apply(hi), hi);
        // long wavelength (low frequency): divided by the factor
        let lo = tau / 10_000.0;
        assert!((scaling.apply(lo) - lo / 8.0).abs() < 1e-12);
        // mid band: smooth interpolation; at wavelength 4096 the blend
        // weight is 1/3, giving 5/12 of the unscaled frequency
        let mid = tau / 4096.0;
        let expected = mid * (2.0 / 3.0 / 8.0 + 1.0 / 3.0);
        assert!((scaling.apply(mid) - expected).abs() < 1e-9);
    }
}
