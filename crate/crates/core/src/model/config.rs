//! Model hyperparameters.

use serde::{Deserialize, Serialize};

use super::{ModelError, Result};

/// Dimensions and loss weights of the network.
///
/// Defaults are desk-scale: the head counts follow the reference setup (two
/// encoder heads, one decoder head) while the widths are scaled down from
/// D=256 / d=128 / ffn=1024 so a full ablation grid trains on one core.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// K: individual action classes.
    pub action_classes: usize,
    /// G: group activity classes.
    pub group_classes: usize,
    /// N: persons per scene.
    pub persons: usize,
    /// P: body parts per person.
    pub parts: usize,
    /// C: raw feature channels of person and scene features.
    pub feature_dim: usize,
    /// D: embedding width.
    pub embed_dim: usize,
    /// d: per-head attention width.
    pub head_dim: usize,
    /// Attention heads in the encoder-style blocks.
    pub heads_enc: usize,
    /// Attention heads in the cross-attention decoder.
    pub heads_dec: usize,
    /// Hidden width of feed-forward networks and the part-collapse MLP.
    pub ffn_dim: usize,
    /// λ: weight of the individual-action terms in the loss.
    pub lambda: f64,
    /// Multiplier on the class-class attention bias.
    pub cc_gain: f64,
    /// Multiplier on the class-position attention bias.
    pub cp_gain: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            action_classes: 6,
            group_classes: 4,
            persons: 8,
            parts: 1,
            feature_dim: 16,
            embed_dim: 64,
            head_dim: 32,
            heads_enc: 2,
            heads_dec: 1,
            ffn_dim: 128,
            lambda: 1.0,
            cc_gain: 1.0,
            cp_gain: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.K", self.action_classes),
            ("model.G", self.group_classes),
            ("model.N", self.persons),
            ("model.P", self.parts),
            ("model.feature_dim", self.feature_dim),
            ("model.D", self.embed_dim),
            ("model.d", self.head_dim),
            ("model.heads_enc", self.heads_enc),
            ("model.heads_dec", self.heads_dec),
            ("model.ffn_dim", self.ffn_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be >= 1")));
            }
        }
        if self.head_dim > self.embed_dim {
            return Err(ModelError::Config(format!(
                "model.d ({}) must not exceed model.D ({})",
                self.head_dim, self.embed_dim
            )));
        }
        if self.embed_dim % 4 != 0 {
            return Err(ModelError::Config(format!(
                "model.D ({}) must be divisible by 4 for the 2-D positional encoding",
                self.embed_dim
            )));
        }
        for (name, v) in [
            ("model.lambda", self.lambda),
            ("model.cc_gain", self.cc_gain),
            ("model.cp_gain", self.cp_gain),
        ] {
            if !v.is_finite() {
                return Err(ModelError::Config(format!("{name} must be finite")));
            }
        }
        Ok(())
    }
}
