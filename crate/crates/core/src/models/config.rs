use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nonlinearity applied after a feature projection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub(crate) fn code(self) -> u32 {
        match self {
            Activation::None => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    pub(crate) fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Activation::None),
            1 => Ok(Activation::Relu),
            2 => Ok(Activation::Tanh),
            other => Err(Error::Format(format!("unknown activation code {other}"))),
        }
    }
}

/// Transformer teacher.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InspirerConfig {
    pub layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub vocab_size: usize,
    /// Longest token sequence, classification token included.
    pub max_len: usize,
    pub classes: usize,
    /// Width of the two-layer classifier head.
    pub mlp_hidden: usize,
    pub projection_dim: usize,
    pub dropout: f64,
}

impl Default for InspirerConfig {
    fn default() -> Self {
        InspirerConfig {
            layers: 4,
            hidden: 64,
            heads: 4,
            ff_dim: 128,
            vocab_size: 1000,
            max_len: 64,
            classes: 2,
            mlp_hidden: 64,
            projection_dim: 32,
            dropout: 0.1,
        }
    }
}

impl InspirerConfig {
    /// BERT-base dimensions at sequence length 256.
    pub fn full_scale() -> Self {
        InspirerConfig {
            layers: 12,
            hidden: 768,
            heads: 12,
            ff_dim: 3072,
            vocab_size: 30522,
            max_len: 256,
            classes: 2,
            mlp_hidden: 768,
            projection_dim: 256,
            dropout: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::config("inspirer needs at least one layer"));
        }
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "hidden size {} not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.max_len == 0 {
            return Err(Error::config("max_len must be at least 1"));
        }
        if self.classes < 2 {
            return Err(Error::config("need at least two classes"));
        }
        if self.vocab_size < 4 || self.ff_dim == 0 || self.mlp_hidden == 0 || self.projection_dim == 0 {
            return Err(Error::config("inspirer dimensions must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// TextCNN student.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetConfig {
    pub filter_sizes: Vec<usize>,
    pub channels: usize,
    pub emb_dim: usize,
    pub vocab_size: usize,
    pub classes: usize,
    pub projection_dim: usize,
    pub projection_activation: Activation,
    pub dropout: f64,
}

impl Default for TargetConfig {
    fn default() -> Self {
        TargetConfig {
            filter_sizes: vec![2, 3, 5],
            channels: 32,
            emb_dim: 32,
            vocab_size: 1000,
            classes: 2,
            projection_dim: 32,
            projection_activation: Activation::Relu,
            dropout: 0.5,
        }
    }
}

impl TargetConfig {
    /// Six filter sizes, 200 channels, 300-d embeddings.
    pub fn full_scale() -> Self {
        TargetConfig {
            filter_sizes: vec![2, 3, 5, 7, 9, 11],
            channels: 200,
            emb_dim: 300,
            vocab_size: 30522,
            classes: 2,
            projection_dim: 256,
            projection_activation: Activation::Relu,
            dropout: 0.5,
        }
    }

    pub fn max_filter(&self) -> usize {
        self.filter_sizes.iter().copied().max().unwrap_or(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.filter_sizes.is_empty() {
            return Err(Error::config("at least one filter size required"));
        }
        if self.filter_sizes[0] == 0 || self.filter_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!(
                "filter sizes must be positive and strictly increasing, got {:?}",
                self.filter_sizes
            )));
        }
        if self.channels == 0 || self.emb_dim == 0 || self.projection_dim == 0 {
            return Err(Error::config("target dimensions must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::config("need at least two classes"));
        }
        if self.vocab_size < 4 {
            return Err(Error::config("vocabulary too small"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}
