use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::AlignmentSpec;
use crate::augment::AugmentPolicy;
use crate::data::SyntheticSpec;
use crate::error::{Error, Result};
use crate::losses::{Components, TsaKind};
use crate::models::{InspirerConfig, TargetConfig};

/// Environment variable that overrides the run seed.
pub const SEED_ENV: &str = "FLITEXT_SEED";

/// Where examples come from: a synthetic corpus, or JSONL files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub synthetic: Option<SyntheticSpec>,
    pub train: Option<PathBuf>,
    pub unlabeled: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub classes: Option<usize>,
    /// Pretrained word vectors for the target embedding table.
    pub embeddings: Option<PathBuf>,
    /// Words seen fewer times in the training texts map to unknown.
    pub min_count: usize,
    pub max_vocab: Option<usize>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            synthetic: Some(SyntheticSpec::reference()),
            train: None,
            unlabeled: None,
            dev: None,
            test: None,
            classes: None,
            embeddings: None,
            min_count: 1,
            max_vocab: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub inspirer_epochs: usize,
    pub target_epochs: usize,
    pub labeled_batch: usize,
    /// Unlabeled batch size as a multiple of the labeled batch size.
    pub unsup_ratio: usize,
    pub inspirer_encoder_lr: f64,
    pub inspirer_head_lr: f64,
    pub target_lr: f64,
    pub tsa: TsaKind,
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            inspirer_epochs: 10,
            target_epochs: 10,
            labeled_batch: 8,
            unsup_ratio: 3,
            inspirer_encoder_lr: 1e-3,
            inspirer_head_lr: 1e-3,
            target_lr: 1e-3,
            tsa: TsaKind::Linear,
            eval_batch: 128,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    /// Layer-to-filter pairing; absent means the monotone default.
    pub alignment: Option<AlignmentSpec>,
    pub components: Components,
}

/// Everything that determines a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub inspirer: InspirerConfig,
    pub target: TargetConfig,
    pub augment: AugmentPolicy,
    pub train: TrainConfig,
    pub distill: DistillConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::reference()
    }
}

impl RunConfig {
    /// Desk-scale settings used for the reference synthetic experiments.
    pub fn reference() -> Self {
        RunConfig {
            seed: 1,
            data: DataConfig::default(),
            inspirer: InspirerConfig {
                layers: 2,
                hidden: 32,
                heads: 2,
                ff_dim: 64,
                vocab_size: 0,
                max_len: 32,
                classes: 2,
                mlp_hidden: 32,
                projection_dim: 32,
                dropout: 0.1,
            },
            target: TargetConfig {
                filter_sizes: vec![2, 3, 5],
                channels: 32,
                emb_dim: 32,
                vocab_size: 0,
                classes: 2,
                projection_dim: 32,
                ..TargetConfig::default()
            },
            augment: AugmentPolicy::default(),
            train: TrainConfig::default(),
            distill: DistillConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    /// Applies the seed override from the environment, if set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|e| Error::config(format!("{SEED_ENV}={v:?}: {e}")))?;
        }
        Ok(self)
    }

    /// The alignment in force: explicit, or the monotone default.
    pub fn alignment(&self) -> Result<AlignmentSpec> {
        let spec = match &self.distill.alignment {
            Some(a) => a.clone(),
            None => AlignmentSpec::monotone(self.inspirer.layers, &self.target.filter_sizes)?,
        };
        spec.validate(self.inspirer.layers, &self.target.filter_sizes)?;
        Ok(spec)
    }

    /// Checks fields that do not depend on the data.
    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if t.labeled_batch == 0 || t.unsup_ratio == 0 || t.eval_batch == 0 {
            return Err(Error::config("batch sizes and unsup_ratio must be positive"));
        }
        for (name, lr) in [
            ("inspirer_encoder_lr", t.inspirer_encoder_lr),
            ("inspirer_head_lr", t.inspirer_head_lr),
            ("target_lr", t.target_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {lr}")));
            }
        }
        self.augment.validate()?;
        if self.inspirer.projection_dim != self.target.projection_dim {
            return Err(Error::config(format!(
                "projection dims differ: inspirer {}, target {}",
                self.inspirer.projection_dim, self.target.projection_dim
            )));
        }
        if self.target.max_filter() > self.inspirer.max_len {
            return Err(Error::config("largest filter exceeds the maximum sequence length"));
        }
        self.alignment()?;
        let d = &self.data;
        if d.synthetic.is_none() && (d.train.is_none() || d.dev.is_none() || d.test.is_none()) {
            return Err(Error::config(
                "data needs either a synthetic spec or train, dev and test files",
            ));
        }
        Ok(())
    }
}
