//! Optional JSON run configuration.
//!
//! Every field may be omitted; a missing field falls back to the built-in
//! default unless a command-line flag overrides it. Precedence is flag,
//! then file, then default, resolved by the caller. Keys are kebab-case
//! and unknown keys are rejected so typos fail loudly instead of silently
//! training with defaults.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::curvature::{Aggregation, PsiFormula};
use crate::data::TimeScale;
use crate::error::{Error, Result};
use crate::eval::{FilterMode, TieMode};
use crate::model::{ReprVariant, ScoreVariant};
use crate::product::ProductSignature;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case", default)]
pub struct FileConfig {
    pub train: Option<String>,
    pub valid: Option<String>,
    pub test: Option<String>,
    pub out: Option<String>,
    pub signature: Option<String>,
    pub repr: Option<ReprVariant>,
    pub score: Option<ScoreVariant>,
    pub time_scale: Option<TimeScale>,
    pub filter: Option<FilterMode>,
    pub tie: Option<TieMode>,
    pub lr: Option<f64>,
    pub negatives: Option<usize>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub validate_every: Option<usize>,
    pub patience: Option<usize>,
    pub seed: Option<u64>,
    pub n_iter: Option<usize>,
    pub formula: Option<PsiFormula>,
    pub aggregation: Option<Aggregation>,
    pub workers: Option<usize>,
}

impl FileConfig {
    /// Semantic checks beyond what serde enforces.
    pub fn validate(&self) -> Result<()> {
        if let Some(sig) = &self.signature {
            sig.parse::<ProductSignature>()?;
        }
        if let Some(lr) = self.lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("lr must be positive and finite, got {lr}")));
            }
        }
        for (name, v) in [
            ("negatives", self.negatives),
            ("batch-size", self.batch_size),
            ("validate-every", self.validate_every),
            ("patience", self.patience),
            ("n-iter", self.n_iter),
            ("workers", self.workers),
        ] {
            if v == Some(0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Overlay this file's training fields on `base`.
    pub fn train_config(&self, base: TrainConfig) -> TrainConfig {
        TrainConfig {
            lr: self.lr.unwrap_or(base.lr),
            negatives: self.negatives.unwrap_or(base.negatives),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            max_epochs: self.max_epochs.unwrap_or(base.max_epochs),
            validate_every: self.validate_every.unwrap_or(base.validate_every),
            patience: self.patience.unwrap_or(base.patience),
            seed: self.seed.unwrap_or(base.seed),
        }
    }
}

/// Parse and validate a configuration from raw JSON bytes.
pub fn parse_config(bytes: &[u8]) -> Result<FileConfig> {
    let cfg: FileConfig = serde_json::from_slice(bytes)?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<FileConfig> {
    let bytes =
        fs::read(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    parse_config(&bytes)
}
