use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::copuladata::{CopulaSpec, DEFAULT_RHO, DEFAULT_TRAIN_ROWS};
use crate::error::{Error, Result};
use crate::mvae::ModelConfig;

/// Synthetic data settings. The correlation matrices are built from `rho`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub modalities: usize,
    pub dim: usize,
    pub rho: f64,
    pub train_rows: usize,
    pub heldout_rows: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            modalities: 4,
            dim: 2,
            rho: DEFAULT_RHO,
            train_rows: DEFAULT_TRAIN_ROWS,
            heldout_rows: DEFAULT_TRAIN_ROWS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Rows generated per evaluation.
    pub n_generated: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { n_generated: 10_000 }
    }
}

/// Everything a command needs besides its input files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out: PathBuf::from("run"),
            data: DataConfig::default(),
            model: ModelConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Read a config file, or the configuration echoed in a run manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |e: serde_json::Error| Error::Config(format!("{}: {e}", path.display()));
        let mut value: serde_json::Value = serde_json::from_str(&text).map_err(bad)?;
        if value.get("command").is_some() {
            if let Some(c) = value.get_mut("config") {
                value = c.take();
            }
        }
        serde_json::from_value(value).map_err(bad)
    }

    /// Copula spec for train and held-out rows together.
    pub fn copula_spec(&self) -> Result<CopulaSpec> {
        let d = &self.data;
        CopulaSpec::with_rho(d.modalities, d.dim, d.rho, d.train_rows + d.heldout_rows, self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.train_rows == 0 {
            return Err(Error::Config("data.train_rows must be positive".into()));
        }
        if self.eval.n_generated == 0 {
            return Err(Error::Config("eval.n_generated must be positive".into()));
        }
        self.copula_spec()?;
        self.model.validate()?;
        let (m, d) = (self.data.modalities, self.data.dim);
        if self.model.input_dims != vec![d; m] {
            return Err(Error::Config(format!(
                "model.input_dims {:?} do not match {m} modalities of dimension {d}",
                self.model.input_dims
            )));
        }
        Ok(())
    }
}
