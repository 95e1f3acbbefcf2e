use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::evalmetrics::ScoreWeighting;
use crate::training::TrainConfig;
use crate::volumes::{DatasetConfig, PrepConfig, Split};

pub const CONFIG_ECHO_FILE: &str = "run_config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexSection {
    /// Split that populates the plan database.
    pub split: Split,
}

impl Default for IndexSection {
    fn default() -> Self {
        Self { split: Split::Train }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuerySection {
    pub k: usize,
}

impl Default for QuerySection {
    fn default() -> Self {
        Self { k: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub max_k: usize,
    pub weighting: ScoreWeighting,
    pub database_split: Split,
    pub query_split: Split,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            max_k: 5,
            weighting: ScoreWeighting::default(),
            database_split: Split::Train,
            query_split: Split::Test,
        }
    }
}

/// Every setting of a run. Loaded from TOML, overridden by flags, then
/// resolved and echoed into the output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for generation and embedding; 0 uses all cores.
    pub threads: usize,
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub prep: PrepConfig,
    pub train: TrainConfig,
    pub index: IndexSection,
    pub query: QuerySection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            threads: 0,
            out_dir: None,
            dataset: DatasetConfig::default(),
            prep: PrepConfig::default(),
            train: TrainConfig::default(),
            index: IndexSection::default(),
            query: QuerySection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// Sets every seed from one value.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.dataset.seed = seed;
        self.train.seed = seed;
    }

    /// Derives the encoder input shape from the preprocessing settings and
    /// checks every section.
    pub fn resolve(mut self) -> Result<Self, CliError> {
        self.train.encoder.input_dims = self.prep.dims;
        self.train.encoder.in_channels = self.prep.channels();
        self.train.validate()?;
        if self.query.k == 0 || self.eval.max_k == 0 {
            return Err(CliError::Config("k must be at least 1".into()));
        }
        if !(self.eval.weighting.base > 0.0 && self.eval.weighting.base.is_finite()) {
            return Err(CliError::Config(format!(
                "retrieval score base must be positive, got {}",
                self.eval.weighting.base
            )));
        }
        if self.prep.dims.iter().any(|&d| d < 2) {
            return Err(CliError::Config(format!("prep dims {:?} must be at least 2", self.prep.dims)));
        }
        Ok(self)
    }

    pub fn out_dir(&self) -> Result<&Path, CliError> {
        self.out_dir
            .as_deref()
            .ok_or_else(|| CliError::Config("no output directory: pass --out or set out_dir".into()))
    }

    /// Creates the output directory and writes the resolved config into it.
    pub fn echo(&self) -> Result<PathBuf, CliError> {
        let dir = self.out_dir()?;
        std::fs::create_dir_all(dir)?;
        let path = dir.join(CONFIG_ECHO_FILE);
        std::fs::write(&path, self.to_toml())?;
        Ok(path)
    }
}
