//! Declarative experiment configuration, one TOML file per run.
//!
//! Relative paths inside the file resolve against the file's directory. The
//! output directory resolves against the output root instead when one is set.

use std::path::{Path, PathBuf};

use nostill::data::{ColumnMap, SplitRule};
use nostill::optimize::TrainConfig;
use nostill::pipeline::PipelineConfig;
use nostill::selection::SelectionPlan;
use nostill::KernelFamily;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: PathBuf,
    #[serde(default)]
    pub columns: ColumnMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub family: KernelFamily,
    #[serde(default)]
    pub sparse: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanningSection {
    pub budget: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timesteps: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub split: SplitRule,
    pub kernel: KernelSection,
    pub selection: SelectionPlan,
    pub train: TrainConfig,
    pub planning: PlanningSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads and parses a config file, returning it with its directory.
    pub fn load(path: &Path) -> Result<(Self, PathBuf), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let config = Self::from_toml(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((config, base))
    }

    /// Checks everything that can be checked without touching the data.
    pub fn validate(&self, base: &Path) -> Result<(), CliError> {
        let config = |e: nostill::Error| CliError::Config(e.to_string());
        if !matches!(self.kernel.family, KernelFamily::Ch1 | KernelFamily::Ch2) {
            return Err(CliError::Config(format!(
                "kernel family must be ch1 or ch2, got {}",
                self.kernel.family
            )));
        }
        self.pipeline().validate().map_err(config)?;
        let data = self.dataset_path(base);
        if !data.is_file() {
            return Err(CliError::Config(format!(
                "dataset {} does not exist",
                data.display()
            )));
        }
        Ok(())
    }

    pub fn dataset_path(&self, base: &Path) -> PathBuf {
        base.join(&self.dataset.path)
    }

    pub fn output_dir(&self, base: &Path, root: Option<&Path>) -> PathBuf {
        match root {
            Some(r) => r.join(&self.output.dir),
            None => base.join(&self.output.dir),
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            family: self.kernel.family,
            sparse: self.kernel.sparse,
            selection: self.selection.clone(),
            train: self.train.clone(),
            budget: self.planning.budget,
            timesteps: self.planning.timesteps.clone(),
        }
    }
}
