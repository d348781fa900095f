//! Run configuration: one strict JSON document layered over a profile.

use std::path::{Path, PathBuf};

use neurodecode::data::{PreprocessConfig, SyntheticSpec};
use neurodecode::evaluation::{Band, RegionChoice, WindowSpec};
use neurodecode::mae::TransferStrategy;
use neurodecode::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Small model sized for the synthetic data on a CPU.
    #[default]
    Desk,
    /// Full-size reference settings.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub windows: Vec<WindowSpec>,
    pub bands: Vec<Band>,
    pub regions: Vec<RegionChoice>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            windows: WindowSpec::grid(),
            bands: Band::ALL.to_vec(),
            regions: RegionChoice::standard(),
        }
    }
}

/// Axes of an ablation grid. An empty axis keeps the base setting.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    /// Decoder `[width, depth]` pairs.
    pub decoder: Vec<[usize; 2]>,
    pub mask_ratio: Vec<f64>,
    pub alpha: Vec<f64>,
    pub transfer: Vec<TransferStrategy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: Profile,
    pub seeds: Vec<u64>,
    /// Directory with `train` and `test` trial files.
    pub data: Option<PathBuf>,
    /// Feature bank stem or a name under `$NEURODECODE_CACHE`.
    pub bank: Option<String>,
    pub synthetic: SyntheticSpec,
    pub preprocess: PreprocessConfig,
    pub pipeline: PipelineConfig,
    pub analysis: AnalysisConfig,
    pub sweep: SweepGrid,
}

impl RunConfig {
    pub fn base(profile: Profile) -> Self {
        Self {
            profile,
            seeds: vec![0, 1, 2],
            data: None,
            bank: None,
            synthetic: SyntheticSpec::default(),
            preprocess: PreprocessConfig::default(),
            pipeline: match profile {
                Profile::Desk => PipelineConfig::desk(),
                Profile::Full => PipelineConfig::default(),
            },
            analysis: AnalysisConfig::default(),
            sweep: SweepGrid::default(),
        }
    }

    /// Parses `text` over the base of its `profile` (desk when absent).
    ///
    /// Keys present in `text` replace the base; unknown keys are errors.
    pub fn from_json(text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text).map_err(neurodecode::Error::from)?;
        let Value::Object(map) = &user else {
            return Err(CliError::Usage("config must be a JSON object".into()));
        };
        let profile = match map.get("profile") {
            Some(p) => serde_json::from_value(p.clone()).map_err(neurodecode::Error::from)?,
            None => Profile::Desk,
        };
        let mut merged = serde_json::to_value(Self::base(profile)).map_err(neurodecode::Error::from)?;
        overlay(&mut merged, user);
        let cfg: RunConfig = serde_json::from_value(merged).map_err(neurodecode::Error::from)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::base(Profile::Desk)),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_json(&text)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(CliError::Usage("the seed list is empty".into()));
        }
        self.synthetic.validate()?;
        self.preprocess.validate()?;
        self.pipeline.validate()?;
        Ok(())
    }
}

fn overlay(base: &mut Value, user: Value) {
    match (base, user) {
        (Value::Object(b), Value::Object(u)) => {
            for (k, v) in u {
                match b.get_mut(&k) {
                    Some(slot) => overlay(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}
