//! Run configuration: one TOML file with nested sections.

use std::path::Path;

use serde::{Deserialize, Serialize};
use siamgtr::dataset::SynthConfig;
use siamgtr::model::ModelConfig;
use siamgtr::trainer::TrainConfig;

use crate::error::CliError;

pub const PROFILES: [(&str, &str); 4] = [
    ("synthetic", include_str!("../../../configs/synthetic.toml")),
    ("activitynet-like", include_str!("../../../configs/activitynet-like.toml")),
    ("charades-like", include_str!("../../../configs/charades-like.toml")),
    ("tacos-like", include_str!("../../../configs/tacos-like.toml")),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConceptSettings {
    /// Dictionary size when the data directory has no `concepts.json`.
    pub top_k: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub thresholds: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub profile: String,
    /// Only `synth-gen` reads this section.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub concepts: ConceptSettings,
    pub eval: EvalSettings,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Usage(format!("{origin}: {e}")))?;
        cfg.validate().map_err(|e| CliError::Usage(format!("{origin}: {e}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn profile(name: &str) -> Option<&'static str> {
        PROFILES.iter().find(|(n, _)| *n == name).map(|(_, t)| *t)
    }

    fn validate(&self) -> siamgtr::Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if let Some(s) = &self.synth {
            s.validate()?;
        }
        if self.concepts.top_k == 0 {
            return Err(siamgtr::Error::Config("concepts.top_k must be positive".into()));
        }
        if self.eval.thresholds.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return Err(siamgtr::Error::Config("eval.thresholds must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn synth(&self) -> Result<&SynthConfig, CliError> {
        self.synth.as_ref().ok_or_else(|| CliError::Usage("config is missing the `synth` section".into()))
    }
}
