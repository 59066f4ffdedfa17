use std::path::{Path, PathBuf};

use hyperdet::pipeline::ExperimentConfig;
use hyperdet::synth::SynthConfig;
use hyperdet::SamplerConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Transaction JSONL; generated by `synth` when absent in `pipeline`.
    pub transactions: Option<PathBuf>,
    /// `address,label` CSV.
    pub labels: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub synth: SynthConfig,
    pub sampler: SamplerConfig,
    pub experiment: ExperimentConfig,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Makes every path absolute against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [&mut self.paths.transactions, &mut self.paths.labels, &mut self.paths.out]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}
