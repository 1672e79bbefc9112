//! Optional JSON defaults. Flags always win over file values.

use std::path::Path;

use anyhow::Context;
use dfm_core::datasetgen::GenConfig;
use dfm_core::pipeline::PipelineOptions;
use dfm_core::rules::RuleBounds;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    #[default]
    Midpoint,
    Seeded,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub format: Option<Format>,
    pub policy: Option<PolicyKind>,
    pub bounds: Option<RuleBounds>,
    /// Generation defaults; `master_seed` is replaced by the resolved seed.
    pub gen: Option<GenConfig>,
    pub pipeline: Option<PipelineOptions>,
}

impl CliConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| crate::Usage(format!("{}: {e}", path.display())).into())
    }
}
