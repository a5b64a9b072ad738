use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{Context, Result};
use dagcn::model::CHECKPOINT_MAGIC;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const ARTIFACT_VERSION: &str = concat!("dagcn ", env!("CARGO_PKG_VERSION"));

/// Everything needed to reproduce a run from its inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub artifact_version: String,
    pub checkpoint_format: String,
    /// Input and output paths as given on the command line.
    pub paths: BTreeMap<String, String>,
    pub seed: u64,
    /// `None` means the thread pool default.
    pub threads: Option<usize>,
    pub variant: Option<String>,
    pub config: Option<RunConfig>,
    /// Command-specific resolved settings.
    pub extra: serde_json::Value,
}

impl RunManifest {
    pub fn new(command: &str, seed: u64, threads: Option<usize>) -> Self {
        RunManifest {
            command: command.to_owned(),
            artifact_version: ARTIFACT_VERSION.to_owned(),
            checkpoint_format: CHECKPOINT_MAGIC.to_owned(),
            paths: BTreeMap::new(),
            seed,
            threads,
            variant: None,
            config: None,
            extra: serde_json::Value::Null,
        }
    }

    pub fn path(mut self, role: &str, p: &Path) -> Self {
        self.paths.insert(role.to_owned(), p.display().to_string());
        self
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("manifest serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

/// Ablation name for a pair of switches.
pub fn variant_name(use_attention: bool, sequential: bool) -> &'static str {
    match (use_attention, sequential) {
        (true, true) => "full",
        (true, false) => "GCN_OS",
        (false, true) => "GCN_OA",
        (false, false) => "GCN_OSA",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants() {
        assert_eq!(variant_name(true, true), "full");
        assert_eq!(variant_name(true, false), "GCN_OS");
        assert_eq!(variant_name(false, true), "GCN_OA");
        assert_eq!(variant_name(false, false), "GCN_OSA");
    }
}
