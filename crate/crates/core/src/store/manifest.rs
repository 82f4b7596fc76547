use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::build_mc_prompt;
use crate::representation::TapPoint;

/// Dataset description written next to the per-tap EMB1 files.
///
/// Tap file paths are relative to the manifest's directory unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub dataset: String,
    pub class_names: Vec<String>,
    /// Exact text fed to the model; must equal the prompt rebuilt from `class_names`.
    pub prompt: String,
    pub tap_files: BTreeMap<TapPoint, PathBuf>,
    pub model: String,
    /// What each axis of the decoder activation means, e.g. "beams x tokens x hidden".
    pub decoder_shape: String,
    #[serde(default)]
    pub parameters: serde_json::Map<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub zero_shot_texts: BTreeMap<String, String>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Class count and byte-exact prompt check.
    pub fn verify_prompt(&self) -> Result<()> {
        if self.class_names.len() < 2 {
            return Err(Error::Manifest(format!(
                "need at least 2 classes, found {}",
                self.class_names.len()
            )));
        }
        let rebuilt = build_mc_prompt(&self.class_names)?;
        if rebuilt != self.prompt {
            return Err(Error::PromptMismatch {
                stored: self.prompt.clone(),
                rebuilt,
            });
        }
        Ok(())
    }

    pub fn resolve(&self, base_dir: &Path, tap: TapPoint) -> Option<PathBuf> {
        self.tap_files.get(&tap).map(|p| base_dir.join(p))
    }

    pub fn missing_files(&self, base_dir: &Path) -> Vec<PathBuf> {
        self.tap_files
            .values()
            .map(|p| base_dir.join(p))
            .filter(|p| !p.is_file())
            .collect()
    }
}
