//! Manifests and report records written by the commands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::CliError;

/// What produced an output file: command, flags, and the effective seed.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: &'static str,
    pub seed: u64,
    pub inputs: BTreeMap<&'static str, String>,
    pub flags: BTreeMap<&'static str, String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &'static str, seed: u64) -> Self {
        Self {
            command,
            seed,
            inputs: BTreeMap::new(),
            flags: BTreeMap::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(mut self, key: &'static str, path: &Path) -> Self {
        self.inputs.insert(key, path.display().to_string());
        self
    }

    pub fn flag(mut self, key: &'static str, value: impl ToString) -> Self {
        self.flags.insert(key, value.to_string());
        self
    }

    pub fn output(mut self, path: &Path) -> Self {
        self.outputs.push(path.display().to_string());
        self
    }

    /// Writes `<file>.manifest.json` next to `file`.
    pub fn write_beside(&self, file: &Path) -> Result<PathBuf, CliError> {
        let mut name = file.as_os_str().to_owned();
        name.push(".manifest.json");
        let path = PathBuf::from(name);
        write_json(&path, self)?;
        Ok(path)
    }
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(spts_core::Error::from)?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct LayerSummary {
    pub layer: usize,
    pub skipped: bool,
    pub candidates: usize,
    pub mha_active: usize,
    pub ffn_active: usize,
    pub cached: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pruned_to: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct FlopSummary {
    pub block: u64,
    pub attention_probe: u64,
    pub proxy_probe: u64,
    pub total: u64,
}

#[derive(Debug, Serialize)]
pub struct PromptSummary {
    pub prompt_len: usize,
    pub generated: Vec<u32>,
    pub prefill_flops: FlopSummary,
    pub kv_bytes: u64,
    pub full_kv_bytes: u64,
    /// Candidate count entering each stage, then after the last prune.
    pub stage_candidates: Vec<usize>,
    pub layers: Vec<LayerSummary>,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub model: String,
    pub mode: &'static str,
    pub ffn_selector: &'static str,
    pub schedule: String,
    pub gen: usize,
    pub prompts: Vec<PromptSummary>,
}
