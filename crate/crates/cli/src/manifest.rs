use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

/// Sidecar describing one run: enough to repeat it exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub featviz_version: String,
    pub subcommand: String,
    /// Resolved arguments, with absolute paths.
    pub args: serde_json::Value,
    /// Seed of any randomness used by the run.
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub result: serde_json::Value,
}

impl Manifest {
    pub fn new(subcommand: &str, args: &impl Serialize) -> Self {
        Manifest {
            featviz_version: featviz::VERSION.to_string(),
            subcommand: subcommand.to_string(),
            args: serde_json::to_value(args).expect("arguments serialise"),
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            result: serde_json::Value::Null,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serialises");
        bytes.push(b'\n');
        bytes
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let bytes = crate::read_file(path)?;
        serde_json::from_slice(&bytes).map_err(|e| CliError::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Writes the manifest next to every output as `<output>.json`.
    pub fn write_sidecars(&self) -> Result<(), CliError> {
        for output in &self.outputs {
            crate::write_file(&sidecar_path(output), &self.to_bytes())?;
        }
        Ok(())
    }
}

pub fn sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}
