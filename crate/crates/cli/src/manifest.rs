//! Run manifests: everything needed to reproduce a run, written before
//! training starts and never touched afterwards.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rnp_core::data::CsvSchema;
use rnp_core::model::RnpConfig;
use rnp_core::train::TrainConfig;

#[derive(Debug, Serialize, Deserialize)]
pub struct DatasetFingerprint {
    pub path: String,
    pub rows: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command_line: Vec<String>,
    pub model: RnpConfig,
    pub train: TrainConfig,
    pub schema: CsvSchema,
    pub splits: (f64, f64, f64),
    pub seed: u64,
    pub dataset: DatasetFingerprint,
    pub code_version: String,
    pub created_at: String,
}

impl RunManifest {
    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, json)
    }
}

pub fn fingerprint_file(path: &Path, rows: usize) -> std::io::Result<DatasetFingerprint> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(DatasetFingerprint {
        path: path.display().to_string(),
        rows,
        sha256: format!("{:x}", hasher.finalize()),
    })
}

/// Short hash of any serializable config, echoed into metrics reports so
/// results can be traced back to the exact configuration.
pub fn config_fingerprint<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_string(value).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(json.as_bytes());
    let hex = format!("{:x}", hasher.finalize());
    hex[..16].to_string()
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339()
}

/// Resolves an output directory, honoring the RNP_RUN_DIR root override
/// for relative paths.
pub fn resolve_out_dir(dir: &Path) -> std::path::PathBuf {
    if dir.is_absolute() {
        return dir.to_path_buf();
    }
    match std::env::var_os("RNP_RUN_DIR") {
        Some(root) => Path::new(&root).join(dir),
        None => dir.to_path_buf(),
    }
}
