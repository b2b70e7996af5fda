//! Shared helpers for the pipeline commands.

use std::path::Path;

use serde::{Deserialize, Serialize};

use cmt_core::nifti;
use cmt_core::volume::{ImageVolume, LabelMap};
use cmt_core::{Error, Result};

use crate::config::ProjectConfig;

/// Provenance record written next to each standardized subject.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub subject_id: String,
    pub side: String,
    pub flipped: bool,
    pub steps: Vec<String>,
    pub target_spacing: [f64; 3],
    pub percentile_lo: f64,
    pub percentile_hi: f64,
}

pub fn image_file(id: &str) -> String {
    format!("{id}_image.nii.gz")
}

pub fn labels_file(id: &str) -> String {
    format!("{id}_labels.nii.gz")
}

pub fn sidecar_file(id: &str) -> String {
    format!("{id}_sidecar.json")
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::InvalidConfig(format!("json: {e}")))?;
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
        }
    }
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_sidecar(dir: &Path, id: &str) -> Result<Sidecar> {
    let path = dir.join(sidecar_file(id));
    let text =
        std::fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("sidecar: {e}")))
}

/// Load one standardized subject (image + labels) from the work tree.
pub fn load_standardized(
    cfg: &ProjectConfig,
    id: &str,
) -> Result<(ImageVolume, LabelMap)> {
    let dir = cfg.standardized_dir();
    let image_path = dir.join(image_file(id));
    let labels_path = dir.join(labels_file(id));
    if !image_path.exists() || !labels_path.exists() {
        return Err(Error::MissingInputs(format!(
            "standardized files for {id}; run `cmt standardize` first"
        )));
    }
    let (image, _) = nifti::read_volume(&image_path)?;
    let (labels, _) = nifti::read_label_map(&labels_path, cfg.schema)?;
    Ok((image, labels))
}

/// Print one status line per subject and fail if any subject failed.
pub fn summarize_results(command: &str, results: &[(String, Result<()>)]) -> Result<()> {
    let mut failures = 0usize;
    for (id, r) in results {
        match r {
            Ok(()) => eprintln!("[{command}] {id}: ok"),
            Err(e) => {
                failures += 1;
                eprintln!("[{command}] {id}: FAILED: {e}");
            }
        }
    }
    if failures > 0 {
        return Err(Error::MissingInputs(format!(
            "{failures} subject(s) failed in {command}"
        )));
    }
    Ok(())
}

/// Stable float formatting for CSV cells (shortest round-trip form).
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}
