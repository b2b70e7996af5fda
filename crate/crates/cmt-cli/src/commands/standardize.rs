//! `cmt standardize`: reorient to RAS+, resample to the target spacing,
//! normalize intensities, and standardize laterality for every manifest
//! entry; per-subject failures are isolated.

use rayon::prelude::*;

use cmt_core::morph::{standardize_laterality, Side};
use cmt_core::nifti;
use cmt_core::Result;

use super::common::{image_file, labels_file, sidecar_file, write_json, Sidecar};
use crate::config::ProjectConfig;
use crate::manifest::{Manifest, ManifestEntry};

fn standardize_one(cfg: &ProjectConfig, entry: &ManifestEntry) -> Result<()> {
    let out_dir = cfg.standardized_dir();
    let (image, _) = nifti::read_volume(&entry.image)?;
    let (labels, _) = nifti::read_label_map(&entry.labels, cfg.schema)?;

    let image = image.reorient_to_ras()?;
    let labels = labels.reorient_to_ras()?;
    let image = image.resample(cfg.target_spacing)?;
    let labels = labels.resample(cfg.target_spacing)?;
    let image = image.normalize_intensity(cfg.percentile_lo, cfg.percentile_hi)?;
    image.grid.require_compatible(&labels.grid, "standardize")?;
    let (image, labels, flipped) = standardize_laterality(&image, &labels, entry.side)?;

    nifti::write_volume(&image, &out_dir.join(image_file(&entry.subject_id)))?;
    nifti::write_label_map(&labels, &out_dir.join(labels_file(&entry.subject_id)))?;
    let sidecar = Sidecar {
        subject_id: entry.subject_id.clone(),
        side: match entry.side {
            Side::Left => "left".into(),
            Side::Right => "right".into(),
        },
        flipped,
        steps: vec![
            "reorient_to_ras".into(),
            "resample".into(),
            "normalize_intensity".into(),
            "standardize_laterality".into(),
        ],
        target_spacing: cfg.target_spacing,
        percentile_lo: cfg.percentile_lo,
        percentile_hi: cfg.percentile_hi,
    };
    write_json(&sidecar, &out_dir.join(sidecar_file(&entry.subject_id)))
}

pub fn run(cfg: &ProjectConfig, manifest: &Manifest) -> Result<Vec<(String, Result<()>)>> {
    std::fs::create_dir_all(cfg.standardized_dir())
        .map_err(|e| cmt_core::Error::io(cfg.standardized_dir().display().to_string(), e))?;
    let results: Vec<(String, Result<()>)> = manifest
        .entries
        .par_iter()
        .map(|entry| (entry.subject_id.clone(), standardize_one(cfg, entry)))
        .collect();
    Ok(results)
}
