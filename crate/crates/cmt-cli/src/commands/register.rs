//! `cmt register`: template-to-image registration for a manifest split;
//! writes both deformation fields and the warped template mask per subject.

use std::path::Path;

use rayon::prelude::*;

use cmt_core::field::warp_mask;
use cmt_core::nifti;
use cmt_core::reg::{register_to_template, TemplateModel};
use cmt_core::Result;

use super::common::load_standardized;
use crate::config::ProjectConfig;
use crate::manifest::{Manifest, Split};

pub fn warped_mask_file(id: &str) -> String {
    format!("{id}_warped_mask.nii.gz")
}

fn register_one(
    cfg: &ProjectConfig,
    model: &TemplateModel,
    id: &str,
    out_dir: &Path,
) -> Result<()> {
    let (image, labels) = load_standardized(cfg, id)?;
    let masked = image.mask_image(&labels, &["FC", "TC"])?;
    let (fwd, inv) = register_to_template(model, &masked, &cfg.registration)?;
    nifti::write_vector_field(
        &fwd.grid,
        &fwd.data,
        "template-to-image displacement, voxel units",
        &out_dir.join(format!("{id}_phi.nii.gz")),
    )?;
    nifti::write_vector_field(
        &inv.grid,
        &inv.data,
        "image-to-template displacement, voxel units",
        &out_dir.join(format!("{id}_phi_inv.nii.gz")),
    )?;
    let warped = warp_mask(&model.mask, &fwd)?;
    nifti::write_label_map(&warped, &out_dir.join(warped_mask_file(id)))?;
    Ok(())
}

pub fn run(
    cfg: &ProjectConfig,
    manifest: &Manifest,
    model: &TemplateModel,
    split: Split,
    out_dir: &Path,
) -> Result<Vec<(String, Result<()>)>> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| cmt_core::Error::io(out_dir.display().to_string(), e))?;
    let subjects = manifest.split(split);
    let results: Vec<(String, Result<()>)> = subjects
        .par_iter()
        .map(|entry| {
            (
                entry.subject_id.clone(),
                register_one(cfg, model, &entry.subject_id, out_dir),
            )
        })
        .collect();
    Ok(results)
}
