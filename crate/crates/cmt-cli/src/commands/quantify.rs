//! `cmt quantify`: per-subject shape and lesion quantification — pose
//! normalization, template registration, parcellation, thickness mapping,
//! FCL estimation, and mesh/CSV/JSON export (unflipped for left knees).

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use cmt_core::field::warp_mask;
use cmt_core::mesh::{mirror_mesh, write_ply};
use cmt_core::morph::{
    lr_mirror_world, parcellate_tc, pose_normalize, regional_report, Region, RegionMetrics,
};
use cmt_core::nifti;
use cmt_core::reg::{register_to_template, TemplateModel};
use cmt_core::{Error, Result};

use super::common::{fmt_f64, load_standardized, read_sidecar};
use crate::config::ProjectConfig;
use crate::manifest::{Manifest, Split};

pub const METRICS_HEADER: &str =
    "subject_id,region,volume_mm3,mean_thickness_mm,interface_area_mm2,fcl_fraction";

pub fn metrics_csv_rows(id: &str, rows: &[RegionMetrics]) -> String {
    let mut out = String::new();
    for m in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            id,
            m.region.name(),
            fmt_f64(m.volume_mm3),
            fmt_f64(m.mean_thickness_mm),
            fmt_f64(m.interface_area_mm2),
            fmt_f64(m.fcl_fraction)
        );
    }
    out
}

#[derive(Serialize)]
struct SubjectReport<'a> {
    subject_id: &'a str,
    flipped: bool,
    regions: &'a [RegionMetrics],
}

fn quantify_one(
    cfg: &ProjectConfig,
    model: &TemplateModel,
    id: &str,
    out_dir: &Path,
) -> Result<()> {
    let (image, labels) = load_standardized(cfg, id)?;
    let flipped = read_sidecar(&cfg.standardized_dir(), id)
        .map(|s| s.flipped)
        .unwrap_or(false);

    // rigid pose, then deformable template-to-image registration
    let (image, labels, _rigid) = pose_normalize(&image, &labels, model, &cfg.registration)?;
    let masked = image.mask_image(&labels, &["FC", "TC"])?;
    let (fwd, _inv) = register_to_template(model, &masked, &cfg.registration)?;
    let warped_template = warp_mask(&model.mask, &fwd)?;

    let observed = parcellate_tc(&labels)?;
    let warped_template = parcellate_tc(&warped_template)?;
    let report = regional_report(&observed, &warped_template)?;

    // left knees were flipped into right geometry; exported volumes and
    // meshes go back to native coordinates
    let export_mask = if flipped {
        warped_template.flip_lr()?
    } else {
        warped_template.clone()
    };
    nifti::write_label_map(&export_mask, &out_dir.join(format!("{id}_warped_mask.nii.gz")))?;
    let mirror = lr_mirror_world(&warped_template.grid)?;
    let metrics: Vec<RegionMetrics> = report.iter().map(|(m, _)| m.clone()).collect();
    for (m, mesh) in &report {
        if let Some(mesh) = mesh {
            let export = if flipped {
                mirror_mesh(mesh, &mirror)
            } else {
                mesh.clone()
            };
            write_ply(
                &export,
                &out_dir.join(format!("{id}_{}_thickness.ply", m.region.name())),
            )?;
        }
    }
    let csv = format!("{METRICS_HEADER}\n{}", metrics_csv_rows(id, &metrics));
    let csv_path = out_dir.join(format!("{id}_metrics.csv"));
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    super::common::write_json(
        &SubjectReport {
            subject_id: id,
            flipped,
            regions: &metrics,
        },
        &out_dir.join(format!("{id}_metrics.json")),
    )?;
    let healthy: Vec<&RegionMetrics> = metrics
        .iter()
        .filter(|m| m.fcl_fraction < 0.02)
        .collect();
    eprintln!(
        "[quantify] {id}: {} regions, {} lesion-free",
        Region::ALL.len(),
        healthy.len()
    );
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
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let subjects = manifest.split(split);
    let results: Vec<(String, Result<()>)> = subjects
        .par_iter()
        .map(|entry| {
            (
                entry.subject_id.clone(),
                quantify_one(cfg, model, &entry.subject_id, out_dir),
            )
        })
        .collect();
    Ok(results)
}
