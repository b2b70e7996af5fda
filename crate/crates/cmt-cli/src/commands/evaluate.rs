//! `cmt evaluate`: registration accuracy per subject and region — DSC,
//! HD95, and (when pseudo-healthy interface patches are supplied) the
//! relative bone-cartilage interface area difference.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use cmt_core::mesh::{dsc, hd95, relative_area_difference, surface_area, TriMesh};
use cmt_core::morph::{parcellate_tc, region_interface, Region};
use cmt_core::nifti;
use cmt_core::{Error, Result};

use super::common::{fmt_f64, labels_file, write_json};
use super::register::warped_mask_file;
use crate::config::ProjectConfig;
use crate::manifest::{Manifest, Split};

#[derive(Debug, Clone, Serialize)]
pub struct SubjectEvaluation {
    pub subject_id: String,
    pub dsc: [Option<f64>; 3],
    pub hd95_mm: [Option<f64>; 3],
    pub area_diff: [Option<f64>; 3],
}

/// Minimal ASCII PLY reader for pseudo interface patches (the format this
/// toolbox writes: x y z [scalar] vertices and `3 a b c` faces).
pub fn read_ply(path: &Path) -> Result<TriMesh> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut lines = text.lines();
    let mut n_vertices = 0usize;
    let mut n_faces = 0usize;
    let mut props = 0usize;
    let mut in_vertex_element = false;
    for line in lines.by_ref() {
        let line = line.trim();
        if line.starts_with("element vertex") {
            n_vertices = line
                .rsplit(' ')
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::InvalidConfig("bad ply vertex count".into()))?;
            in_vertex_element = true;
        } else if line.starts_with("element face") {
            n_faces = line
                .rsplit(' ')
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::InvalidConfig("bad ply face count".into()))?;
            in_vertex_element = false;
        } else if line.starts_with("property") && in_vertex_element {
            props += 1;
        } else if line == "end_header" {
            break;
        }
    }
    if props < 3 {
        return Err(Error::InvalidConfig("ply needs x y z properties".into()));
    }
    let mut vertices = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let line = lines
            .next()
            .ok_or_else(|| Error::InvalidConfig("ply truncated".into()))?;
        let mut it = line.split_whitespace();
        let mut v = [0.0f64; 3];
        for coord in v.iter_mut() {
            *coord = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::InvalidConfig("bad ply vertex".into()))?;
        }
        vertices.push(v);
    }
    let mut faces = Vec::with_capacity(n_faces);
    for _ in 0..n_faces {
        let line = lines
            .next()
            .ok_or_else(|| Error::InvalidConfig("ply truncated".into()))?;
        let nums: Vec<usize> = line
            .split_whitespace()
            .filter_map(|t| t.parse().ok())
            .collect();
        if nums.len() != 4 || nums[0] != 3 {
            return Err(Error::InvalidConfig("only triangle ply faces supported".into()));
        }
        faces.push([nums[1], nums[2], nums[3]]);
    }
    Ok(TriMesh {
        vertices,
        faces,
        scalar: None,
    })
}

fn evaluate_one(
    cfg: &ProjectConfig,
    id: &str,
    pred_dir: &Path,
    pseudo_dir: Option<&Path>,
) -> Result<SubjectEvaluation> {
    let (reference, _) =
        nifti::read_label_map(&cfg.standardized_dir().join(labels_file(id)), cfg.schema)?;
    let (predicted, _) = nifti::read_label_map(&pred_dir.join(warped_mask_file(id)), cfg.schema)?;
    reference
        .grid
        .require_compatible(&predicted.grid, "evaluate")?;
    let reference = parcellate_tc(&reference)?;
    let predicted = parcellate_tc(&predicted)?;

    let mut row = SubjectEvaluation {
        subject_id: id.to_string(),
        dsc: [None; 3],
        hd95_mm: [None; 3],
        area_diff: [None; 3],
    };
    for (k, region) in Region::ALL.iter().enumerate() {
        let value = region.cartilage_value(&cfg.schema);
        row.dsc[k] = Some(dsc(&predicted, value, &reference, value)?);
        row.hd95_mm[k] = Some(hd95(&predicted, value, &reference, value)?);
        if let Some(dir) = pseudo_dir {
            let pseudo_path = dir.join(format!("{id}_{}_pseudo.ply", region.name()));
            if pseudo_path.exists() {
                let pseudo = read_ply(&pseudo_path)?;
                let (_, interface, _) = region_interface(&predicted, *region)?;
                row.area_diff[k] = Some(relative_area_difference(
                    interface.area,
                    surface_area(&pseudo),
                )?);
            }
        }
    }
    Ok(row)
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let xs: Vec<f64> = values.flatten().collect();
    if xs.is_empty() {
        None
    } else {
        Some(xs.iter().sum::<f64>() / xs.len() as f64)
    }
}

pub const EVAL_HEADER: &str = "subject_id,dsc_FC,dsc_mTC,dsc_lTC,hd95_mm_FC,hd95_mm_mTC,hd95_mm_lTC,area_diff_FC,area_diff_mTC,area_diff_lTC";

fn csv_row(r: &SubjectEvaluation) -> String {
    let cell = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        r.subject_id,
        cell(r.dsc[0]),
        cell(r.dsc[1]),
        cell(r.dsc[2]),
        cell(r.hd95_mm[0]),
        cell(r.hd95_mm[1]),
        cell(r.hd95_mm[2]),
        cell(r.area_diff[0]),
        cell(r.area_diff[1]),
        cell(r.area_diff[2]),
    )
}

pub fn run(
    cfg: &ProjectConfig,
    manifest: &Manifest,
    split: Split,
    pred_dir: &Path,
    pseudo_dir: Option<&Path>,
    out_dir: &Path,
) -> Result<Vec<(String, Result<()>)>> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let subjects = manifest.split(split);
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for entry in &subjects {
        match evaluate_one(cfg, &entry.subject_id, pred_dir, pseudo_dir) {
            Ok(row) => {
                rows.push(row);
                results.push((entry.subject_id.clone(), Ok(())));
            }
            Err(e) => results.push((entry.subject_id.clone(), Err(e))),
        }
    }
    let mean = SubjectEvaluation {
        subject_id: "mean".into(),
        dsc: [
            mean_of(rows.iter().map(|r| r.dsc[0])),
            mean_of(rows.iter().map(|r| r.dsc[1])),
            mean_of(rows.iter().map(|r| r.dsc[2])),
        ],
        hd95_mm: [
            mean_of(rows.iter().map(|r| r.hd95_mm[0])),
            mean_of(rows.iter().map(|r| r.hd95_mm[1])),
            mean_of(rows.iter().map(|r| r.hd95_mm[2])),
        ],
        area_diff: [
            mean_of(rows.iter().map(|r| r.area_diff[0])),
            mean_of(rows.iter().map(|r| r.area_diff[1])),
            mean_of(rows.iter().map(|r| r.area_diff[2])),
        ],
    };
    let mut csv = String::from(EVAL_HEADER);
    csv.push('\n');
    for r in &rows {
        let _ = writeln!(csv, "{}", csv_row(r));
    }
    let _ = writeln!(csv, "{}", csv_row(&mean));
    let csv_path = out_dir.join("evaluation.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    #[derive(Serialize)]
    struct Report<'a> {
        subjects: &'a [SubjectEvaluation],
        mean: &'a SubjectEvaluation,
    }
    write_json(
        &Report {
            subjects: &rows,
            mean: &mean,
        },
        &out_dir.join("evaluation.json"),
    )?;
    Ok(results)
}
