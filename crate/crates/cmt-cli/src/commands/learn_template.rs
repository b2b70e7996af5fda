//! `cmt learn-template`: joint template learning + registration on the
//! train split; persists the template directory, per-subject fields, and the
//! per-stage loss curves.

use std::fmt::Write as _;
use std::path::Path;

use cmt_core::nifti;
use cmt_core::reg::{learn_template, save_template, SubjectEntry};
use cmt_core::{Error, Result};

use super::common::load_standardized;
use crate::config::ProjectConfig;
use crate::manifest::{Manifest, Split};

pub fn run(cfg: &ProjectConfig, manifest: &Manifest, out_dir: &Path) -> Result<()> {
    let train = manifest.split(Split::Train);
    if train.len() < 2 {
        return Err(Error::CohortTooSmall {
            need: 2,
            got: train.len(),
        });
    }
    let mut subjects = Vec::with_capacity(train.len());
    for entry in &train {
        let (image, labels) = load_standardized(cfg, &entry.subject_id)?;
        subjects.push(SubjectEntry::from_parts(
            entry.subject_id.clone(),
            image,
            labels,
            &cfg.registration,
        )?);
    }
    let outcome = learn_template(&subjects, &cfg.registration, cfg.tau)?;
    save_template(&outcome.model, out_dir)?;

    // Eq.-1 outputs for the training subjects
    let fields_dir = out_dir.join("fields");
    for (i, s) in subjects.iter().enumerate() {
        nifti::write_vector_field(
            &outcome.forward[i].grid,
            &outcome.forward[i].data,
            "template-to-image displacement, voxel units",
            &fields_dir.join(format!("{}_phi.nii.gz", s.id)),
        )?;
        nifti::write_vector_field(
            &outcome.inverse[i].grid,
            &outcome.inverse[i].data,
            "image-to-template displacement, voxel units",
            &fields_dir.join(format!("{}_phi_inv.nii.gz", s.id)),
        )?;
    }

    let mut csv = String::from("stage,level,iter,kernel,loss\n");
    for r in &outcome.log {
        let _ = writeln!(csv, "{},{},{},{},{}", r.stage, r.level, r.iter, r.kernel, r.loss);
    }
    let curve = out_dir.join("loss_curve.csv");
    std::fs::write(&curve, csv).map_err(|e| Error::io(curve.display().to_string(), e))?;
    eprintln!(
        "[learn-template] trained on {} subjects; template in {}",
        subjects.len(),
        out_dir.display()
    );
    Ok(())
}
