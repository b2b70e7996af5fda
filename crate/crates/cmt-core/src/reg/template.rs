//! Two-stage joint template learning + registration, template mask
//! construction, and template-to-image inference.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use super::config::{RegistrationConfig, SimilarityKind, Stage};
use super::objective::{eval_subject, velocity_grid_for, SimPlan, SubjectEntry};
use super::optim::{AdamVec3, Adam, LoopGuard, LoopVerdict};
use super::loss;
use crate::error::{Error, Result};
use crate::field::{
    exp_chain, resample_disp_ext, sample_scalar, DeformationField, VelocityField,
};
use crate::grid::Grid;
use crate::nifti;
use crate::volume::{ImageVolume, LabelMap, LabelSchema};

/// Per-label probability grid of the template (Eq.-style average of warped
/// indicator masks), kept at f64 in memory.
#[derive(Debug, Clone)]
pub struct LabelProbability {
    pub value: u8,
    pub data: Vec<f64>,
}

/// Learned template: image, per-label probability maps, thresholded mask.
#[derive(Debug, Clone)]
pub struct TemplateModel {
    pub image: ImageVolume,
    pub probabilities: Vec<LabelProbability>,
    pub mask: LabelMap,
    pub tau: f64,
    pub n_train: usize,
    pub config: RegistrationConfig,
}

/// One optimization-log row (stage, pyramid level, iteration, kernel, loss).
#[derive(Debug, Clone)]
pub struct LossRecord {
    pub stage: u8,
    pub level: usize,
    pub iter: usize,
    pub kernel: &'static str,
    pub loss: f64,
}

pub struct LearnOutcome {
    pub model: TemplateModel,
    /// Template image as frozen at the end of stage one; stage two must not
    /// touch it, so this is bit-identical to `model.image`.
    pub stage1_image: ImageVolume,
    /// Per-subject velocity fields, aligned with the input slice order.
    pub velocities: Vec<VelocityField>,
    /// Template-to-image deformations on the image grid.
    pub forward: Vec<DeformationField>,
    /// Image-to-template deformations on the image grid.
    pub inverse: Vec<DeformationField>,
    pub log: Vec<LossRecord>,
}

/// Shrink an LNCC window for a coarser pyramid level (kept odd, >= 3).
fn window_for_level(edge: usize, level: usize) -> usize {
    let w = edge >> level;
    (w | 1).max(3)
}

/// Clamped-trilinear resample of an f64 working image onto another grid.
fn resample_work(src: &Grid, data: &[f64], dst: &Grid) -> Result<Vec<f64>> {
    let map = src.affine.inverse()?.compose(&dst.affine);
    let n = dst.num_voxels();
    let mut out = vec![0.0f64; n];
    let ext = src.extents;
    for (idx, o) in out.iter_mut().enumerate() {
        let [x, y, z] = dst.coords(idx);
        let p = map.apply([x as f64, y as f64, z as f64]);
        let q = [
            p[0].clamp(0.0, (ext[0] - 1) as f64),
            p[1].clamp(0.0, (ext[1] - 1) as f64),
            p[2].clamp(0.0, (ext[2] - 1) as f64),
        ];
        *o = sample_scalar(data, ext, q);
    }
    Ok(out)
}

struct LevelData {
    grid: Grid,
    v_ext: [usize; 3],
    /// Per subject, canonical (id-sorted) order.
    masked: Vec<Vec<f64>>,
}

/// Optimization state shared by template learning and inference.
struct StageRun<'a> {
    ext: [usize; 3],
    v_ext: [usize; 3],
    masked: &'a [Vec<f64>],
    cfg: &'a RegistrationConfig,
    stage: Stage,
    level: usize,
    window: usize,
    template_learnable: bool,
}

impl StageRun<'_> {
    /// Run Adam until the iteration budget, convergence, or divergence.
    fn optimize(
        &self,
        template: &mut Vec<f64>,
        velocities: &mut [Vec<[f64; 3]>],
        log: &mut Vec<LossRecord>,
    ) -> Result<()> {
        let cfg = self.cfg;
        let n = self.masked.len() as f64;
        let kind = cfg.similarity(self.stage);
        let sim = SimPlan::new(kind, self.ext, self.window);
        let lambda4 = cfg.lambda4_at(self.stage);
        let n_vox_v = velocities[0].len();
        let mut guard = LoopGuard::new(cfg.convergence_rel_tol);
        let mut adam_t = Adam::new(if self.template_learnable { template.len() } else { 0 }, cfg.step_size);
        let mut adam_v: Vec<AdamVec3> = velocities
            .iter()
            .map(|_| AdamVec3::new(n_vox_v, cfg.step_size))
            .collect();
        let stage_no = match self.stage {
            Stage::One => 1,
            Stage::Two => 2,
        };
        for iter in 0..cfg.iters_per_level {
            let evals: Vec<super::objective::SubjectEval> = self
                .masked
                .par_iter()
                .zip(velocities.par_iter())
                .map(|(m, v)| {
                    eval_subject(
                        self.ext,
                        template,
                        m,
                        self.v_ext,
                        v,
                        cfg.squaring_steps,
                        &sim,
                        cfg.lambda1 / n,
                        cfg.lambda2 / n,
                        cfg.lambda3 / n,
                        true,
                        self.template_learnable,
                    )
                })
                .collect::<Result<_>>()?;

            let mut loss_val = 0.0;
            for e in &evals {
                loss_val += (cfg.lambda1 * e.sim1 + cfg.lambda2 * e.sim2) / n;
                loss_val += cfg.lambda3 * e.smooth / n;
            }
            let mut centering_mean: Option<Vec<[f64; 3]>> = None;
            if lambda4 > 0.0 {
                let views: Vec<&[[f64; 3]]> = velocities.iter().map(|v| v.as_slice()).collect();
                loss_val += lambda4 * loss::centering(&views);
                centering_mean = Some(loss::centering_mean(&views));
            }
            log.push(LossRecord {
                stage: stage_no,
                level: self.level,
                iter,
                kernel: kind.name(),
                loss: loss_val,
            });
            match guard.observe(loss_val) {
                LoopVerdict::Diverged => {
                    return Err(Error::Diverged(format!(
                        "stage {stage_no} level {} at iter {iter}, loss {loss_val}",
                        self.level
                    )))
                }
                LoopVerdict::Converged => return Ok(()),
                LoopVerdict::Continue => {}
            }

            // parameter updates
            if self.template_learnable {
                let mut tgrad = vec![0.0f64; template.len()];
                for e in &evals {
                    let g = e.grad_template.as_ref().unwrap();
                    for (a, b) in tgrad.iter_mut().zip(g) {
                        *a += b;
                    }
                }
                adam_t.step(template, &tgrad);
            }
            let cmean = centering_mean.as_ref();
            for (si, v) in velocities.iter_mut().enumerate() {
                let mut g = evals[si].grad_velocity.clone().unwrap();
                if let Some(mean) = cmean {
                    let c = lambda4 * 2.0 / (n_vox_v as f64 * n);
                    for (gi, mi) in g.iter_mut().zip(mean) {
                        for d in 0..3 {
                            gi[d] += c * mi[d];
                        }
                    }
                }
                adam_v[si].step(v, &g);
            }
        }
        let _ = guard.best();
        Ok(())
    }
}

/// Learn the template and per-subject registrations.
///
/// Stage one jointly optimizes the template (initialized to the voxelwise
/// cohort mean of masked images) and all velocity fields over a
/// multi-resolution pyramid. Stage two freezes the template and refines the
/// velocity fields at full resolution with the stage-two similarity.
pub fn learn_template(
    subjects: &[SubjectEntry],
    cfg: &RegistrationConfig,
    tau: f64,
) -> Result<LearnOutcome> {
    cfg.validate()?;
    if subjects.len() < 2 {
        return Err(Error::CohortTooSmall {
            need: 2,
            got: subjects.len(),
        });
    }
    let base = &subjects[0].masked_image.grid;
    for s in subjects {
        base.require_compatible(&s.masked_image.grid, "learn_template cohort")?;
    }
    // canonical processing order by id
    let mut order: Vec<usize> = (0..subjects.len()).collect();
    order.sort_by(|&a, &b| subjects[a].id.cmp(&subjects[b].id));

    // pyramid data, fine to coarse (low-pass prefiltered per level)
    let mut levels: Vec<LevelData> = Vec::with_capacity(cfg.pyramid_levels);
    for lvl in 0..cfg.pyramid_levels {
        let scale = (1 << lvl) as f64;
        let mut masked = Vec::with_capacity(subjects.len());
        let mut grid = None;
        for &i in &order {
            let lv = crate::volume::pyramid_level(&subjects[i].masked_image, scale)?;
            if grid.is_none() {
                grid = Some(lv.grid.clone());
            }
            masked.push(lv.data.iter().map(|&v| v as f64).collect());
        }
        let grid = grid.unwrap();
        let v_ext = velocity_grid_for(&grid, cfg.field_resolution_factor)?.extents;
        levels.push(LevelData {
            grid,
            v_ext,
            masked,
        });
    }

    let mut log = Vec::new();

    // stage 1, coarse to fine
    let coarsest = levels.len() - 1;
    let mut template: Vec<f64> = {
        let n = levels[coarsest].grid.num_voxels();
        let mut t = vec![0.0f64; n];
        for m in &levels[coarsest].masked {
            for (a, b) in t.iter_mut().zip(m) {
                *a += b;
            }
        }
        let k = levels[coarsest].masked.len() as f64;
        t.iter_mut().for_each(|v| *v /= k);
        t
    };
    let n_v_coarse =
        levels[coarsest].v_ext[0] * levels[coarsest].v_ext[1] * levels[coarsest].v_ext[2];
    let mut velocities: Vec<Vec<[f64; 3]>> = vec![vec![[0.0; 3]; n_v_coarse]; subjects.len()];

    for lvl in (0..levels.len()).rev() {
        let data = &levels[lvl];
        let run = StageRun {
            ext: data.grid.extents,
            v_ext: data.v_ext,
            masked: &data.masked,
            cfg,
            stage: Stage::One,
            level: lvl,
            window: window_for_level(cfg.lncc_window_edge, lvl),
            template_learnable: true,
        };
        run.optimize(&mut template, &mut velocities, &mut log)?;
        if lvl > 0 {
            let next = &levels[lvl - 1];
            template = resample_work(&data.grid, &template, &next.grid)?;
            for v in velocities.iter_mut() {
                *v = resample_disp_ext(data.v_ext, v, next.v_ext);
            }
        }
    }

    // freeze: f32 snapshot at the end of stage one
    let fine = &levels[0];
    let stage1_image = ImageVolume {
        grid: fine.grid.clone(),
        data: template.iter().map(|&v| v as f32).collect(),
    };

    // stage 2: registration refinement only, full resolution
    let mut frozen: Vec<f64> = stage1_image.data.iter().map(|&v| v as f64).collect();
    {
        let run = StageRun {
            ext: fine.grid.extents,
            v_ext: fine.v_ext,
            masked: &fine.masked,
            cfg,
            stage: Stage::Two,
            level: 0,
            window: cfg.lncc_window_edge,
            template_learnable: false,
        };
        run.optimize(&mut frozen, &mut velocities, &mut log)?;
    }
    // the published image comes from the post-stage-two buffer, so equality
    // with the stage-one snapshot is a real claim about the schedule
    let template_image = ImageVolume {
        grid: fine.grid.clone(),
        data: frozen.iter().map(|&v| v as f32).collect(),
    };

    // package per-subject outputs back in input order
    let vgrid = velocity_grid_for(&fine.grid, cfg.field_resolution_factor)?;
    let mut velocity_fields: Vec<Option<VelocityField>> = vec![None; subjects.len()];
    let mut forward: Vec<Option<DeformationField>> = vec![None; subjects.len()];
    let mut inverse: Vec<Option<DeformationField>> = vec![None; subjects.len()];
    for (slot, &i) in order.iter().enumerate() {
        let vf = VelocityField {
            grid: vgrid.clone(),
            data: velocities[slot].clone(),
            squaring_steps: cfg.squaring_steps,
        };
        let (fwd, inv) = exponentiate_to_grid(&vf, &fine.grid);
        velocity_fields[i] = Some(vf);
        forward[i] = Some(fwd);
        inverse[i] = Some(inv);
    }
    let velocity_fields: Vec<VelocityField> = velocity_fields.into_iter().flatten().collect();
    let forward: Vec<DeformationField> = forward.into_iter().flatten().collect();
    let inverse: Vec<DeformationField> = inverse.into_iter().flatten().collect();

    let (probabilities, mask) = build_template_mask(subjects, &inverse, tau)?;
    let model = TemplateModel {
        image: template_image,
        probabilities,
        mask,
        tau,
        n_train: subjects.len(),
        config: cfg.clone(),
    };
    Ok(LearnOutcome {
        model,
        stage1_image,
        velocities: velocity_fields,
        forward,
        inverse,
        log,
    })
}

/// Exponentiate a velocity field and upsample both exponentials to the
/// image grid when the field lives on a coarser one.
pub fn exponentiate_to_grid(
    v: &VelocityField,
    image_grid: &Grid,
) -> (DeformationField, DeformationField) {
    let fwd = exp_chain(v.grid.extents, &v.data, 1.0, v.squaring_steps)
        .pop()
        .unwrap();
    let inv = exp_chain(v.grid.extents, &v.data, -1.0, v.squaring_steps)
        .pop()
        .unwrap();
    let (fwd, inv) = if v.grid.extents != image_grid.extents {
        (
            resample_disp_ext(v.grid.extents, &fwd, image_grid.extents),
            resample_disp_ext(v.grid.extents, &inv, image_grid.extents),
        )
    } else {
        (fwd, inv)
    };
    (
        DeformationField {
            grid: image_grid.clone(),
            data: fwd,
        },
        DeformationField {
            grid: image_grid.clone(),
            data: inv,
        },
    )
}

/// Average the warped ground-truth masks into per-label probability maps and
/// threshold them into the template mask: a voxel is labeled with the argmax
/// label when its probability is >= tau, background otherwise.
pub fn build_template_mask(
    subjects: &[SubjectEntry],
    inverse_fields: &[DeformationField],
    tau: f64,
) -> Result<(Vec<LabelProbability>, LabelMap)> {
    if subjects.is_empty() || subjects.len() != inverse_fields.len() {
        return Err(Error::CohortTooSmall {
            need: 1,
            got: subjects.len(),
        });
    }
    let grid = &subjects[0].labels.grid;
    for (s, f) in subjects.iter().zip(inverse_fields) {
        grid.require_compatible(&s.labels.grid, "build_template_mask")?;
        grid.require_compatible(&f.grid, "build_template_mask fields")?;
    }
    let mut order: Vec<usize> = (0..subjects.len()).collect();
    order.sort_by(|&a, &b| subjects[a].id.cmp(&subjects[b].id));

    let mut values: Vec<u8> = Vec::new();
    for s in subjects {
        for v in s.labels.present_values() {
            if !values.contains(&v) {
                values.push(v);
            }
        }
    }
    values.sort_unstable();

    let ext = grid.extents;
    let n = grid.num_voxels();
    let nx = ext[0];
    let nxy = ext[0] * ext[1];
    let n_sub = subjects.len() as f64;
    let mut probabilities = Vec::with_capacity(values.len());
    for &value in &values {
        let mut acc = vec![0.0f64; n];
        for &i in &order {
            let ind: Vec<f64> = subjects[i]
                .labels
                .data
                .iter()
                .map(|&l| if l == value { 1.0 } else { 0.0 })
                .collect();
            let f = &inverse_fields[i].data;
            for idx in 0..n {
                let u = f[idx];
                let p = [
                    (idx % nx) as f64 + u[0],
                    ((idx / nx) % ext[1]) as f64 + u[1],
                    (idx / nxy) as f64 + u[2],
                ];
                acc[idx] += sample_scalar(&ind, ext, p);
            }
        }
        acc.iter_mut().for_each(|v| *v /= n_sub);
        probabilities.push(LabelProbability { value, data: acc });
    }

    let mut mask = vec![0u8; n];
    for idx in 0..n {
        let mut best_p = 0.0f64;
        let mut best_l = 0u8;
        for lp in &probabilities {
            if lp.data[idx] > best_p {
                best_p = lp.data[idx];
                best_l = lp.value;
            }
        }
        mask[idx] = if best_p >= tau && best_l != 0 { best_l } else { 0 };
    }
    let mask = LabelMap {
        grid: grid.clone(),
        data: mask,
        schema: subjects[0].labels.schema,
    };
    Ok((probabilities, mask))
}

/// Register a frozen template to one (masked) target image with the
/// stage-two objective over a multi-resolution pyramid; returns the forward
/// (template-to-image) and inverse deformations on the target grid.
pub fn register_to_template(
    model: &TemplateModel,
    target_masked: &ImageVolume,
    cfg: &RegistrationConfig,
) -> Result<(DeformationField, DeformationField)> {
    cfg.validate()?;
    let grid = &model.image.grid;
    let target = if grid.compatible(&target_masked.grid) {
        target_masked.clone()
    } else {
        let data = resample_work(
            &target_masked.grid,
            &target_masked.data.iter().map(|&v| v as f64).collect::<Vec<_>>(),
            grid,
        )?;
        ImageVolume {
            grid: grid.clone(),
            data: data.iter().map(|&v| v as f32).collect(),
        }
    };

    // pyramid of template/target pairs
    struct InferLevel {
        grid: Grid,
        v_ext: [usize; 3],
        template: Vec<f64>,
        target: Vec<f64>,
    }
    let mut levels = Vec::with_capacity(cfg.pyramid_levels);
    for lvl in 0..cfg.pyramid_levels {
        let scale = (1 << lvl) as f64;
        let t_img = crate::volume::pyramid_level(&model.image, scale)?;
        let m_img = crate::volume::pyramid_level(&target, scale)?;
        let v_ext = velocity_grid_for(&t_img.grid, cfg.field_resolution_factor)?.extents;
        levels.push(InferLevel {
            grid: t_img.grid.clone(),
            v_ext,
            template: t_img.data.iter().map(|&v| v as f64).collect(),
            target: m_img.data.iter().map(|&v| v as f64).collect(),
        });
    }

    let coarsest = levels.len() - 1;
    let nvc = levels[coarsest].v_ext[0] * levels[coarsest].v_ext[1] * levels[coarsest].v_ext[2];
    let mut velocities = vec![vec![[0.0f64; 3]; nvc]];
    let mut log = Vec::new();
    for lvl in (0..levels.len()).rev() {
        let data = &levels[lvl];
        let masked = std::slice::from_ref(&data.target);
        let run = StageRun {
            ext: data.grid.extents,
            v_ext: data.v_ext,
            masked,
            cfg,
            stage: Stage::Two,
            level: lvl,
            window: window_for_level(cfg.lncc_window_edge, lvl),
            template_learnable: false,
        };
        let mut frozen = data.template.clone();
        run.optimize(&mut frozen, &mut velocities, &mut log)?;
        if lvl > 0 {
            let next = &levels[lvl - 1];
            velocities[0] = resample_disp_ext(data.v_ext, &velocities[0], next.v_ext);
        }
    }

    let vf = VelocityField {
        grid: velocity_grid_for(grid, cfg.field_resolution_factor)?,
        data: velocities.pop().unwrap(),
        squaring_steps: cfg.squaring_steps,
    };
    Ok(exponentiate_to_grid(&vf, grid))
}

// ---------------------------------------------------------------------------
// template persistence
// ---------------------------------------------------------------------------

pub const TEMPLATE_IMAGE_FILE: &str = "template.nii.gz";
pub const TEMPLATE_MASK_FILE: &str = "template_mask.nii.gz";
pub const TEMPLATE_METADATA_FILE: &str = "metadata.txt";

fn prob_file(value: u8) -> String {
    format!("prob_label_{value:02}.nii.gz")
}

/// Persist a template model as a directory of NIfTI volumes plus a
/// plain-text metadata file.
pub fn save_template(model: &TemplateModel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    nifti::write_volume(&model.image, &dir.join(TEMPLATE_IMAGE_FILE))?;
    nifti::write_label_map(&model.mask, &dir.join(TEMPLATE_MASK_FILE))?;
    for lp in &model.probabilities {
        let img = ImageVolume {
            grid: model.image.grid.clone(),
            data: lp.data.iter().map(|&v| v as f32).collect(),
        };
        nifti::write_volume(&img, &dir.join(prob_file(lp.value)))?;
    }
    let mut meta = String::new();
    let s = &model.mask.schema;
    let _ = writeln!(meta, "format = template-model-v1");
    let _ = writeln!(meta, "tau = {}", model.tau);
    let _ = writeln!(meta, "n_train = {}", model.n_train);
    let labels: Vec<String> = model
        .probabilities
        .iter()
        .map(|p| p.value.to_string())
        .collect();
    let _ = writeln!(meta, "label_values = {}", labels.join(","));
    let _ = writeln!(meta, "schema_femur = {}", s.femur);
    let _ = writeln!(meta, "schema_femoral_cartilage = {}", s.femoral_cartilage);
    let _ = writeln!(meta, "schema_tibia = {}", s.tibia);
    let _ = writeln!(meta, "schema_tibial_cartilage = {}", s.tibial_cartilage);
    let _ = writeln!(
        meta,
        "schema_medial_tibial_cartilage = {}",
        s.medial_tibial_cartilage
    );
    let _ = writeln!(
        meta,
        "schema_lateral_tibial_cartilage = {}",
        s.lateral_tibial_cartilage
    );
    let c = &model.config;
    let _ = writeln!(meta, "reg_similarity_stage1 = {}", c.similarity_stage1.name());
    let _ = writeln!(meta, "reg_similarity_stage2 = {}", c.similarity_stage2.name());
    let _ = writeln!(meta, "reg_lncc_window_edge = {}", c.lncc_window_edge);
    let _ = writeln!(meta, "reg_lambda1 = {}", c.lambda1);
    let _ = writeln!(meta, "reg_lambda2 = {}", c.lambda2);
    let _ = writeln!(meta, "reg_lambda3 = {}", c.lambda3);
    let _ = writeln!(meta, "reg_lambda4 = {}", c.lambda4);
    let _ = writeln!(meta, "reg_pyramid_levels = {}", c.pyramid_levels);
    let _ = writeln!(meta, "reg_iters_per_level = {}", c.iters_per_level);
    let _ = writeln!(meta, "reg_step_size = {}", c.step_size);
    let _ = writeln!(meta, "reg_convergence_rel_tol = {}", c.convergence_rel_tol);
    let _ = writeln!(meta, "reg_squaring_steps = {}", c.squaring_steps);
    let _ = writeln!(
        meta,
        "reg_field_resolution_factor = {}",
        c.field_resolution_factor
    );
    let _ = writeln!(meta, "reg_seed = {}", c.seed);
    let meta_path = dir.join(TEMPLATE_METADATA_FILE);
    std::fs::write(&meta_path, meta).map_err(|e| Error::io(meta_path.display().to_string(), e))
}

fn parse_kv(text: &str) -> std::collections::BTreeMap<String, String> {
    let mut map = std::collections::BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    map
}

/// Load a template model saved by `save_template`.
pub fn load_template(dir: &Path) -> Result<TemplateModel> {
    let meta_path = dir.join(TEMPLATE_METADATA_FILE);
    let text = std::fs::read_to_string(&meta_path)
        .map_err(|e| Error::io(meta_path.display().to_string(), e))?;
    let kv = parse_kv(&text);
    let get = |key: &str| -> Result<&String> {
        kv.get(key)
            .ok_or_else(|| Error::MissingInputs(format!("{key} in template metadata")))
    };
    let parse_f64 = |key: &str| -> Result<f64> {
        get(key)?
            .parse::<f64>()
            .map_err(|_| Error::InvalidConfig(format!("bad {key}")))
    };
    let parse_usize = |key: &str| -> Result<usize> {
        get(key)?
            .parse::<usize>()
            .map_err(|_| Error::InvalidConfig(format!("bad {key}")))
    };
    let parse_u8 = |key: &str| -> Result<u8> {
        get(key)?
            .parse::<u8>()
            .map_err(|_| Error::InvalidConfig(format!("bad {key}")))
    };
    let schema = LabelSchema {
        femur: parse_u8("schema_femur")?,
        femoral_cartilage: parse_u8("schema_femoral_cartilage")?,
        tibia: parse_u8("schema_tibia")?,
        tibial_cartilage: parse_u8("schema_tibial_cartilage")?,
        medial_tibial_cartilage: parse_u8("schema_medial_tibial_cartilage")?,
        lateral_tibial_cartilage: parse_u8("schema_lateral_tibial_cartilage")?,
    };
    let (image, _) = nifti::read_volume(&dir.join(TEMPLATE_IMAGE_FILE))?;
    let (mask, _) = nifti::read_label_map(&dir.join(TEMPLATE_MASK_FILE), schema)?;
    let mut probabilities = Vec::new();
    for tok in get("label_values")?.split(',') {
        let tok = tok.trim();
        if tok.is_empty() {
            continue;
        }
        let value: u8 = tok
            .parse()
            .map_err(|_| Error::InvalidConfig("bad label_values".into()))?;
        let (img, _) = nifti::read_volume(&dir.join(prob_file(value)))?;
        probabilities.push(LabelProbability {
            value,
            data: img.data.iter().map(|&v| v as f64).collect(),
        });
    }
    let config = RegistrationConfig {
        similarity_stage1: SimilarityKind::parse(get("reg_similarity_stage1")?)?,
        similarity_stage2: SimilarityKind::parse(get("reg_similarity_stage2")?)?,
        lncc_window_edge: parse_usize("reg_lncc_window_edge")?,
        lambda1: parse_f64("reg_lambda1")?,
        lambda2: parse_f64("reg_lambda2")?,
        lambda3: parse_f64("reg_lambda3")?,
        lambda4: parse_f64("reg_lambda4")?,
        pyramid_levels: parse_usize("reg_pyramid_levels")?,
        iters_per_level: parse_usize("reg_iters_per_level")?,
        step_size: parse_f64("reg_step_size")?,
        convergence_rel_tol: parse_f64("reg_convergence_rel_tol")?,
        squaring_steps: parse_usize("reg_squaring_steps")? as u32,
        field_resolution_factor: parse_f64("reg_field_resolution_factor")?,
        seed: parse_usize("reg_seed")? as u64,
    };
    Ok(TemplateModel {
        image,
        probabilities,
        mask,
        tau: parse_f64("tau")?,
        n_train: parse_usize("n_train")?,
        config,
    })
}
