//! The joint template/registration objective and its analytic gradient.
//!
//! Per subject i with velocity v_i exponentiated to (phi_i, phi_i^-1):
//!
//! ```text
//! L = sum_i [ l1*sim(T o phi_i, M_i) + l2*sim(M_i o phi_i^-1, T) ] / n
//!   + l3 * mean_i smoothness(v_i)
//!   + l4 * centering({v_i})
//! ```
//!
//! where T is the template, M_i the masked subject image, sim the stage's
//! similarity kernel. Every reduction runs in a fixed order (canonical
//! subject order, sequential voxel sums) so results are bitwise independent
//! of thread count.

use rayon::prelude::*;

use super::config::{RegistrationConfig, SimilarityKind, Stage};
use super::loss::{self, LnccPlan};
use crate::error::{Error, Result};
use crate::field::{
    exp_chain, resample_disp_ext, resample_disp_ext_adjoint, sample_scalar,
    sample_scalar_with_grad, scatter_scalar, self_compose_backprop, VelocityField,
};
use crate::grid::Grid;
use crate::volume::{ImageVolume, LabelMap};

/// One cohort member: standardized image, labels, cartilage-masked image,
/// and this subject's velocity parameters.
#[derive(Debug, Clone)]
pub struct SubjectEntry {
    pub id: String,
    pub image: ImageVolume,
    pub labels: LabelMap,
    pub masked_image: ImageVolume,
    pub velocity: VelocityField,
}

impl SubjectEntry {
    /// Build an entry by masking the image to the cartilage labels and
    /// attaching a zero velocity field at the configured field resolution.
    pub fn from_parts(
        id: impl Into<String>,
        image: ImageVolume,
        labels: LabelMap,
        cfg: &RegistrationConfig,
    ) -> Result<Self> {
        image.grid.require_compatible(&labels.grid, "subject")?;
        let masked = image.mask_image(&labels, &["FC", "TC"])?;
        let vgrid = velocity_grid_for(&image.grid, cfg.field_resolution_factor)?;
        Ok(SubjectEntry {
            id: id.into(),
            image,
            labels,
            masked_image: masked,
            velocity: VelocityField::zeros(vgrid, cfg.squaring_steps),
        })
    }

    /// Masked support must lie inside the cartilage labels.
    pub fn validate(&self) -> Result<()> {
        let fc = self.labels.schema.femoral_cartilage;
        let tc = self.labels.schema.tibial_cartilage;
        for (i, &v) in self.masked_image.data.iter().enumerate() {
            if v != 0.0 && self.labels.data[i] != fc && self.labels.data[i] != tc {
                return Err(Error::GridMismatch(
                    "masked image has support outside cartilage labels".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Velocity grid for an image grid at the given resolution factor.
pub fn velocity_grid_for(image_grid: &Grid, factor: f64) -> Result<Grid> {
    if factor <= 0.0 || factor > 1.0 {
        return Err(Error::InvalidConfig(format!(
            "field resolution factor {factor}"
        )));
    }
    if (factor - 1.0).abs() < 1e-12 {
        return Ok(image_grid.clone());
    }
    let mut ext = [0usize; 3];
    for a in 0..3 {
        ext[a] = ((image_grid.extents[a] as f64) * factor).round().max(1.0) as usize;
    }
    let f = [
        ext[0] as f64 / image_grid.extents[0] as f64,
        ext[1] as f64 / image_grid.extents[1] as f64,
        ext[2] as f64 / image_grid.extents[2] as f64,
    ];
    let mut affine = image_grid.affine;
    for c in 0..3 {
        for r in 0..3 {
            affine.m[r][c] /= f[c];
        }
    }
    Ok(Grid {
        extents: ext,
        spacing: [
            image_grid.spacing[0] / f[0],
            image_grid.spacing[1] / f[1],
            image_grid.spacing[2] / f[2],
        ],
        affine,
    })
}

pub(crate) enum SimPlan {
    Mse,
    Ncc,
    Lncc(LnccPlan),
}

impl SimPlan {
    pub fn new(kind: SimilarityKind, ext: [usize; 3], window_edge: usize) -> SimPlan {
        match kind {
            SimilarityKind::Mse => SimPlan::Mse,
            SimilarityKind::Ncc => SimPlan::Ncc,
            SimilarityKind::Lncc => SimPlan::Lncc(LnccPlan::new(ext, window_edge)),
        }
    }

    fn value(&self, ext: [usize; 3], a: &[f64], b: &[f64]) -> Result<f64> {
        match self {
            SimPlan::Mse => Ok(loss::mse(a, b)),
            SimPlan::Ncc => loss::ncc(a, b),
            SimPlan::Lncc(plan) => Ok(plan.loss(ext, a, b)),
        }
    }

    fn grad_first(
        &self,
        ext: [usize; 3],
        a: &[f64],
        b: &[f64],
        coef: f64,
        acc: &mut [f64],
    ) -> Result<()> {
        match self {
            SimPlan::Mse => {
                loss::mse_grad_first(a, b, coef, acc);
                Ok(())
            }
            SimPlan::Ncc => loss::ncc_grad_first(a, b, coef, acc),
            SimPlan::Lncc(plan) => {
                plan.grad_first(ext, a, b, coef, acc);
                Ok(())
            }
        }
    }

    /// Gradient w.r.t. the second argument; all three kernels are symmetric
    /// in their arguments, so this is grad_first with the roles swapped.
    fn grad_second(
        &self,
        ext: [usize; 3],
        a: &[f64],
        b: &[f64],
        coef: f64,
        acc: &mut [f64],
    ) -> Result<()> {
        match self {
            SimPlan::Mse => {
                loss::mse_grad_second(a, b, coef, acc);
                Ok(())
            }
            SimPlan::Ncc => loss::ncc_grad_first(b, a, coef, acc),
            SimPlan::Lncc(plan) => {
                plan.grad_first(ext, b, a, coef, acc);
                Ok(())
            }
        }
    }
}

pub(crate) struct SubjectEval {
    pub sim1: f64,
    pub sim2: f64,
    pub smooth: f64,
    pub grad_velocity: Option<Vec<[f64; 3]>>,
    pub grad_template: Option<Vec<f64>>,
}

/// Forward (and optionally backward) pass for one subject.
///
/// `coef1/coef2/coef3` are the chain coefficients (lambda / n) applied to the
/// similarity and smoothness gradients.
#[allow(clippy::too_many_arguments)]
pub(crate) fn eval_subject(
    ext: [usize; 3],
    template: &[f64],
    masked: &[f64],
    v_ext: [usize; 3],
    v: &[[f64; 3]],
    squaring_steps: u32,
    sim: &SimPlan,
    coef1: f64,
    coef2: f64,
    coef3: f64,
    want_grad: bool,
    want_template_grad: bool,
) -> Result<SubjectEval> {
    let k = squaring_steps;
    let n = ext[0] * ext[1] * ext[2];
    let chain_f = exp_chain(v_ext, v, 1.0, k);
    let chain_i = exp_chain(v_ext, v, -1.0, k);
    let coarse = v_ext != ext;
    let fwd = if coarse {
        resample_disp_ext(v_ext, chain_f.last().unwrap(), ext)
    } else {
        chain_f.last().unwrap().clone()
    };
    let inv = if coarse {
        resample_disp_ext(v_ext, chain_i.last().unwrap(), ext)
    } else {
        chain_i.last().unwrap().clone()
    };

    let nx = ext[0];
    let nxy = ext[0] * ext[1];
    let pos = |idx: usize, u: &[f64; 3]| -> [f64; 3] {
        [
            (idx % nx) as f64 + u[0],
            ((idx / nx) % ext[1]) as f64 + u[1],
            (idx / nxy) as f64 + u[2],
        ]
    };

    let mut warped_t = vec![0.0f64; n];
    for idx in 0..n {
        warped_t[idx] = sample_scalar(template, ext, pos(idx, &fwd[idx]));
    }
    let mut warped_m = vec![0.0f64; n];
    for idx in 0..n {
        warped_m[idx] = sample_scalar(masked, ext, pos(idx, &inv[idx]));
    }

    let sim1 = sim.value(ext, &warped_t, masked)?;
    let sim2 = sim.value(ext, &warped_m, template)?;
    let smooth = loss::smoothness(v_ext, v);

    if !want_grad {
        return Ok(SubjectEval {
            sim1,
            sim2,
            smooth,
            grad_velocity: None,
            grad_template: None,
        });
    }

    // upstream gradients on the two warped images
    let mut g1 = vec![0.0f64; n];
    sim.grad_first(ext, &warped_t, masked, coef1, &mut g1)?;
    let mut g2 = vec![0.0f64; n];
    sim.grad_first(ext, &warped_m, template, coef2, &mut g2)?;

    // template gradient: adjoint of the forward warp plus the second-arg
    // similarity term
    let grad_template = if want_template_grad {
        let mut gt = vec![0.0f64; n];
        for idx in 0..n {
            if g1[idx] != 0.0 {
                scatter_scalar(&mut gt, ext, pos(idx, &fwd[idx]), g1[idx]);
            }
        }
        sim.grad_second(ext, &warped_m, template, coef2, &mut gt)?;
        Some(gt)
    } else {
        None
    };

    // displacement gradients on the image grid
    let mut g_fwd = vec![[0.0f64; 3]; n];
    for idx in 0..n {
        if g1[idx] != 0.0 {
            let (_, gr) = sample_scalar_with_grad(template, ext, pos(idx, &fwd[idx]));
            g_fwd[idx] = [g1[idx] * gr[0], g1[idx] * gr[1], g1[idx] * gr[2]];
        }
    }
    let mut g_inv = vec![[0.0f64; 3]; n];
    for idx in 0..n {
        if g2[idx] != 0.0 {
            let (_, gr) = sample_scalar_with_grad(masked, ext, pos(idx, &inv[idx]));
            g_inv[idx] = [g2[idx] * gr[0], g2[idx] * gr[1], g2[idx] * gr[2]];
        }
    }

    // pull back to the velocity grid, then through the squaring chains
    let mut g_fwd_v = if coarse {
        resample_disp_ext_adjoint(v_ext, ext, &g_fwd)
    } else {
        g_fwd
    };
    let mut g_inv_v = if coarse {
        resample_disp_ext_adjoint(v_ext, ext, &g_inv)
    } else {
        g_inv
    };
    for kk in (0..k as usize).rev() {
        g_fwd_v = self_compose_backprop(v_ext, &chain_f[kk], &g_fwd_v);
        g_inv_v = self_compose_backprop(v_ext, &chain_i[kk], &g_inv_v);
    }
    let scale = 1.0 / 2.0f64.powi(k as i32);
    let mut grad_v = vec![[0.0f64; 3]; v.len()];
    for i in 0..v.len() {
        for d in 0..3 {
            grad_v[i][d] = scale * (g_fwd_v[i][d] - g_inv_v[i][d]);
        }
    }
    loss::smoothness_grad(v_ext, v, coef3, &mut grad_v);

    Ok(SubjectEval {
        sim1,
        sim2,
        smooth,
        grad_velocity: Some(grad_v),
        grad_template,
    })
}

fn check_cohort(
    template: &ImageVolume,
    subjects: &[SubjectEntry],
    cfg: &RegistrationConfig,
) -> Result<()> {
    cfg.validate()?;
    if subjects.is_empty() {
        return Err(Error::CohortTooSmall { need: 1, got: 0 });
    }
    for s in subjects {
        template
            .grid
            .require_compatible(&s.masked_image.grid, "total_loss")?;
        subjects[0]
            .velocity
            .grid
            .require_compatible(&s.velocity.grid, "total_loss velocities")?;
        if s.velocity.squaring_steps != cfg.squaring_steps {
            return Err(Error::InvalidConfig(
                "subject squaring_steps differ from config".into(),
            ));
        }
    }
    Ok(())
}

/// Indices sorted by subject id: the canonical summation order.
fn canonical_order(subjects: &[SubjectEntry]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..subjects.len()).collect();
    order.sort_by(|&a, &b| subjects[a].id.cmp(&subjects[b].id));
    order
}

/// Objective value for a cohort at the given stage.
pub fn total_loss(
    template: &ImageVolume,
    subjects: &[SubjectEntry],
    cfg: &RegistrationConfig,
    stage: Stage,
) -> Result<f64> {
    check_cohort(template, subjects, cfg)?;
    let ext = template.grid.extents;
    let sim = SimPlan::new(cfg.similarity(stage), ext, cfg.lncc_window_edge);
    let template_f: Vec<f64> = template.data.iter().map(|&v| v as f64).collect();
    let evals: Vec<SubjectEval> = subjects
        .par_iter()
        .map(|s| {
            let masked: Vec<f64> = s.masked_image.data.iter().map(|&v| v as f64).collect();
            eval_subject(
                ext,
                &template_f,
                &masked,
                s.velocity.grid.extents,
                &s.velocity.data,
                cfg.squaring_steps,
                &sim,
                0.0,
                0.0,
                0.0,
                false,
                false,
            )
        })
        .collect::<Result<_>>()?;
    let n = subjects.len() as f64;
    let mut loss = 0.0;
    for &i in &canonical_order(subjects) {
        let e = &evals[i];
        loss += (cfg.lambda1 * e.sim1 + cfg.lambda2 * e.sim2) / n;
        loss += cfg.lambda3 * e.smooth / n;
    }
    let lambda4 = cfg.lambda4_at(stage);
    if lambda4 > 0.0 {
        let views: Vec<&[[f64; 3]]> = canonical_order(subjects)
            .iter()
            .map(|&i| subjects[i].velocity.data.as_slice())
            .collect();
        loss += lambda4 * loss::centering(&views);
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite("total_loss"));
    }
    Ok(loss)
}

/// Gradient of `total_loss` w.r.t. template voxels (stage one only) and each
/// subject's velocity field, in subject slice order.
pub struct ObjectiveGradient {
    pub template: Option<Vec<f64>>,
    pub velocities: Vec<Vec<[f64; 3]>>,
}

pub fn grad_total_loss(
    template: &ImageVolume,
    subjects: &[SubjectEntry],
    cfg: &RegistrationConfig,
    stage: Stage,
) -> Result<ObjectiveGradient> {
    check_cohort(template, subjects, cfg)?;
    let ext = template.grid.extents;
    let sim = SimPlan::new(cfg.similarity(stage), ext, cfg.lncc_window_edge);
    let template_f: Vec<f64> = template.data.iter().map(|&v| v as f64).collect();
    let n = subjects.len() as f64;
    let want_template = matches!(stage, Stage::One);
    let mut evals_ok: Vec<SubjectEval> = subjects
        .par_iter()
        .map(|s| {
            let masked: Vec<f64> = s.masked_image.data.iter().map(|&v| v as f64).collect();
            eval_subject(
                ext,
                &template_f,
                &masked,
                s.velocity.grid.extents,
                &s.velocity.data,
                cfg.squaring_steps,
                &sim,
                cfg.lambda1 / n,
                cfg.lambda2 / n,
                cfg.lambda3 / n,
                true,
                want_template,
            )
        })
        .collect::<Result<_>>()?;

    let mut template_grad = if want_template {
        Some(vec![0.0f64; template.data.len()])
    } else {
        None
    };
    if let Some(tg) = template_grad.as_mut() {
        for &i in &canonical_order(subjects) {
            let sg = evals_ok[i].grad_template.as_ref().unwrap();
            for (a, b) in tg.iter_mut().zip(sg) {
                *a += b;
            }
        }
    }

    let mut velocities: Vec<Vec<[f64; 3]>> = evals_ok
        .iter_mut()
        .map(|e| e.grad_velocity.take().unwrap())
        .collect();

    let lambda4 = cfg.lambda4_at(stage);
    if lambda4 > 0.0 {
        let views: Vec<&[[f64; 3]]> = canonical_order(subjects)
            .iter()
            .map(|&i| subjects[i].velocity.data.as_slice())
            .collect();
        let mean = loss::centering_mean(&views);
        let n_vox = mean.len() as f64;
        let c = lambda4 * 2.0 / (n_vox * n);
        for g in velocities.iter_mut() {
            for (gi, mi) in g.iter_mut().zip(&mean) {
                for d in 0..3 {
                    gi[d] += c * mi[d];
                }
            }
        }
    }

    Ok(ObjectiveGradient {
        template: template_grad,
        velocities,
    })
}
