//! 6-DOF rigid registration by multi-resolution gradient ascent on global
//! NCC (3 Euler angles + 3 translations, rotation about the fixed-image
//! center).

use super::config::RegistrationConfig;
use super::loss;
use super::optim::{Adam, LoopGuard, LoopVerdict};
use crate::error::{Error, Result};
use crate::field::sample_scalar;
use crate::geom::{rigid_affine, Affine4, Vec3};
use crate::volume::ImageVolume;

/// Internal parameter scaling so one Adam step size suits both angles
/// (radians) and translations (mm).
const TRANSLATION_UNIT_MM: f64 = 5.0;

fn world_center(img: &ImageVolume) -> Vec3 {
    let e = img.grid.extents;
    img.grid.voxel_to_world([
        (e[0] - 1) as f64 / 2.0,
        (e[1] - 1) as f64 / 2.0,
        (e[2] - 1) as f64 / 2.0,
    ])
}

fn params_to_affine(p: &[f64; 6], center: Vec3) -> Affine4 {
    rigid_affine(
        [p[0], p[1], p[2]],
        [
            p[3] * TRANSLATION_UNIT_MM,
            p[4] * TRANSLATION_UNIT_MM,
            p[5] * TRANSLATION_UNIT_MM,
        ],
        center,
    )
}

/// NCC loss (1 - r^2) of `moving` resampled through T^-1 onto the fixed
/// grid; `None` when there is no usable intensity overlap.
fn rigid_loss(
    moving: &[f64],
    moving_ext: [usize; 3],
    moving_inv_affine: &Affine4,
    fixed: &[f64],
    fixed_grid_affine: &Affine4,
    fixed_ext: [usize; 3],
    t: &Affine4,
) -> Option<f64> {
    let t_inv = t.inverse().ok()?;
    let map = moving_inv_affine.compose(&t_inv).compose(fixed_grid_affine);
    let n = fixed.len();
    let mut warped = vec![0.0f64; n];
    let nx = fixed_ext[0];
    let nxy = fixed_ext[0] * fixed_ext[1];
    for (idx, w) in warped.iter_mut().enumerate() {
        let x = (idx % nx) as f64;
        let y = ((idx / nx) % fixed_ext[1]) as f64;
        let z = (idx / nxy) as f64;
        let q = map.apply([x, y, z]);
        *w = sample_scalar(moving, moving_ext, q);
    }
    loss::ncc(&warped, fixed).ok()
}

/// Recover the rotation+translation maximizing NCC between `moving` and
/// `fixed`; the result maps moving-world coordinates into fixed-world
/// coordinates.
pub fn rigid_register(
    moving: &ImageVolume,
    fixed: &ImageVolume,
    cfg: &RegistrationConfig,
) -> Result<Affine4> {
    cfg.validate()?;
    let center = world_center(fixed);
    let mut params = [0.0f64; 6];

    for lvl in (0..cfg.pyramid_levels).rev() {
        let scale = (1 << lvl) as f64;
        let m_img = crate::volume::pyramid_level(moving, scale)?;
        let f_img = crate::volume::pyramid_level(fixed, scale)?;
        let m_data: Vec<f64> = m_img.data.iter().map(|&v| v as f64).collect();
        let f_data: Vec<f64> = f_img.data.iter().map(|&v| v as f64).collect();
        let m_inv = m_img.grid.affine.inverse()?;
        let eval = |p: &[f64; 6]| -> Option<f64> {
            rigid_loss(
                &m_data,
                m_img.grid.extents,
                &m_inv,
                &f_data,
                &f_img.grid.affine,
                f_img.grid.extents,
                &params_to_affine(p, center),
            )
        };

        // coarse levels take big steps, fine levels polish
        let lr = cfg.step_size / (1 << (cfg.pyramid_levels - 1 - lvl)) as f64;
        let mut adam = Adam::new(6, lr.max(cfg.step_size / 8.0));
        let mut guard = LoopGuard::with_patience(cfg.convergence_rel_tol, 25);
        let mut best = (f64::INFINITY, params);
        let h = 2e-4;
        for _iter in 0..cfg.iters_per_level {
            let loss_val = eval(&params).unwrap_or(1.0);
            if loss_val < best.0 {
                best = (loss_val, params);
            }
            match guard.observe(loss_val) {
                LoopVerdict::Diverged => {
                    return Err(Error::Diverged("rigid registration".into()))
                }
                LoopVerdict::Converged => break,
                LoopVerdict::Continue => {}
            }
            let mut grad = [0.0f64; 6];
            for d in 0..6 {
                let mut up = params;
                let mut dn = params;
                up[d] += h;
                dn[d] -= h;
                let lu = eval(&up).unwrap_or(1.0);
                let ld = eval(&dn).unwrap_or(1.0);
                grad[d] = (lu - ld) / (2.0 * h);
            }
            adam.step(&mut params, &grad);
        }
        params = best.1;
    }

    // reject registrations with no real correlation signal (e.g. disjoint
    // fields of view)
    let m_data: Vec<f64> = moving.data.iter().map(|&v| v as f64).collect();
    let f_data: Vec<f64> = fixed.data.iter().map(|&v| v as f64).collect();
    let final_loss = rigid_loss(
        &m_data,
        moving.grid.extents,
        &moving.grid.affine.inverse()?,
        &f_data,
        &fixed.grid.affine,
        fixed.grid.extents,
        &params_to_affine(&params, center),
    )
    .unwrap_or(1.0);
    if final_loss > 0.8 {
        return Err(Error::Diverged(format!(
            "rigid registration ended with NCC loss {final_loss:.3}"
        )));
    }
    Ok(params_to_affine(&params, center))
}
