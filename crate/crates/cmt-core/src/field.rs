//! Stationary-velocity-field deformations.
//!
//! Displacements are stored in voxel units of their grid; conversion to mm
//! happens only at mesh/metric boundaries. A deformation maps `x -> x + u(x)`.
//! Warping and composition sample with zero padding (out-of-domain
//! contributions are zero); field resampling uses edge-clamped sampling so
//! constant fields stay constant.

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::grid::Grid;
use crate::volume::{ImageVolume, LabelMap};

pub const DEFAULT_SQUARING_STEPS: u32 = 7;

/// Stationary velocity field (voxel units per unit flow time).
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityField {
    pub grid: Grid,
    pub data: Vec<[f64; 3]>,
    pub squaring_steps: u32,
}

impl VelocityField {
    pub fn zeros(grid: Grid, squaring_steps: u32) -> Self {
        let n = grid.num_voxels();
        VelocityField {
            grid,
            data: vec![[0.0; 3]; n],
            squaring_steps,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|v| v.iter().all(|c| c.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.data
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0f64, |m, c| m.max(c.abs()))
    }
}

/// Dense displacement field: maps voxel position x to x + u(x).
#[derive(Debug, Clone, PartialEq)]
pub struct DeformationField {
    pub grid: Grid,
    pub data: Vec<[f64; 3]>,
}

impl DeformationField {
    pub fn identity(grid: Grid) -> Self {
        let n = grid.num_voxels();
        DeformationField {
            grid,
            data: vec![[0.0; 3]; n],
        }
    }

    pub fn mean_abs(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        let s: f64 = self
            .data
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
            .sum();
        s / self.data.len() as f64
    }
}

// ---------------------------------------------------------------------------
// low-level trilinear kernels (shared with the registration optimizer)
// ---------------------------------------------------------------------------

#[inline]
fn cell(p: f64) -> (i64, f64) {
    let f = p.floor();
    (f as i64, p - f)
}

/// Zero-padded trilinear gather of a scalar grid.
pub(crate) fn sample_scalar(data: &[f64], ext: [usize; 3], p: Vec3) -> f64 {
    let (x0, fx) = cell(p[0]);
    let (y0, fy) = cell(p[1]);
    let (z0, fz) = cell(p[2]);
    let mut acc = 0.0;
    for dz in 0..2i64 {
        let z = z0 + dz;
        if z < 0 || z >= ext[2] as i64 {
            continue;
        }
        let wz = if dz == 0 { 1.0 - fz } else { fz };
        for dy in 0..2i64 {
            let y = y0 + dy;
            if y < 0 || y >= ext[1] as i64 {
                continue;
            }
            let wyz = wz * if dy == 0 { 1.0 - fy } else { fy };
            let row = (ext[0] as i64 * (y + ext[1] as i64 * z)) as usize;
            for dx in 0..2i64 {
                let x = x0 + dx;
                if x < 0 || x >= ext[0] as i64 {
                    continue;
                }
                let w = wyz * if dx == 0 { 1.0 - fx } else { fx };
                acc += w * data[row + x as usize];
            }
        }
    }
    acc
}

/// Zero-padded gather plus the derivative w.r.t. the sample position.
pub(crate) fn sample_scalar_with_grad(data: &[f64], ext: [usize; 3], p: Vec3) -> (f64, Vec3) {
    let (x0, fx) = cell(p[0]);
    let (y0, fy) = cell(p[1]);
    let (z0, fz) = cell(p[2]);
    let mut val = 0.0;
    let mut grad = [0.0; 3];
    for dz in 0..2i64 {
        let z = z0 + dz;
        if z < 0 || z >= ext[2] as i64 {
            continue;
        }
        let (wz, dwz) = if dz == 0 { (1.0 - fz, -1.0) } else { (fz, 1.0) };
        for dy in 0..2i64 {
            let y = y0 + dy;
            if y < 0 || y >= ext[1] as i64 {
                continue;
            }
            let (wy, dwy) = if dy == 0 { (1.0 - fy, -1.0) } else { (fy, 1.0) };
            let row = (ext[0] as i64 * (y + ext[1] as i64 * z)) as usize;
            for dx in 0..2i64 {
                let x = x0 + dx;
                if x < 0 || x >= ext[0] as i64 {
                    continue;
                }
                let (wx, dwx) = if dx == 0 { (1.0 - fx, -1.0) } else { (fx, 1.0) };
                let v = data[row + x as usize];
                val += wx * wy * wz * v;
                grad[0] += dwx * wy * wz * v;
                grad[1] += wx * dwy * wz * v;
                grad[2] += wx * wy * dwz * v;
            }
        }
    }
    (val, grad)
}

/// Adjoint of `sample_scalar`: distribute `g` onto the 8 corner voxels.
pub(crate) fn scatter_scalar(acc: &mut [f64], ext: [usize; 3], p: Vec3, g: f64) {
    let (x0, fx) = cell(p[0]);
    let (y0, fy) = cell(p[1]);
    let (z0, fz) = cell(p[2]);
    for dz in 0..2i64 {
        let z = z0 + dz;
        if z < 0 || z >= ext[2] as i64 {
            continue;
        }
        let wz = if dz == 0 { 1.0 - fz } else { fz };
        for dy in 0..2i64 {
            let y = y0 + dy;
            if y < 0 || y >= ext[1] as i64 {
                continue;
            }
            let wyz = wz * if dy == 0 { 1.0 - fy } else { fy };
            let row = (ext[0] as i64 * (y + ext[1] as i64 * z)) as usize;
            for dx in 0..2i64 {
                let x = x0 + dx;
                if x < 0 || x >= ext[0] as i64 {
                    continue;
                }
                let w = wyz * if dx == 0 { 1.0 - fx } else { fx };
                acc[row + x as usize] += w * g;
            }
        }
    }
}

/// Zero-padded trilinear gather of a 3-vector grid.
pub(crate) fn sample_vec3(data: &[[f64; 3]], ext: [usize; 3], p: Vec3) -> Vec3 {
    let (x0, fx) = cell(p[0]);
    let (y0, fy) = cell(p[1]);
    let (z0, fz) = cell(p[2]);
    let mut acc = [0.0; 3];
    for dz in 0..2i64 {
        let z = z0 + dz;
        if z < 0 || z >= ext[2] as i64 {
            continue;
        }
        let wz = if dz == 0 { 1.0 - fz } else { fz };
        for dy in 0..2i64 {
            let y = y0 + dy;
            if y < 0 || y >= ext[1] as i64 {
                continue;
            }
            let wyz = wz * if dy == 0 { 1.0 - fy } else { fy };
            let row = (ext[0] as i64 * (y + ext[1] as i64 * z)) as usize;
            for dx in 0..2i64 {
                let x = x0 + dx;
                if x < 0 || x >= ext[0] as i64 {
                    continue;
                }
                let w = wyz * if dx == 0 { 1.0 - fx } else { fx };
                let v = &data[row + x as usize];
                acc[0] += w * v[0];
                acc[1] += w * v[1];
                acc[2] += w * v[2];
            }
        }
    }
    acc
}

/// Gather of a 3-vector grid plus the Jacobian w.r.t. the sample position:
/// `jac[m][d] = d out_m / d p_d`.
pub(crate) fn sample_vec3_with_jac(
    data: &[[f64; 3]],
    ext: [usize; 3],
    p: Vec3,
) -> (Vec3, [[f64; 3]; 3]) {
    let (x0, fx) = cell(p[0]);
    let (y0, fy) = cell(p[1]);
    let (z0, fz) = cell(p[2]);
    let mut val = [0.0; 3];
    let mut jac = [[0.0; 3]; 3];
    for dz in 0..2i64 {
        let z = z0 + dz;
        if z < 0 || z >= ext[2] as i64 {
            continue;
        }
        let (wz, dwz) = if dz == 0 { (1.0 - fz, -1.0) } else { (fz, 1.0) };
        for dy in 0..2i64 {
            let y = y0 + dy;
            if y < 0 || y >= ext[1] as i64 {
                continue;
            }
            let (wy, dwy) = if dy == 0 { (1.0 - fy, -1.0) } else { (fy, 1.0) };
            let row = (ext[0] as i64 * (y + ext[1] as i64 * z)) as usize;
            for dx in 0..2i64 {
                let x = x0 + dx;
                if x < 0 || x >= ext[0] as i64 {
                    continue;
                }
                let (wx, dwx) = if dx == 0 { (1.0 - fx, -1.0) } else { (fx, 1.0) };
                let v = &data[row + x as usize];
                let w = wx * wy * wz;
                let gx = dwx * wy * wz;
                let gy = wx * dwy * wz;
                let gz = wx * wy * dwz;
                for m in 0..3 {
                    val[m] += w * v[m];
                    jac[m][0] += gx * v[m];
                    jac[m][1] += gy * v[m];
                    jac[m][2] += gz * v[m];
                }
            }
        }
    }
    (val, jac)
}

/// Adjoint of `sample_vec3`.
pub(crate) fn scatter_vec3(acc: &mut [[f64; 3]], ext: [usize; 3], p: Vec3, g: Vec3) {
    let (x0, fx) = cell(p[0]);
    let (y0, fy) = cell(p[1]);
    let (z0, fz) = cell(p[2]);
    for dz in 0..2i64 {
        let z = z0 + dz;
        if z < 0 || z >= ext[2] as i64 {
            continue;
        }
        let wz = if dz == 0 { 1.0 - fz } else { fz };
        for dy in 0..2i64 {
            let y = y0 + dy;
            if y < 0 || y >= ext[1] as i64 {
                continue;
            }
            let wyz = wz * if dy == 0 { 1.0 - fy } else { fy };
            let row = (ext[0] as i64 * (y + ext[1] as i64 * z)) as usize;
            for dx in 0..2i64 {
                let x = x0 + dx;
                if x < 0 || x >= ext[0] as i64 {
                    continue;
                }
                let w = wyz * if dx == 0 { 1.0 - fx } else { fx };
                let a = &mut acc[row + x as usize];
                a[0] += w * g[0];
                a[1] += w * g[1];
                a[2] += w * g[2];
            }
        }
    }
}

/// Edge-clamped trilinear gather of a 3-vector grid (field resampling).
fn sample_vec3_clamped(data: &[[f64; 3]], ext: [usize; 3], p: Vec3) -> Vec3 {
    let q = [
        p[0].clamp(0.0, (ext[0] - 1) as f64),
        p[1].clamp(0.0, (ext[1] - 1) as f64),
        p[2].clamp(0.0, (ext[2] - 1) as f64),
    ];
    sample_vec3(data, ext, q)
}

// ---------------------------------------------------------------------------
// displacement-field algebra
// ---------------------------------------------------------------------------

/// One self-composition step: `out(x) = u(x) + u(x + u(x))`.
pub(crate) fn self_compose(ext: [usize; 3], u: &[[f64; 3]]) -> Vec<[f64; 3]> {
    compose_disp(ext, u, u)
}

/// Displacement of the composed map a∘b: `out(x) = b(x) + a(x + b(x))`.
pub(crate) fn compose_disp(ext: [usize; 3], a: &[[f64; 3]], b: &[[f64; 3]]) -> Vec<[f64; 3]> {
    let nx = ext[0];
    let nxy = ext[0] * ext[1];
    let mut out = vec![[0.0; 3]; b.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let x = (idx % nx) as f64;
        let y = ((idx / nx) % ext[1]) as f64;
        let z = (idx / nxy) as f64;
        let ub = b[idx];
        let p = [x + ub[0], y + ub[1], z + ub[2]];
        let ua = sample_vec3(a, ext, p);
        *o = [ub[0] + ua[0], ub[1] + ua[1], ub[2] + ua[2]];
    }
    out
}

/// All intermediate fields of a scaling-and-squaring exponential:
/// `steps[0] = v / 2^K`, `steps[k+1] = steps[k] ∘ steps[k]`.
pub(crate) fn exp_chain(ext: [usize; 3], v: &[[f64; 3]], sign: f64, k: u32) -> Vec<Vec<[f64; 3]>> {
    let scale = sign / 2.0f64.powi(k as i32);
    let mut steps = Vec::with_capacity(k as usize + 1);
    steps.push(
        v.iter()
            .map(|c| [c[0] * scale, c[1] * scale, c[2] * scale])
            .collect::<Vec<_>>(),
    );
    for _ in 0..k {
        let last = steps.last().unwrap();
        steps.push(self_compose(ext, last));
    }
    steps
}

/// Backpropagate through one self-composition step.
/// `u` is the step input, `gbar` the gradient w.r.t. the output; the result
/// is the gradient w.r.t. `u`.
pub(crate) fn self_compose_backprop(
    ext: [usize; 3],
    u: &[[f64; 3]],
    gbar: &[[f64; 3]],
) -> Vec<[f64; 3]> {
    let nx = ext[0];
    let nxy = ext[0] * ext[1];
    let mut ghat = vec![[0.0; 3]; u.len()];
    for idx in 0..u.len() {
        let g = gbar[idx];
        // direct term
        let gh = &mut ghat[idx];
        gh[0] += g[0];
        gh[1] += g[1];
        gh[2] += g[2];
        let x = (idx % nx) as f64;
        let y = ((idx / nx) % ext[1]) as f64;
        let z = (idx / nxy) as f64;
        let uu = u[idx];
        let p = [x + uu[0], y + uu[1], z + uu[2]];
        // position term: J^T g lands on u(x)
        let (_, jac) = sample_vec3_with_jac(u, ext, p);
        let gh = &mut ghat[idx];
        for d in 0..3 {
            gh[d] += jac[0][d] * g[0] + jac[1][d] * g[1] + jac[2][d] * g[2];
        }
        // sampling-weight term: scatter onto the 8 neighbors of p
        scatter_vec3(&mut ghat, ext, p, g);
    }
    ghat
}

// ---------------------------------------------------------------------------
// public operations
// ---------------------------------------------------------------------------

/// Exponentiate a stationary velocity field by scaling and squaring,
/// returning the forward map `exp(v)` and its inverse `exp(-v)`.
pub fn exponentiate(v: &VelocityField) -> Result<(DeformationField, DeformationField)> {
    if v.squaring_steps < 1 {
        return Err(Error::InvalidConfig("squaring_steps must be >= 1".into()));
    }
    if !v.is_finite() {
        return Err(Error::NonFinite("velocity field"));
    }
    let ext = v.grid.extents;
    let forward = exp_chain(ext, &v.data, 1.0, v.squaring_steps)
        .pop()
        .unwrap();
    let inverse = exp_chain(ext, &v.data, -1.0, v.squaring_steps)
        .pop()
        .unwrap();
    Ok((
        DeformationField {
            grid: v.grid.clone(),
            data: forward,
        },
        DeformationField {
            grid: v.grid.clone(),
            data: inverse,
        },
    ))
}

/// Compose two deformations: the result maps `x` like `a(b(x))`.
pub fn compose(a: &DeformationField, b: &DeformationField) -> Result<DeformationField> {
    a.grid.require_compatible(&b.grid, "compose")?;
    Ok(DeformationField {
        grid: a.grid.clone(),
        data: compose_disp(a.grid.extents, &a.data, &b.data),
    })
}

/// Warp an image: `out(x) = img(x + u(x))`, zero outside the domain.
pub fn warp_image(img: &ImageVolume, f: &DeformationField) -> Result<ImageVolume> {
    img.grid.require_compatible(&f.grid, "warp_image")?;
    let ext = img.grid.extents;
    let data_f64: Vec<f64> = img.data.iter().map(|&v| v as f64).collect();
    let nx = ext[0];
    let nxy = ext[0] * ext[1];
    let mut out = vec![0.0f32; img.data.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let u = f.data[idx];
        let x = (idx % nx) as f64;
        let y = ((idx / nx) % ext[1]) as f64;
        let z = (idx / nxy) as f64;
        *o = sample_scalar(&data_f64, ext, [x + u[0], y + u[1], z + u[2]]) as f32;
    }
    Ok(ImageVolume {
        grid: img.grid.clone(),
        data: out,
    })
}

/// Warp a label map: each label is warped as its indicator and the output
/// takes the argmax over warped label probabilities, with background
/// probability `1 - sum`. Ties break to the lowest label integer.
pub fn warp_mask(labels: &LabelMap, f: &DeformationField) -> Result<LabelMap> {
    labels.grid.require_compatible(&f.grid, "warp_mask")?;
    let ext = labels.grid.extents;
    let present = labels.present_values();
    let n = labels.data.len();
    let mut best_p = vec![0.0f64; n];
    let mut best_l = vec![0u8; n];
    let mut sum_p = vec![0.0f64; n];
    let nx = ext[0];
    let nxy = ext[0] * ext[1];
    for &value in &present {
        let ind: Vec<f64> = labels
            .data
            .iter()
            .map(|&v| if v == value { 1.0 } else { 0.0 })
            .collect();
        for idx in 0..n {
            let u = f.data[idx];
            let x = (idx % nx) as f64;
            let y = ((idx / nx) % ext[1]) as f64;
            let z = (idx / nxy) as f64;
            let p = sample_scalar(&ind, ext, [x + u[0], y + u[1], z + u[2]]);
            sum_p[idx] += p;
            if p > best_p[idx] {
                best_p[idx] = p;
                best_l[idx] = value;
            }
        }
    }
    let mut out = vec![0u8; n];
    for idx in 0..n {
        let bg = 1.0 - sum_p[idx];
        // background (label 0) wins ties by the lowest-integer rule
        out[idx] = if bg >= best_p[idx] { 0 } else { best_l[idx] };
    }
    Ok(LabelMap {
        grid: labels.grid.clone(),
        data: out,
        schema: labels.schema,
    })
}

/// Resample a displacement/velocity field by a uniform factor; vector
/// components are rescaled so the physical displacement is unchanged.
pub fn resample_field_data(
    grid: &Grid,
    data: &[[f64; 3]],
    new_extents: [usize; 3],
) -> (Grid, Vec<[f64; 3]>) {
    let ext = grid.extents;
    let factor = [
        new_extents[0] as f64 / ext[0] as f64,
        new_extents[1] as f64 / ext[1] as f64,
        new_extents[2] as f64 / ext[2] as f64,
    ];
    let mut affine = grid.affine;
    for c in 0..3 {
        for r in 0..3 {
            affine.m[r][c] /= factor[c];
        }
    }
    let spacing = [
        grid.spacing[0] / factor[0],
        grid.spacing[1] / factor[1],
        grid.spacing[2] / factor[2],
    ];
    let new_grid = Grid {
        extents: new_extents,
        spacing,
        affine,
    };
    let nx = new_extents[0];
    let nxy = new_extents[0] * new_extents[1];
    let n = new_extents[0] * new_extents[1] * new_extents[2];
    let mut out = vec![[0.0; 3]; n];
    for (idx, o) in out.iter_mut().enumerate() {
        let x = (idx % nx) as f64 / factor[0];
        let y = ((idx / nx) % new_extents[1]) as f64 / factor[1];
        let z = (idx / nxy) as f64 / factor[2];
        let v = sample_vec3_clamped(data, ext, [x, y, z]);
        *o = [v[0] * factor[0], v[1] * factor[1], v[2] * factor[2]];
    }
    (new_grid, out)
}

/// Extent-based displacement resampling (no grid metadata): sample at
/// `j / factor` with edge clamping, rescale components into destination
/// voxel units.
pub(crate) fn resample_disp_ext(
    src_ext: [usize; 3],
    data: &[[f64; 3]],
    dst_ext: [usize; 3],
) -> Vec<[f64; 3]> {
    if src_ext == dst_ext {
        return data.to_vec();
    }
    let factor = [
        dst_ext[0] as f64 / src_ext[0] as f64,
        dst_ext[1] as f64 / src_ext[1] as f64,
        dst_ext[2] as f64 / src_ext[2] as f64,
    ];
    let n = dst_ext[0] * dst_ext[1] * dst_ext[2];
    let nx = dst_ext[0];
    let nxy = dst_ext[0] * dst_ext[1];
    let mut out = vec![[0.0; 3]; n];
    for (idx, o) in out.iter_mut().enumerate() {
        let p = [
            ((idx % nx) as f64 / factor[0]).clamp(0.0, (src_ext[0] - 1) as f64),
            (((idx / nx) % dst_ext[1]) as f64 / factor[1]).clamp(0.0, (src_ext[1] - 1) as f64),
            ((idx / nxy) as f64 / factor[2]).clamp(0.0, (src_ext[2] - 1) as f64),
        ];
        let v = sample_vec3(data, src_ext, p);
        *o = [v[0] * factor[0], v[1] * factor[1], v[2] * factor[2]];
    }
    out
}

/// Exact adjoint of `resample_disp_ext` (linear in the field data).
pub(crate) fn resample_disp_ext_adjoint(
    src_ext: [usize; 3],
    dst_ext: [usize; 3],
    g_dst: &[[f64; 3]],
) -> Vec<[f64; 3]> {
    if src_ext == dst_ext {
        return g_dst.to_vec();
    }
    let factor = [
        dst_ext[0] as f64 / src_ext[0] as f64,
        dst_ext[1] as f64 / src_ext[1] as f64,
        dst_ext[2] as f64 / src_ext[2] as f64,
    ];
    let nx = dst_ext[0];
    let nxy = dst_ext[0] * dst_ext[1];
    let n_src = src_ext[0] * src_ext[1] * src_ext[2];
    let mut acc = vec![[0.0; 3]; n_src];
    for (idx, g) in g_dst.iter().enumerate() {
        let p = [
            ((idx % nx) as f64 / factor[0]).clamp(0.0, (src_ext[0] - 1) as f64),
            (((idx / nx) % dst_ext[1]) as f64 / factor[1]).clamp(0.0, (src_ext[1] - 1) as f64),
            ((idx / nxy) as f64 / factor[2]).clamp(0.0, (src_ext[2] - 1) as f64),
        ];
        scatter_vec3(
            &mut acc,
            src_ext,
            p,
            [g[0] * factor[0], g[1] * factor[1], g[2] * factor[2]],
        );
    }
    acc
}

pub fn resample_deformation(f: &DeformationField, factor: f64) -> Result<DeformationField> {
    let new_ext = scaled_extents(f.grid.extents, factor)?;
    let (grid, data) = resample_field_data(&f.grid, &f.data, new_ext);
    Ok(DeformationField { grid, data })
}

pub fn resample_velocity(v: &VelocityField, factor: f64) -> Result<VelocityField> {
    let new_ext = scaled_extents(v.grid.extents, factor)?;
    let (grid, data) = resample_field_data(&v.grid, &v.data, new_ext);
    Ok(VelocityField {
        grid,
        data,
        squaring_steps: v.squaring_steps,
    })
}

fn scaled_extents(ext: [usize; 3], factor: f64) -> Result<[usize; 3]> {
    if factor <= 0.0 || !factor.is_finite() {
        return Err(Error::InvalidConfig(format!("resample factor {factor}")));
    }
    let mut out = [0usize; 3];
    for a in 0..3 {
        out[a] = ((ext[a] as f64) * factor).round() as usize;
        if out[a] == 0 {
            return Err(Error::EmptyOutput);
        }
    }
    Ok(out)
}

/// Jacobian determinant of the map `x + u(x)`: central differences in the
/// interior, one-sided at the borders. Identity fields give 1 everywhere.
pub fn jacobian_determinant(f: &DeformationField) -> ImageVolume {
    let ext = f.grid.extents;
    let nx = ext[0];
    let nxy = ext[0] * ext[1];
    let n = f.data.len();
    let mut out = vec![0.0f32; n];
    let diff = |axis: usize, comp: usize, x: [usize; 3]| -> f64 {
        let pos = x[axis];
        let hi = (pos + 1).min(ext[axis] - 1);
        let lo = pos.saturating_sub(1);
        let mut xh = x;
        xh[axis] = hi;
        let mut xl = x;
        xl[axis] = lo;
        let denom = (hi - lo) as f64;
        if denom == 0.0 {
            return 0.0;
        }
        let ih = xh[0] + nx * (xh[1] + ext[1] * xh[2]);
        let il = xl[0] + nx * (xl[1] + ext[1] * xl[2]);
        (f.data[ih][comp] - f.data[il][comp]) / denom
    };
    for idx in 0..n {
        let x = [idx % nx, (idx / nx) % ext[1], idx / nxy];
        let mut j = [[0.0f64; 3]; 3];
        for (m, row) in j.iter_mut().enumerate() {
            for (d, v) in row.iter_mut().enumerate() {
                *v = diff(d, m, x) + if m == d { 1.0 } else { 0.0 };
            }
        }
        let det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1])
            - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
            + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
        out[idx] = det as f32;
    }
    ImageVolume {
        grid: f.grid.clone(),
        data: out,
    }
}

/// Mean Euclidean residual of `a ∘ b` vs identity over the interior
/// (margin voxels excluded from every face).
pub fn composition_residual(a: &DeformationField, b: &DeformationField, margin: usize) -> f64 {
    let comp = compose_disp(a.grid.extents, &a.data, &b.data);
    let ext = a.grid.extents;
    let nx = ext[0];
    let nxy = ext[0] * ext[1];
    let mut sum = 0.0;
    let mut count = 0usize;
    for (idx, u) in comp.iter().enumerate() {
        let x = idx % nx;
        let y = (idx / nx) % ext[1];
        let z = idx / nxy;
        if x < margin
            || y < margin
            || z < margin
            || x >= ext[0] - margin
            || y >= ext[1] - margin
            || z >= ext[2] - margin
        {
            continue;
        }
        sum += (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
        count += 1;
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}
