//! Scalar volumes, label maps, and the image-standardization operations:
//! reorientation to RAS+, resampling, intensity normalization, masking,
//! and left-right flipping.

use crate::error::{Error, Result};
use crate::geom::{vadd, vnorm, vscale, Affine4, Vec3};
use crate::grid::Grid;
use serde::{Deserialize, Serialize};

pub const DEFAULT_PERCENTILES: (f64, f64) = (0.5, 99.5);
/// Reorientation refuses affines more oblique than this (degrees).
pub const MAX_OBLIQUE_DEG: f64 = 5.0;

/// Integer codes for the anatomy labels the pipeline understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSchema {
    pub femur: u8,
    pub femoral_cartilage: u8,
    pub tibia: u8,
    pub tibial_cartilage: u8,
    /// Derived by parcellation, not expected in input masks.
    pub medial_tibial_cartilage: u8,
    pub lateral_tibial_cartilage: u8,
}

impl Default for LabelSchema {
    fn default() -> Self {
        LabelSchema {
            femur: 1,
            femoral_cartilage: 2,
            tibia: 3,
            tibial_cartilage: 4,
            medial_tibial_cartilage: 5,
            lateral_tibial_cartilage: 6,
        }
    }
}

impl LabelSchema {
    /// Resolve a label name (long form or FC/TC/MTC/LTC shorthand).
    pub fn value_of(&self, name: &str) -> Result<u8> {
        let v = match name.to_ascii_lowercase().as_str() {
            "femur" => self.femur,
            "femoral_cartilage" | "fc" => self.femoral_cartilage,
            "tibia" => self.tibia,
            "tibial_cartilage" | "tc" => self.tibial_cartilage,
            "medial_tibial_cartilage" | "mtc" => self.medial_tibial_cartilage,
            "lateral_tibial_cartilage" | "ltc" => self.lateral_tibial_cartilage,
            _ => return Err(Error::UnknownLabel(name.to_string())),
        };
        Ok(v)
    }

    pub fn base_values(&self) -> [u8; 4] {
        [
            self.femur,
            self.femoral_cartilage,
            self.tibia,
            self.tibial_cartilage,
        ]
    }

    pub fn all_values(&self) -> [u8; 6] {
        [
            self.femur,
            self.femoral_cartilage,
            self.tibia,
            self.tibial_cartilage,
            self.medial_tibial_cartilage,
            self.lateral_tibial_cartilage,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let vals = self.all_values();
        for (i, a) in vals.iter().enumerate() {
            if *a == 0 {
                return Err(Error::InvalidConfig("label value 0 is background".into()));
            }
            if vals[i + 1..].contains(a) {
                return Err(Error::InvalidConfig(format!("duplicate label value {a}")));
            }
        }
        Ok(())
    }
}

/// A 3D scalar volume; values are finite, in [0,1] once normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageVolume {
    pub grid: Grid,
    pub data: Vec<f32>,
}

impl ImageVolume {
    pub fn new(grid: Grid, data: Vec<f32>) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.num_voxels() {
            return Err(Error::GridMismatch(format!(
                "data length {} != voxel count {}",
                data.len(),
                grid.num_voxels()
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("image voxels"));
        }
        Ok(ImageVolume { grid, data })
    }

    pub fn zeros(grid: Grid) -> Self {
        let n = grid.num_voxels();
        ImageVolume {
            grid,
            data: vec![0.0; n],
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.grid.index(x, y, z)]
    }

    /// Clamped trilinear sample at a voxel-space position.
    pub fn sample_voxel(&self, p: Vec3) -> f64 {
        sample_trilinear_clamped(&self.data, self.grid.extents, p)
    }

    /// Clamped trilinear sample at a world position (oracle/test helper).
    pub fn sample_world(&self, w: Vec3) -> Result<f64> {
        Ok(self.sample_voxel(self.grid.world_to_voxel(w)?))
    }

    pub fn min_max(&self) -> (f32, f32) {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in &self.data {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }

    pub fn reorient_to_ras(&self) -> Result<ImageVolume> {
        let (perm, flip) = ras_permutation(&self.grid.affine)?;
        let (grid, data) = apply_axis_permutation(&self.grid, &self.data, perm, flip);
        Ok(ImageVolume { grid, data })
    }

    /// Trilinear resample onto a new grid with the given spacing.
    pub fn resample(&self, target_spacing: Vec3) -> Result<ImageVolume> {
        let (grid, map) = resample_target(&self.grid, target_spacing)?;
        let n = grid.num_voxels();
        let mut data = vec![0.0f32; n];
        for idx in 0..n {
            let [x, y, z] = grid.coords(idx);
            let p = map.apply([x as f64, y as f64, z as f64]);
            data[idx] = sample_trilinear_clamped(&self.data, self.grid.extents, p) as f32;
        }
        Ok(ImageVolume { grid, data })
    }

    /// Percentile-clipped min-max normalization to [0,1].
    pub fn normalize_intensity(&self, p_lo: f64, p_hi: f64) -> Result<ImageVolume> {
        let (min, max) = self.min_max();
        if max - min <= f32::EPSILON {
            return Err(Error::ConstantImage);
        }
        let mut sorted: Vec<f32> = self.data.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut lo = percentile_sorted(&sorted, p_lo);
        let mut hi = percentile_sorted(&sorted, p_hi);
        if hi - lo < 1e-12 {
            lo = min as f64;
            hi = max as f64;
        }
        let span = hi - lo;
        let data = self
            .data
            .iter()
            .map(|&v| (((v as f64 - lo) / span).clamp(0.0, 1.0)) as f32)
            .collect();
        Ok(ImageVolume {
            grid: self.grid.clone(),
            data,
        })
    }

    /// Keep voxels whose label is in the selected set, zero elsewhere.
    pub fn mask_image(&self, labels: &LabelMap, names: &[&str]) -> Result<ImageVolume> {
        self.grid.require_compatible(&labels.grid, "mask_image")?;
        let mut selected = [false; 256];
        for name in names {
            selected[labels.schema.value_of(name)? as usize] = true;
        }
        let data = self
            .data
            .iter()
            .zip(&labels.data)
            .map(|(&v, &l)| if selected[l as usize] { v } else { 0.0 })
            .collect();
        Ok(ImageVolume {
            grid: self.grid.clone(),
            data,
        })
    }

    /// Mirror anatomy about the grid's central left-right plane: data is
    /// flipped along axis 0 and the affine is unchanged, so the mirrored
    /// knee occupies the same world box (pose search stays near identity).
    pub fn flip_lr(&self) -> Result<ImageVolume> {
        require_ras(&self.grid.affine)?;
        let data = flip_axis0(&self.grid, &self.data);
        Ok(ImageVolume {
            grid: self.grid.clone(),
            data,
        })
    }
}

/// Integer label volume paired with its schema.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub grid: Grid,
    pub data: Vec<u8>,
    pub schema: LabelSchema,
}

impl LabelMap {
    pub fn new(grid: Grid, data: Vec<u8>, schema: LabelSchema) -> Result<Self> {
        grid.validate()?;
        schema.validate()?;
        if data.len() != grid.num_voxels() {
            return Err(Error::GridMismatch(format!(
                "label data length {} != voxel count {}",
                data.len(),
                grid.num_voxels()
            )));
        }
        let known = schema.all_values();
        if let Some(bad) = data.iter().find(|v| **v != 0 && !known.contains(v)) {
            return Err(Error::UnknownLabel(format!("value {bad}")));
        }
        Ok(LabelMap { grid, data, schema })
    }

    pub fn zeros(grid: Grid, schema: LabelSchema) -> Self {
        let n = grid.num_voxels();
        LabelMap {
            grid,
            data: vec![0u8; n],
            schema,
        }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> u8 {
        self.data[self.grid.index(x, y, z)]
    }

    pub fn count_label(&self, value: u8) -> usize {
        self.data.iter().filter(|v| **v == value).count()
    }

    /// 0/1 indicator for one label value.
    pub fn indicator(&self, value: u8) -> Vec<f32> {
        self.data
            .iter()
            .map(|&v| if v == value { 1.0 } else { 0.0 })
            .collect()
    }

    /// Distinct nonzero values present, ascending.
    pub fn present_values(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (1..=255u8).filter(|v| seen[*v as usize]).collect()
    }

    pub fn reorient_to_ras(&self) -> Result<LabelMap> {
        let (perm, flip) = ras_permutation(&self.grid.affine)?;
        let (grid, data) = apply_axis_permutation(&self.grid, &self.data, perm, flip);
        Ok(LabelMap {
            grid,
            data,
            schema: self.schema,
        })
    }

    /// Nearest-neighbor resample onto a new grid with the given spacing.
    pub fn resample(&self, target_spacing: Vec3) -> Result<LabelMap> {
        let (grid, map) = resample_target(&self.grid, target_spacing)?;
        let n = grid.num_voxels();
        let mut data = vec![0u8; n];
        let ext = self.grid.extents;
        for idx in 0..n {
            let [x, y, z] = grid.coords(idx);
            let p = map.apply([x as f64, y as f64, z as f64]);
            let nx = (p[0].round().max(0.0) as usize).min(ext[0] - 1);
            let ny = (p[1].round().max(0.0) as usize).min(ext[1] - 1);
            let nz = (p[2].round().max(0.0) as usize).min(ext[2] - 1);
            data[idx] = self.data[self.grid.index(nx, ny, nz)];
        }
        Ok(LabelMap {
            grid,
            data,
            schema: self.schema,
        })
    }

    pub fn flip_lr(&self) -> Result<LabelMap> {
        require_ras(&self.grid.affine)?;
        let data = flip_axis0(&self.grid, &self.data);
        Ok(LabelMap {
            grid: self.grid.clone(),
            data,
            schema: self.schema,
        })
    }
}

/// True when every affine column's dominant entry sits on the diagonal and is positive.
pub fn is_ras(affine: &Affine4) -> bool {
    for c in 0..3 {
        let col = affine.column(c);
        let mut dom = 0;
        for r in 1..3 {
            if col[r].abs() > col[dom].abs() {
                dom = r;
            }
        }
        if dom != c || col[c] <= 0.0 {
            return false;
        }
    }
    true
}

pub fn require_ras(affine: &Affine4) -> Result<()> {
    if is_ras(affine) {
        Ok(())
    } else {
        Err(Error::NotRasOriented)
    }
}

/// Nearest-axis permutation/flips taking the given affine to RAS+.
/// Refuses oblique affines (> MAX_OBLIQUE_DEG from axis-aligned).
fn ras_permutation(affine: &Affine4) -> Result<([usize; 3], [bool; 3])> {
    let mut dominant = [0usize; 3];
    for c in 0..3 {
        let col = affine.column(c);
        let norm = vnorm(col);
        if norm < 1e-12 {
            return Err(Error::SingularAffine);
        }
        let mut dom = 0;
        for r in 1..3 {
            if col[r].abs() > col[dom].abs() {
                dom = r;
            }
        }
        let angle = (col[dom].abs() / norm).clamp(-1.0, 1.0).acos().to_degrees();
        if angle > MAX_OBLIQUE_DEG {
            return Err(Error::ObliqueAffine(angle));
        }
        dominant[c] = dom;
    }
    if dominant[0] == dominant[1] || dominant[0] == dominant[2] || dominant[1] == dominant[2] {
        return Err(Error::SingularAffine);
    }
    // perm[r] = source data axis that becomes output axis r
    let mut perm = [0usize; 3];
    let mut flip = [false; 3];
    for c in 0..3 {
        perm[dominant[c]] = c;
        flip[dominant[c]] = affine.m[dominant[c]][c] < 0.0;
    }
    Ok((perm, flip))
}

/// Permute/flip voxel data and rebuild the grid so world coordinates are unchanged.
fn apply_axis_permutation<T: Copy + Default>(
    grid: &Grid,
    data: &[T],
    perm: [usize; 3],
    flip: [bool; 3],
) -> (Grid, Vec<T>) {
    if perm == [0, 1, 2] && flip == [false; 3] {
        return (grid.clone(), data.to_vec());
    }
    let src_ext = grid.extents;
    let new_ext = [src_ext[perm[0]], src_ext[perm[1]], src_ext[perm[2]]];
    let mut out = vec![T::default(); data.len()];
    for z in 0..new_ext[2] {
        for y in 0..new_ext[1] {
            for x in 0..new_ext[0] {
                let new_idx = [x, y, z];
                let mut src = [0usize; 3];
                for r in 0..3 {
                    let i = new_idx[r];
                    src[perm[r]] = if flip[r] { src_ext[perm[r]] - 1 - i } else { i };
                }
                out[x + new_ext[0] * (y + new_ext[1] * z)] =
                    data[grid.index(src[0], src[1], src[2])];
            }
        }
    }
    // new_affine = old_affine composed with (new index -> old index)
    let mut pm = [[0.0f64; 4]; 4];
    pm[3][3] = 1.0;
    for r in 0..3 {
        pm[perm[r]][r] = if flip[r] { -1.0 } else { 1.0 };
        if flip[r] {
            pm[perm[r]][3] = (src_ext[perm[r]] - 1) as f64;
        }
    }
    let p = Affine4 { m: pm };
    let affine = grid.affine.compose(&p);
    let spacing = affine.column_norms();
    (
        Grid {
            extents: new_ext,
            spacing,
            affine,
        },
        out,
    )
}

/// Output grid for a spacing change plus the output-voxel -> input-voxel map.
fn resample_target(grid: &Grid, target_spacing: Vec3) -> Result<(Grid, Affine4)> {
    for s in target_spacing {
        if s <= 0.0 || !s.is_finite() {
            return Err(Error::InvalidConfig(format!("target spacing {s}")));
        }
    }
    let mut new_ext = [0usize; 3];
    for a in 0..3 {
        new_ext[a] =
            ((grid.extents[a] as f64) * grid.spacing[a] / target_spacing[a]).ceil() as usize;
        if new_ext[a] == 0 {
            return Err(Error::EmptyOutput);
        }
    }
    let mut affine = grid.affine;
    for c in 0..3 {
        let col = grid.affine.column(c);
        let unit = vscale(col, 1.0 / grid.spacing[c]);
        let scaled = vscale(unit, target_spacing[c]);
        for r in 0..3 {
            affine.m[r][c] = scaled[r];
        }
    }
    let out = Grid {
        extents: new_ext,
        spacing: target_spacing,
        affine,
    };
    let map = grid.affine.inverse()?.compose(&out.affine);
    Ok((out, map))
}

fn flip_axis0<T: Copy + Default>(grid: &Grid, data: &[T]) -> Vec<T> {
    let [nx, ny, nz] = grid.extents;
    let mut out = vec![T::default(); data.len()];
    for z in 0..nz {
        for y in 0..ny {
            let row = grid.index(0, y, z);
            for x in 0..nx {
                out[row + x] = data[row + nx - 1 - x];
            }
        }
    }
    out
}

/// Trilinear interpolation with edge-clamped sampling.
pub(crate) fn sample_trilinear_clamped(data: &[f32], ext: [usize; 3], p: Vec3) -> f64 {
    let cx = p[0].clamp(0.0, (ext[0] - 1) as f64);
    let cy = p[1].clamp(0.0, (ext[1] - 1) as f64);
    let cz = p[2].clamp(0.0, (ext[2] - 1) as f64);
    let x0 = (cx.floor() as usize).min(ext[0].saturating_sub(2));
    let y0 = (cy.floor() as usize).min(ext[1].saturating_sub(2));
    let z0 = (cz.floor() as usize).min(ext[2].saturating_sub(2));
    let x1 = (x0 + 1).min(ext[0] - 1);
    let y1 = (y0 + 1).min(ext[1] - 1);
    let z1 = (z0 + 1).min(ext[2] - 1);
    let fx = cx - x0 as f64;
    let fy = cy - y0 as f64;
    let fz = cz - z0 as f64;
    let idx = |x: usize, y: usize, z: usize| x + ext[0] * (y + ext[1] * z);
    let c000 = data[idx(x0, y0, z0)] as f64;
    let c100 = data[idx(x1, y0, z0)] as f64;
    let c010 = data[idx(x0, y1, z0)] as f64;
    let c110 = data[idx(x1, y1, z0)] as f64;
    let c001 = data[idx(x0, y0, z1)] as f64;
    let c101 = data[idx(x1, y0, z1)] as f64;
    let c011 = data[idx(x0, y1, z1)] as f64;
    let c111 = data[idx(x1, y1, z1)] as f64;
    let c00 = c000 + (c100 - c000) * fx;
    let c10 = c010 + (c110 - c010) * fx;
    let c01 = c001 + (c101 - c001) * fx;
    let c11 = c011 + (c111 - c011) * fx;
    let c0 = c00 + (c10 - c00) * fy;
    let c1 = c01 + (c11 - c01) * fy;
    c0 + (c1 - c0) * fz
}

/// Separable Gaussian smoothing on an f64 grid (zero-padded borders);
/// sigma in voxels, kernel truncated at 3 sigma.
pub(crate) fn gaussian_smooth_f64(ext: [usize; 3], data: &[f64], sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return data.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    let mut total = 0.0;
    for i in -radius..=radius {
        let w = (-0.5 * (i as f64 / sigma).powi(2)).exp();
        kernel.push(w);
        total += w;
    }
    kernel.iter_mut().for_each(|w| *w /= total);

    let mut cur = data.to_vec();
    let mut next = vec![0.0f64; data.len()];
    for axis in 0..3 {
        let n = ext[axis] as i64;
        let stride = match axis {
            0 => 1usize,
            1 => ext[0],
            _ => ext[0] * ext[1],
        };
        for idx in 0..data.len() {
            let pos = match axis {
                0 => (idx % ext[0]) as i64,
                1 => ((idx / ext[0]) % ext[1]) as i64,
                _ => (idx / (ext[0] * ext[1])) as i64,
            };
            let mut acc = 0.0;
            for (ki, w) in kernel.iter().enumerate() {
                let off = ki as i64 - radius;
                let p = pos + off;
                if p < 0 || p >= n {
                    continue;
                }
                acc += w * cur[(idx as i64 + off * stride as i64) as usize];
            }
            next[idx] = acc;
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Gaussian-smoothed copy of an image (sigma in voxels).
pub fn gaussian_smooth(img: &ImageVolume, sigma: f64) -> ImageVolume {
    let data = gaussian_smooth_f64(
        img.grid.extents,
        &img.data.iter().map(|&v| v as f64).collect::<Vec<_>>(),
        sigma,
    );
    ImageVolume {
        grid: img.grid.clone(),
        data: data.iter().map(|&v| v as f32).collect(),
    }
}

/// Low-pass + resample for multi-resolution pyramids: blur with
/// sigma = factor/2 voxels, then trilinearly resample to `factor` times the
/// spacing. `factor` 1 returns the input unchanged.
pub fn pyramid_level(img: &ImageVolume, factor: f64) -> Result<ImageVolume> {
    if (factor - 1.0).abs() < 1e-12 {
        return Ok(img.clone());
    }
    let blurred = gaussian_smooth(img, factor / 2.0);
    blurred.resample([
        img.grid.spacing[0] * factor,
        img.grid.spacing[1] * factor,
        img.grid.spacing[2] * factor,
    ])
}

/// Percentile of pre-sorted values, linear interpolation between order statistics.
pub(crate) fn percentile_sorted(sorted: &[f32], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = (q / 100.0).clamp(0.0, 1.0) * ((sorted.len() - 1) as f64);
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] as f64 * (1.0 - frac) + sorted[hi] as f64 * frac
}

/// Voxel center of mass of a label (voxel coordinates); None for empty.
pub fn centroid_of_label(map: &LabelMap, value: u8) -> Option<Vec3> {
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    for (idx, &v) in map.data.iter().enumerate() {
        if v == value {
            let [x, y, z] = map.grid.coords(idx);
            sum = vadd(sum, [x as f64, y as f64, z as f64]);
            count += 1;
        }
    }
    if count == 0 {
        None
    } else {
        Some(vscale(sum, 1.0 / count as f64))
    }
}
