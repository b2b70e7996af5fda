//! Deterministic synthetic knee phantoms for tests, acceptance runs, and
//! demo datasets. All geometry is evaluated analytically under the requested
//! rigid motion, so transformed phantoms carry no resampling error.

use crate::geom::Vec3;
use crate::grid::Grid;
use crate::volume::{ImageVolume, LabelMap, LabelSchema};

/// Rigid placement plus lesion controls for the knee phantom.
#[derive(Debug, Clone)]
pub struct PhantomSpec {
    pub extent: usize,
    pub spacing: f64,
    /// Translation in voxels, applied to all structures.
    pub shift: Vec3,
    /// Rotation about the grid center around z, degrees.
    pub rot_z_deg: f64,
    /// Fraction of the femoral bone-cartilage interface ablated (polar cap
    /// on the weight-bearing pole); 0 = healthy.
    pub fc_defect_fraction: f64,
    pub texture_seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            extent: 64,
            spacing: 1.0,
            shift: [0.0; 3],
            rot_z_deg: 0.0,
            fc_defect_fraction: 0.0,
            texture_seed: 7,
        }
    }
}

fn tissue_base(label: u8, schema: &LabelSchema) -> f64 {
    if label == schema.femur {
        0.45
    } else if label == schema.femoral_cartilage {
        0.95
    } else if label == schema.tibia {
        0.40
    } else if label == schema.tibial_cartilage {
        0.85
    } else {
        // faintly textured background, like real MR noise floor
        0.15
    }
}

/// Knee-like phantom: femoral ball with a cartilage shell, tibial slab with
/// two tibial-cartilage lobes (medial at smaller x under the right-knee
/// convention), textured intensities.
pub fn knee_phantom(spec: &PhantomSpec) -> (ImageVolume, LabelMap) {
    let n = spec.extent;
    let grid = Grid::isotropic([n, n, n], spec.spacing);
    let schema = LabelSchema::default();
    let c = (n as f64 - 1.0) / 2.0;
    let scale = n as f64 / 64.0;

    // structure geometry in canonical (untransformed) voxel coordinates
    let femur_center = [c, c, c + 12.0 * scale];
    let femur_r = 11.0 * scale;
    let shell_r = 14.0 * scale;
    let tibia_z = (6.0 * scale, 13.0 * scale);
    let tibia_xy = (10.0 * scale, (n as f64 - 1.0) - 10.0 * scale);
    let lobe_dx = 10.5 * scale;
    let lobe_r = 8.0 * scale;
    let tc_z = (13.0 * scale, 18.0 * scale);
    // ablation cap around the -z pole of the femoral shell
    let cos_cap = 1.0 - 2.0 * spec.fc_defect_fraction;

    let ang = spec.rot_z_deg.to_radians();
    let (s, co) = ang.sin_cos();
    let phase = (spec.texture_seed % 97) as f64 * 0.37;

    let mut labels = LabelMap::zeros(grid.clone(), schema);
    let mut image = ImageVolume::zeros(grid);
    for idx in 0..labels.data.len() {
        let [xi, yi, zi] = labels.grid.coords(idx);
        // inverse rigid motion into canonical coordinates
        let px = xi as f64 - spec.shift[0] - c;
        let py = yi as f64 - spec.shift[1] - c;
        let pz = zi as f64 - spec.shift[2] - c;
        let x = co * px + s * py + c;
        let y = -s * px + co * py + c;
        let z = pz + c;

        let dx = x - femur_center[0];
        let dy = y - femur_center[1];
        let dz = z - femur_center[2];
        let dist_femur = (dx * dx + dy * dy + dz * dz).sqrt();
        let mut label = 0u8;
        if dist_femur <= femur_r {
            label = schema.femur;
        } else if dist_femur <= shell_r {
            // polar angle measured from the downward (-z) pole
            let cos_from_pole = -dz / dist_femur.max(1e-12);
            let ablated = spec.fc_defect_fraction > 0.0 && cos_from_pole >= cos_cap;
            if !ablated {
                label = schema.femoral_cartilage;
            }
        } else if z >= tibia_z.0
            && z < tibia_z.1
            && x >= tibia_xy.0
            && x <= tibia_xy.1
            && y >= tibia_xy.0
            && y <= tibia_xy.1
        {
            label = schema.tibia;
        } else if z >= tc_z.0 && z < tc_z.1 {
            let medial = ((x - (c - lobe_dx)).powi(2) + (y - c).powi(2)).sqrt() <= lobe_r;
            let lateral = ((x - (c + lobe_dx)).powi(2) + (y - c).powi(2)).sqrt() <= lobe_r;
            if medial || lateral {
                label = schema.tibial_cartilage;
            }
        }
        labels.data[idx] = label;
        // multi-scale texture: the short-wavelength terms anchor tangential
        // motion on thin structures during registration
        let tex = 1.0
            + 0.16 * (0.33 * x + phase).sin() * (0.27 * y + 0.5 * phase).cos()
            + 0.10 * (0.23 * z + 1.4 * phase).sin()
            + 0.12 * (0.85 * x + 0.3 * phase).sin() * (0.75 * y).cos()
            + 0.10 * (0.65 * z + 0.55 * x + phase).cos()
            + 0.08 * (0.95 * y + 0.4 * z).sin();
        let mut value = tissue_base(label, &schema) * tex;
        // air outside the body and a saturated marrow core: realistic
        // intensity piles at both histogram ends (percentile-clipped
        // normalization is idempotent only with such piles)
        let body_r2 = (0.48 * n as f64).powi(2);
        if (x - c).powi(2) + (y - c).powi(2) + (z - c).powi(2) > body_r2 {
            value = 0.0;
        } else if dist_femur <= 0.14 * n as f64 {
            value = 1.6;
        }
        image.data[idx] = value.max(0.0) as f32;
    }
    (image, labels)
}

/// Bone ball with a concentric cartilage shell; `defect_fraction` of the
/// inner (interface) sphere is ablated as a polar cap toward +z.
pub fn shell_phantom(
    extent: usize,
    bone_radius_mm: f64,
    thickness_mm: f64,
    spacing: f64,
    defect_fraction: f64,
) -> (ImageVolume, LabelMap) {
    let grid = Grid::isotropic([extent; 3], spacing);
    let schema = LabelSchema::default();
    let c = (extent as f64 - 1.0) / 2.0 * spacing;
    let cos_cap = 1.0 - 2.0 * defect_fraction;
    let mut labels = LabelMap::zeros(grid.clone(), schema);
    let mut image = ImageVolume::zeros(grid);
    for idx in 0..labels.data.len() {
        let [xi, yi, zi] = labels.grid.coords(idx);
        let x = xi as f64 * spacing - c;
        let y = yi as f64 * spacing - c;
        let z = zi as f64 * spacing - c;
        let r = (x * x + y * y + z * z).sqrt();
        let mut label = 0u8;
        if r <= bone_radius_mm {
            label = schema.femur;
        } else if r <= bone_radius_mm + thickness_mm {
            let cos_from_pole = z / r.max(1e-12);
            let ablated = defect_fraction > 0.0 && cos_from_pole >= cos_cap;
            if !ablated {
                label = schema.femoral_cartilage;
            }
        }
        labels.data[idx] = label;
        let tex = 1.0 + 0.15 * (0.4 * x).sin() + 0.1 * (0.3 * y + 0.2 * z).cos();
        image.data[idx] = (tissue_base(label, &schema) * tex).max(0.0) as f32;
    }
    (image, labels)
}

/// Translations for a small cohort: max component 3 voxels, zero mean, so a
/// centered template is the unbiased solution.
pub fn cohort_shifts() -> [Vec3; 8] {
    [
        [3.0, 0.0, 0.0],
        [-3.0, 0.0, 0.0],
        [0.0, 2.0, 1.0],
        [0.0, -2.0, -1.0],
        [1.5, 1.0, -2.0],
        [-1.5, -1.0, 2.0],
        [2.0, -1.5, 1.0],
        [-2.0, 1.5, -1.0],
    ]
}
