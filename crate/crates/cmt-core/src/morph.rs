//! Knee-specific algorithms on top of the mesh and registration layers:
//! laterality standardization, pose normalization, tibial-cartilage
//! parcellation, full-thickness cartilage loss, and per-region metrics.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::Affine4;
use crate::grid::Grid;
use crate::mesh::{
    extract_interface, marching_cubes_value, mean_interface_thickness, surface_area,
    thickness_map, SurfacePatch, TriMesh, DEFAULT_MESH_SIGMA,
};
use crate::reg::{rigid_register, RegistrationConfig, TemplateModel};
use crate::volume::{
    centroid_of_label, require_ras, sample_trilinear_clamped, ImageVolume, LabelMap,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn parse(s: &str) -> Result<Side> {
        match s.to_ascii_lowercase().as_str() {
            "left" | "l" => Ok(Side::Left),
            "right" | "r" => Ok(Side::Right),
            other => Err(Error::InvalidConfig(format!("unknown side {other:?}"))),
        }
    }
}

/// Cartilage regions reported by the pipeline. Table naming: FC, mTC, lTC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Region {
    FC,
    MTC,
    LTC,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::FC, Region::MTC, Region::LTC];

    pub fn name(self) -> &'static str {
        match self {
            Region::FC => "FC",
            Region::MTC => "mTC",
            Region::LTC => "lTC",
        }
    }

    /// Cartilage label value for this region (post-parcellation for mTC/lTC).
    pub fn cartilage_value(self, schema: &crate::volume::LabelSchema) -> u8 {
        match self {
            Region::FC => schema.femoral_cartilage,
            Region::MTC => schema.medial_tibial_cartilage,
            Region::LTC => schema.lateral_tibial_cartilage,
        }
    }

    /// Bone the region's cartilage interfaces with.
    pub fn bone_value(self, schema: &crate::volume::LabelSchema) -> u8 {
        match self {
            Region::FC => schema.femur,
            Region::MTC | Region::LTC => schema.tibia,
        }
    }
}

/// Per-region quantification record.
#[derive(Debug, Clone, Serialize)]
pub struct RegionMetrics {
    pub region: Region,
    pub volume_mm3: f64,
    pub mean_thickness_mm: f64,
    pub interface_area_mm2: f64,
    pub fcl_fraction: f64,
}

/// Flip left knees into right-knee geometry so every downstream rule can
/// assume one convention; the returned flag drives export-time unflipping.
pub fn standardize_laterality(
    image: &ImageVolume,
    labels: &LabelMap,
    side: Side,
) -> Result<(ImageVolume, LabelMap, bool)> {
    require_ras(&image.grid.affine)?;
    match side {
        Side::Right => Ok((image.clone(), labels.clone(), false)),
        Side::Left => Ok((image.flip_lr()?, labels.flip_lr()?, true)),
    }
}

/// Rigidly align a subject to the template and resample it onto the
/// template grid (image trilinear, labels nearest-neighbor).
///
/// The pose search runs on cartilage-masked intensities on both sides: the
/// learned template image itself has cartilage-only support, so masking the
/// subject the same way is what makes the NCC landscape informative.
pub fn pose_normalize(
    image: &ImageVolume,
    labels: &LabelMap,
    template: &TemplateModel,
    cfg: &RegistrationConfig,
) -> Result<(ImageVolume, LabelMap, Affine4)> {
    image.grid.require_compatible(&labels.grid, "pose_normalize")?;
    let moving = image.mask_image(labels, &["FC", "TC"])?;
    let fixed = template
        .image
        .mask_image(&template.mask, &["FC", "TC"])?;
    let rigid = rigid_register(&moving, &fixed, cfg)?;
    let t_inv = rigid.inverse()?;
    let grid = template.image.grid.clone();
    // template voxel -> fixed world -> moving world -> moving voxel
    let map = image
        .grid
        .affine
        .inverse()?
        .compose(&t_inv)
        .compose(&grid.affine);
    let n = grid.num_voxels();
    let mut out_img = vec![0.0f32; n];
    let mut out_lab = vec![0u8; n];
    let ext = image.grid.extents;
    for idx in 0..n {
        let [x, y, z] = grid.coords(idx);
        let p = map.apply([x as f64, y as f64, z as f64]);
        if p[0] < -0.5
            || p[1] < -0.5
            || p[2] < -0.5
            || p[0] > ext[0] as f64 - 0.5
            || p[1] > ext[1] as f64 - 0.5
            || p[2] > ext[2] as f64 - 0.5
        {
            continue;
        }
        out_img[idx] = sample_trilinear_clamped(&image.data, ext, p) as f32;
        let nx = (p[0].round().max(0.0) as usize).min(ext[0] - 1);
        let ny = (p[1].round().max(0.0) as usize).min(ext[1] - 1);
        let nz = (p[2].round().max(0.0) as usize).min(ext[2] - 1);
        out_lab[idx] = labels.at(nx, ny, nz);
    }
    Ok((
        ImageVolume {
            grid: grid.clone(),
            data: out_img,
        },
        LabelMap {
            grid,
            data: out_lab,
            schema: labels.schema,
        },
        rigid,
    ))
}

/// 26-connected components of one label value, in deterministic order.
fn connected_components(map: &LabelMap, value: u8) -> Vec<Vec<usize>> {
    let ext = map.grid.extents;
    let mut visited = vec![false; map.data.len()];
    let mut components = Vec::new();
    for start in 0..map.data.len() {
        if visited[start] || map.data[start] != value {
            continue;
        }
        let mut stack = vec![start];
        visited[start] = true;
        let mut comp = Vec::new();
        while let Some(idx) = stack.pop() {
            comp.push(idx);
            let [x, y, z] = map.grid.coords(idx);
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if dx == 0 && dy == 0 && dz == 0 {
                            continue;
                        }
                        let (nx, ny, nz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                        if nx < 0
                            || ny < 0
                            || nz < 0
                            || nx >= ext[0] as i64
                            || ny >= ext[1] as i64
                            || nz >= ext[2] as i64
                        {
                            continue;
                        }
                        let nidx = map.grid.index(nx as usize, ny as usize, nz as usize);
                        if !visited[nidx] && map.data[nidx] == value {
                            visited[nidx] = true;
                            stack.push(nidx);
                        }
                    }
                }
            }
        }
        comp.sort_unstable();
        components.push(comp);
    }
    components
}

fn mean_x(map: &LabelMap, comp: &[usize]) -> f64 {
    let mut s = 0.0;
    for &idx in comp {
        s += (idx % map.grid.extents[0]) as f64;
    }
    s / comp.len() as f64
}

/// Split tibial cartilage into medial and lateral lobes. Assumes right-knee
/// geometry after laterality standardization (RAS: +x is the subject's
/// right, so the medial lobe of a right knee has the smaller x centroid).
///
/// Two or more components: the two largest become mTC/lTC by centroid;
/// leftovers join the side their centroid falls on. A single component is
/// split at the between-lobe density minimum along x; without a clear
/// bimodal profile the whole lobe is assigned by its centroid relative to
/// the tibia.
pub fn parcellate_tc(labels: &LabelMap) -> Result<LabelMap> {
    let schema = labels.schema;
    let tc = schema.tibial_cartilage;
    let comps = connected_components(labels, tc);
    if comps.is_empty() {
        return Err(Error::NoTibialCartilage);
    }
    let mut out = labels.clone();
    let assign = |out: &mut LabelMap, comp: &[usize], value: u8| {
        for &idx in comp {
            out.data[idx] = value;
        }
    };
    if comps.len() >= 2 {
        let mut order: Vec<usize> = (0..comps.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(comps[i].len()));
        let (a, b) = (order[0], order[1]);
        let xa = mean_x(labels, &comps[a]);
        let xb = mean_x(labels, &comps[b]);
        let (medial, lateral) = if xa <= xb { (a, b) } else { (b, a) };
        assign(&mut out, &comps[medial], schema.medial_tibial_cartilage);
        assign(&mut out, &comps[lateral], schema.lateral_tibial_cartilage);
        let split = (xa + xb) / 2.0;
        for (i, comp) in comps.iter().enumerate() {
            if i == a || i == b {
                continue;
            }
            let side = if mean_x(labels, comp) < split {
                schema.medial_tibial_cartilage
            } else {
                schema.lateral_tibial_cartilage
            };
            assign(&mut out, comp, side);
        }
    } else {
        let comp = &comps[0];
        // density profile along x, restricted to the component
        let nx = labels.grid.extents[0];
        let mut hist = vec![0usize; nx];
        for &idx in comp {
            hist[idx % nx] += 1;
        }
        let first = hist.iter().position(|&c| c > 0).unwrap();
        let last = nx - 1 - hist.iter().rev().position(|&c| c > 0).unwrap();
        // between-lobe minimum: an interior valley with strictly taller
        // peaks on both sides
        let mut best: Option<(usize, usize)> = None; // (count, x)
        for x in first + 1..last {
            let left_peak = hist[first..x].iter().max().copied().unwrap_or(0);
            let right_peak = hist[x + 1..=last].iter().max().copied().unwrap_or(0);
            if left_peak > hist[x] && right_peak > hist[x] {
                let cand = (hist[x], x);
                if best.map_or(true, |b| cand < b) {
                    best = Some(cand);
                }
            }
        }
        match best {
            Some((_, x_split)) => {
                for &idx in comp {
                    out.data[idx] = if idx % nx < x_split {
                        schema.medial_tibial_cartilage
                    } else {
                        schema.lateral_tibial_cartilage
                    };
                }
            }
            None => {
                // single lobe: assign by centroid side relative to the tibia
                let cx = mean_x(labels, comp);
                let ref_x = centroid_of_label(labels, schema.tibia)
                    .map(|c| c[0])
                    .unwrap_or((nx as f64 - 1.0) / 2.0);
                let side = if cx <= ref_x {
                    schema.medial_tibial_cartilage
                } else {
                    schema.lateral_tibial_cartilage
                };
                assign(&mut out, comp, side);
            }
        }
    }
    Ok(out)
}

/// Fraction of the pseudo-healthy bone-cartilage interface (from the warped
/// template region) left uncovered by observed cartilage: the full-thickness
/// cartilage loss estimate, in [0, 1].
pub fn estimate_fcl(
    warped_template: &LabelMap,
    observed: &LabelMap,
    bone_labels: &LabelMap,
    region: Region,
) -> Result<f64> {
    warped_template
        .grid
        .require_compatible(&observed.grid, "estimate_fcl")?;
    warped_template
        .grid
        .require_compatible(&bone_labels.grid, "estimate_fcl bone")?;
    let schema = warped_template.schema;
    let region_value = region.cartilage_value(&schema);
    if warped_template.count_label(region_value) == 0 {
        return Err(Error::EmptyRegion(region.name().to_string()));
    }
    let mesh = marching_cubes_value(warped_template, region_value, 0.5, DEFAULT_MESH_SIGMA)?;
    let (interface, _) = extract_interface(&mesh, bone_labels, region.bone_value(&schema))?;
    let observed_value = region.cartilage_value(&observed.schema);
    let inv = observed.grid.affine.inverse()?;
    let ext = observed.grid.extents;
    let mut uncovered_area = 0.0;
    for &f in &interface.faces {
        let c = mesh.face_centroid(f);
        let p = inv.apply(c);
        let vx = p[0].round() as i64;
        let vy = p[1].round() as i64;
        let vz = p[2].round() as i64;
        let mut covered = false;
        'scan: for dz in -1..=1i64 {
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let (x, y, z) = (vx + dx, vy + dy, vz + dz);
                    if x < 0
                        || y < 0
                        || z < 0
                        || x >= ext[0] as i64
                        || y >= ext[1] as i64
                        || z >= ext[2] as i64
                    {
                        continue;
                    }
                    if observed.at(x as usize, y as usize, z as usize) == observed_value {
                        covered = true;
                        break 'scan;
                    }
                }
            }
        }
        if !covered {
            uncovered_area += mesh.face_area(f);
        }
    }
    Ok((uncovered_area / interface.area).clamp(0.0, 1.0))
}

/// One region's quantification: observed volume/thickness/interface area
/// plus FCL against the warped template. Also returns the thickness mesh
/// for export.
pub fn quantify_region(
    observed: &LabelMap,
    warped_template: &LabelMap,
    region: Region,
) -> Result<(RegionMetrics, Option<TriMesh>)> {
    let schema = observed.schema;
    let value = region.cartilage_value(&schema);
    let bone = region.bone_value(&schema);
    let voxvol = observed.grid.voxel_volume_mm3();
    let volume = observed.count_label(value) as f64 * voxvol;
    let fcl = estimate_fcl(warped_template, observed, observed, region)?;
    if volume == 0.0 {
        return Ok((
            RegionMetrics {
                region,
                volume_mm3: 0.0,
                mean_thickness_mm: 0.0,
                interface_area_mm2: 0.0,
                fcl_fraction: fcl,
            },
            None,
        ));
    }
    let mesh = marching_cubes_value(observed, value, 0.5, DEFAULT_MESH_SIGMA)?;
    let (interface, outer) = extract_interface(&mesh, observed, bone)?;
    let annotated = thickness_map(&mesh, &interface, &outer)?;
    let mean_thickness = mean_interface_thickness(&annotated, &interface)?;
    Ok((
        RegionMetrics {
            region,
            volume_mm3: volume,
            mean_thickness_mm: mean_thickness,
            interface_area_mm2: interface.area,
            fcl_fraction: fcl,
        },
        Some(annotated),
    ))
}

/// All-region report; both label maps must be parcellated already.
pub fn regional_report(
    observed: &LabelMap,
    warped_template: &LabelMap,
) -> Result<Vec<(RegionMetrics, Option<TriMesh>)>> {
    Region::ALL
        .iter()
        .map(|&r| quantify_region(observed, warped_template, r))
        .collect()
}

/// Bone-cartilage interface patch of a mask region (helper for evaluation:
/// the measured interface area A of a warped template mask).
pub fn region_interface(
    mask: &LabelMap,
    region: Region,
) -> Result<(TriMesh, SurfacePatch, SurfacePatch)> {
    let schema = mask.schema;
    let mesh = marching_cubes_value(mask, region.cartilage_value(&schema), 0.5, DEFAULT_MESH_SIGMA)?;
    let (interface, outer) = extract_interface(&mesh, mask, region.bone_value(&schema))?;
    Ok((mesh, interface, outer))
}

/// Total area of a mesh (pseudo patches are supplied as whole PLY meshes).
pub fn patch_area(mesh: &TriMesh) -> f64 {
    surface_area(mesh)
}

/// World-space mirror about a grid's central left-right plane,
/// `A ∘ F ∘ A⁻¹` with F the voxel flip along axis 0: the transform that
/// takes meshes computed in right-knee geometry back to a left knee's
/// native world coordinates.
pub fn lr_mirror_world(grid: &Grid) -> Result<Affine4> {
    let mut f = Affine4::identity();
    f.m[0][0] = -1.0;
    f.m[0][3] = (grid.extents[0] - 1) as f64;
    Ok(grid.affine.compose(&f).compose(&grid.affine.inverse()?))
}
