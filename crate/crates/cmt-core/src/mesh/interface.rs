//! Bone-cartilage interface extraction: partition a cartilage mesh into the
//! bone-facing patch and the outer (articular) patch.

use super::trimesh::{SurfacePatch, TriMesh};
use crate::error::{Error, Result};
use crate::volume::LabelMap;

/// Split the faces of a cartilage-label mesh by bone adjacency: a face whose
/// centroid's nearest voxel has a bone voxel within its 26-neighborhood
/// belongs to the interface; every other face is outer. The two patches
/// partition the mesh.
pub fn extract_interface(
    mesh: &TriMesh,
    labels: &LabelMap,
    bone_value: u8,
) -> Result<(SurfacePatch, SurfacePatch)> {
    if labels.count_label(bone_value) == 0 {
        return Err(Error::EmptyLabel(format!("bone value {bone_value}")));
    }
    let inv = labels.grid.affine.inverse()?;
    let ext = labels.grid.extents;
    let mut interface = Vec::new();
    let mut outer = Vec::new();
    for f in 0..mesh.faces.len() {
        let c = mesh.face_centroid(f);
        let p = inv.apply(c);
        let vx = p[0].round() as i64;
        let vy = p[1].round() as i64;
        let vz = p[2].round() as i64;
        let mut near_bone = false;
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
                    if labels.at(x as usize, y as usize, z as usize) == bone_value {
                        near_bone = true;
                        break 'scan;
                    }
                }
            }
        }
        if near_bone {
            interface.push(f);
        } else {
            outer.push(f);
        }
    }
    if interface.is_empty() {
        return Err(Error::NoBoneAdjacency);
    }
    Ok((
        SurfacePatch::from_faces(mesh, interface),
        SurfacePatch::from_faces(mesh, outer),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::mesh::marching::marching_cubes;
    use crate::volume::{LabelMap, LabelSchema};

    /// Bone slab under a cartilage slab, both comfortably interior.
    fn slab_phantom() -> LabelMap {
        let grid = Grid::isotropic([40, 40, 24], 1.0);
        let schema = LabelSchema::default();
        let mut lab = LabelMap::zeros(grid, schema);
        for idx in 0..lab.data.len() {
            let [x, y, z] = lab.grid.coords(idx);
            if (4..36).contains(&x) && (4..36).contains(&y) {
                if (4..10).contains(&z) {
                    lab.data[idx] = schema.femur;
                } else if (10..14).contains(&z) {
                    lab.data[idx] = schema.femoral_cartilage;
                }
            }
        }
        lab
    }

    #[test]
    fn slab_interface_matches_footprint() {
        let lab = slab_phantom();
        let schema = lab.schema;
        let mesh = marching_cubes(&lab, "FC", 0.5, 1.0).unwrap();
        let (interface, outer) = extract_interface(&mesh, &lab, schema.femur).unwrap();
        // footprint is 32 x 32 mm
        let footprint = 32.0 * 32.0;
        let rel = (interface.area - footprint).abs() / footprint;
        assert!(rel < 0.10, "interface area {} vs {footprint}", interface.area);
        // partition: interface + outer = all faces, disjoint
        assert_eq!(interface.faces.len() + outer.faces.len(), mesh.faces.len());
        let mut seen = vec![false; mesh.faces.len()];
        for &f in interface.faces.iter().chain(&outer.faces) {
            assert!(!seen[f], "face {f} in both patches");
            seen[f] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn floating_cartilage_has_no_interface() {
        let grid = Grid::isotropic([24, 24, 24], 1.0);
        let schema = LabelSchema::default();
        let mut lab = LabelMap::zeros(grid, schema);
        for idx in 0..lab.data.len() {
            let [x, y, z] = lab.grid.coords(idx);
            // bone far away from the floating cartilage ball
            if x < 4 && y < 4 && z < 4 {
                lab.data[idx] = schema.femur;
            }
            let d2 = (x as f64 - 16.0).powi(2) + (y as f64 - 16.0).powi(2)
                + (z as f64 - 16.0).powi(2);
            if d2 <= 16.0 {
                lab.data[idx] = schema.femoral_cartilage;
            }
        }
        let mesh = marching_cubes(&lab, "FC", 0.5, 1.0).unwrap();
        assert!(matches!(
            extract_interface(&mesh, &lab, schema.femur),
            Err(Error::NoBoneAdjacency)
        ));
    }

    #[test]
    fn spherical_shell_interface_matches_inner_sphere() {
        let grid = Grid::isotropic([48, 48, 48], 1.0);
        let schema = LabelSchema::default();
        let mut lab = LabelMap::zeros(grid, schema);
        let c = 23.5;
        let (r_in, r_out) = (10.0, 14.0);
        for idx in 0..lab.data.len() {
            let [x, y, z] = lab.grid.coords(idx);
            let d = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c).powi(2))
                .sqrt();
            if d <= r_in {
                lab.data[idx] = schema.femur;
            } else if d <= r_out {
                lab.data[idx] = schema.femoral_cartilage;
            }
        }
        let mesh = marching_cubes(&lab, "FC", 0.5, 1.0).unwrap();
        let (interface, outer) = extract_interface(&mesh, &lab, schema.femur).unwrap();
        let inner_area = 4.0 * std::f64::consts::PI * r_in * r_in;
        let rel = (interface.area - inner_area).abs() / inner_area;
        assert!(rel < 0.10, "shell interface {} vs {inner_area}", interface.area);
        assert!(outer.area > interface.area);
    }
}
