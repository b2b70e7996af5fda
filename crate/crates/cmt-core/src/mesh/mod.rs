//! Surface extraction and mesh-based evaluation metrics.

mod interface;
mod marching;
mod metrics;
mod tables;
mod thickness;
mod trimesh;

pub use interface::extract_interface;
pub use marching::{marching_cubes, marching_cubes_value, DEFAULT_MESH_SIGMA};
pub use metrics::{boundary_points, dsc, hd95};
pub use thickness::{mean_interface_thickness, thickness_map};
pub use trimesh::{
    mirror_mesh, relative_area_difference, surface_area, triangle_area, write_ply, SurfacePatch,
    TriMesh,
};
