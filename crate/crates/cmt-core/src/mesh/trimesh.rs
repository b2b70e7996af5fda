//! Triangle meshes in world coordinates (mm) and surface patches.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{vcross, vnorm, vsub, Vec3};

#[derive(Debug, Clone, Default)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    /// Optional per-vertex scalar channel (e.g. thickness in mm).
    pub scalar: Option<Vec<f64>>,
}

impl TriMesh {
    pub fn face_area(&self, f: usize) -> f64 {
        let [a, b, c] = self.faces[f];
        triangle_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn face_centroid(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.faces[f];
        let (va, vb, vc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        [
            (va[0] + vb[0] + vc[0]) / 3.0,
            (va[1] + vb[1] + vc[1]) / 3.0,
            (va[2] + vb[2] + vc[2]) / 3.0,
        ]
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// V - E + F over the whole mesh (2 per closed component of genus 0).
    pub fn euler_characteristic(&self) -> i64 {
        use std::collections::HashSet;
        let mut edges: HashSet<(usize, usize)> = HashSet::new();
        let mut verts: HashSet<usize> = HashSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                edges.insert((a.min(b), a.max(b)));
                verts.insert(a);
            }
        }
        verts.len() as i64 - edges.len() as i64 + self.faces.len() as i64
    }

    /// Every undirected edge shared by exactly two faces, with opposite
    /// orientations (closed orientable 2-manifold).
    pub fn is_watertight(&self) -> bool {
        use std::collections::HashMap;
        let mut directed: HashMap<(usize, usize), i64> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                let a = f[k];
                let b = f[(k + 1) % 3];
                *directed.entry((a, b)).or_insert(0) += 1;
            }
        }
        directed.iter().all(|(&(a, b), &count)| {
            count == 1 && directed.get(&(b, a)) == Some(&1)
        })
    }
}

pub fn triangle_area(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    0.5 * vnorm(vcross(vsub(b, a), vsub(c, a)))
}

/// Sum of triangle areas: 1/2 |(b-a) x (c-a)| per face.
pub fn surface_area(mesh: &TriMesh) -> f64 {
    let mut acc = 0.0;
    for f in 0..mesh.faces.len() {
        acc += mesh.face_area(f);
    }
    acc
}

/// A subset of a mesh's faces with its summed area.
#[derive(Debug, Clone)]
pub struct SurfacePatch {
    pub faces: Vec<usize>,
    pub area: f64,
}

impl SurfacePatch {
    pub fn from_faces(mesh: &TriMesh, faces: Vec<usize>) -> SurfacePatch {
        let area = faces.iter().map(|&f| mesh.face_area(f)).sum();
        SurfacePatch { faces, area }
    }

    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }
}

/// Signed relative surface-area difference `(measured - pseudo) / pseudo`.
pub fn relative_area_difference(measured_area: f64, pseudo_area: f64) -> Result<f64> {
    if pseudo_area <= 0.0 {
        return Err(Error::ZeroPseudoArea);
    }
    Ok((measured_area - pseudo_area) / pseudo_area)
}

/// ASCII PLY export; emits the scalar channel as a per-vertex `thickness`
/// property when present.
pub fn write_ply(mesh: &TriMesh, path: &Path) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(out, "ply");
    let _ = writeln!(out, "format ascii 1.0");
    let _ = writeln!(out, "element vertex {}", mesh.vertices.len());
    let _ = writeln!(out, "property float x");
    let _ = writeln!(out, "property float y");
    let _ = writeln!(out, "property float z");
    if mesh.scalar.is_some() {
        let _ = writeln!(out, "property float thickness");
    }
    let _ = writeln!(out, "element face {}", mesh.faces.len());
    let _ = writeln!(out, "property list uchar int vertex_indices");
    let _ = writeln!(out, "end_header");
    for (i, v) in mesh.vertices.iter().enumerate() {
        if let Some(s) = &mesh.scalar {
            let _ = writeln!(
                out,
                "{} {} {} {}",
                v[0] as f32, v[1] as f32, v[2] as f32, s[i] as f32
            );
        } else {
            let _ = writeln!(out, "{} {} {}", v[0] as f32, v[1] as f32, v[2] as f32);
        }
    }
    for f in &mesh.faces {
        let _ = writeln!(out, "3 {} {} {}", f[0], f[1], f[2]);
    }
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::io(path.display().to_string(), e))?;
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Apply a mirroring world transform to the vertices, reversing face
/// winding to keep orientations consistent (export-time laterality unflip).
pub fn mirror_mesh(mesh: &TriMesh, world_mirror: &crate::geom::Affine4) -> TriMesh {
    TriMesh {
        vertices: mesh
            .vertices
            .iter()
            .map(|&v| world_mirror.apply(v))
            .collect(),
        faces: mesh.faces.iter().map(|f| [f[0], f[2], f[1]]).collect(),
        scalar: mesh.scalar.clone(),
    }
}
