//! Cartilage thickness: distance from each bone-interface vertex to the
//! nearest point on the outer (articular) patch.

use super::trimesh::{SurfacePatch, TriMesh};
use crate::error::{Error, Result};
use crate::geom::{vadd, vdot, vscale, vsub, Vec3};

/// Closest point on triangle (a,b,c) to p (Ericson-style region tests).
pub(crate) fn closest_point_on_triangle(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> Vec3 {
    let ab = vsub(b, a);
    let ac = vsub(c, a);
    let ap = vsub(p, a);
    let d1 = vdot(ab, ap);
    let d2 = vdot(ac, ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = vsub(p, b);
    let d3 = vdot(ab, bp);
    let d4 = vdot(ac, bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return vadd(a, vscale(ab, v));
    }
    let cp = vsub(p, c);
    let d5 = vdot(ab, cp);
    let d6 = vdot(ac, cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return vadd(a, vscale(ac, w));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return vadd(b, vscale(vsub(c, b), w));
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    vadd(a, vadd(vscale(ab, v), vscale(ac, w)))
}

fn dist2(a: Vec3, b: Vec3) -> f64 {
    let d = vsub(a, b);
    vdot(d, d)
}

/// Triangle set with an AABB bin index for nearest point-to-surface queries.
pub(crate) struct TriangleIndex {
    tris: Vec<[Vec3; 3]>,
    cell: f64,
    origin: Vec3,
    dims: [usize; 3],
    bins: Vec<Vec<usize>>,
}

impl TriangleIndex {
    pub fn build(mesh: &TriMesh, faces: &[usize], cell: f64) -> TriangleIndex {
        let tris: Vec<[Vec3; 3]> = faces
            .iter()
            .map(|&f| {
                let [a, b, c] = mesh.faces[f];
                [mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]]
            })
            .collect();
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for t in &tris {
            for v in t {
                for d in 0..3 {
                    lo[d] = lo[d].min(v[d]);
                    hi[d] = hi[d].max(v[d]);
                }
            }
        }
        let mut dims = [1usize; 3];
        for d in 0..3 {
            dims[d] = (((hi[d] - lo[d]) / cell).floor() as usize + 1).max(1);
        }
        let mut bins = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        let clampi = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
        for (i, t) in tris.iter().enumerate() {
            let mut tlo = [f64::INFINITY; 3];
            let mut thi = [f64::NEG_INFINITY; 3];
            for v in t {
                for d in 0..3 {
                    tlo[d] = tlo[d].min(v[d]);
                    thi[d] = thi[d].max(v[d]);
                }
            }
            let c0: Vec<usize> = (0..3)
                .map(|d| clampi(((tlo[d] - lo[d]) / cell).floor() as i64, dims[d]))
                .collect();
            let c1: Vec<usize> = (0..3)
                .map(|d| clampi(((thi[d] - lo[d]) / cell).floor() as i64, dims[d]))
                .collect();
            for z in c0[2]..=c1[2] {
                for y in c0[1]..=c1[1] {
                    for x in c0[0]..=c1[0] {
                        bins[x + dims[0] * (y + dims[1] * z)].push(i);
                    }
                }
            }
        }
        TriangleIndex {
            tris,
            cell,
            origin: lo,
            dims,
            bins,
        }
    }

    /// Distance from p to the nearest triangle surface point.
    pub fn nearest_distance(&self, p: Vec3) -> f64 {
        let mut c = [0i64; 3];
        for d in 0..3 {
            c[d] = ((p[d] - self.origin[d]) / self.cell).floor() as i64;
        }
        let max_dim = *self.dims.iter().max().unwrap() as i64;
        let far = (0..3)
            .map(|d| {
                (c[d].max(self.dims[d] as i64 - 1 - c[d]).abs()) + 2
            })
            .max()
            .unwrap()
            .max(max_dim + 2);
        let mut best2 = f64::INFINITY;
        for ring in 0..=far {
            if best2.is_finite() {
                let safe = (ring - 1) as f64 * self.cell;
                if safe > 0.0 && safe * safe > best2 {
                    break;
                }
            }
            for dz in -ring..=ring {
                for dy in -ring..=ring {
                    for dx in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        let (x, y, z) = (c[0] + dx, c[1] + dy, c[2] + dz);
                        if x < 0
                            || y < 0
                            || z < 0
                            || x >= self.dims[0] as i64
                            || y >= self.dims[1] as i64
                            || z >= self.dims[2] as i64
                        {
                            continue;
                        }
                        for &i in
                            &self.bins[x as usize + self.dims[0] * (y as usize + self.dims[1] * z as usize)]
                        {
                            let t = &self.tris[i];
                            let q = closest_point_on_triangle(p, t[0], t[1], t[2]);
                            best2 = best2.min(dist2(p, q));
                        }
                    }
                }
            }
        }
        best2.sqrt()
    }
}

/// Thickness-annotated copy of the mesh: every vertex of the interface patch
/// gets its distance (mm) to the nearest point on the outer patch; vertices
/// not on the interface carry 0.
pub fn thickness_map(
    mesh: &TriMesh,
    interface: &SurfacePatch,
    outer: &SurfacePatch,
) -> Result<TriMesh> {
    if interface.is_empty() || outer.is_empty() {
        return Err(Error::EmptyPatch);
    }
    let cell = 2.0;
    let index = TriangleIndex::build(mesh, &outer.faces, cell);
    let mut on_interface = vec![false; mesh.vertices.len()];
    for &f in &interface.faces {
        for &v in &mesh.faces[f] {
            on_interface[v] = true;
        }
    }
    let mut thickness = vec![0.0f64; mesh.vertices.len()];
    for (v, &on) in on_interface.iter().enumerate() {
        if on {
            thickness[v] = index.nearest_distance(mesh.vertices[v]);
        }
    }
    Ok(TriMesh {
        vertices: mesh.vertices.clone(),
        faces: mesh.faces.clone(),
        scalar: Some(thickness),
    })
}

/// Mean thickness over interface vertices of a thickness-annotated mesh.
pub fn mean_interface_thickness(mesh: &TriMesh, interface: &SurfacePatch) -> Result<f64> {
    let scalar = mesh
        .scalar
        .as_ref()
        .ok_or_else(|| Error::MissingInputs("thickness channel".into()))?;
    let mut on_interface = vec![false; mesh.vertices.len()];
    for &f in &interface.faces {
        for &v in &mesh.faces[f] {
            on_interface[v] = true;
        }
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (v, &on) in on_interface.iter().enumerate() {
        if on {
            sum += scalar[v];
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyPatch);
    }
    Ok(sum / count as f64)
}
