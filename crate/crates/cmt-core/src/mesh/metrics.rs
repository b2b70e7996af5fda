//! Overlap and surface-distance metrics between label masks.

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::volume::LabelMap;

/// Dice similarity coefficient of one label between two masks;
/// 1.0 when both selections are empty.
pub fn dsc(a: &LabelMap, value_a: u8, b: &LabelMap, value_b: u8) -> Result<f64> {
    a.grid.require_compatible(&b.grid, "dsc")?;
    let mut inter = 0usize;
    let mut na = 0usize;
    let mut nb = 0usize;
    for (x, y) in a.data.iter().zip(&b.data) {
        let ia = *x == value_a;
        let ib = *y == value_b;
        na += ia as usize;
        nb += ib as usize;
        inter += (ia && ib) as usize;
    }
    if na + nb == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / (na + nb) as f64)
}

/// Boundary voxels of a label under 6-connectivity (a labeled voxel with at
/// least one face neighbor outside the label, or on the volume border),
/// returned as world points.
pub fn boundary_points(map: &LabelMap, value: u8) -> Vec<Vec3> {
    let ext = map.grid.extents;
    let mut out = Vec::new();
    for idx in 0..map.data.len() {
        if map.data[idx] != value {
            continue;
        }
        let [x, y, z] = map.grid.coords(idx);
        let mut boundary = x == 0
            || y == 0
            || z == 0
            || x == ext[0] - 1
            || y == ext[1] - 1
            || z == ext[2] - 1;
        if !boundary {
            let neighbors = [
                map.at(x - 1, y, z),
                map.at(x + 1, y, z),
                map.at(x, y - 1, z),
                map.at(x, y + 1, z),
                map.at(x, y, z - 1),
                map.at(x, y, z + 1),
            ];
            boundary = neighbors.iter().any(|&v| v != value);
        }
        if boundary {
            out.push(map.grid.voxel_to_world([x as f64, y as f64, z as f64]));
        }
    }
    out
}

/// Uniform-bin index over a point set for nearest-distance queries.
pub(crate) struct PointIndex {
    cell: f64,
    origin: Vec3,
    dims: [usize; 3],
    bins: Vec<Vec<usize>>,
    points: Vec<Vec3>,
}

impl PointIndex {
    pub fn build(points: Vec<Vec3>, cell: f64) -> PointIndex {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in &points {
            for d in 0..3 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let mut dims = [1usize; 3];
        for d in 0..3 {
            dims[d] = (((hi[d] - lo[d]) / cell).floor() as usize + 1).max(1);
        }
        let mut bins = vec![Vec::new(); dims[0] * dims[1] * dims[2]];
        for (i, p) in points.iter().enumerate() {
            let c = Self::cell_of(p, lo, cell, dims);
            bins[c].push(i);
        }
        PointIndex {
            cell,
            origin: lo,
            dims,
            bins,
            points,
        }
    }

    fn cell_of(p: &Vec3, origin: Vec3, cell: f64, dims: [usize; 3]) -> usize {
        let mut c = [0usize; 3];
        for d in 0..3 {
            c[d] = (((p[d] - origin[d]) / cell).floor() as i64)
                .clamp(0, dims[d] as i64 - 1) as usize;
        }
        c[0] + dims[0] * (c[1] + dims[1] * c[2])
    }

    /// Distance to the nearest indexed point, by expanding Chebyshev shells.
    pub fn nearest_distance(&self, p: Vec3) -> f64 {
        let mut c = [0i64; 3];
        for d in 0..3 {
            c[d] = ((p[d] - self.origin[d]) / self.cell).floor() as i64;
        }
        let max_dim = *self.dims.iter().max().unwrap() as i64;
        let mut best = f64::INFINITY;
        for ring in 0..=(2 * max_dim) {
            // once a point is found, one extra ring guarantees correctness
            if best.is_finite() && (ring - 1) as f64 * self.cell > best {
                break;
            }
            let mut found_cell = false;
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
                        found_cell = true;
                        let bin =
                            &self.bins[x as usize
                                + self.dims[0] * (y as usize + self.dims[1] * z as usize)];
                        for &i in bin {
                            let q = self.points[i];
                            let d2 = (q[0] - p[0]).powi(2)
                                + (q[1] - p[1]).powi(2)
                                + (q[2] - p[2]).powi(2);
                            best = best.min(d2.sqrt());
                        }
                    }
                }
            }
            if !found_cell && ring > max_dim {
                break;
            }
        }
        best
    }
}

/// 95th percentile of the pooled bidirectional nearest boundary-to-boundary
/// distances (mm), linear interpolation between order statistics.
pub fn hd95(a: &LabelMap, value_a: u8, b: &LabelMap, value_b: u8) -> Result<f64> {
    a.grid.require_compatible(&b.grid, "hd95")?;
    let pa = boundary_points(a, value_a);
    let pb = boundary_points(b, value_b);
    if pa.is_empty() || pb.is_empty() {
        return Err(Error::EmptyMask);
    }
    let cell = a.grid.spacing.iter().fold(0.0f64, |m, &s| m.max(s)) * 2.0;
    let ia = PointIndex::build(pa.clone(), cell);
    let ib = PointIndex::build(pb.clone(), cell);
    let mut pooled: Vec<f64> = Vec::with_capacity(pa.len() + pb.len());
    for p in &pa {
        pooled.push(ib.nearest_distance(*p));
    }
    for p in &pb {
        pooled.push(ia.nearest_distance(*p));
    }
    pooled.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Ok(percentile(&pooled, 95.0))
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = (q / 100.0).clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}
