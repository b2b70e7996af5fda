//! Voxel grid metadata shared by images, label maps, and vector fields.

use crate::error::{Error, Result};
use crate::geom::{Affine4, Vec3};

/// Extents, spacing (mm), and voxel-to-world affine of a 3D grid.
/// Voxel data attached to a grid is stored x-fastest: `idx = x + nx*(y + ny*z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub extents: [usize; 3],
    pub spacing: Vec3,
    pub affine: Affine4,
}

impl Grid {
    pub fn new(extents: [usize; 3], spacing: Vec3, affine: Affine4) -> Self {
        Grid {
            extents,
            spacing,
            affine,
        }
    }

    /// Axis-aligned grid with the given spacing and a zero world origin.
    pub fn axis_aligned(extents: [usize; 3], spacing: Vec3) -> Self {
        Grid {
            extents,
            spacing,
            affine: Affine4::from_diagonal(spacing, [0.0; 3]),
        }
    }

    pub fn isotropic(extents: [usize; 3], spacing: f64) -> Self {
        Grid::axis_aligned(extents, [spacing; 3])
    }

    pub fn num_voxels(&self) -> usize {
        self.extents[0] * self.extents[1] * self.extents[2]
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.extents[0] * (y + self.extents[1] * z)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.extents[0];
        let ny = self.extents[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// World coordinate (mm) of a voxel center.
    pub fn voxel_to_world(&self, p: Vec3) -> Vec3 {
        self.affine.apply(p)
    }

    pub fn world_to_voxel(&self, w: Vec3) -> Result<Vec3> {
        Ok(self.affine.inverse()?.apply(w))
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.affine.det3().abs()
    }

    /// Structural equality used as the precondition of voxelwise operations.
    pub fn compatible(&self, other: &Grid) -> bool {
        self.extents == other.extents && self.affine.approx_eq(&other.affine, 1e-4)
    }

    pub fn require_compatible(&self, other: &Grid, what: &str) -> Result<()> {
        if self.compatible(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.extents, other.extents
            )))
        }
    }

    /// Spacing must match the affine column norms (1e-4 relative).
    pub fn validate(&self) -> Result<()> {
        if self.extents.iter().any(|&e| e == 0) {
            return Err(Error::EmptyOutput);
        }
        if !self.affine.is_finite() {
            return Err(Error::NonFinite("grid affine"));
        }
        let norms = self.affine.column_norms();
        for a in 0..3 {
            if self.spacing[a] <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "non-positive spacing {}",
                    self.spacing[a]
                )));
            }
            let rel = (norms[a] - self.spacing[a]).abs() / self.spacing[a];
            if rel > 1e-4 {
                return Err(Error::GridMismatch(format!(
                    "spacing {} inconsistent with affine column norm {} on axis {a}",
                    self.spacing[a], norms[a]
                )));
            }
        }
        Ok(())
    }
}
