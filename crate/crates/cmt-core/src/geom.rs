//! Small geometry kit: 4x4 voxel-to-world affines and 3-vectors.

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

pub fn vadd(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn vsub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub fn vscale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub fn vdot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn vcross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn vnorm(a: Vec3) -> f64 {
    vdot(a, a).sqrt()
}

/// Homogeneous 4x4 affine mapping voxel indices to world coordinates (mm).
/// The last row is always (0,0,0,1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine4 {
    pub m: [[f64; 4]; 4],
}

impl Affine4 {
    pub fn identity() -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Affine4 { m }
    }

    /// Build from a 3x3 linear part and a translation.
    pub fn from_parts(linear: [[f64; 3]; 3], offset: Vec3) -> Self {
        let mut m = [[0.0; 4]; 4];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] = linear[r][c];
            }
            m[r][3] = offset[r];
        }
        m[3][3] = 1.0;
        Affine4 { m }
    }

    pub fn from_diagonal(spacing: Vec3, offset: Vec3) -> Self {
        Affine4::from_parts(
            [
                [spacing[0], 0.0, 0.0],
                [0.0, spacing[1], 0.0],
                [0.0, 0.0, spacing[2]],
            ],
            offset,
        )
    }

    pub fn linear(&self) -> [[f64; 3]; 3] {
        let mut l = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                l[r][c] = self.m[r][c];
            }
        }
        l
    }

    pub fn offset(&self) -> Vec3 {
        [self.m[0][3], self.m[1][3], self.m[2][3]]
    }

    /// Column `c` of the linear part: the world step for one voxel along axis `c`.
    pub fn column(&self, c: usize) -> Vec3 {
        [self.m[0][c], self.m[1][c], self.m[2][c]]
    }

    pub fn set_offset(&mut self, offset: Vec3) {
        for r in 0..3 {
            self.m[r][3] = offset[r];
        }
    }

    /// Map a voxel-index point to world coordinates.
    pub fn apply(&self, p: Vec3) -> Vec3 {
        let mut out = [0.0; 3];
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.m[r][0] * p[0] + self.m[r][1] * p[1] + self.m[r][2] * p[2] + self.m[r][3];
        }
        out
    }

    /// Apply only the linear part (directions, no translation).
    pub fn apply_linear(&self, p: Vec3) -> Vec3 {
        let mut out = [0.0; 3];
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.m[r][0] * p[0] + self.m[r][1] * p[1] + self.m[r][2] * p[2];
        }
        out
    }

    pub fn compose(&self, other: &Affine4) -> Affine4 {
        let mut m = [[0.0; 4]; 4];
        for r in 0..4 {
            for c in 0..4 {
                let mut s = 0.0;
                for k in 0..4 {
                    s += self.m[r][k] * other.m[k][c];
                }
                m[r][c] = s;
            }
        }
        Affine4 { m }
    }

    pub fn det3(&self) -> f64 {
        let l = &self.m;
        l[0][0] * (l[1][1] * l[2][2] - l[1][2] * l[2][1])
            - l[0][1] * (l[1][0] * l[2][2] - l[1][2] * l[2][0])
            + l[0][2] * (l[1][0] * l[2][1] - l[1][1] * l[2][0])
    }

    /// Invert; errors when the 3x3 part is singular.
    pub fn inverse(&self) -> Result<Affine4> {
        let det = self.det3();
        if det.abs() < 1e-12 {
            return Err(Error::SingularAffine);
        }
        let l = &self.m;
        let inv = [
            [
                (l[1][1] * l[2][2] - l[1][2] * l[2][1]) / det,
                (l[0][2] * l[2][1] - l[0][1] * l[2][2]) / det,
                (l[0][1] * l[1][2] - l[0][2] * l[1][1]) / det,
            ],
            [
                (l[1][2] * l[2][0] - l[1][0] * l[2][2]) / det,
                (l[0][0] * l[2][2] - l[0][2] * l[2][0]) / det,
                (l[0][2] * l[1][0] - l[0][0] * l[1][2]) / det,
            ],
            [
                (l[1][0] * l[2][1] - l[1][1] * l[2][0]) / det,
                (l[0][1] * l[2][0] - l[0][0] * l[2][1]) / det,
                (l[0][0] * l[1][1] - l[0][1] * l[1][0]) / det,
            ],
        ];
        let off = self.offset();
        let inv_off = [
            -(inv[0][0] * off[0] + inv[0][1] * off[1] + inv[0][2] * off[2]),
            -(inv[1][0] * off[0] + inv[1][1] * off[1] + inv[1][2] * off[2]),
            -(inv[2][0] * off[0] + inv[2][1] * off[1] + inv[2][2] * off[2]),
        ];
        Ok(Affine4::from_parts(inv, inv_off))
    }

    /// Column norms of the linear part (voxel spacings implied by the affine).
    pub fn column_norms(&self) -> Vec3 {
        [
            vnorm(self.column(0)),
            vnorm(self.column(1)),
            vnorm(self.column(2)),
        ]
    }

    pub fn approx_eq(&self, other: &Affine4, tol: f64) -> bool {
        for r in 0..4 {
            for c in 0..4 {
                if (self.m[r][c] - other.m[r][c]).abs() > tol {
                    return false;
                }
            }
        }
        true
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().all(|row| row.iter().all(|v| v.is_finite()))
    }
}

/// Rigid transform (rotation about a center plus translation) as a world-space affine.
/// Angles are intrinsic rotations about x, y, z in radians, applied as Rz*Ry*Rx.
pub fn rigid_affine(angles: Vec3, translation: Vec3, center: Vec3) -> Affine4 {
    let (sx, cx) = angles[0].sin_cos();
    let (sy, cy) = angles[1].sin_cos();
    let (sz, cz) = angles[2].sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    let r = mat3_mul(rz, mat3_mul(ry, rx));
    // x' = R (x - c) + c + t
    let rc = [
        r[0][0] * center[0] + r[0][1] * center[1] + r[0][2] * center[2],
        r[1][0] * center[0] + r[1][1] * center[1] + r[1][2] * center[2],
        r[2][0] * center[0] + r[2][1] * center[1] + r[2][2] * center[2],
    ];
    let offset = [
        center[0] + translation[0] - rc[0],
        center[1] + translation[1] - rc[1],
        center[2] + translation[2] - rc[2],
    ];
    Affine4::from_parts(r, offset)
}

fn mat3_mul(a: [[f64; 3]; 3], b: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = a[r][0] * b[0][c] + a[r][1] * b[1][c] + a[r][2] * b[2][c];
        }
    }
    out
}
