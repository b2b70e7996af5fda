//! Similarity losses (MSE, global NCC, windowed LNCC) and field
//! regularizers, with analytic gradients. All kernels run on f64 buffers and
//! reduce sequentially so results do not depend on thread count.

use crate::error::{Error, Result};
use crate::volume::ImageVolume;

/// Denominator stabilizer in LNCC correlation ratios.
pub const LNCC_EPS: f64 = 1e-5;
/// Windows whose variance product falls below this are treated as
/// uninformative background and contribute zero similarity.
pub const LNCC_VAR_FLOOR: f64 = 1e-10;

// ---------------------------------------------------------------------------
// MSE
// ---------------------------------------------------------------------------

pub(crate) fn mse(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        acc += d * d;
    }
    acc / a.len() as f64
}

/// d mse / d a, scaled by `coef`.
pub(crate) fn mse_grad_first(a: &[f64], b: &[f64], coef: f64, acc: &mut [f64]) {
    let s = 2.0 * coef / a.len() as f64;
    for i in 0..a.len() {
        acc[i] += s * (a[i] - b[i]);
    }
}

/// d mse / d b, scaled by `coef`.
pub(crate) fn mse_grad_second(a: &[f64], b: &[f64], coef: f64, acc: &mut [f64]) {
    let s = 2.0 * coef / a.len() as f64;
    for i in 0..a.len() {
        acc[i] -= s * (a[i] - b[i]);
    }
}

// ---------------------------------------------------------------------------
// global NCC
// ---------------------------------------------------------------------------

struct NccStats {
    mean_a: f64,
    mean_b: f64,
    sd_a: f64,
    sd_b: f64,
    r: f64,
}

fn ncc_stats(a: &[f64], b: &[f64]) -> Result<NccStats> {
    let n = a.len() as f64;
    let mut sa = 0.0;
    let mut sb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sa += x;
        sb += y;
    }
    let mean_a = sa / n;
    let mean_b = sb / n;
    let mut va = 0.0;
    let mut vb = 0.0;
    let mut cov = 0.0;
    for (x, y) in a.iter().zip(b) {
        let da = x - mean_a;
        let db = y - mean_b;
        va += da * da;
        vb += db * db;
        cov += da * db;
    }
    va /= n;
    vb /= n;
    cov /= n;
    if va < 1e-12 || vb < 1e-12 {
        return Err(Error::ConstantImage);
    }
    let sd_a = va.sqrt();
    let sd_b = vb.sqrt();
    Ok(NccStats {
        mean_a,
        mean_b,
        sd_a,
        sd_b,
        r: cov / (sd_a * sd_b),
    })
}

/// 1 - (global Pearson correlation)^2.
pub(crate) fn ncc(a: &[f64], b: &[f64]) -> Result<f64> {
    Ok(1.0 - ncc_stats(a, b)?.r.powi(2))
}

pub(crate) fn ncc_grad_first(a: &[f64], b: &[f64], coef: f64, acc: &mut [f64]) -> Result<()> {
    let s = ncc_stats(a, b)?;
    let n = a.len() as f64;
    // dL/da_j = -2 r * dr/da_j
    let c1 = -2.0 * s.r * coef / (n * s.sd_a * s.sd_b);
    let c2 = 2.0 * s.r * s.r * coef / (n * s.sd_a * s.sd_a);
    for i in 0..a.len() {
        acc[i] += c1 * (b[i] - s.mean_b) + c2 * (a[i] - s.mean_a);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// LNCC: windowed squared correlation via separable clipped box sums
// ---------------------------------------------------------------------------

/// In-place separable moving-window sum with clipped windows; every voxel is
/// a window center.
pub(crate) fn box_filter(ext: [usize; 3], input: &[f64], radius: usize, out: &mut Vec<f64>) {
    out.clear();
    out.extend_from_slice(input);
    let mut tmp = vec![0.0f64; input.len()];
    for axis in 0..3 {
        let n = ext[axis];
        let (stride, lines) = match axis {
            0 => (1usize, ext[1] * ext[2]),
            1 => (ext[0], ext[0] * ext[2]),
            _ => (ext[0] * ext[1], ext[0] * ext[1]),
        };
        for line in 0..lines {
            let base = match axis {
                0 => line * ext[0],
                1 => {
                    let x = line % ext[0];
                    let z = line / ext[0];
                    x + ext[0] * ext[1] * z
                }
                _ => line,
            };
            let mut sum = 0.0;
            let hi0 = radius.min(n - 1);
            for j in 0..=hi0 {
                sum += out[base + j * stride];
            }
            tmp[base] = sum;
            for i in 1..n {
                if i + radius < n {
                    sum += out[base + (i + radius) * stride];
                }
                if i > radius {
                    sum -= out[base + (i - radius - 1) * stride];
                }
                tmp[base + i * stride] = sum;
            }
        }
        std::mem::swap(out, &mut tmp);
    }
}

/// Voxel count of each clipped window (the box filter of all-ones).
pub(crate) fn window_counts(ext: [usize; 3], radius: usize) -> Vec<f64> {
    let ones = vec![1.0f64; ext[0] * ext[1] * ext[2]];
    let mut out = Vec::new();
    box_filter(ext, &ones, radius, &mut out);
    out
}

pub(crate) struct LnccPlan {
    radius: usize,
    counts: Vec<f64>,
}

impl LnccPlan {
    pub fn new(ext: [usize; 3], window_edge: usize) -> Self {
        let radius = (window_edge - 1) / 2;
        LnccPlan {
            radius,
            counts: window_counts(ext, radius),
        }
    }

    /// 1 - mean over window centers of cov^2 / (var_a * var_b + eps).
    pub fn loss(&self, ext: [usize; 3], a: &[f64], b: &[f64]) -> f64 {
        let n = a.len();
        let prod: Vec<f64> = (0..n).map(|i| a[i] * b[i]).collect();
        let sq_a: Vec<f64> = a.iter().map(|v| v * v).collect();
        let sq_b: Vec<f64> = b.iter().map(|v| v * v).collect();
        let mut s_a = Vec::new();
        let mut s_b = Vec::new();
        let mut s_aa = Vec::new();
        let mut s_bb = Vec::new();
        let mut s_ab = Vec::new();
        box_filter(ext, a, self.radius, &mut s_a);
        box_filter(ext, b, self.radius, &mut s_b);
        box_filter(ext, &sq_a, self.radius, &mut s_aa);
        box_filter(ext, &sq_b, self.radius, &mut s_bb);
        box_filter(ext, &prod, self.radius, &mut s_ab);
        let mut acc = 0.0;
        for i in 0..n {
            let nw = self.counts[i];
            let ma = s_a[i] / nw;
            let mb = s_b[i] / nw;
            let cov = s_ab[i] / nw - ma * mb;
            let va = (s_aa[i] / nw - ma * ma).max(0.0);
            let vb = (s_bb[i] / nw - mb * mb).max(0.0);
            let vv = va * vb;
            if vv >= LNCC_VAR_FLOOR {
                acc += cov * cov / (vv + LNCC_EPS);
            }
        }
        1.0 - acc / n as f64
    }

    /// d loss / d a, scaled by `coef`, accumulated into `acc`.
    pub fn grad_first(&self, ext: [usize; 3], a: &[f64], b: &[f64], coef: f64, acc: &mut [f64]) {
        let n = a.len();
        let prod: Vec<f64> = (0..n).map(|i| a[i] * b[i]).collect();
        let sq_a: Vec<f64> = a.iter().map(|v| v * v).collect();
        let sq_b: Vec<f64> = b.iter().map(|v| v * v).collect();
        let mut s_a = Vec::new();
        let mut s_b = Vec::new();
        let mut s_aa = Vec::new();
        let mut s_bb = Vec::new();
        let mut s_ab = Vec::new();
        box_filter(ext, a, self.radius, &mut s_a);
        box_filter(ext, b, self.radius, &mut s_b);
        box_filter(ext, &sq_a, self.radius, &mut s_aa);
        box_filter(ext, &sq_b, self.radius, &mut s_bb);
        box_filter(ext, &prod, self.radius, &mut s_ab);
        // per-center coefficients of the chain rule:
        //   df/da_j = p_c (b_j - mb_c) - q_c (a_j - ma_c)   for j in window c
        let mut p = vec![0.0f64; n];
        let mut p_mb = vec![0.0f64; n];
        let mut q = vec![0.0f64; n];
        let mut q_ma = vec![0.0f64; n];
        for i in 0..n {
            let nw = self.counts[i];
            let ma = s_a[i] / nw;
            let mb = s_b[i] / nw;
            let cov = s_ab[i] / nw - ma * mb;
            let va = (s_aa[i] / nw - ma * ma).max(0.0);
            let vb = (s_bb[i] / nw - mb * mb).max(0.0);
            let vv = va * vb;
            if vv < LNCC_VAR_FLOOR {
                continue;
            }
            let d = vv + LNCC_EPS;
            let pc = 2.0 * cov / (nw * d);
            let qc = 2.0 * cov * cov * vb / (nw * d * d);
            p[i] = pc;
            p_mb[i] = pc * mb;
            q[i] = qc;
            q_ma[i] = qc * ma;
        }
        let mut bp = Vec::new();
        let mut bpmb = Vec::new();
        let mut bq = Vec::new();
        let mut bqma = Vec::new();
        box_filter(ext, &p, self.radius, &mut bp);
        box_filter(ext, &p_mb, self.radius, &mut bpmb);
        box_filter(ext, &q, self.radius, &mut bq);
        box_filter(ext, &q_ma, self.radius, &mut bqma);
        let s = -coef / n as f64;
        for j in 0..n {
            acc[j] += s * (b[j] * bp[j] - bpmb[j] - a[j] * bq[j] + bqma[j]);
        }
    }
}

// ---------------------------------------------------------------------------
// field regularizers
// ---------------------------------------------------------------------------

/// Mean squared forward-difference Jacobian (Frobenius) of a vector field:
/// sum over voxels, axes, and components of squared forward differences,
/// divided by the voxel count.
pub(crate) fn smoothness(ext: [usize; 3], u: &[[f64; 3]]) -> f64 {
    let nx = ext[0];
    let nxy = ext[0] * ext[1];
    let mut acc = 0.0;
    for idx in 0..u.len() {
        let x = idx % nx;
        let y = (idx / nx) % ext[1];
        let z = idx / nxy;
        for (axis, stride) in [(0usize, 1usize), (1, nx), (2, nxy)] {
            let at_end = match axis {
                0 => x + 1 >= ext[0],
                1 => y + 1 >= ext[1],
                _ => z + 1 >= ext[2],
            };
            if at_end {
                continue;
            }
            let nb = &u[idx + stride];
            let me = &u[idx];
            for m in 0..3 {
                let d = nb[m] - me[m];
                acc += d * d;
            }
        }
    }
    acc / u.len() as f64
}

/// d smoothness / d u (scaled by `coef`): the discrete Laplacian form of the
/// quadratic penalty.
pub(crate) fn smoothness_grad(ext: [usize; 3], u: &[[f64; 3]], coef: f64, acc: &mut [[f64; 3]]) {
    let nx = ext[0];
    let nxy = ext[0] * ext[1];
    let s = 2.0 * coef / u.len() as f64;
    for idx in 0..u.len() {
        let x = idx % nx;
        let y = (idx / nx) % ext[1];
        let z = idx / nxy;
        for (axis, stride) in [(0usize, 1usize), (1, nx), (2, nxy)] {
            let at_end = match axis {
                0 => x + 1 >= ext[0],
                1 => y + 1 >= ext[1],
                _ => z + 1 >= ext[2],
            };
            if at_end {
                continue;
            }
            for m in 0..3 {
                let d = u[idx + stride][m] - u[idx][m];
                acc[idx + stride][m] += s * d;
                acc[idx][m] -= s * d;
            }
        }
    }
}

/// Mean squared magnitude of the voxelwise average velocity across subjects.
pub(crate) fn centering(fields: &[&[[f64; 3]]]) -> f64 {
    let n_sub = fields.len() as f64;
    let n_vox = fields[0].len();
    let mut acc = 0.0;
    for i in 0..n_vox {
        let mut mean = [0.0f64; 3];
        for f in fields {
            mean[0] += f[i][0];
            mean[1] += f[i][1];
            mean[2] += f[i][2];
        }
        let m = [mean[0] / n_sub, mean[1] / n_sub, mean[2] / n_sub];
        acc += m[0] * m[0] + m[1] * m[1] + m[2] * m[2];
    }
    acc / n_vox as f64
}

/// Gradient of `centering` w.r.t. one subject's field is
/// `2 mean / (n_vox * n_sub)` at every voxel; this returns the shared mean
/// term so callers can apply it to each subject.
pub(crate) fn centering_mean(fields: &[&[[f64; 3]]]) -> Vec<[f64; 3]> {
    let n_sub = fields.len() as f64;
    let n_vox = fields[0].len();
    let mut mean = vec![[0.0f64; 3]; n_vox];
    for f in fields {
        for i in 0..n_vox {
            mean[i][0] += f[i][0];
            mean[i][1] += f[i][1];
            mean[i][2] += f[i][2];
        }
    }
    for m in mean.iter_mut() {
        m[0] /= n_sub;
        m[1] /= n_sub;
        m[2] /= n_sub;
    }
    mean
}

// ---------------------------------------------------------------------------
// public wrappers on ImageVolume
// ---------------------------------------------------------------------------

fn to_f64(v: &ImageVolume) -> Vec<f64> {
    v.data.iter().map(|&x| x as f64).collect()
}

/// Mean squared voxel difference.
pub fn loss_mse(a: &ImageVolume, b: &ImageVolume) -> Result<f64> {
    a.grid.require_compatible(&b.grid, "loss_mse")?;
    Ok(mse(&to_f64(a), &to_f64(b)))
}

/// 1 - (global Pearson correlation)^2; both images must be non-constant.
pub fn loss_ncc(a: &ImageVolume, b: &ImageVolume) -> Result<f64> {
    a.grid.require_compatible(&b.grid, "loss_ncc")?;
    ncc(&to_f64(a), &to_f64(b))
}

/// Windowed local squared correlation loss.
pub fn loss_lncc(a: &ImageVolume, b: &ImageVolume, window_edge: usize) -> Result<f64> {
    a.grid.require_compatible(&b.grid, "loss_lncc")?;
    if window_edge < 3 || window_edge % 2 == 0 {
        return Err(Error::InvalidConfig(format!(
            "window edge must be odd and >= 3, got {window_edge}"
        )));
    }
    let plan = LnccPlan::new(a.grid.extents, window_edge);
    Ok(plan.loss(a.grid.extents, &to_f64(a), &to_f64(b)))
}

/// Mean squared forward-difference gradient magnitude of a field.
pub fn reg_smoothness(grid_extents: [usize; 3], field: &[[f64; 3]]) -> f64 {
    smoothness(grid_extents, field)
}

/// Mean squared magnitude of the voxelwise average velocity across fields.
pub fn reg_centering(fields: &[crate::field::VelocityField]) -> Result<f64> {
    if fields.is_empty() {
        return Err(Error::CohortTooSmall { need: 1, got: 0 });
    }
    for f in &fields[1..] {
        fields[0]
            .grid
            .require_compatible(&f.grid, "reg_centering")?;
    }
    let views: Vec<&[[f64; 3]]> = fields.iter().map(|f| f.data.as_slice()).collect();
    Ok(centering(&views))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;

    fn img(ext: [usize; 3], f: impl Fn(usize, usize, usize) -> f64) -> ImageVolume {
        let grid = Grid::isotropic(ext, 1.0);
        let mut v = ImageVolume::zeros(grid);
        for idx in 0..v.data.len() {
            let [x, y, z] = v.grid.coords(idx);
            v.data[idx] = f(x, y, z) as f32;
        }
        v
    }

    /// Deterministic pseudo-random stream for test volumes.
    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64)
        }
    }

    #[test]
    fn mse_basics() {
        let a = img([4, 4, 4], |_, _, _| 0.0);
        let b = img([4, 4, 4], |_, _, _| 1.0);
        assert_eq!(loss_mse(&a, &a).unwrap(), 0.0);
        assert_eq!(loss_mse(&a, &b).unwrap(), 1.0);
        // random pair matches a direct summation oracle
        let mut r = lcg(7);
        let x = img([5, 5, 5], |_, _, _| 0.0);
        let mut x = x;
        let mut y = ImageVolume::zeros(x.grid.clone());
        for i in 0..x.data.len() {
            x.data[i] = r() as f32;
            y.data[i] = r() as f32;
        }
        let got = loss_mse(&x, &y).unwrap();
        let mut oracle = 0.0f64;
        for i in 0..x.data.len() {
            oracle += (x.data[i] as f64 - y.data[i] as f64).powi(2);
        }
        oracle /= x.data.len() as f64;
        assert!((got - oracle).abs() <= 1e-10 * oracle.max(1.0));
    }

    #[test]
    fn ncc_basics() {
        let mut r = lcg(11);
        let mut a = ImageVolume::zeros(Grid::isotropic([6, 6, 6], 1.0));
        for v in a.data.iter_mut() {
            *v = r() as f32;
        }
        let neg = ImageVolume {
            grid: a.grid.clone(),
            data: a.data.iter().map(|v| -v).collect(),
        };
        assert!(loss_ncc(&a, &a).unwrap() < 1e-9);
        assert!(loss_ncc(&a, &neg).unwrap() < 1e-9);
        // direct two-pass correlation oracle
        let b = {
            let mut b = ImageVolume::zeros(a.grid.clone());
            for v in b.data.iter_mut() {
                *v = r() as f32;
            }
            b
        };
        let n = a.data.len() as f64;
        let ma = a.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let mb = b.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for i in 0..a.data.len() {
            let da = a.data[i] as f64 - ma;
            let db = b.data[i] as f64 - mb;
            cov += da * db;
            va += da * da;
            vb += db * db;
        }
        let r2 = (cov / (va.sqrt() * vb.sqrt())).powi(2);
        assert!((loss_ncc(&a, &b).unwrap() - (1.0 - r2)).abs() < 1e-9);
        // constant image rejected
        let c = img([6, 6, 6], |_, _, _| 3.0);
        assert!(matches!(loss_ncc(&c, &a), Err(Error::ConstantImage)));
    }

    #[test]
    fn lncc_perfect_and_affine_invariance() {
        // the eps stabilizer makes invariance exact only when the local
        // variance dwarfs eps, hence the wide intensity range here
        let a = img([12, 12, 12], |x, y, z| {
            ((x * 5 + y * 3 + z * 7) % 4) as f64 * 6.0
        });
        let same = loss_lncc(&a, &a, 5).unwrap();
        assert!(same < 1e-3, "self LNCC {same}");
        let b = ImageVolume {
            grid: a.grid.clone(),
            data: a.data.iter().map(|v| 2.0 * v + 5.0).collect(),
        };
        let aff = loss_lncc(&a, &b, 5).unwrap();
        assert!(aff < 1e-3, "affine LNCC {aff}");
        assert!((same - aff).abs() < 1e-6, "delta {}", (same - aff).abs());
    }

    #[test]
    fn lncc_matches_bruteforce_oracle() {
        for (ext, edge) in [([9usize, 8, 7], 5usize), ([12, 12, 12], 9)] {
            lncc_oracle_case(ext, edge);
        }
    }

    fn lncc_oracle_case(ext: [usize; 3], edge: usize) {
        let mut r = lcg(23 + edge as u64);
        let mut a = ImageVolume::zeros(Grid::isotropic(ext, 1.0));
        let mut b = ImageVolume::zeros(a.grid.clone());
        for i in 0..a.data.len() {
            a.data[i] = r() as f32;
            b.data[i] = (0.3 * r() + 0.7 * a.data[i] as f64) as f32;
        }
        let got = loss_lncc(&a, &b, edge).unwrap();
        // sliding-window brute force
        let radius = (edge - 1) / 2;
        let af: Vec<f64> = a.data.iter().map(|&v| v as f64).collect();
        let bf: Vec<f64> = b.data.iter().map(|&v| v as f64).collect();
        let idx = |x: usize, y: usize, z: usize| x + ext[0] * (y + ext[1] * z);
        let mut acc = 0.0;
        let mut centers = 0usize;
        for cz in 0..ext[2] {
            for cy in 0..ext[1] {
                for cx in 0..ext[0] {
                    let mut sa = 0.0;
                    let mut sb = 0.0;
                    let mut saa = 0.0;
                    let mut sbb = 0.0;
                    let mut sab = 0.0;
                    let mut nw = 0.0;
                    for z in cz.saturating_sub(radius)..=(cz + radius).min(ext[2] - 1) {
                        for y in cy.saturating_sub(radius)..=(cy + radius).min(ext[1] - 1) {
                            for x in cx.saturating_sub(radius)..=(cx + radius).min(ext[0] - 1) {
                                let va = af[idx(x, y, z)];
                                let vb = bf[idx(x, y, z)];
                                sa += va;
                                sb += vb;
                                saa += va * va;
                                sbb += vb * vb;
                                sab += va * vb;
                                nw += 1.0;
                            }
                        }
                    }
                    let ma = sa / nw;
                    let mb = sb / nw;
                    let cov = sab / nw - ma * mb;
                    let va = (saa / nw - ma * ma).max(0.0);
                    let vb = (sbb / nw - mb * mb).max(0.0);
                    let vv = va * vb;
                    if vv >= LNCC_VAR_FLOOR {
                        acc += cov * cov / (vv + LNCC_EPS);
                    }
                    centers += 1;
                }
            }
        }
        let oracle = 1.0 - acc / centers as f64;
        assert!(
            (got - oracle).abs() < 1e-6,
            "lncc {got} vs oracle {oracle}"
        );
    }

    #[test]
    fn smoothness_basics() {
        let ext = [10, 10, 10];
        let zero = vec![[0.0f64; 3]; 1000];
        assert_eq!(smoothness(ext, &zero), 0.0);
        let constant = vec![[3.0, -1.0, 0.5]; 1000];
        assert_eq!(smoothness(ext, &constant), 0.0);
        // linear ramp u_x = c*x: finite-grid oracle c^2 * (n-1)/n
        let c = 0.7;
        let mut ramp = vec![[0.0f64; 3]; 1000];
        for (i, r) in ramp.iter_mut().enumerate() {
            r[0] = c * (i % 10) as f64;
        }
        let got = smoothness(ext, &ramp);
        let oracle = c * c * 9.0 / 10.0;
        assert!((got - oracle).abs() < 1e-12, "{got} vs {oracle}");
    }

    #[test]
    fn smoothness_grad_matches_fd() {
        let ext = [5, 4, 3];
        let n = 60;
        let mut r = lcg(37);
        let u: Vec<[f64; 3]> = (0..n).map(|_| [r(), r(), r()]).collect();
        let mut grad = vec![[0.0f64; 3]; n];
        smoothness_grad(ext, &u, 1.0, &mut grad);
        let h = 1e-6;
        for probe in [0usize, 7, 23, 42, 59] {
            for d in 0..3 {
                let mut up = u.clone();
                let mut dn = u.clone();
                up[probe][d] += h;
                dn[probe][d] -= h;
                let fd = (smoothness(ext, &up) - smoothness(ext, &dn)) / (2.0 * h);
                assert!(
                    (fd - grad[probe][d]).abs() < 1e-8,
                    "probe {probe} comp {d}: fd {fd} vs {}",
                    grad[probe][d]
                );
            }
        }
    }

    #[test]
    fn centering_basics() {
        let n = 27;
        let mut r = lcg(41);
        let a: Vec<[f64; 3]> = (0..n).map(|_| [r(), r(), r()]).collect();
        let neg: Vec<[f64; 3]> = a.iter().map(|v| [-v[0], -v[1], -v[2]]).collect();
        assert!(centering(&[&a, &neg]) < 1e-30);
        // single field: mean squared magnitude
        let single = centering(&[&a]);
        let oracle: f64 = a
            .iter()
            .map(|v| v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
            .sum::<f64>()
            / n as f64;
        assert!((single - oracle).abs() < 1e-12);
        // random cohort matches mean-then-norm oracle
        let b: Vec<[f64; 3]> = (0..n).map(|_| [r(), r(), r()]).collect();
        let c: Vec<[f64; 3]> = (0..n).map(|_| [r(), r(), r()]).collect();
        let got = centering(&[&a, &b, &c]);
        let mut oracle = 0.0;
        for i in 0..n {
            let mut m = [0.0f64; 3];
            for f in [&a, &b, &c] {
                for d in 0..3 {
                    m[d] += f[i][d] / 3.0;
                }
            }
            oracle += m[0] * m[0] + m[1] * m[1] + m[2] * m[2];
        }
        oracle /= n as f64;
        assert!((got - oracle).abs() <= 1e-10 * oracle.max(1.0));
    }

    #[test]
    fn box_filter_matches_naive() {
        let ext = [6, 5, 4];
        let mut r = lcg(53);
        let data: Vec<f64> = (0..120).map(|_| r()).collect();
        let mut fast = Vec::new();
        box_filter(ext, &data, 2, &mut fast);
        let idx = |x: usize, y: usize, z: usize| x + ext[0] * (y + ext[1] * z);
        for cz in 0..ext[2] {
            for cy in 0..ext[1] {
                for cx in 0..ext[0] {
                    let mut s = 0.0;
                    for z in cz.saturating_sub(2)..=(cz + 2).min(ext[2] - 1) {
                        for y in cy.saturating_sub(2)..=(cy + 2).min(ext[1] - 1) {
                            for x in cx.saturating_sub(2)..=(cx + 2).min(ext[0] - 1) {
                                s += data[idx(x, y, z)];
                            }
                        }
                    }
                    assert!((fast[idx(cx, cy, cz)] - s).abs() < 1e-9);
                }
            }
        }
    }
}
