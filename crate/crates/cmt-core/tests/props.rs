//! Property tests for the volume/field/metric invariants.

use proptest::prelude::*;

use cmt_core::field::{exponentiate, jacobian_determinant, warp_image, warp_mask, VelocityField};
use cmt_core::grid::Grid;
use cmt_core::mesh::{dsc, hd95};
use cmt_core::volume::{ImageVolume, LabelMap, LabelSchema};

fn small_image(ext: usize) -> impl Strategy<Value = ImageVolume> {
    proptest::collection::vec(0.0f32..1.0, ext * ext * ext).prop_map(move |data| ImageVolume {
        grid: Grid::isotropic([ext; 3], 1.0),
        data,
    })
}

fn small_labels(ext: usize) -> impl Strategy<Value = LabelMap> {
    let schema = LabelSchema::default();
    proptest::collection::vec(0u8..3, ext * ext * ext).prop_map(move |raw| LabelMap {
        grid: Grid::isotropic([ext; 3], 1.0),
        data: raw
            .iter()
            .map(|&v| match v {
                1 => schema.femoral_cartilage,
                2 => schema.tibial_cartilage,
                _ => 0,
            })
            .collect(),
        schema,
    })
}

fn smooth_velocity(ext: usize, amplitude: f64) -> impl Strategy<Value = VelocityField> {
    (0u64..1 << 32).prop_map(move |seed| {
        let grid = Grid::isotropic([ext; 3], 1.0);
        let mut v = VelocityField::zeros(grid, 6);
        let s = std::f64::consts::PI / (ext - 1) as f64;
        let p1 = (seed % 101) as f64 * 0.0613;
        let p2 = (seed % 53) as f64 * 0.117;
        for idx in 0..v.data.len() {
            let [x, y, z] = v.grid.coords(idx);
            let (x, y, z) = (x as f64, y as f64, z as f64);
            let bump = (x * s).sin() * (y * s).sin() * (z * s).sin();
            v.data[idx] = [
                amplitude * bump * (0.3 * y + p1).sin(),
                amplitude * bump * (0.25 * z + p2).cos(),
                -amplitude * bump * (0.28 * x + p1 + p2).sin(),
            ];
        }
        v
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Intensity normalization lands in [0,1] and hits both endpoints.
    #[test]
    fn normalize_range(img in small_image(6)) {
        prop_assume!(img.min_max().0 < img.min_max().1);
        let out = img.normalize_intensity(0.5, 99.5).unwrap();
        let (lo, hi) = out.min_max();
        prop_assert!(lo == 0.0 && hi == 1.0);
        prop_assert!(out.data.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    /// Masking support is exactly the selected-label support.
    #[test]
    fn mask_support(img in small_image(6), lab in small_labels(6)) {
        let masked = img.mask_image(&lab, &["FC"]).unwrap();
        let fc = lab.schema.femoral_cartilage;
        for i in 0..masked.data.len() {
            if lab.data[i] != fc {
                prop_assert!(masked.data[i] == 0.0);
            } else {
                prop_assert!(masked.data[i] == img.data[i]);
            }
        }
    }

    /// Mirroring twice is the identity on voxel data.
    #[test]
    fn flip_involution(img in small_image(6)) {
        let twice = img.flip_lr().unwrap().flip_lr().unwrap();
        prop_assert_eq!(twice.data, img.data);
    }

    /// Warps neither create labels nor exceed the input intensity envelope.
    #[test]
    fn warp_closure(img in small_image(8), lab in small_labels(8), v in smooth_velocity(8, 1.2)) {
        let (fwd, _) = exponentiate(&v).unwrap();
        let warped = warp_image(&img, &fwd).unwrap();
        let (lo, hi) = img.min_max();
        for &val in &warped.data {
            prop_assert!(val >= lo.min(0.0) - 1e-6 && val <= hi.max(0.0) + 1e-6);
        }
        let warped_lab = warp_mask(&lab, &fwd).unwrap();
        let allowed = lab.present_values();
        for &l in &warped_lab.data {
            prop_assert!(l == 0 || allowed.contains(&l));
        }
    }

    /// Exponentials of smooth fields are diffeomorphic in the interior.
    #[test]
    fn exp_positive_jacobian(v in smooth_velocity(10, 2.0)) {
        let (fwd, _) = exponentiate(&v).unwrap();
        let jac = jacobian_determinant(&fwd);
        let ext = jac.grid.extents;
        let mut neg = 0usize;
        let mut total = 0usize;
        for idx in 0..jac.data.len() {
            let [x, y, z] = jac.grid.coords(idx);
            if x < 2 || y < 2 || z < 2 || x >= ext[0]-2 || y >= ext[1]-2 || z >= ext[2]-2 {
                continue;
            }
            total += 1;
            if jac.data[idx] <= 0.0 {
                neg += 1;
            }
        }
        prop_assert!((neg as f64) <= 0.001 * total as f64, "{neg}/{total} non-positive");
    }

    /// DSC is symmetric; HD95 is symmetric and zero on itself.
    #[test]
    fn metric_symmetry(a in small_labels(5), b in small_labels(5)) {
        let fc = a.schema.femoral_cartilage;
        let d1 = dsc(&a, fc, &b, fc).unwrap();
        let d2 = dsc(&b, fc, &a, fc).unwrap();
        prop_assert_eq!(d1, d2);
        if a.count_label(fc) > 0 {
            prop_assert_eq!(dsc(&a, fc, &a, fc).unwrap(), 1.0);
            prop_assert_eq!(hd95(&a, fc, &a, fc).unwrap(), 0.0);
        }
        if a.count_label(fc) > 0 && b.count_label(fc) > 0 {
            let h1 = hd95(&a, fc, &b, fc).unwrap();
            let h2 = hd95(&b, fc, &a, fc).unwrap();
            prop_assert_eq!(h1, h2);
        }
    }

    /// Label resampling never invents label values.
    #[test]
    fn resample_label_closure(lab in small_labels(6)) {
        let fine = lab.resample([0.6, 0.8, 0.5]).unwrap();
        let allowed = lab.present_values();
        for &l in &fine.data {
            prop_assert!(l == 0 || allowed.contains(&l));
        }
    }
}
