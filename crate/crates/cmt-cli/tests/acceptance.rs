//! Acceptance gate: every pipeline-level contract is exercised here at its
//! stated tolerance, one pass/fail line per criterion. Run with
//! `cargo test -p cmt-cli --test acceptance -- --nocapture`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use cmt_core::field::{
    composition_residual, exponentiate, warp_image, warp_mask, DeformationField, VelocityField,
};
use cmt_core::grid::Grid;
use cmt_core::mesh::{
    boundary_points, dsc, hd95, marching_cubes, relative_area_difference, surface_area,
};
use cmt_core::morph::{
    estimate_fcl, parcellate_tc, pose_normalize, quantify_region, regional_report,
    standardize_laterality, Region, RegionMetrics, Side,
};
use cmt_core::nifti;
use cmt_core::reg::{
    build_template_mask, grad_total_loss, learn_template, register_to_template, total_loss,
    RegistrationConfig, SimilarityKind, Stage, SubjectEntry, TemplateModel,
};
use cmt_core::synth::{cohort_shifts, knee_phantom, shell_phantom, PhantomSpec};
use cmt_core::volume::{ImageVolume, LabelMap, LabelSchema};

// ---------------------------------------------------------------------------
// harness
// ---------------------------------------------------------------------------

struct Outcome {
    detail: String,
    /// Some criteria are informational: report, never fail.
    warned: bool,
}

fn ok(detail: impl Into<String>) -> Result<Outcome, String> {
    Ok(Outcome {
        detail: detail.into(),
        warned: false,
    })
}

fn check(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

#[test]
fn acceptance_criteria() {
    let criteria: Vec<(usize, &str, Option<Duration>, fn() -> Result<Outcome, String>)> = vec![
        (1, "gradient correctness vs finite differences", Some(Duration::from_secs(120)), criterion_1),
        (2, "self-registration", Some(Duration::from_secs(60)), criterion_2),
        (3, "known-deformation recovery", Some(Duration::from_secs(300)), criterion_3),
        (4, "template learning with frozen stage two", Some(Duration::from_secs(900)), criterion_4),
        (5, "template mask equals mean warped indicators", None, criterion_5),
        (6, "inverse consistency of the exponential", None, criterion_6),
        (7, "DSC/HD95/area-difference oracles", None, criterion_7),
        (8, "marching-cubes sphere area convergence", None, criterion_8),
        (9, "FCL estimation on calibrated defects", None, criterion_9),
        (10, "thickness of a 2 mm shell", None, criterion_10),
        (11, "laterality and pose invariance", None, criterion_11),
        (12, "MSE-learned template sharpness (informational)", None, criterion_12),
        (13, "bitwise reproducibility across reruns and thread counts", None, criterion_13),
        (14, "NIfTI write/read round-trip", None, criterion_14),
    ];
    let mut failures = Vec::new();
    for (id, name, budget, run) in criteria {
        let t0 = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run));
        let elapsed = t0.elapsed();
        let line = |status: &str, extra: &str| {
            eprintln!(
                "criterion {id:2} [{status}] {name} ({elapsed:.1?}){}{}",
                if extra.is_empty() { "" } else { " — " },
                extra
            );
        };
        match result {
            Ok(Ok(outcome)) => {
                let mut status = if outcome.warned { "WARN" } else { "PASS" };
                if let Some(b) = budget {
                    if elapsed > b {
                        status = "FAIL";
                        failures.push(format!(
                            "criterion {id}: over runtime budget ({elapsed:.1?} > {b:?})"
                        ));
                    }
                }
                line(status, &outcome.detail);
            }
            Ok(Err(msg)) => {
                line("FAIL", &msg);
                failures.push(format!("criterion {id}: {msg}"));
            }
            Err(panic) => {
                let msg = panic
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_else(|| "panicked".into());
                line("FAIL", &msg);
                failures.push(format!("criterion {id}: {msg}"));
            }
        }
    }
    assert!(
        failures.is_empty(),
        "acceptance failures:\n{}",
        failures.join("\n")
    );
}

// ---------------------------------------------------------------------------
// shared fixtures
// ---------------------------------------------------------------------------

fn lcg(seed: u64) -> impl FnMut() -> f64 {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
    move || {
        state = state
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((state >> 11) as f64) / ((1u64 << 53) as f64)
    }
}

/// 12^3 textured-blob cohort with smooth velocities whose components stay
/// away from zero (finite differences across a trilinear cell face would
/// not measure a one-sided derivative).
fn gradient_cohort(n_subjects: usize, factor: f64) -> (ImageVolume, Vec<SubjectEntry>) {
    let n = 12usize;
    let grid = Grid::isotropic([n, n, n], 1.0);
    let schema = LabelSchema::default();
    let cfg = RegistrationConfig {
        field_resolution_factor: factor,
        ..RegistrationConfig::desk_scale()
    };
    let mut template = ImageVolume::zeros(grid.clone());
    for idx in 0..template.data.len() {
        let [x, y, z] = template.grid.coords(idx);
        let (x, y, z) = (x as f64, y as f64, z as f64);
        let r2 = (x - 5.5).powi(2) + (y - 5.5).powi(2) + (z - 5.5).powi(2);
        if r2 < 16.0 {
            template.data[idx] =
                (0.5 + 0.3 * (0.9 * x).sin() + 0.2 * (0.8 * y + 0.5 * z).cos()) as f32;
        }
    }
    let mut subjects = Vec::new();
    for s in 0..n_subjects {
        let mut rng = lcg(1000 + s as u64);
        let mut img = ImageVolume::zeros(grid.clone());
        let mut lab = LabelMap::zeros(grid.clone(), schema);
        for idx in 0..img.data.len() {
            let [x, y, z] = img.grid.coords(idx);
            let (x, y, z) = (x as f64, y as f64, z as f64);
            let r2 = (x - 5.5).powi(2) + (y - 5.5).powi(2) + (z - 5.5).powi(2);
            if r2 < 18.0 {
                img.data[idx] = (0.5
                    + 0.3 * (0.85 * x + 0.1 * s as f64).sin()
                    + 0.2 * (0.75 * y + 0.6 * z).cos()) as f32;
                lab.data[idx] = if x < 5.5 {
                    schema.femoral_cartilage
                } else {
                    schema.tibial_cartilage
                };
            }
        }
        let mut entry = SubjectEntry::from_parts(format!("s{s}"), img, lab, &cfg).unwrap();
        let vext = entry.velocity.grid.extents;
        let span = std::f64::consts::PI / (vext[0] - 1) as f64;
        for idx in 0..entry.velocity.data.len() {
            let [x, y, z] = entry.velocity.grid.coords(idx);
            let (x, y, z) = (x as f64, y as f64, z as f64);
            let bump = (x * span).sin() * (y * span).sin() * (z * span).sin();
            entry.velocity.data[idx] = [
                0.08 + 0.6 * bump * (0.5 + 0.4 * rng()),
                -0.06 - 0.5 * bump * (0.5 + 0.4 * rng()),
                0.07 + 0.4 * bump * (0.5 + 0.4 * rng()),
            ];
        }
        subjects.push(entry);
    }
    (template, subjects)
}

/// TemplateModel wrapper around a phantom (dense image + its labels).
fn phantom_model(cfg: &RegistrationConfig) -> (TemplateModel, LabelMap) {
    let (img, lab) = knee_phantom(&PhantomSpec::default());
    (
        TemplateModel {
            image: img,
            probabilities: vec![],
            mask: lab.clone(),
            tau: 0.5,
            n_train: 1,
            config: cfg.clone(),
        },
        lab,
    )
}

/// Smooth synthetic field, max `max_disp` voxels, localized around the
/// anatomy so it decays toward the volume borders.
fn smooth_truth_field(grid: &Grid, max_disp: f64) -> DeformationField {
    let ext = grid.extents;
    let mut f = DeformationField::identity(grid.clone());
    let scale = ext[0] as f64 / 64.0;
    let c = [
        (ext[0] as f64 - 1.0) / 2.0,
        (ext[1] as f64 - 1.0) / 2.0,
        (ext[2] as f64 - 1.0) / 2.0 + 12.0 * scale,
    ];
    let sigma = 13.0 * scale;
    for idx in 0..f.data.len() {
        let [x, y, z] = f.grid.coords(idx);
        let (x, y, z) = (x as f64, y as f64, z as f64);
        let r2 = (x - c[0]).powi(2) + (y - c[1]).powi(2) + (z - c[2]).powi(2);
        let env = (-r2 / (2.0 * sigma * sigma)).exp();
        f.data[idx] = [
            max_disp * env * (0.11 * y).sin(),
            max_disp * env * (0.09 * z).cos(),
            -max_disp * env * (0.10 * x).sin(),
        ];
    }
    f
}

fn interior_mean_epe(a: &DeformationField, b: &DeformationField, margin: usize) -> f64 {
    let ext = a.grid.extents;
    let mut sum = 0.0;
    let mut count = 0usize;
    for idx in 0..a.data.len() {
        let [x, y, z] = a.grid.coords(idx);
        if x < margin
            || y < margin
            || z < margin
            || x >= ext[0] - margin
            || y >= ext[1] - margin
            || z >= ext[2] - margin
        {
            continue;
        }
        let d = [
            a.data[idx][0] - b.data[idx][0],
            a.data[idx][1] - b.data[idx][1],
            a.data[idx][2] - b.data[idx][2],
        ];
        sum += (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        count += 1;
    }
    sum / count as f64
}

// ---------------------------------------------------------------------------
// criteria
// ---------------------------------------------------------------------------

/// Analytic gradients match central finite differences (h = 1e-3) at >= 20
/// signal-bearing random coordinates per parameter block, relative error
/// < 1e-4, for every single-lambda objective and the full one, both stages.
fn criterion_1() -> Result<Outcome, String> {
    let h = 1e-3;
    let probes = 20usize;
    let mut worst = 0.0f64;
    for factor in [1.0] {
        let (template, subjects) = gradient_cohort(2, factor);
        let base = RegistrationConfig {
            lncc_window_edge: 5,
            field_resolution_factor: factor,
            ..RegistrationConfig::desk_scale()
        };
        for stage in [Stage::One, Stage::Two] {
            for lambdas in [
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 1.0, 0.0, 0.0],
                [1.0, 0.0, 1.0, 0.0],
                [1.0, 0.0, 0.0, 1.0],
                [1.0, 1.0, 1.0, 1.0],
            ] {
                let cfg = RegistrationConfig {
                    lambda1: lambdas[0],
                    lambda2: lambdas[1],
                    lambda3: lambdas[2],
                    lambda4: lambdas[3],
                    ..base.clone()
                };
                let grads = grad_total_loss(&template, &subjects, &cfg, stage)
                    .map_err(|e| format!("grad: {e}"))?;
                let mut rng = lcg(42);
                for (si, g) in grads.velocities.iter().enumerate() {
                    let gmax = g
                        .iter()
                        .flat_map(|v| v.iter())
                        .fold(0.0f64, |m, c| m.max(c.abs()));
                    if gmax < 1e-12 {
                        // degenerate block (lambda4-only at stage two)
                        let mut plus = subjects.clone();
                        plus[si].velocity.data[g.len() / 2][0] += h;
                        let lp = total_loss(&template, &plus, &cfg, stage).unwrap();
                        let l0 = total_loss(&template, &subjects, &cfg, stage).unwrap();
                        check((lp - l0).abs() < 1e-9, "zero block moved")?;
                        continue;
                    }
                    let floor = 0.05 * gmax;
                    let mut found = 0usize;
                    let mut guard = 0usize;
                    while found < probes && guard < 4000 {
                        guard += 1;
                        let idx = (rng() * g.len() as f64) as usize % g.len();
                        let d = (rng() * 3.0) as usize % 3;
                        if g[idx][d].abs() <= floor {
                            continue;
                        }
                        found += 1;
                        let mut plus = subjects.clone();
                        plus[si].velocity.data[idx][d] += h;
                        let mut minus = subjects.clone();
                        minus[si].velocity.data[idx][d] -= h;
                        let lp = total_loss(&template, &plus, &cfg, stage).unwrap();
                        let lm = total_loss(&template, &minus, &cfg, stage).unwrap();
                        let fd = (lp - lm) / (2.0 * h);
                        let rel = (g[idx][d] - fd).abs() / (fd.abs() + 1e-8);
                        worst = worst.max(rel);
                        check(
                            rel < 1e-4,
                            format!(
                                "stage {stage:?} lambdas {lambdas:?} v[{si}][{idx}][{d}]: rel {rel:.2e}"
                            ),
                        )?;
                    }
                    check(found >= probes, format!("only {found} probe coords"))?;
                }
                if let Some(gt) = grads.template.as_ref() {
                    let gmax = gt.iter().fold(0.0f64, |m, c| m.max(c.abs()));
                    if gmax < 1e-12 {
                        continue;
                    }
                    let floor = 0.05 * gmax;
                    let mut found = 0usize;
                    let mut guard = 0usize;
                    while found < probes && guard < 4000 {
                        guard += 1;
                        let idx = (rng() * gt.len() as f64) as usize % gt.len();
                        if gt[idx].abs() <= floor {
                            continue;
                        }
                        found += 1;
                        let mut plus = template.clone();
                        plus.data[idx] = (plus.data[idx] as f64 + h) as f32;
                        let mut minus = template.clone();
                        minus.data[idx] = (minus.data[idx] as f64 - h) as f32;
                        let actual_h = plus.data[idx] as f64 - minus.data[idx] as f64;
                        let lp = total_loss(&plus, &subjects, &cfg, stage).unwrap();
                        let lm = total_loss(&minus, &subjects, &cfg, stage).unwrap();
                        let fd = (lp - lm) / actual_h;
                        let rel = (gt[idx] - fd).abs() / (fd.abs() + 1e-8);
                        worst = worst.max(rel);
                        check(
                            rel < 1e-4,
                            format!("stage {stage:?} template[{idx}]: rel {rel:.2e}"),
                        )?;
                    }
                    check(found >= probes, "too few template probes")?;
                }
            }
        }
    }
    ok(format!("worst relative error {worst:.2e}"))
}

/// Registering the template to itself moves (almost) nothing.
fn criterion_2() -> Result<Outcome, String> {
    let cfg = RegistrationConfig {
        iters_per_level: 60,
        ..RegistrationConfig::desk_scale()
    };
    let (model, _) = phantom_model(&cfg);
    let target = model.image.clone();
    let (fwd, _) = register_to_template(&model, &target, &cfg).map_err(|e| format!("{e}"))?;
    let mean_u = fwd.mean_abs();
    check(mean_u < 0.1, format!("mean |u| = {mean_u:.4} voxels"))?;
    let warped = warp_mask(&model.mask, &fwd).map_err(|e| format!("{e}"))?;
    let schema = model.mask.schema;
    let mut min_dsc = 1.0f64;
    for value in [schema.femoral_cartilage, schema.tibial_cartilage] {
        min_dsc = min_dsc.min(dsc(&warped, value, &model.mask, value).unwrap());
    }
    check(min_dsc >= 0.99, format!("warped-mask DSC {min_dsc:.4}"))?;
    ok(format!("mean |u| {mean_u:.4} voxels, DSC {min_dsc:.4}"))
}

/// A known smooth deformation (max 3 voxels) of the template is recovered.
fn criterion_3() -> Result<Outcome, String> {
    let cfg = RegistrationConfig {
        iters_per_level: 120,
        step_size: 0.1,
        lncc_window_edge: 9,
        ..RegistrationConfig::desk_scale()
    };
    let (model, lab) = phantom_model(&cfg);
    let truth = smooth_truth_field(&model.image.grid, 3.0);
    let target = warp_image(&model.image, &truth).unwrap();
    let (fwd, _) = register_to_template(&model, &target, &cfg).map_err(|e| format!("{e}"))?;
    let epe = interior_mean_epe(&fwd, &truth, 4);
    check(epe < 0.5, format!("mean interior EPE {epe:.3} voxels"))?;
    let warped = warp_mask(&model.mask, &fwd).unwrap();
    let reference = warp_mask(&model.mask, &truth).unwrap();
    let schema = lab.schema;
    let mut min_dsc = 1.0f64;
    for value in [schema.femoral_cartilage, schema.tibial_cartilage] {
        min_dsc = min_dsc.min(dsc(&warped, value, &reference, value).unwrap());
    }
    check(min_dsc >= 0.95, format!("warped-mask DSC {min_dsc:.4}"))?;
    ok(format!("mean EPE {epe:.3} voxels, DSC {min_dsc:.4}"))
}

fn learning_cohort(cfg: &RegistrationConfig) -> Vec<SubjectEntry> {
    cohort_shifts()
        .iter()
        .enumerate()
        .map(|(i, &shift)| {
            let (img, lab) = knee_phantom(&PhantomSpec {
                shift,
                ..PhantomSpec::default()
            });
            SubjectEntry::from_parts(format!("p{i}"), img, lab, cfg).unwrap()
        })
        .collect()
}

/// Template learned from 8 translated phantom copies matches the centered
/// shape, and stage two leaves the template bit-unchanged.
fn criterion_4() -> Result<Outcome, String> {
    let cfg = RegistrationConfig {
        iters_per_level: 60,
        field_resolution_factor: 0.5,
        ..RegistrationConfig::desk_scale()
    };
    let subjects = learning_cohort(&cfg);
    let outcome = learn_template(&subjects, &cfg, 0.5).map_err(|e| format!("{e}"))?;
    // frozen stage two: published image bit-equals the stage-one snapshot
    check(
        outcome.model.image.data == outcome.stage1_image.data,
        "stage two modified template voxels",
    )?;
    // kernels logged per stage
    let s1 = outcome.log.iter().find(|r| r.stage == 1).unwrap().kernel;
    let s2 = outcome.log.iter().find(|r| r.stage == 2).unwrap().kernel;
    check(s1 == "mse" && s2 == "lncc", format!("kernels {s1}/{s2}"))?;
    let (_, centered) = knee_phantom(&PhantomSpec::default());
    let schema = centered.schema;
    let mut min_dsc = 1.0f64;
    for value in [schema.femoral_cartilage, schema.tibial_cartilage] {
        min_dsc = min_dsc.min(dsc(&outcome.model.mask, value, &centered, value).unwrap());
    }
    check(min_dsc >= 0.9, format!("template mask DSC {min_dsc:.4}"))?;
    ok(format!("template mask DSC {min_dsc:.4}, kernels {s1}->{s2}"))
}

/// With identity fields the probability maps are exact indicator means and
/// tau = 0.5 reproduces the per-voxel majority vote on odd cohorts.
fn criterion_5() -> Result<Outcome, String> {
    let grid = Grid::isotropic([4, 4, 4], 1.0);
    let schema = LabelSchema::default();
    let cfg = RegistrationConfig::desk_scale();
    let mut rng = lcg(99);
    for cohort_size in [3usize, 5, 7] {
        let mut subjects = Vec::new();
        for s in 0..cohort_size {
            let mut lab = LabelMap::zeros(grid.clone(), schema);
            for v in lab.data.iter_mut() {
                let r = rng();
                *v = if r < 0.35 {
                    schema.femoral_cartilage
                } else if r < 0.6 {
                    schema.tibial_cartilage
                } else {
                    0
                };
            }
            let img = ImageVolume {
                grid: grid.clone(),
                data: lab.data.iter().map(|&v| v as f32).collect(),
            };
            subjects.push(SubjectEntry::from_parts(format!("m{s}"), img, lab, &cfg).unwrap());
        }
        let fields: Vec<DeformationField> = (0..cohort_size)
            .map(|_| DeformationField::identity(grid.clone()))
            .collect();
        let (probs, mask) =
            build_template_mask(&subjects, &fields, 0.5).map_err(|e| format!("{e}"))?;
        // probability maps equal voxelwise means of the indicators
        for lp in &probs {
            for idx in 0..lp.data.len() {
                let mean = subjects
                    .iter()
                    .filter(|s| s.labels.data[idx] == lp.value)
                    .count() as f64
                    / cohort_size as f64;
                check(
                    (lp.data[idx] - mean).abs() < 1e-9,
                    format!("P mismatch at {idx}: {} vs {mean}", lp.data[idx]),
                )?;
            }
        }
        // exhaustive majority-vote check over every voxel
        for idx in 0..mask.data.len() {
            let mut counts = [0usize; 256];
            for s in &subjects {
                counts[s.labels.data[idx] as usize] += 1;
            }
            let majority = (0u8..=255)
                .find(|&v| counts[v as usize] * 2 > cohort_size)
                .unwrap_or(0);
            check(
                mask.data[idx] == majority,
                format!(
                    "majority mismatch at {idx}: {} vs {majority}",
                    mask.data[idx]
                ),
            )?;
        }
    }
    ok("means exact to 1e-9; majority vote reproduced on 3/5/7 cohorts")
}

/// exp(v) o exp(-v) stays within 0.1 voxel of identity for smooth fields.
fn criterion_6() -> Result<Outcome, String> {
    let n = 48usize;
    let grid = Grid::isotropic([n, n, n], 1.0);
    let mut v = VelocityField::zeros(grid, 7);
    let s = std::f64::consts::PI / (n - 1) as f64;
    for idx in 0..v.data.len() {
        let [x, y, z] = v.grid.coords(idx);
        let (x, y, z) = (x as f64, y as f64, z as f64);
        let bump = (x * s).sin() * (y * s).sin() * (z * s).sin();
        v.data[idx] = [
            4.8 * bump * (0.13 * y).sin(),
            4.5 * bump * (0.11 * z).cos(),
            -4.2 * bump * (0.12 * x).sin(),
        ];
    }
    check(v.max_abs() <= 5.0, "field exceeds 5 voxels")?;
    let (fwd, inv) = exponentiate(&v).map_err(|e| format!("{e}"))?;
    let res_fi = composition_residual(&fwd, &inv, 2);
    let res_if = composition_residual(&inv, &fwd, 2);
    check(
        res_fi < 0.1 && res_if < 0.1,
        format!("residuals {res_fi:.4} / {res_if:.4}"),
    )?;
    ok(format!(
        "max |v| {:.2}, residuals {res_fi:.4} / {res_if:.4} voxels",
        v.max_abs()
    ))
}

/// DSC and HD95 match exhaustive brute force on 100 random mask pairs;
/// the area difference matches the closed formula with Table-style signs.
fn criterion_7() -> Result<Outcome, String> {
    let schema = LabelSchema::default();
    let value = schema.femoral_cartilage;
    let mut rng = lcg(2718);
    let mut tested = 0usize;
    while tested < 100 {
        let ext = [
            2 + (rng() * 7.0) as usize,
            2 + (rng() * 7.0) as usize,
            2 + (rng() * 7.0) as usize,
        ];
        let grid = Grid::isotropic(ext, 1.0);
        let mut a = LabelMap::zeros(grid.clone(), schema);
        let mut b = LabelMap::zeros(grid, schema);
        let density = 0.1 + 0.4 * rng();
        let mut any_a = false;
        let mut any_b = false;
        for i in 0..a.data.len() {
            if rng() < density {
                a.data[i] = value;
                any_a = true;
            }
            if rng() < density {
                b.data[i] = value;
                any_b = true;
            }
        }
        if !any_a || !any_b {
            continue;
        }
        tested += 1;
        // DSC against voxel-count oracle (exact)
        let got = dsc(&a, value, &b, value).unwrap();
        let na = a.data.iter().filter(|&&v| v == value).count();
        let nb = b.data.iter().filter(|&&v| v == value).count();
        let inter = a
            .data
            .iter()
            .zip(&b.data)
            .filter(|(&x, &y)| x == value && y == value)
            .count();
        let oracle = 2.0 * inter as f64 / (na + nb) as f64;
        check(got == oracle, format!("DSC {got} vs {oracle}"))?;
        // HD95 against exhaustive pairwise oracle
        let got = hd95(&a, value, &b, value).unwrap();
        let pa = boundary_points(&a, value);
        let pb = boundary_points(&b, value);
        let nearest = |p: &[f64; 3], set: &[[f64; 3]]| -> f64 {
            set.iter()
                .map(|q| {
                    ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2)).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        };
        let mut pooled: Vec<f64> = pa.iter().map(|p| nearest(p, &pb)).collect();
        pooled.extend(pb.iter().map(|p| nearest(p, &pa)));
        pooled.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let pos = 0.95 * (pooled.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        let oracle = pooled[lo] * (1.0 - (pos - lo as f64)) + pooled[hi] * (pos - lo as f64);
        check(
            (got - oracle).abs() < 1e-9,
            format!("HD95 {got} vs {oracle}"),
        )?;
    }
    // signed relative area difference, Table-3 sign convention:
    // negative when the measured interface is smaller than pseudo-healthy
    let d = relative_area_difference(108.0, 120.0).unwrap();
    check(d == -0.1, format!("area diff {d}"))?;
    check(
        relative_area_difference(124.2, 120.0).unwrap() > 0.0,
        "positive sign",
    )?;
    ok("100 random pairs: DSC exact, HD95 within 1e-9; sign convention held")
}

/// Digital sphere area converges toward the analytic value.
fn criterion_8() -> Result<Outcome, String> {
    let schema = LabelSchema::default();
    let sphere = |n: usize, r: f64| -> LabelMap {
        let grid = Grid::isotropic([n, n, n], 1.0);
        let mut lab = LabelMap::zeros(grid, schema);
        let c = (n as f64 - 1.0) / 2.0;
        for idx in 0..lab.data.len() {
            let [x, y, z] = lab.grid.coords(idx);
            let d2 =
                (x as f64 - c).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c).powi(2);
            if d2 <= r * r {
                lab.data[idx] = schema.femoral_cartilage;
            }
        }
        lab
    };
    let analytic = |r: f64| 4.0 * std::f64::consts::PI * r * r;
    let area10 = surface_area(
        &marching_cubes(&sphere(32, 10.0), "FC", 0.5, cmt_core::mesh::DEFAULT_MESH_SIGMA)
            .map_err(|e| format!("{e}"))?,
    );
    let rel10 = (area10 - analytic(10.0)).abs() / analytic(10.0);
    check(rel10 < 0.05, format!("r=10 error {rel10:.4}"))?;
    let area20 = surface_area(
        &marching_cubes(&sphere(56, 20.0), "FC", 0.5, cmt_core::mesh::DEFAULT_MESH_SIGMA)
            .map_err(|e| format!("{e}"))?,
    );
    let rel20 = (area20 - analytic(20.0)).abs() / analytic(20.0);
    check(rel20 < rel10, format!("no convergence: {rel20:.4} vs {rel10:.4}"))?;
    ok(format!("errors r=10: {rel10:.4}, r=20: {rel20:.4}"))
}

/// FCL on calibrated polar-cap defects: f +/- 0.03, monotone, ~0 when
/// healthy.
fn criterion_9() -> Result<Outcome, String> {
    let (_, intact) = shell_phantom(64, 24.0, 3.0, 1.0, 0.0);
    let healthy = estimate_fcl(&intact, &intact, &intact, Region::FC).unwrap();
    check(healthy < 0.02, format!("healthy FCL {healthy:.4}"))?;
    let mut last = healthy;
    let mut estimates = Vec::new();
    for f in [0.1, 0.2, 0.4] {
        let (_, observed) = shell_phantom(64, 24.0, 3.0, 1.0, f);
        let fcl = estimate_fcl(&intact, &observed, &intact, Region::FC).unwrap();
        check(
            (fcl - f).abs() <= 0.03,
            format!("defect {f}: estimate {fcl:.4}"),
        )?;
        check(fcl >= last, format!("not monotone at {f}"))?;
        last = fcl;
        estimates.push(format!("{f}->{fcl:.3}"));
    }
    ok(format!("healthy {healthy:.4}; {}", estimates.join(", ")))
}

/// Mean thickness of a 2 mm cartilage shell (0.5 mm voxels).
fn criterion_10() -> Result<Outcome, String> {
    let (_, lab) = shell_phantom(96, 16.0, 2.0, 0.5, 0.0);
    let (metrics, _) = quantify_region(&lab, &lab, Region::FC).map_err(|e| format!("{e}"))?;
    let t = metrics.mean_thickness_mm;
    check((t - 2.0).abs() <= 0.15, format!("mean thickness {t:.4} mm"))?;
    ok(format!("mean thickness {t:.4} mm"))
}

fn metrics_close(a: &[RegionMetrics], b: &[RegionMetrics], rel_tol: f64) -> Result<(), String> {
    check(a.len() == b.len(), "region count mismatch")?;
    for (x, y) in a.iter().zip(b) {
        let fields = [
            ("volume", x.volume_mm3, y.volume_mm3),
            ("thickness", x.mean_thickness_mm, y.mean_thickness_mm),
            ("area", x.interface_area_mm2, y.interface_area_mm2),
        ];
        for (name, u, v) in fields {
            let rel = (u - v).abs() / v.abs().max(1e-9);
            check(
                rel <= rel_tol,
                format!("{} {name}: {u:.4} vs {v:.4} (rel {rel:.4})", x.region.name()),
            )?;
        }
        check(
            (x.fcl_fraction - y.fcl_fraction).abs() <= 0.03,
            format!("{} fcl: {} vs {}", x.region.name(), x.fcl_fraction, y.fcl_fraction),
        )?;
    }
    Ok(())
}

/// Mirrored twins agree to 1e-6 after laterality standardization; an 8deg
/// rotated phantom agrees within 3% after pose normalization.
fn criterion_11() -> Result<Outcome, String> {
    // mirrored-twin half
    let (img, lab) = knee_phantom(&PhantomSpec::default());
    let report_of = |image: &ImageVolume, labels: &LabelMap, side: Side| -> Result<Vec<RegionMetrics>, String> {
        let (_, labels, _flip) =
            standardize_laterality(image, labels, side).map_err(|e| format!("{e}"))?;
        let parc = parcellate_tc(&labels).map_err(|e| format!("{e}"))?;
        Ok(regional_report(&parc, &parc)
            .map_err(|e| format!("{e}"))?
            .into_iter()
            .map(|(m, _)| m)
            .collect())
    };
    let right = report_of(&img, &lab, Side::Right)?;
    let left_img = img.flip_lr().unwrap();
    let left_lab = lab.flip_lr().unwrap();
    let left = report_of(&left_img, &left_lab, Side::Left)?;
    for (r, l) in right.iter().zip(&left) {
        for (a, b) in [
            (r.volume_mm3, l.volume_mm3),
            (r.mean_thickness_mm, l.mean_thickness_mm),
            (r.interface_area_mm2, l.interface_area_mm2),
            (r.fcl_fraction, l.fcl_fraction),
        ] {
            check(
                (a - b).abs() <= 1e-6 * b.abs().max(1.0),
                format!("{}: {a} vs {b}", r.region.name()),
            )?;
        }
    }
    // pose half: 8 degree analytic rotation, pose_normalize, compare metrics
    let cfg = RegistrationConfig {
        iters_per_level: 100,
        ..RegistrationConfig::desk_scale()
    };
    let (model, _) = phantom_model(&cfg);
    let (rot_img, rot_lab) = knee_phantom(&PhantomSpec {
        rot_z_deg: 8.0,
        ..PhantomSpec::default()
    });
    let quantified = |image: &ImageVolume, labels: &LabelMap| -> Result<Vec<RegionMetrics>, String> {
        let (_, labels, _) =
            pose_normalize(image, labels, &model, &cfg).map_err(|e| format!("{e}"))?;
        let parc = parcellate_tc(&labels).map_err(|e| format!("{e}"))?;
        Ok(regional_report(&parc, &parc)
            .map_err(|e| format!("{e}"))?
            .into_iter()
            .map(|(m, _)| m)
            .collect())
    };
    let straight = quantified(&img, &lab)?;
    let rotated = quantified(&rot_img, &rot_lab)?;
    metrics_close(&rotated, &straight, 0.03)?;
    ok("twins equal to 1e-6; rotated metrics within 3%")
}

/// Directional check: the MSE-stage-1 template is at least as sharp as an
/// LNCC-from-scratch template under the same budget (warn, never fail).
fn criterion_12() -> Result<Outcome, String> {
    let budget = RegistrationConfig {
        iters_per_level: 60,
        field_resolution_factor: 0.5,
        ..RegistrationConfig::desk_scale()
    };
    let sharpness = |img: &ImageVolume| -> f64 {
        let ext = img.grid.extents;
        let mut acc = 0.0;
        let mut count = 0usize;
        for idx in 0..img.data.len() {
            let [x, y, z] = img.grid.coords(idx);
            if x + 1 >= ext[0] || y + 1 >= ext[1] || z + 1 >= ext[2] {
                continue;
            }
            let v = img.data[idx] as f64;
            let gx = img.at(x + 1, y, z) as f64 - v;
            let gy = img.at(x, y + 1, z) as f64 - v;
            let gz = img.at(x, y, z + 1) as f64 - v;
            acc += (gx * gx + gy * gy + gz * gz).sqrt();
            count += 1;
        }
        acc / count as f64
    };
    let subjects = learning_cohort(&budget);
    let mse_outcome = learn_template(&subjects, &budget, 0.5).map_err(|e| format!("{e}"))?;
    let lncc_cfg = RegistrationConfig {
        similarity_stage1: SimilarityKind::Lncc,
        ..budget.clone()
    };
    let subjects2 = learning_cohort(&lncc_cfg);
    let lncc_outcome = learn_template(&subjects2, &lncc_cfg, 0.5).map_err(|e| format!("{e}"))?;
    let s_mse = sharpness(&mse_outcome.stage1_image);
    let s_lncc = sharpness(&lncc_outcome.stage1_image);
    let detail = format!("sharpness: mse-learned {s_mse:.5}, lncc-learned {s_lncc:.5}");
    if s_mse >= s_lncc {
        ok(detail)
    } else {
        Ok(Outcome {
            detail: format!("{detail} (direction violated; informational only)"),
            warned: true,
        })
    }
}

/// Full CLI pipeline is bitwise reproducible across reruns and thread counts.
fn criterion_13() -> Result<Outcome, String> {
    let root = tempfile::tempdir().map_err(|e| format!("{e}"))?;
    let data = root.path().join("data");
    std::fs::create_dir_all(&data).unwrap();

    // small dataset: 4 train, 1 test, 1 left-side analysis subject, written
    // in LPS orientation with anisotropic spacing so standardize has work
    let mut manifest = String::from("subject_id,image,labels,side,split\n");
    let specs: Vec<(String, [f64; 3], &str, &str)> = vec![
        ("t0".into(), [1.5, 0.0, 0.0], "right", "train"),
        ("t1".into(), [-1.5, 0.0, 0.0], "right", "train"),
        ("t2".into(), [0.0, 1.5, 0.0], "right", "train"),
        ("t3".into(), [0.0, -1.5, 0.0], "right", "train"),
        ("s0".into(), [1.0, 0.5, 0.0], "right", "test"),
        ("a0".into(), [0.5, -1.0, 0.0], "left", "analysis"),
    ];
    for (id, shift, side, split) in &specs {
        let (img, lab) = knee_phantom(&PhantomSpec {
            extent: 32,
            shift: *shift,
            ..PhantomSpec::default()
        });
        // re-express in LPS (flip x and y data order, negate affine columns)
        let to_lps = |grid: &Grid| -> Grid {
            let mut g = grid.clone();
            let mut m = g.affine.m;
            for r in 0..3 {
                m[r][0] = -m[r][0];
                m[r][1] = -m[r][1];
            }
            m[0][3] = (grid.extents[0] - 1) as f64 * grid.spacing[0];
            m[1][3] = (grid.extents[1] - 1) as f64 * grid.spacing[1];
            g.affine = cmt_core::geom::Affine4 { m };
            g
        };
        let flip_xy = |ext: [usize; 3], get: &dyn Fn(usize) -> usize| -> Vec<usize> {
            let mut map = Vec::with_capacity(ext[0] * ext[1] * ext[2]);
            for z in 0..ext[2] {
                for y in 0..ext[1] {
                    for x in 0..ext[0] {
                        map.push(get(
                            (ext[0] - 1 - x) + ext[0] * ((ext[1] - 1 - y) + ext[1] * z),
                        ));
                    }
                }
            }
            map
        };
        let ext = img.grid.extents;
        let order = flip_xy(ext, &|i| i);
        let lps_img = ImageVolume {
            grid: to_lps(&img.grid),
            data: order.iter().map(|&i| img.data[i]).collect(),
        };
        let lps_lab = LabelMap {
            grid: to_lps(&lab.grid),
            data: order.iter().map(|&i| lab.data[i]).collect(),
            schema: lab.schema,
        };
        nifti::write_volume(&lps_img, &data.join(format!("{id}_img.nii.gz"))).unwrap();
        nifti::write_label_map(&lps_lab, &data.join(format!("{id}_lab.nii.gz"))).unwrap();
        manifest.push_str(&format!(
            "{id},{id}_img.nii.gz,{id}_lab.nii.gz,{side},{split}\n"
        ));
    }
    let manifest_path = root.path().join("manifest.csv");
    std::fs::write(&manifest_path, manifest).unwrap();

    let run_pipeline = |work: &Path, threads: usize| -> Result<(), String> {
        let config_path = work.join("project.toml");
        std::fs::create_dir_all(work).unwrap();
        std::fs::write(
            &config_path,
            format!(
                "data_root = {}\nwork_root = {}\ntau = 0.5\nseed = 7\n\n[registration]\nlncc_window_edge = 9\npyramid_levels = 2\niters_per_level = 10\nfield_resolution_factor = 0.5\n",
                data.display(),
                work.display()
            ),
        )
        .unwrap();
        let bin = env!("CARGO_BIN_EXE_cmt");
        let steps: Vec<Vec<String>> = vec![
            vec!["standardize".into(), "--manifest".into(), manifest_path.display().to_string()],
            vec!["learn-template".into(), "--manifest".into(), manifest_path.display().to_string()],
            vec!["register".into(), "--manifest".into(), manifest_path.display().to_string()],
            vec!["evaluate".into(), "--manifest".into(), manifest_path.display().to_string()],
            vec!["quantify".into(), "--manifest".into(), manifest_path.display().to_string()],
            vec!["report".into()],
        ];
        for step in steps {
            let output = Command::new(bin)
                .arg(&step[0])
                .args(&step[1..])
                .arg("--config")
                .arg(&config_path)
                .arg("--threads")
                .arg(threads.to_string())
                .output()
                .map_err(|e| format!("spawn: {e}"))?;
            if !output.status.success() {
                return Err(format!(
                    "{} failed: {}",
                    step[0],
                    String::from_utf8_lossy(&output.stderr)
                ));
            }
        }
        Ok(())
    };

    // collect every output file's bytes, keyed by relative path
    let snapshot = |work: &Path| -> std::collections::BTreeMap<String, Vec<u8>> {
        let mut out = std::collections::BTreeMap::new();
        let mut stack = vec![work.to_path_buf()];
        while let Some(dir) = stack.pop() {
            for entry in std::fs::read_dir(&dir).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    stack.push(path);
                } else if path.extension().is_some_and(|e| e != "toml") {
                    let rel = path.strip_prefix(work).unwrap().display().to_string();
                    out.insert(rel, std::fs::read(&path).unwrap());
                }
            }
        }
        out
    };

    let w1 = root.path().join("run1");
    let w2 = root.path().join("run2");
    let w3 = root.path().join("run_threads1");
    run_pipeline(&w1, 2)?;
    run_pipeline(&w2, 2)?;
    run_pipeline(&w3, 1)?;
    let s1 = snapshot(&w1);
    let s2 = snapshot(&w2);
    let s3 = snapshot(&w3);
    check(!s1.is_empty(), "no outputs found")?;
    check(
        s1.keys().collect::<Vec<_>>() == s2.keys().collect::<Vec<_>>(),
        "rerun produced different file sets",
    )?;
    for (k, v) in &s1 {
        check(
            s2.get(k) == Some(v),
            format!("rerun differs in {k}"),
        )?;
        check(
            s3.get(k) == Some(v),
            format!("thread count changed bytes of {k}"),
        )?;
    }
    ok(format!("{} files bit-identical across reruns and threads 1 vs 2", s1.len()))
}

/// Random volumes survive write -> read bit-exactly (float32 data) with the
/// affine preserved to 1e-5.
fn criterion_14() -> Result<Outcome, String> {
    let dir = tempfile::tempdir().map_err(|e| format!("{e}"))?;
    let mut rng = lcg(31337);
    for trial in 0..100 {
        let ext = [
            2 + (rng() * 11.0) as usize,
            2 + (rng() * 11.0) as usize,
            2 + (rng() * 11.0) as usize,
        ];
        let spacing = [
            0.3 + 1.7 * rng(),
            0.3 + 1.7 * rng(),
            0.3 + 1.7 * rng(),
        ];
        let offset = [
            160.0 * rng() - 80.0,
            160.0 * rng() - 80.0,
            160.0 * rng() - 80.0,
        ];
        let grid = Grid {
            extents: ext,
            spacing,
            affine: cmt_core::geom::Affine4::from_diagonal(spacing, offset),
        };
        let data: Vec<f32> = (0..grid.num_voxels())
            .map(|_| (rng() * 2000.0 - 1000.0) as f32)
            .collect();
        let vol = ImageVolume {
            grid: grid.clone(),
            data,
        };
        let path = dir.path().join(format!("rt{trial}.nii.gz"));
        nifti::write_volume(&vol, &path).map_err(|e| format!("{e}"))?;
        let (back, _) = nifti::read_volume(&path).map_err(|e| format!("{e}"))?;
        check(back.data == vol.data, format!("trial {trial}: data not bit-exact"))?;
        for r in 0..4 {
            for c in 0..4 {
                check(
                    (back.grid.affine.m[r][c] - vol.grid.affine.m[r][c]).abs() <= 1e-5,
                    format!("trial {trial}: affine [{r}][{c}]"),
                )?;
            }
        }
    }
    ok("100 volumes bit-exact, affines within 1e-5")
}
