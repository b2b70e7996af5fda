//! Project configuration: a plain-text file with `key = value` lines and
//! optional `[labels]` / `[registration]` sections. CLI flags override file
//! values; `CMT_WORK_ROOT` is the work_root fallback.
//!
//! ```text
//! data_root = /data/knee
//! work_root = /work/run1
//! target_spacing = 1.0 1.0 1.0
//! percentile_lo = 0.5
//! percentile_hi = 99.5
//! tau = 0.5
//! threads = 2
//! seed = 0
//!
//! [labels]
//! femur = 1
//! femoral_cartilage = 2
//! tibia = 3
//! tibial_cartilage = 4
//!
//! [registration]
//! similarity_stage1 = mse
//! similarity_stage2 = lncc
//! lncc_window_edge = 9
//! lambda1 = 1.0
//! lambda2 = 1.0
//! lambda3 = 1.0
//! lambda4 = 1.0
//! pyramid_levels = 3
//! iters_per_level = 60
//! step_size = 0.05
//! convergence_rel_tol = 1e-5
//! squaring_steps = 7
//! field_resolution_factor = 1.0
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cmt_core::reg::{RegistrationConfig, SimilarityKind};
use cmt_core::volume::{LabelSchema, DEFAULT_PERCENTILES};
use cmt_core::{Error, Result};

#[derive(Debug, Clone)]
pub struct ProjectConfig {
    pub data_root: PathBuf,
    pub work_root: PathBuf,
    pub target_spacing: [f64; 3],
    pub percentile_lo: f64,
    pub percentile_hi: f64,
    pub tau: f64,
    pub threads: usize,
    pub seed: u64,
    pub schema: LabelSchema,
    pub registration: RegistrationConfig,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        ProjectConfig {
            data_root: PathBuf::from("."),
            work_root: PathBuf::from("."),
            target_spacing: [1.0; 3],
            percentile_lo: DEFAULT_PERCENTILES.0,
            percentile_hi: DEFAULT_PERCENTILES.1,
            tau: 0.5,
            threads: 0, // 0 = rayon default
            seed: 0,
            schema: LabelSchema::default(),
            registration: RegistrationConfig::default(),
        }
    }
}

fn parse_sections(text: &str) -> BTreeMap<String, BTreeMap<String, String>> {
    let mut out: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    let mut section = String::new();
    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            section = line[1..line.len() - 1].trim().to_string();
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            out.entry(section.clone())
                .or_default()
                .insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    out
}

macro_rules! set_parsed {
    ($map:expr, $key:literal, $target:expr) => {
        if let Some(v) = $map.get($key) {
            $target = v
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad value for {}: {v:?}", $key)))?;
        }
    };
}

impl ProjectConfig {
    pub fn load(path: &Path) -> Result<ProjectConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::from_text(&text)
    }

    pub fn from_text(text: &str) -> Result<ProjectConfig> {
        let sections = parse_sections(text);
        let mut cfg = ProjectConfig::default();
        if let Some(root) = sections.get("") {
            if let Some(v) = root.get("data_root") {
                cfg.data_root = PathBuf::from(v);
            }
            if let Some(v) = root.get("work_root") {
                cfg.work_root = PathBuf::from(v);
            }
            if let Some(v) = root.get("target_spacing") {
                let parts: Vec<f64> = v
                    .split_whitespace()
                    .map(|t| {
                        t.parse()
                            .map_err(|_| Error::InvalidConfig(format!("bad spacing {t:?}")))
                    })
                    .collect::<Result<_>>()?;
                cfg.target_spacing = match parts.as_slice() {
                    [iso] => [*iso; 3],
                    [x, y, z] => [*x, *y, *z],
                    _ => {
                        return Err(Error::InvalidConfig(
                            "target_spacing takes 1 or 3 values".into(),
                        ))
                    }
                };
            }
            set_parsed!(root, "percentile_lo", cfg.percentile_lo);
            set_parsed!(root, "percentile_hi", cfg.percentile_hi);
            set_parsed!(root, "tau", cfg.tau);
            set_parsed!(root, "threads", cfg.threads);
            set_parsed!(root, "seed", cfg.seed);
        }
        if let Some(labels) = sections.get("labels") {
            set_parsed!(labels, "femur", cfg.schema.femur);
            set_parsed!(labels, "femoral_cartilage", cfg.schema.femoral_cartilage);
            set_parsed!(labels, "tibia", cfg.schema.tibia);
            set_parsed!(labels, "tibial_cartilage", cfg.schema.tibial_cartilage);
            set_parsed!(
                labels,
                "medial_tibial_cartilage",
                cfg.schema.medial_tibial_cartilage
            );
            set_parsed!(
                labels,
                "lateral_tibial_cartilage",
                cfg.schema.lateral_tibial_cartilage
            );
        }
        if let Some(reg) = sections.get("registration") {
            if let Some(v) = reg.get("similarity_stage1") {
                cfg.registration.similarity_stage1 = SimilarityKind::parse(v)?;
            }
            if let Some(v) = reg.get("similarity_stage2") {
                cfg.registration.similarity_stage2 = SimilarityKind::parse(v)?;
            }
            set_parsed!(reg, "lncc_window_edge", cfg.registration.lncc_window_edge);
            set_parsed!(reg, "lambda1", cfg.registration.lambda1);
            set_parsed!(reg, "lambda2", cfg.registration.lambda2);
            set_parsed!(reg, "lambda3", cfg.registration.lambda3);
            set_parsed!(reg, "lambda4", cfg.registration.lambda4);
            set_parsed!(reg, "pyramid_levels", cfg.registration.pyramid_levels);
            set_parsed!(reg, "iters_per_level", cfg.registration.iters_per_level);
            set_parsed!(reg, "step_size", cfg.registration.step_size);
            set_parsed!(
                reg,
                "convergence_rel_tol",
                cfg.registration.convergence_rel_tol
            );
            set_parsed!(reg, "squaring_steps", cfg.registration.squaring_steps);
            set_parsed!(
                reg,
                "field_resolution_factor",
                cfg.registration.field_resolution_factor
            );
        }
        cfg.registration.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        self.registration.validate()?;
        for s in self.target_spacing {
            if s <= 0.0 || !s.is_finite() {
                return Err(Error::InvalidConfig(format!("target spacing {s}")));
            }
        }
        if !(0.0..=100.0).contains(&self.percentile_lo)
            || !(0.0..=100.0).contains(&self.percentile_hi)
            || self.percentile_lo >= self.percentile_hi
        {
            return Err(Error::InvalidConfig("percentile window".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidConfig(format!("tau {}", self.tau)));
        }
        Ok(())
    }

    /// Resolve against `CMT_WORK_ROOT` when the file did not set work_root.
    pub fn apply_env_fallback(&mut self, explicit_work_root_set: bool) {
        if !explicit_work_root_set {
            if let Ok(env) = std::env::var("CMT_WORK_ROOT") {
                if !env.is_empty() {
                    self.work_root = PathBuf::from(env);
                }
            }
        }
    }

    pub fn standardized_dir(&self) -> PathBuf {
        self.work_root.join("standardized")
    }

    pub fn template_dir(&self) -> PathBuf {
        self.work_root.join("template")
    }

    pub fn register_dir(&self) -> PathBuf {
        self.work_root.join("register")
    }

    pub fn quantify_dir(&self) -> PathBuf {
        self.work_root.join("quantify")
    }

    pub fn evaluate_dir(&self) -> PathBuf {
        self.work_root.join("evaluate")
    }
}
