//! Registration/optimization configuration.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SimilarityKind {
    Mse,
    Ncc,
    Lncc,
}

impl SimilarityKind {
    pub fn name(self) -> &'static str {
        match self {
            SimilarityKind::Mse => "mse",
            SimilarityKind::Ncc => "ncc",
            SimilarityKind::Lncc => "lncc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(SimilarityKind::Mse),
            "ncc" => Ok(SimilarityKind::Ncc),
            "lncc" => Ok(SimilarityKind::Lncc),
            _ => Err(Error::InvalidConfig(format!("unknown similarity {s:?}"))),
        }
    }
}

/// Two-phase schedule: the template is learnable in stage one and frozen in
/// stage two, which continues registration refinement only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationConfig {
    pub similarity_stage1: SimilarityKind,
    pub similarity_stage2: SimilarityKind,
    /// Cubic LNCC window edge length in voxels (odd, >= 3). 27 suits
    /// full-size knee volumes; 9 is the recommended desk-scale profile
    /// for phantoms up to ~64^3.
    pub lncc_window_edge: usize,
    /// Similarity weight, template warped toward each subject.
    pub lambda1: f64,
    /// Similarity weight, subject warped toward the template.
    pub lambda2: f64,
    /// Velocity smoothness (first-order gradient penalty) weight.
    pub lambda3: f64,
    /// Cohort mean-velocity centering weight (active in stage one only).
    pub lambda4: f64,
    pub pyramid_levels: usize,
    pub iters_per_level: usize,
    pub step_size: f64,
    pub convergence_rel_tol: f64,
    pub squaring_steps: u32,
    /// Velocity-field resolution relative to the image grid (1 or 0.5).
    pub field_resolution_factor: f64,
    pub seed: u64,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            similarity_stage1: SimilarityKind::Mse,
            similarity_stage2: SimilarityKind::Lncc,
            lncc_window_edge: 27,
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            lambda4: 1.0,
            pyramid_levels: 3,
            iters_per_level: 200,
            step_size: 0.05,
            convergence_rel_tol: 1e-5,
            squaring_steps: 7,
            field_resolution_factor: 1.0,
            seed: 0,
        }
    }
}

impl RegistrationConfig {
    /// Profile for small synthetic volumes (<= ~64^3): LNCC window 9.
    pub fn desk_scale() -> Self {
        RegistrationConfig {
            lncc_window_edge: 9,
            ..RegistrationConfig::default()
        }
    }

    pub fn similarity(&self, stage: Stage) -> SimilarityKind {
        match stage {
            Stage::One => self.similarity_stage1,
            Stage::Two => self.similarity_stage2,
        }
    }

    /// Centering is moot once the template is frozen.
    pub fn lambda4_at(&self, stage: Stage) -> f64 {
        match stage {
            Stage::One => self.lambda4,
            Stage::Two => 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lncc_window_edge < 3 || self.lncc_window_edge % 2 == 0 {
            return Err(Error::InvalidConfig(format!(
                "lncc_window_edge must be odd and >= 3, got {}",
                self.lncc_window_edge
            )));
        }
        for (name, v) in [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0")));
            }
        }
        if self.lambda1 == 0.0 && self.lambda2 == 0.0 {
            return Err(Error::InvalidConfig(
                "at least one of lambda1, lambda2 must be positive".into(),
            ));
        }
        if self.pyramid_levels == 0 {
            return Err(Error::InvalidConfig("pyramid_levels must be >= 1".into()));
        }
        if self.step_size <= 0.0 {
            return Err(Error::InvalidConfig("step_size must be > 0".into()));
        }
        if self.squaring_steps < 1 {
            return Err(Error::InvalidConfig("squaring_steps must be >= 1".into()));
        }
        if !(self.field_resolution_factor > 0.0 && self.field_resolution_factor <= 1.0) {
            return Err(Error::InvalidConfig(
                "field_resolution_factor must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}
