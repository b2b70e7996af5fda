//! Similarity losses, the two-stage joint template-learning/registration
//! optimizer, template mask construction, and rigid pose registration.

mod config;
mod loss;
mod objective;
mod optim;
mod rigid;
mod template;

pub use config::{RegistrationConfig, SimilarityKind, Stage};
pub use loss::{loss_lncc, loss_mse, loss_ncc, reg_centering, reg_smoothness, LNCC_EPS};
pub use objective::{
    grad_total_loss, total_loss, velocity_grid_for, ObjectiveGradient, SubjectEntry,
};
pub use rigid::rigid_register;
pub use template::{
    build_template_mask, exponentiate_to_grid, learn_template, load_template,
    register_to_template, save_template, LabelProbability, LearnOutcome, LossRecord,
    TemplateModel, TEMPLATE_IMAGE_FILE, TEMPLATE_MASK_FILE, TEMPLATE_METADATA_FILE,
};
