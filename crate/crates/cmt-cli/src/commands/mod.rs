pub mod common;
pub mod evaluate;
pub mod learn_template;
pub mod quantify;
pub mod register;
pub mod report;
pub mod standardize;
