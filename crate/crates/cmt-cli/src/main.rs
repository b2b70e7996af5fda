//! `cmt` — knee cartilage morphometrics pipeline.
//!
//! Subcommands: standardize, learn-template, register, evaluate, quantify,
//! report. Configuration precedence: CLI flags > config file > defaults;
//! `CMT_WORK_ROOT` is the work_root fallback.

mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cmt_core::reg::load_template;
use cmt_core::Result;
use commands::common::summarize_results;
use config::ProjectConfig;
use manifest::{Manifest, Split};

#[derive(Parser)]
#[command(name = "cmt", version, about = "knee cartilage morphometrics pipeline")]
struct Cli {
    /// Project configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (0 = all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed recorded in outputs; all algorithms are deterministic
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reorient, resample, normalize, and laterality-standardize a dataset
    Standardize {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Learn the template and per-subject registrations from the train split
    LearnTemplate {
        #[arg(long)]
        manifest: PathBuf,
        /// Output template directory (default: <work_root>/template)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Register the template to each subject of a split
    Register {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        template_dir: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report registration accuracy (DSC, HD95, interface-area difference)
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        /// Directory with warped template masks (default: <work_root>/register)
        #[arg(long)]
        pred_dir: Option<PathBuf>,
        /// Directory with pseudo-healthy interface patches named
        /// <id>_<region>_pseudo.ply
        #[arg(long)]
        pseudo_dir: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Quantify cartilage shape and full-thickness cartilage loss
    Quantify {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        template_dir: Option<PathBuf>,
        #[arg(long, default_value = "analysis")]
        split: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Merge per-subject quantification tables into one summary
    Report {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(cli: &Cli) -> Result<ProjectConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ProjectConfig::load(path)?,
        None => ProjectConfig::default(),
    };
    let had_work_root = cli
        .config
        .as_ref()
        .map(|p| {
            std::fs::read_to_string(p)
                .map(|t| t.lines().any(|l| l.trim_start().starts_with("work_root")))
                .unwrap_or(false)
        })
        .unwrap_or(false);
    cfg.apply_env_fallback(had_work_root);
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.registration.seed = s;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| cmt_core::Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Standardize { manifest } => {
            let m = Manifest::load(manifest, &cfg.data_root)?;
            m.validate_paths().unwrap_or_else(|e| {
                eprintln!("[standardize] warning: {e}");
            });
            let results = commands::standardize::run(&cfg, &m)?;
            summarize_results("standardize", &results)
        }
        Command::LearnTemplate { manifest, out } => {
            let m = Manifest::load(manifest, &cfg.data_root)?;
            let out_dir = out.clone().unwrap_or_else(|| cfg.template_dir());
            commands::learn_template::run(&cfg, &m, &out_dir)
        }
        Command::Register {
            manifest,
            template_dir,
            split,
            out,
        } => {
            let m = Manifest::load(manifest, &cfg.data_root)?;
            let tdir = template_dir.clone().unwrap_or_else(|| cfg.template_dir());
            let model = load_template(&tdir)?;
            let out_dir = out.clone().unwrap_or_else(|| cfg.register_dir());
            let results =
                commands::register::run(&cfg, &m, &model, Split::parse(split)?, &out_dir)?;
            summarize_results("register", &results)
        }
        Command::Evaluate {
            manifest,
            pred_dir,
            pseudo_dir,
            split,
            out,
        } => {
            let m = Manifest::load(manifest, &cfg.data_root)?;
            let pred = pred_dir.clone().unwrap_or_else(|| cfg.register_dir());
            let out_dir = out.clone().unwrap_or_else(|| cfg.evaluate_dir());
            let results = commands::evaluate::run(
                &cfg,
                &m,
                Split::parse(split)?,
                &pred,
                pseudo_dir.as_deref(),
                &out_dir,
            )?;
            summarize_results("evaluate", &results)
        }
        Command::Quantify {
            manifest,
            template_dir,
            split,
            out,
        } => {
            let m = Manifest::load(manifest, &cfg.data_root)?;
            let tdir = template_dir.clone().unwrap_or_else(|| cfg.template_dir());
            let model = load_template(&tdir)?;
            let out_dir = out.clone().unwrap_or_else(|| cfg.quantify_dir());
            let results =
                commands::quantify::run(&cfg, &m, &model, Split::parse(split)?, &out_dir)?;
            summarize_results("quantify", &results)
        }
        Command::Report { out } => {
            let out_path = out
                .clone()
                .unwrap_or_else(|| cfg.work_root.join("summary.csv"));
            let table = commands::report::run(&cfg.quantify_dir(), &out_path)?;
            print!("{table}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
