//! Configuration, data files, model archives and experiment runners for
//! the `ivdfm` command-line tool.

pub mod archive;
pub mod config;
pub mod data;
pub mod error;
pub mod runners;

use std::path::{Path, PathBuf};

use config::{ExperimentConfig, ExperimentKind};
use error::{CliError, Result};

/// Command-line overrides applied on top of a config file or the defaults.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub oracle_model: bool,
    pub constant_context: bool,
}

/// Resolve the effective configuration for a subcommand.
pub fn resolve_config(kind: ExperimentKind, ov: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = match &ov.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::defaults(kind),
    };
    if cfg.kind != kind {
        return Err(CliError::Config(format!(
            "config describes a {} run, not {}",
            cfg.kind.name(),
            kind.name()
        )));
    }
    if let Some(seed) = ov.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &ov.out {
        cfg.out_dir = Some(out.clone());
    }
    cfg.oracle_model |= ov.oracle_model;
    cfg.constant_context |= ov.constant_context;
    cfg.validate()?;
    Ok(cfg)
}

/// Run and write the report; returns the written paths.
pub fn execute(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let report = runners::run(cfg)?;
    let default_dir = Path::new("out").join(cfg.kind.name());
    let dir = cfg.out_dir.as_deref().unwrap_or(&default_dir);
    report.write(dir, &cfg.hash())
}

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}
