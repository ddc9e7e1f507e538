//! Experiment runners. Each produces an in-memory [`Report`]; writing it is
//! a separate step so re-runs can be compared byte for byte.

use std::path::{Path, PathBuf};

use ivdfm::diffcore::Tensor;
use ivdfm::features::{context_matrix, ContextKind};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::data::{fmt_f64, Table};
use crate::error::{CliError, Result};

pub mod degeneracy;
pub mod forecast;
pub mod gradcheck;
pub mod intervention;
pub mod recovery;

#[derive(Clone, Debug, Default)]
pub struct Report {
    /// CSV tables by file name.
    pub tables: Vec<(String, Table)>,
    /// Other artifacts (model archives) by file name.
    pub files: Vec<(String, String)>,
    /// Lines of `run.log`.
    pub log: Vec<String>,
}

impl Report {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Write everything below `dir`, returning the paths in write order.
    pub fn write(&self, dir: &Path, config_hash: &str) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let mut written = Vec::new();
        for (name, table) in &self.tables {
            let path = dir.join(name);
            table.write(&path, config_hash)?;
            written.push(path);
        }
        for (name, text) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
            written.push(path);
        }
        if !self.log.is_empty() {
            let path = dir.join("run.log");
            let mut text = self.log.join("\n");
            text.push('\n');
            std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
            written.push(path);
        }
        Ok(written)
    }
}

pub fn run(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    match cfg.kind {
        ExperimentKind::Recovery => Ok(recovery::run_recovery(cfg)?.report()),
        ExperimentKind::Intervention => Ok(intervention::run_intervention(cfg)?.report()),
        ExperimentKind::Forecast => Ok(forecast::run_forecast(cfg)?.report()),
        ExperimentKind::Degeneracy => Ok(degeneracy::run_degeneracy(cfg)?.report()),
        ExperimentKind::Gradcheck => Ok(gradcheck::run_gradcheck(cfg)?.report()),
    }
}

pub(crate) fn context_for(cfg: &ExperimentConfig, start: usize, len: usize, period: usize) -> Tensor {
    let kind = if cfg.constant_context {
        ContextKind::Constant
    } else {
        ContextKind::Timestep
    };
    context_matrix(kind, start, len, period as f64)
}

/// Population mean and standard deviation.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub(crate) fn seed_list(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
}

pub(crate) fn f(v: f64) -> String {
    fmt_f64(v)
}

/// Deterministic per-task seed.
pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243f_6a88_85a3_08d3u64, |acc, &p| {
        (acc ^ p).wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(29)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_population() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
        assert!(mean_std(&[]).0.is_nan());
    }

    #[test]
    fn mixed_seeds_differ() {
        assert_ne!(mix_seed(&[0, 1]), mix_seed(&[1, 0]));
        assert_eq!(mix_seed(&[4, 5]), mix_seed(&[4, 5]));
    }
}
