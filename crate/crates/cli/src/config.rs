//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use ivdfm::features::CONTEXT_DIM;
use ivdfm::intervene::BaselineShock;
use ivdfm::synthdata::{DgpKind, ScmSpec, ScmVariant};
use ivdfm::vimodel::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Recovery,
    Intervention,
    Forecast,
    #[serde(alias = "degeneracy-demo")]
    Degeneracy,
    Gradcheck,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Recovery => "recovery",
            ExperimentKind::Intervention => "intervention",
            ExperimentKind::Forecast => "forecast",
            ExperimentKind::Degeneracy => "degeneracy",
            ExperimentKind::Gradcheck => "gradcheck",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecoveryConfig {
    pub dgp: DgpKind,
    pub t: usize,
    pub n: usize,
    /// AR order of the simulated factors; the fitted order is `model.p`.
    pub dgp_p: usize,
    pub trajectories: bool,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self {
            dgp: DgpKind::Dynamic,
            t: 200,
            n: 20,
            dgp_p: 1,
            trajectories: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridSection {
    Main,
    VaryingT,
    MisspecifiedR,
}

impl GridSection {
    pub fn name(self) -> &'static str {
        match self {
            GridSection::Main => "main",
            GridSection::VaryingT => "varying_t",
            GridSection::MisspecifiedR => "misspecified_r",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterventionGridConfig {
    pub sections: Vec<GridSection>,
    pub variants: Vec<ScmVariant>,
    /// Series length of the main and misspecified-r sections.
    pub t: usize,
    pub t_grid: Vec<usize>,
    pub r_grid: Vec<usize>,
    pub t0: Option<usize>,
    pub k: usize,
    pub c: f64,
    pub horizon: usize,
    pub baseline: BaselineShock,
    /// System parameters; `variant` is replaced per grid row.
    pub scm: ScmSpec,
    /// Write per-seed IRF curves of the main section.
    pub irf_curves: bool,
}

impl Default for InterventionGridConfig {
    fn default() -> Self {
        Self {
            sections: vec![GridSection::Main, GridSection::VaryingT, GridSection::MisspecifiedR],
            variants: ScmVariant::ALL.to_vec(),
            t: 500,
            t_grid: vec![100, 200, 500, 1000],
            r_grid: vec![2, 3, 4, 5],
            t0: None,
            k: 0,
            c: 2.0,
            horizon: 10,
            baseline: BaselineShock::PriorMean,
            scm: ScmSpec::default(),
            irf_curves: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSeries {
    pub t: usize,
    pub n: usize,
    pub r: usize,
    pub p: usize,
    pub seed: u64,
}

impl Default for SyntheticSeries {
    fn default() -> Self {
        Self {
            t: 600,
            n: 10,
            r: 3,
            p: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastConfig {
    /// CSV of the series; when unset a synthetic AR panel is generated and
    /// exported to the output directory first.
    pub dataset: Option<PathBuf>,
    /// Name used in output rows.
    pub name: Option<String>,
    pub has_header: bool,
    /// Zero-based column holding timestamps.
    pub timestamp_col: Option<usize>,
    pub synthetic: SyntheticSeries,
    pub horizons: Vec<usize>,
    /// Context length handed to the encoder at each origin.
    pub window: usize,
    pub max_origins: usize,
    pub n_paths: usize,
    /// Train and validation fractions; the rest is the test split.
    pub train_frac: f64,
    pub val_frac: f64,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            dataset: None,
            name: None,
            has_header: true,
            timestamp_col: None,
            synthetic: SyntheticSeries::default(),
            horizons: vec![96],
            window: 96,
            max_origins: 10,
            n_paths: 200,
            train_frac: 0.6,
            val_frac: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DegeneracyConfig {
    pub rotations: usize,
    /// Skip rotations closer than this (Frobenius) to a signed permutation.
    pub min_offdiag: f64,
}

impl Default for DegeneracyConfig {
    fn default() -> Self {
        Self {
            rotations: 20,
            min_offdiag: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckConfig {
    pub configs: usize,
    pub max_r: usize,
    pub max_n: usize,
    pub max_t: usize,
    pub eps: f64,
    pub max_coords: Option<usize>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            configs: 20,
            max_r: 5,
            max_n: 20,
            max_t: 50,
            eps: 1e-5,
            max_coords: Some(6),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    /// Feed every step the context of step 0.
    #[serde(default)]
    pub constant_context: bool,
    /// Use the true system instead of a trained model (intervention only).
    #[serde(default)]
    pub oracle_model: bool,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub recovery: RecoveryConfig,
    #[serde(default)]
    pub intervention: InterventionGridConfig,
    #[serde(default)]
    pub forecast: ForecastConfig,
    #[serde(default)]
    pub degeneracy: DegeneracyConfig,
    #[serde(default)]
    pub gradcheck: GradcheckConfig,
}

fn default_seeds() -> Vec<u64> {
    (0..10).collect()
}

impl ExperimentConfig {
    pub fn defaults(kind: ExperimentKind) -> Self {
        let mut cfg = Self {
            kind,
            seeds: default_seeds(),
            out_dir: None,
            constant_context: false,
            oracle_model: false,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            recovery: RecoveryConfig::default(),
            intervention: InterventionGridConfig::default(),
            forecast: ForecastConfig::default(),
            degeneracy: DegeneracyConfig::default(),
            gradcheck: GradcheckConfig::default(),
        };
        match kind {
            ExperimentKind::Intervention => cfg.seeds = (0..5).collect(),
            ExperimentKind::Forecast | ExperimentKind::Degeneracy | ExperimentKind::Gradcheck => {
                cfg.seeds = vec![0];
            }
            ExperimentKind::Recovery => {}
        }
        if kind == ExperimentKind::Forecast {
            cfg.train.window = cfg.forecast.window;
        }
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CliError::Config(msg));
        self.model.validate()?;
        self.train.validate()?;
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if self.model.context_dim != CONTEXT_DIM {
            return bad(format!("model.context_dim must be {CONTEXT_DIM} (timestep features)"));
        }
        if self.oracle_model && self.kind != ExperimentKind::Intervention {
            return bad("oracle_model only applies to intervention runs".into());
        }
        match self.kind {
            ExperimentKind::Recovery => {
                let rc = &self.recovery;
                if rc.n < self.model.r || rc.t <= self.model.p + 1 || rc.dgp_p == 0 {
                    return bad("recovery needs n >= model.r, t > model.p + 1 and dgp_p >= 1".into());
                }
            }
            ExperimentKind::Intervention => {
                let ic = &self.intervention;
                if ic.sections.is_empty() || ic.variants.is_empty() {
                    return bad("intervention needs at least one section and one variant".into());
                }
                if ic.k >= ic.scm.r {
                    return bad(format!("shocked component {} out of range for r = {}", ic.k, ic.scm.r));
                }
                if ic.r_grid.iter().any(|&r| r == 0 || r > ic.scm.n) {
                    return bad("r_grid entries must lie in 1..=scm.n".into());
                }
                ic.scm.validate()?;
            }
            ExperimentKind::Forecast => {
                let fc = &self.forecast;
                if fc.horizons.is_empty() || fc.horizons.contains(&0) {
                    return bad("forecast horizons must be positive".into());
                }
                if fc.window < self.model.p + 1 || fc.n_paths < 2 || fc.max_origins == 0 {
                    return bad("forecast needs window > model.p, n_paths >= 2, max_origins >= 1".into());
                }
                if !(fc.train_frac > 0.0 && fc.val_frac >= 0.0 && fc.train_frac + fc.val_frac < 1.0) {
                    return bad("split fractions must leave a non-empty test split".into());
                }
            }
            ExperimentKind::Degeneracy => {
                if self.degeneracy.rotations == 0 {
                    return bad("degeneracy needs at least one rotation".into());
                }
            }
            ExperimentKind::Gradcheck => {
                let gc = &self.gradcheck;
                if gc.configs == 0 || gc.max_r == 0 || gc.max_n < gc.max_r || gc.max_t < 2 {
                    return bad("gradcheck needs configs >= 1, 1 <= max_r <= max_n, max_t >= 2".into());
                }
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let canonical = Self {
            out_dir: None,
            ..self.clone()
        };
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_uses_defaults() {
        let cfg = ExperimentConfig::from_toml_str("kind = \"recovery\"\n").unwrap();
        assert_eq!(cfg.seeds, (0..10).collect::<Vec<_>>());
        assert_eq!(cfg.model, ModelConfig::default());
        assert_eq!(cfg.recovery.t, 200);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml_str("kind = \"recovery\"\nepochz = 3\n").unwrap_err();
        assert!(err.to_string().contains("epochz"), "{err}");
        let err = ExperimentConfig::from_toml_str("kind = \"recovery\"\n[train]\nlearning_rate = 0.1\n").unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn nested_sections_parse() {
        let text = r#"
kind = "intervention"
seeds = [3, 4]
[model.prior.family]
kind = "gaussian"
[train]
epochs = 5
[intervention]
sections = ["main"]
variants = ["chain"]
baseline = "inferred"
"#;
        let cfg = ExperimentConfig::from_toml_str(text).unwrap();
        assert_eq!(cfg.train.epochs, 5);
        assert_eq!(cfg.intervention.variants, vec![ScmVariant::Chain]);
        assert_eq!(cfg.intervention.baseline, BaselineShock::Inferred);
        assert_eq!(cfg.model.prior.family, ivdfm::prior::Family::Gaussian);
    }

    #[test]
    fn validation_catches_bad_values() {
        assert!(ExperimentConfig::from_toml_str("kind = \"recovery\"\nseeds = []\n").is_err());
        assert!(ExperimentConfig::from_toml_str("kind = \"recovery\"\n[train]\nlr = -1.0\n").is_err());
        assert!(ExperimentConfig::from_toml_str("kind = \"recovery\"\noracle_model = true\n").is_err());
        assert!(ExperimentConfig::from_toml_str("kind = \"forecast\"\n[forecast]\nhorizons = [0]\n").is_err());
        assert!(ExperimentConfig::from_toml_str("kind = \"nope\"\n").is_err());
    }

    #[test]
    fn hash_ignores_output_directory_only() {
        let a = ExperimentConfig::defaults(ExperimentKind::Recovery);
        let mut b = a.clone();
        b.out_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seeds = vec![1];
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn alias_for_degeneracy_kind() {
        let cfg = ExperimentConfig::from_toml_str("kind = \"degeneracy-demo\"\nseeds = [0]\n").unwrap();
        assert_eq!(cfg.kind, ExperimentKind::Degeneracy);
    }
}
