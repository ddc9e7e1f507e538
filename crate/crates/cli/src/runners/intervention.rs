//! Shock-intervention grid over system variants, series lengths and fitted
//! factor counts.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;

use ivdfm::intervene::{run_intervention_experiment, ExperimentOutcome, InterventionConfig};
use ivdfm::synthdata::{ScmSpec, ScmVariant};

use super::{f, seed_list, Report};
use crate::config::{ExperimentConfig, GridSection};
use crate::data::Table;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GridCell {
    pub section: GridSection,
    pub variant: ScmVariant,
    pub t: usize,
    pub fitted_r: usize,
    pub outcome: ExperimentOutcome,
}

#[derive(Clone, Debug)]
pub struct InterventionOutcome {
    pub cells: Vec<GridCell>,
    pub oracle: bool,
    pub irf_curves: bool,
}

/// Grid rows in output order: `(section, variant, T, fitted r)`.
pub fn grid(cfg: &ExperimentConfig) -> Vec<(GridSection, ScmVariant, usize, usize)> {
    let ic = &cfg.intervention;
    let mut rows = Vec::new();
    for &section in &ic.sections {
        match section {
            GridSection::Main => {
                for &v in &ic.variants {
                    rows.push((section, v, ic.t, ic.scm.r));
                }
            }
            GridSection::VaryingT => {
                for &t in &ic.t_grid {
                    for &v in &ic.variants {
                        rows.push((section, v, t, ic.scm.r));
                    }
                }
            }
            GridSection::MisspecifiedR => {
                for &r in &ic.r_grid {
                    for &v in &ic.variants {
                        rows.push((section, v, ic.t, r));
                    }
                }
            }
        }
    }
    rows
}

pub fn run_intervention(cfg: &ExperimentConfig) -> Result<InterventionOutcome> {
    let ic = &cfg.intervention;
    // Identical (variant, T, r) cells across sections are computed once.
    let mut cache: BTreeMap<(u8, usize, usize), ExperimentOutcome> = BTreeMap::new();
    let mut cells = Vec::new();
    for (section, variant, t, fitted_r) in grid(cfg) {
        let key = (variant as u8, t, fitted_r);
        if let Entry::Vacant(slot) = cache.entry(key) {
            let spec = ScmSpec {
                variant,
                ..ic.scm.clone()
            };
            let icfg = InterventionConfig {
                t0: ic.t0,
                k: ic.k,
                c: ic.c,
                horizon: ic.horizon,
                baseline: ic.baseline,
                fitted_r: Some(fitted_r),
                context: if cfg.constant_context {
                    ivdfm::features::ContextKind::Constant
                } else {
                    ivdfm::features::ContextKind::Timestep
                },
                model: cfg.model.clone(),
                train: cfg.train.clone(),
            };
            let out = run_intervention_experiment(&spec, t, &cfg.seeds, &icfg, cfg.oracle_model)?;
            log::info!(
                "{} {} T={t} r={fitted_r}: mse {:.4} sign {:.3}",
                section.name(),
                variant.name(),
                out.summary.mean.mse,
                out.summary.mean.sign_acc
            );
            slot.insert(out);
        }
        cells.push(GridCell {
            section,
            variant,
            t,
            fitted_r,
            outcome: cache[&key].clone(),
        });
    }
    Ok(InterventionOutcome {
        cells,
        oracle: cfg.oracle_model,
        irf_curves: ic.irf_curves,
    })
}

impl InterventionOutcome {
    pub fn report(&self) -> Report {
        let model = if self.oracle { "oracle" } else { "ivdfm" };
        let mut summary = Table::new([
            "section",
            "variant",
            "t",
            "fitted_r",
            "model",
            "n_ok",
            "failed_seeds",
            "mse_mean",
            "mse_std",
            "mae_mean",
            "mae_std",
            "sign_acc_mean",
            "sign_acc_std",
            "corr_mean",
            "corr_std",
        ]);
        let mut per_seed = Table::new([
            "section",
            "variant",
            "t",
            "fitted_r",
            "seed",
            "mse",
            "mae",
            "sign_acc",
            "corr",
            "matched_component",
            "sign",
            "alignment_corr",
            "status",
        ]);
        let mut report = Report::default();
        for cell in &self.cells {
            let s = &cell.outcome.summary;
            let failed: Vec<u64> = s.failed.iter().map(|(seed, _)| *seed).collect();
            let key = [
                cell.section.name().to_string(),
                cell.variant.name().to_string(),
                cell.t.to_string(),
                cell.fitted_r.to_string(),
            ];
            let mut row = key.to_vec();
            row.extend([model.to_string(), s.n_ok.to_string(), seed_list(&failed)]);
            row.extend(
                [
                    s.mean.mse,
                    s.std.mse,
                    s.mean.mae,
                    s.std.mae,
                    s.mean.sign_acc,
                    s.std.sign_acc,
                    s.mean.corr,
                    s.std.corr,
                ]
                .map(f),
            );
            summary.push(row);
            for r in &cell.outcome.results {
                let mut row = key.to_vec();
                row.extend([
                    r.seed.to_string(),
                    f(r.metrics.mse),
                    f(r.metrics.mae),
                    f(r.metrics.sign_acc),
                    f(r.metrics.corr),
                    r.matched_component.to_string(),
                    f(r.sign),
                    f(r.alignment_corr),
                    "ok".into(),
                ]);
                per_seed.push(row);
            }
            for (seed, err) in &s.failed {
                let mut row = key.to_vec();
                row.push(seed.to_string());
                row.extend(std::iter::repeat_n(String::new(), 7));
                row.push(format!("failed: {err}"));
                per_seed.push(row);
            }
            if self.irf_curves && cell.section == GridSection::Main {
                for r in &cell.outcome.results {
                    let n = r.irf_true.cols();
                    let header = std::iter::once("h".to_string())
                        .chain((1..=n).map(|j| format!("true_{j}")))
                        .chain((1..=n).map(|j| format!("hat_{j}")));
                    let mut t = Table::new(header);
                    for h in 0..r.irf_true.rows() {
                        let mut row = vec![h.to_string()];
                        row.extend(r.irf_true.row(h).iter().chain(r.irf_hat.row(h)).map(|&v| f(v)));
                        t.push(row);
                    }
                    report
                        .tables
                        .push((format!("irf_{}_seed{}.csv", cell.variant.name(), r.seed), t));
                }
            }
        }
        report.tables.insert(0, ("intervention_seeds.csv".into(), per_seed));
        report.tables.insert(0, ("intervention_grid.csv".into(), summary));
        report
    }
}
