//! Factor recovery on the synthetic suites: iVDFM against the PCA baseline
//! on identical data.

use ivdfm::baselines::{baseline_factors, fit_pca_dfm};
use ivdfm::diffcore::Tensor;
use ivdfm::linalg::standardize_columns;
use ivdfm::metrics::{mcc, smoothness, subspace_distance, trace_r2, MatchResult};
use ivdfm::synthdata::{gen_dynamic_dgp, gen_static_dgp, DgpKind};
use ivdfm::vimodel::{TrainConfig, VIModel};
use log::{info, warn};
use rayon::prelude::*;

use super::{context_for, f, mean_std, seed_list, Report};
use crate::config::ExperimentConfig;
use crate::data::Table;
use crate::error::Result;

pub const MODELS: [&str; 2] = ["ivdfm", "pca_dfm"];
pub const METRICS: [&str; 4] = ["mcc", "subspace", "smoothness", "trace_r2"];

#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub mcc: f64,
    pub subspace: f64,
    pub smoothness: f64,
    pub trace_r2: f64,
}

impl Scores {
    fn get(&self, metric: &str) -> f64 {
        match metric {
            "mcc" => self.mcc,
            "subspace" => self.subspace,
            "smoothness" => self.smoothness,
            _ => self.trace_r2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SeedRecovery {
    pub seed: u64,
    /// Indexed like [`MODELS`].
    pub scores: [Scores; 2],
    pub lambda_rank: usize,
    pub f_true: Tensor,
    /// Matched, rescaled recovered factors per model.
    pub matched: [Tensor; 2],
}

#[derive(Clone, Debug)]
pub struct RecoveryOutcome {
    pub seeds: Vec<SeedRecovery>,
    pub failed: Vec<(u64, String)>,
    pub r: usize,
    pub trajectories: bool,
    pub constant_context: bool,
}

fn score(f_true: &Tensor, f_hat: &Tensor) -> Result<(Scores, MatchResult)> {
    let m = mcc(f_true, f_hat)?;
    Ok((
        Scores {
            mcc: m.mcc,
            subspace: subspace_distance(f_true, f_hat)?,
            smoothness: smoothness(f_hat)?,
            trace_r2: trace_r2(f_true, f_hat)?,
        },
        m,
    ))
}

/// Recovered columns reordered and sign-flipped to match the true factors,
/// then affinely mapped to each true factor's mean and scale.
pub fn matched_trajectories(f_true: &Tensor, f_hat: &Tensor, m: &MatchResult) -> Tensor {
    let (t_len, r) = f_true.dims();
    let mut out = Tensor::zeros(t_len, r);
    for i in 0..r {
        let (mt, st) = mean_std(&f_true.column(i));
        let col = f_hat.column(m.permutation[i]);
        let (mh, sh) = mean_std(&col);
        let sign = if m.correlations[i] < 0.0 { -1.0 } else { 1.0 };
        for (t, v) in col.iter().enumerate() {
            let z = if sh > 1e-12 { (v - mh) / sh } else { 0.0 };
            out.set(t, i, mt + sign * z * st);
        }
    }
    out
}

fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRecovery> {
    let rc = &cfg.recovery;
    let r = cfg.model.r;
    let data = match rc.dgp {
        DgpKind::Static => gen_static_dgp(rc.t, rc.n, r, seed)?,
        DgpKind::Dynamic => gen_dynamic_dgp(rc.t, rc.n, r, rc.dgp_p, seed)?,
    };
    let y = Tensor::from_dmatrix(&standardize_columns(&data.y.to_dmatrix()));
    let u = context_for(cfg, 0, rc.t, rc.t);

    let mut model = VIModel::new(cfg.model.clone(), rc.n, seed)?;
    model.train(
        &y,
        &u,
        &TrainConfig {
            seed,
            ..cfg.train.clone()
        },
    )?;
    let f_ivdfm = model.infer(&y, &u)?.factors;
    let probes: Vec<Vec<f64>> = (0..=r).map(|i| u.row(i * (rc.t - 1) / r.max(1)).to_vec()).collect();
    let lambda_rank = model.lambda_rank(&probes)?;

    let pca = fit_pca_dfm(&y, r, cfg.model.p)?;
    let f_pca = baseline_factors(&pca, &y)?;

    let (s_iv, m_iv) = score(&data.f_true, &f_ivdfm)?;
    let (s_pc, m_pc) = score(&data.f_true, &f_pca)?;
    Ok(SeedRecovery {
        seed,
        matched: [
            matched_trajectories(&data.f_true, &f_ivdfm, &m_iv),
            matched_trajectories(&data.f_true, &f_pca, &m_pc),
        ],
        scores: [s_iv, s_pc],
        lambda_rank,
        f_true: data.f_true,
    })
}

pub fn run_recovery(cfg: &ExperimentConfig) -> Result<RecoveryOutcome> {
    let runs: Vec<(u64, Result<SeedRecovery>)> = cfg.seeds.par_iter().map(|&s| (s, run_seed(cfg, s))).collect();
    let mut seeds = Vec::new();
    let mut failed = Vec::new();
    for (s, run) in runs {
        match run {
            Ok(res) => {
                info!("recovery seed {s}: lambda_rank {}", res.lambda_rank);
                seeds.push(res);
            }
            Err(e) => {
                warn!("recovery seed {s} failed: {e}");
                failed.push((s, e.to_string()));
            }
        }
    }
    Ok(RecoveryOutcome {
        seeds,
        failed,
        r: cfg.model.r,
        trajectories: cfg.recovery.trajectories,
        constant_context: cfg.constant_context,
    })
}

impl RecoveryOutcome {
    /// Mean and standard deviation of `metric` for model index `m`.
    pub fn aggregate(&self, m: usize, metric: &str) -> (f64, f64) {
        let vals: Vec<f64> = self.seeds.iter().map(|s| s.scores[m].get(metric)).collect();
        mean_std(&vals)
    }

    pub fn report(&self) -> Report {
        let mut per_seed = Table::new([
            "seed",
            "model",
            "mcc",
            "subspace",
            "smoothness",
            "trace_r2",
            "lambda_rank",
            "status",
        ]);
        for s in &self.seeds {
            for (m, name) in MODELS.iter().enumerate() {
                let sc = &s.scores[m];
                let rank = if m == 0 {
                    s.lambda_rank.to_string()
                } else {
                    String::new()
                };
                per_seed.push(vec![
                    s.seed.to_string(),
                    name.to_string(),
                    f(sc.mcc),
                    f(sc.subspace),
                    f(sc.smoothness),
                    f(sc.trace_r2),
                    rank,
                    "ok".into(),
                ]);
            }
        }
        for (seed, err) in &self.failed {
            per_seed.push(vec![
                seed.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                format!("failed: {err}"),
            ]);
        }
        let failed: Vec<u64> = self.failed.iter().map(|(s, _)| *s).collect();
        let mut summary = Table::new(["model", "metric", "mean", "std", "n_ok", "failed_seeds"]);
        for (m, name) in MODELS.iter().enumerate() {
            for metric in METRICS {
                let (mean, std) = self.aggregate(m, metric);
                summary.push(vec![
                    name.to_string(),
                    metric.to_string(),
                    f(mean),
                    f(std),
                    self.seeds.len().to_string(),
                    seed_list(&failed),
                ]);
            }
        }
        let mut report = Report {
            tables: vec![
                ("recovery_seeds.csv".into(), per_seed),
                ("recovery_summary.csv".into(), summary),
            ],
            ..Report::default()
        };
        if self.trajectories {
            for s in &self.seeds {
                for (m, name) in MODELS.iter().enumerate() {
                    let header = (1..=self.r)
                        .map(|i| format!("true_{i}"))
                        .chain((1..=self.r).map(|i| format!("matched_{i}")));
                    let mut t = Table::new(header);
                    for row in 0..s.f_true.rows() {
                        t.push(
                            s.f_true
                                .row(row)
                                .iter()
                                .chain(s.matched[m].row(row))
                                .map(|&v| f(v))
                                .collect(),
                        );
                    }
                    report
                        .tables
                        .push((format!("trajectories_{name}_seed{}.csv", s.seed), t));
                }
            }
        }
        let context = if self.constant_context { "constant" } else { "timestep" };
        report.log.push(format!("context: {context}"));
        for s in &self.seeds {
            report.log.push(format!(
                "seed {}: lambda_rank {} (r = {})",
                s.seed, s.lambda_rank, self.r
            ));
        }
        for (seed, err) in &self.failed {
            report.log.push(format!("seed {seed}: failed: {err}"));
        }
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentKind;

    fn tiny(kind_static: bool) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::Recovery);
        cfg.seeds = vec![0, 1];
        cfg.model.r = 2;
        cfg.model.encoder_hidden = 8;
        cfg.model.decoder_hidden = 8;
        cfg.model.prior.prior_hidden = 8;
        cfg.model.prior.regime_hidden = 8;
        cfg.recovery.t = 40;
        cfg.recovery.n = 4;
        if kind_static {
            cfg.recovery.dgp = DgpKind::Static;
        }
        cfg.train.epochs = 3;
        cfg.train.window = 20;
        cfg
    }

    #[test]
    fn table_shapes() {
        let out = run_recovery(&tiny(false)).unwrap();
        let rep = out.report();
        assert_eq!(rep.table("recovery_summary.csv").unwrap().rows.len(), 8);
        assert_eq!(rep.table("recovery_seeds.csv").unwrap().rows.len(), 4);
        let traj = rep.table("trajectories_ivdfm_seed0.csv").unwrap();
        assert_eq!(traj.header.len(), 4);
        assert_eq!(traj.rows.len(), 40);
        assert!(rep.table("trajectories_pca_dfm_seed1.csv").is_some());
    }

    #[test]
    fn static_suite_runs() {
        let out = run_recovery(&tiny(true)).unwrap();
        assert!(out.failed.is_empty());
        assert!(out.seeds.iter().all(|s| (0.0..=1.0).contains(&s.scores[0].mcc)));
    }

    #[test]
    fn reruns_are_identical() {
        let cfg = tiny(false);
        let a = run_recovery(&cfg).unwrap().report();
        let b = run_recovery(&cfg).unwrap().report();
        for ((na, ta), (nb, tb)) in a.tables.iter().zip(&b.tables) {
            assert_eq!(na, nb);
            assert_eq!(ta.to_csv_string("h"), tb.to_csv_string("h"));
        }
    }

    #[test]
    fn constant_context_has_rank_zero() {
        let mut cfg = tiny(false);
        cfg.constant_context = true;
        let out = run_recovery(&cfg).unwrap();
        assert!(out.seeds.iter().all(|s| s.lambda_rank == 0));
        assert!(out.report().log[0].contains("constant"));
    }

    #[test]
    fn matched_trajectories_undo_permutation_sign_and_scale() {
        let f_true = Tensor::matrix(4, 2, vec![1.0, 0.0, 2.0, 1.0, 3.0, 0.0, 4.0, 2.0]);
        let mut hat = Tensor::zeros(4, 2);
        for t in 0..4 {
            hat.set(t, 0, -3.0 * f_true.get(t, 1) + 1.0);
            hat.set(t, 1, 0.5 * f_true.get(t, 0));
        }
        let m = mcc(&f_true, &hat).unwrap();
        let out = matched_trajectories(&f_true, &hat, &m);
        assert!(out.max_abs_diff(&f_true) < 1e-12);
    }
}
