//! Rolling-origin probabilistic forecasting with CRPS and median MSE.

use ivdfm::diffcore::Tensor;
use ivdfm::metrics::{crps_quantile, mse_standardized, QUANTILE_LEVELS};
use ivdfm::synthdata::gen_dynamic_dgp;
use ivdfm::vimodel::{TrainConfig, VIModel};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{context_for, f, mean_std, mix_seed, Report};
use crate::archive::ModelArchive;
use crate::config::ExperimentConfig;
use crate::data::{apply_scaler, fit_scaler, ingest_csv, matrix_table, Dataset};
use crate::error::{CliError, Result};

pub const MODELS: [&str; 2] = ["ivdfm", "naive"];

#[derive(Clone, Debug, PartialEq)]
pub struct OriginScore {
    pub seed: u64,
    pub horizon: usize,
    pub origin: usize,
    /// Indexed like [`MODELS`].
    pub crps: [f64; 2],
    pub mse: [f64; 2],
}

#[derive(Clone, Debug)]
pub struct ForecastOutcome {
    pub dataset: String,
    /// Exported synthetic series, when one was generated.
    pub exported: Option<Dataset>,
    pub scores: Vec<OriginScore>,
    /// `(seed, horizon, origin)` triples dropped for lack of test data.
    pub skipped: Vec<(u64, usize, usize)>,
    pub horizons: Vec<usize>,
    pub archives: Vec<(u64, ModelArchive)>,
}

/// Chronological split sizes `(train, val, test)`.
pub fn split_sizes(t_len: usize, train_frac: f64, val_frac: f64) -> (usize, usize, usize) {
    let train = (t_len as f64 * train_frac).floor() as usize;
    let val = (t_len as f64 * val_frac).floor() as usize;
    (train, val, t_len - train - val)
}

/// Origins `test_start + i H` for `i < max_origins`; those whose horizon
/// runs past the end are returned separately.
pub fn origins(t_len: usize, test_start: usize, horizon: usize, max_origins: usize) -> (Vec<usize>, Vec<usize>) {
    let mut keep = Vec::new();
    let mut skip = Vec::new();
    for i in 0..max_origins {
        let o = test_start + i * horizon;
        if o >= t_len {
            break;
        }
        if o + horizon <= t_len {
            keep.push(o);
        } else {
            skip.push(o);
        }
    }
    (keep, skip)
}

/// Last context value as the median, with the given model's quantile
/// offsets around its own median.
pub fn naive_quantiles(last: &[f64], model_q: &[Tensor]) -> Vec<Tensor> {
    let (h_len, n) = model_q[1].dims();
    model_q
        .iter()
        .map(|q| {
            let mut out = Tensor::zeros(h_len, n);
            for h in 0..h_len {
                for j in 0..n {
                    out.set(h, j, last[j] + q.get(h, j) - model_q[1].get(h, j));
                }
            }
            out
        })
        .collect()
}

fn check_monotone(q: &[Tensor]) -> Result<()> {
    for c in 0..q[0].len() {
        let (a, b, d) = (q[0].data()[c], q[1].data()[c], q[2].data()[c]);
        if !(a <= b && b <= d) {
            return Err(CliError::Data(format!(
                "non-monotone quantiles at cell {c}: {a}, {b}, {d}"
            )));
        }
    }
    Ok(())
}

fn load_dataset(cfg: &ExperimentConfig) -> Result<(String, Dataset, bool)> {
    let fc = &cfg.forecast;
    match &fc.dataset {
        Some(path) => {
            let d = ingest_csv(path, fc.has_header, fc.timestamp_col)?;
            let name = fc.name.clone().unwrap_or_else(|| {
                path.file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "dataset".into())
            });
            Ok((name, d, false))
        }
        None => {
            let s = &fc.synthetic;
            let data = gen_dynamic_dgp(s.t, s.n, s.r, s.p, s.seed)?;
            let names = (1..=s.n).map(|j| format!("y{j}")).collect();
            let name = fc.name.clone().unwrap_or_else(|| "synthetic_ar".into());
            Ok((
                name,
                Dataset {
                    values: data.y,
                    names,
                    labels: None,
                },
                true,
            ))
        }
    }
}

pub fn run_forecast(cfg: &ExperimentConfig) -> Result<ForecastOutcome> {
    let fc = &cfg.forecast;
    let (name, dataset, synthetic) = load_dataset(cfg)?;
    let y = &dataset.values;
    let (t_len, n) = y.dims();
    let (n_train, n_val, n_test) = split_sizes(t_len, fc.train_frac, fc.val_frac);
    if n_train <= cfg.model.p + 1 || n_test == 0 {
        return Err(CliError::Data(format!(
            "series of length {t_len} leaves {n_train} training and {n_test} test rows"
        )));
    }
    let scaler = fit_scaler(&y.slice_rows(0, n_train))?;
    let z = apply_scaler(&scaler, y)?;
    let u = context_for(cfg, 0, t_len, t_len);
    let test_start = n_train + n_val;

    let mut scores = Vec::new();
    let mut skipped = Vec::new();
    let mut archives = Vec::new();
    for &seed in &cfg.seeds {
        // The objective does not depend on the horizon, so one fit serves
        // every horizon of this seed.
        let mut model = VIModel::new(cfg.model.clone(), n, seed)?;
        model.train(
            &z.slice_rows(0, n_train),
            &u.slice_rows(0, n_train),
            &TrainConfig {
                seed,
                ..cfg.train.clone()
            },
        )?;
        archives.push((seed, ModelArchive::from_model(&model, seed, Some(seed))));
        for &h_len in &fc.horizons {
            let (keep, skip) = origins(t_len, test_start, h_len, fc.max_origins);
            for &o in &skip {
                warn!("{name}: origin {o} with horizon {h_len} runs past the data; skipped");
                skipped.push((seed, h_len, o));
            }
            let cells: Vec<Result<OriginScore>> = keep
                .par_iter()
                .map(|&o| {
                    let start = o.saturating_sub(fc.window);
                    let y_ctx = z.slice_rows(start, o - start);
                    let u_ctx = u.slice_rows(start, o - start);
                    let u_fut = u.slice_rows(o, h_len);
                    let truth = z.slice_rows(o, h_len);
                    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, h_len as u64, o as u64]));
                    let q = model.predict_quantiles(&y_ctx, &u_ctx, &u_fut, fc.n_paths, &QUANTILE_LEVELS, &mut rng)?;
                    check_monotone(&q)?;
                    let naive = naive_quantiles(y_ctx.row(y_ctx.rows() - 1), &q);
                    let q3 = [q[0].clone(), q[1].clone(), q[2].clone()];
                    let n3 = [naive[0].clone(), naive[1].clone(), naive[2].clone()];
                    Ok(OriginScore {
                        seed,
                        horizon: h_len,
                        origin: o,
                        crps: [crps_quantile(&q3, &truth)?, crps_quantile(&n3, &truth)?],
                        mse: [mse_standardized(&q[1], &truth)?, mse_standardized(&naive[1], &truth)?],
                    })
                })
                .collect();
            for c in cells {
                scores.push(c?);
            }
            info!("{name}: seed {seed} horizon {h_len}: {} origins", keep.len());
        }
    }
    Ok(ForecastOutcome {
        dataset: name,
        exported: synthetic.then_some(dataset),
        scores,
        skipped,
        horizons: fc.horizons.clone(),
        archives,
    })
}

impl ForecastOutcome {
    /// Mean CRPS and MSE of model `m` over all origins of `horizon` (all
    /// horizons when `None`).
    pub fn mean_scores(&self, m: usize, horizon: Option<usize>) -> (f64, f64) {
        let sel: Vec<&OriginScore> = self
            .scores
            .iter()
            .filter(|s| horizon.is_none_or(|h| s.horizon == h))
            .collect();
        let crps: Vec<f64> = sel.iter().map(|s| s.crps[m]).collect();
        let mse: Vec<f64> = sel.iter().map(|s| s.mse[m]).collect();
        (mean_std(&crps).0, mean_std(&mse).0)
    }

    pub fn report(&self) -> Report {
        let mut per_origin = crate::data::Table::new(["dataset", "seed", "horizon", "origin", "model", "crps", "mse"]);
        for s in &self.scores {
            for (m, name) in MODELS.iter().enumerate() {
                per_origin.push(vec![
                    self.dataset.clone(),
                    s.seed.to_string(),
                    s.horizon.to_string(),
                    s.origin.to_string(),
                    name.to_string(),
                    f(s.crps[m]),
                    f(s.mse[m]),
                ]);
            }
        }
        let mut by_horizon =
            crate::data::Table::new(["dataset", "horizon", "model", "crps", "mse", "n_origins", "skipped"]);
        for &h in &self.horizons {
            let count = self.scores.iter().filter(|s| s.horizon == h).count();
            let skipped = self.skipped.iter().filter(|s| s.1 == h).count();
            for (m, name) in MODELS.iter().enumerate() {
                let (crps, mse) = self.mean_scores(m, Some(h));
                by_horizon.push(vec![
                    self.dataset.clone(),
                    h.to_string(),
                    name.to_string(),
                    f(crps),
                    f(mse),
                    count.to_string(),
                    skipped.to_string(),
                ]);
            }
        }
        // One row per dataset, averaged over horizons.
        let mut table = crate::data::Table::new(["dataset", "model", "crps", "mse"]);
        for (m, name) in MODELS.iter().enumerate() {
            let per_h: Vec<(f64, f64)> = self.horizons.iter().map(|&h| self.mean_scores(m, Some(h))).collect();
            let crps: Vec<f64> = per_h.iter().map(|p| p.0).collect();
            let mse: Vec<f64> = per_h.iter().map(|p| p.1).collect();
            table.push(vec![
                self.dataset.clone(),
                name.to_string(),
                f(mean_std(&crps).0),
                f(mean_std(&mse).0),
            ]);
        }
        let mut report = Report::default();
        if let Some(d) = &self.exported {
            report
                .tables
                .push(("dataset.csv".into(), matrix_table(&d.names, &d.values)));
        }
        report.tables.push(("forecast_origins.csv".into(), per_origin));
        report.tables.push(("forecast_horizons.csv".into(), by_horizon));
        report.tables.push(("forecast_table.csv".into(), table));
        for (seed, archive) in &self.archives {
            report.files.push((format!("model_seed{seed}.json"), archive.to_json()));
        }
        for (seed, h, o) in &self.skipped {
            report
                .log
                .push(format!("seed {seed}: origin {o} skipped for horizon {h}"));
        }
        report
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentKind;
    use ivdfm::metrics::pinball;

    fn tiny() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::Forecast);
        cfg.forecast.synthetic.t = 120;
        cfg.forecast.synthetic.n = 4;
        cfg.forecast.synthetic.r = 2;
        cfg.forecast.horizons = vec![5, 30];
        cfg.forecast.window = 24;
        cfg.forecast.n_paths = 20;
        cfg.model.r = 2;
        cfg.model.encoder_hidden = 8;
        cfg.model.decoder_hidden = 8;
        cfg.train.epochs = 2;
        cfg.train.window = 24;
        cfg
    }

    #[test]
    fn split_and_origins() {
        assert_eq!(split_sizes(100, 0.6, 0.2), (60, 20, 20));
        let (keep, skip) = origins(100, 80, 8, 10);
        assert_eq!(keep, vec![80, 88]);
        assert_eq!(skip, vec![96]);
        assert_eq!(origins(100, 80, 2, 3).0, vec![80, 82, 84]);
    }

    #[test]
    fn naive_keeps_spread() {
        let q = vec![
            Tensor::matrix(1, 2, vec![-1.0, 0.0]),
            Tensor::matrix(1, 2, vec![0.0, 1.0]),
            Tensor::matrix(1, 2, vec![2.0, 1.5]),
        ];
        let nq = naive_quantiles(&[10.0, 20.0], &q);
        assert_eq!(nq[0].data(), &[9.0, 19.0]);
        assert_eq!(nq[1].data(), &[10.0, 20.0]);
        assert_eq!(nq[2].data(), &[12.0, 20.5]);
    }

    #[test]
    fn collapsed_quantiles_match_hand_pinball() {
        // Deterministic forecast: every quantile equals the median, so CRPS
        // is twice the mean over levels of pinball at that single value.
        let med = Tensor::matrix(1, 1, vec![0.5]);
        let y = Tensor::matrix(1, 1, vec![2.0]);
        let q = [med.clone(), med.clone(), med];
        let hand = 2.0 * (pinball(0.1, 0.5, 2.0) + pinball(0.5, 0.5, 2.0) + pinball(0.9, 0.5, 2.0)) / 3.0;
        assert!((crps_quantile(&q, &y).unwrap() - hand).abs() < 1e-12);
        assert!((hand - 2.0 * 1.5 * (0.1 + 0.5 + 0.9) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn synthetic_pipeline_runs() {
        let out = run_forecast(&tiny()).unwrap();
        // test split is rows 96..120: horizon 5 fits 4 origins, horizon 30 none
        assert_eq!(out.scores.iter().filter(|s| s.horizon == 5).count(), 4);
        assert_eq!(out.skipped, vec![(0, 5, 116), (0, 30, 96)]);
        assert!(out.scores.iter().all(|s| s.crps.iter().all(|c| *c >= 0.0)));
        let rep = out.report();
        assert_eq!(rep.table("forecast_table.csv").unwrap().rows.len(), 2);
        assert!(rep.table("dataset.csv").is_some());
        assert_eq!(rep.files.len(), 1);
    }

    #[test]
    fn reads_dataset_from_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.csv");
        let data = gen_dynamic_dgp(120, 4, 2, 1, 9).unwrap();
        let names: Vec<String> = (1..=4).map(|j| format!("c{j}")).collect();
        matrix_table(&names, &data.y).write(&path, "h").unwrap();
        let mut cfg = tiny();
        cfg.forecast.dataset = Some(path);
        let out = run_forecast(&cfg).unwrap();
        assert_eq!(out.dataset, "series");
        assert!(out.exported.is_none());
        assert!(!out.scores.is_empty());
    }

    #[test]
    fn too_short_series_is_an_error() {
        let mut cfg = tiny();
        cfg.forecast.synthetic.t = 4;
        assert!(run_forecast(&cfg).is_err());
    }
}
