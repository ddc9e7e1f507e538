//! Shock interventions on fitted models and comparison with the analytic
//! impulse responses of the structural systems.

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{invalid, Error, Result};
use crate::features::{context_matrix, ContextKind};
use crate::linalg::{column_stats, Mat};
use crate::metrics::{cross_correlations, irf_metrics, max_weight_assignment, IrfMetrics};
use crate::synthdata::{gen_scm, simulate_scm, true_irf, ScmSpec};
use crate::vimodel::{ModelConfig, TrainConfig, VIModel};

/// Anything that maps observations to innovations and innovations back to
/// observations through latent dynamics.
pub trait LatentSystem {
    fn r(&self) -> usize;
    fn n(&self) -> usize;
    /// Posterior-mean innovations, `T x r`.
    fn infer_innovations(&self, y: &Tensor, u: &Tensor) -> Result<Tensor>;
    /// Factors `T x r` driven by `eta` over the same window as `u`.
    fn propagate(&self, eta: &Tensor, u: &Tensor) -> Result<Tensor>;
    fn decode(&self, f: &Tensor) -> Result<Tensor>;
    /// Mean of the innovation law at row `t` of `u`.
    fn prior_mean(&self, u: &Tensor, t: usize) -> Result<Vec<f64>>;
}

impl LatentSystem for VIModel {
    fn r(&self) -> usize {
        self.config.r
    }

    fn n(&self) -> usize {
        self.n
    }

    fn infer_innovations(&self, y: &Tensor, u: &Tensor) -> Result<Tensor> {
        Ok(self.infer(y, u)?.mu)
    }

    fn propagate(&self, eta: &Tensor, u: &Tensor) -> Result<Tensor> {
        if u.rows() == 0 {
            return invalid("empty context");
        }
        let (pi, _) = self.bank.regime_embedding(&self.store, u.row(0))?;
        self.dynamics_at(None)?.rollout(eta, &pi)
    }

    fn decode(&self, f: &Tensor) -> Result<Tensor> {
        VIModel::decode(self, f)
    }

    fn prior_mean(&self, u: &Tensor, t: usize) -> Result<Vec<f64>> {
        let ut = u.row(t);
        let (pi, e) = self.bank.regime_embedding(&self.store, ut)?;
        if !self.prior.mixture || self.bank.regimes == 1 {
            return Ok(self.prior.location_scale(&self.store, ut, &e)?.0);
        }
        let emb = self.store.get(self.bank.embeddings);
        let mut mean = vec![0.0; self.config.r];
        for (k, w) in pi.iter().enumerate() {
            let (m, _) = self.prior.location_scale(&self.store, ut, emb.row(k))?;
            for (acc, v) in mean.iter_mut().zip(m) {
                *acc += w * v;
            }
        }
        Ok(mean)
    }
}

/// The structural system itself, with innovations recovered through the
/// pseudo-inverse of the loadings.
#[derive(Clone, Debug)]
pub struct OracleScmModel {
    pub spec: ScmSpec,
    c: Mat,
    c_pinv: Mat,
}

impl OracleScmModel {
    pub fn new(spec: &ScmSpec) -> Result<Self> {
        spec.validate()?;
        if spec.nonlinear {
            return invalid("the oracle model needs a linear observation map");
        }
        let c = spec.loadings();
        let c_pinv = c
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| Error::Numerical(format!("loading pseudo-inverse: {e}")))?;
        Ok(Self {
            spec: spec.clone(),
            c,
            c_pinv,
        })
    }
}

impl LatentSystem for OracleScmModel {
    fn r(&self) -> usize {
        self.spec.r
    }

    fn n(&self) -> usize {
        self.spec.n
    }

    fn infer_innovations(&self, y: &Tensor, _u: &Tensor) -> Result<Tensor> {
        let f = y.to_dmatrix() * self.c_pinv.transpose();
        let mut eta = Tensor::zeros(y.rows(), self.spec.r);
        let mut prev = Mat::zeros(self.spec.r, 1);
        for t in 0..y.rows() {
            let ft = Mat::from_iterator(self.spec.r, 1, f.row(t).iter().copied());
            let e = &ft - self.spec.transition(t) * &prev;
            eta.row_mut(t).copy_from_slice(e.as_slice());
            prev = ft;
        }
        Ok(eta)
    }

    fn propagate(&self, eta: &Tensor, _u: &Tensor) -> Result<Tensor> {
        Ok(simulate_scm(&self.spec, eta)?.f)
    }

    fn decode(&self, f: &Tensor) -> Result<Tensor> {
        Ok(Tensor::from_dmatrix(&(f.to_dmatrix() * self.c.transpose())))
    }

    fn prior_mean(&self, _u: &Tensor, _t: usize) -> Result<Vec<f64>> {
        Ok(vec![0.0; self.spec.r])
    }
}

/// Value of the shocked component on the no-intervention path.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineShock {
    /// Mean of the innovation law: the expected path without intervention.
    #[default]
    PriorMean,
    /// The inferred innovation.
    Inferred,
}

/// `(H+1) x N` difference between the path with innovation `k` at `t0` set
/// to `c` and the baseline path.
#[allow(clippy::too_many_arguments)]
pub fn model_irf(
    model: &impl LatentSystem,
    y: &Tensor,
    u: &Tensor,
    t0: usize,
    k: usize,
    c: f64,
    horizon: usize,
    baseline: BaselineShock,
) -> Result<Tensor> {
    if k >= model.r() {
        return invalid(format!("component {k} out of range for r = {}", model.r()));
    }
    if t0 + horizon >= y.rows() {
        return invalid(format!("t0 + H = {} must be below T = {}", t0 + horizon, y.rows()));
    }
    let eta = model.infer_innovations(y, u)?;
    let mut base = eta.clone();
    if baseline == BaselineShock::PriorMean {
        base.set(t0, k, model.prior_mean(u, t0)?[k]);
    }
    let mut doit = base.clone();
    doit.set(t0, k, c);
    let y0 = model.decode(&model.propagate(&base, u)?)?;
    let y1 = model.decode(&model.propagate(&doit, u)?)?;
    let mut out = Tensor::zeros(horizon + 1, model.n());
    for h in 0..=horizon {
        for j in 0..model.n() {
            out.set(h, j, y1.get(t0 + h, j) - y0.get(t0 + h, j));
        }
    }
    Ok(out)
}

/// Paired do/no-do simulation difference with the shock at `(t0, k)` set
/// to `c` and to 0; valid for nonlinear observation maps too.
pub fn simulated_irf(spec: &ScmSpec, shocks: &Tensor, k: usize, c: f64, horizon: usize, t0: usize) -> Result<Tensor> {
    if k >= spec.r || t0 + horizon >= shocks.rows() {
        return invalid("intervention outside the simulated window");
    }
    let mut base = shocks.clone();
    base.set(t0, k, 0.0);
    let mut doit = base.clone();
    doit.set(t0, k, c);
    let (y0, y1) = (simulate_scm(spec, &base)?.y, simulate_scm(spec, &doit)?.y);
    let mut out = Tensor::zeros(horizon + 1, spec.n);
    for h in 0..=horizon {
        for j in 0..spec.n {
            out.set(h, j, y1.get(t0 + h, j) - y0.get(t0 + h, j));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    /// Learned component matched to each true component; `None` when the
    /// model has fewer components than the system.
    pub learned: Vec<Option<usize>>,
    /// Sign of the matched correlation.
    pub signs: Vec<f64>,
    pub correlations: Vec<f64>,
}

impl Alignment {
    /// `(learned index, sign, correlation)` for true component `k`.
    pub fn component(&self, k: usize) -> Result<(usize, f64, f64)> {
        match self.learned.get(k) {
            Some(Some(j)) => Ok((*j, self.signs[k], self.correlations[k])),
            Some(None) => Err(Error::Numerical(format!(
                "true component {k} has no learned counterpart"
            ))),
            None => invalid(format!("component {k} out of range")),
        }
    }
}

/// Match inferred innovations to the true shocks by maximal total absolute
/// correlation. With fewer learned than true components, true components
/// left unmatched fall back to their most correlated learned component.
pub fn align_shock_component(eta_hat: &Tensor, shocks: &Tensor) -> Result<Alignment> {
    let corr = cross_correlations(shocks, eta_hat)?;
    let (rt, rl) = (shocks.cols(), eta_hat.cols());
    let size = rt.max(rl);
    let mut w = vec![vec![0.0; size]; size];
    for i in 0..rt {
        for j in 0..rl {
            w[i][j] = corr[i][j].abs();
        }
    }
    let assign = max_weight_assignment(&w);
    let mut learned = Vec::with_capacity(rt);
    for (i, row) in corr.iter().enumerate() {
        let j = if assign[i] < rl {
            Some(assign[i])
        } else {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(j, _)| j)
        };
        learned.push(j);
    }
    let correlations: Vec<f64> = learned
        .iter()
        .enumerate()
        .map(|(i, j)| j.map_or(0.0, |j| corr[i][j]))
        .collect();
    let signs = correlations.iter().map(|c| if *c < 0.0 { -1.0 } else { 1.0 }).collect();
    Ok(Alignment {
        learned,
        signs,
        correlations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterventionConfig {
    /// Intervention time; `T / 2` when unset.
    pub t0: Option<usize>,
    pub k: usize,
    pub c: f64,
    pub horizon: usize,
    pub baseline: BaselineShock,
    /// Number of fitted components; the system's `r` when unset.
    pub fitted_r: Option<usize>,
    pub context: ContextKind,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for InterventionConfig {
    fn default() -> Self {
        Self {
            t0: None,
            k: 0,
            c: 2.0,
            horizon: 10,
            baseline: BaselineShock::PriorMean,
            fitted_r: None,
            context: ContextKind::Timestep,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IrfResult {
    pub seed: u64,
    pub irf_true: Tensor,
    pub irf_hat: Tensor,
    pub metrics: IrfMetrics,
    pub matched_component: usize,
    pub sign: f64,
    pub alignment_corr: f64,
    pub t0: usize,
    pub k: usize,
    pub c: f64,
    pub horizon: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct IrfSummary {
    pub n_ok: usize,
    pub failed: Vec<(u64, String)>,
    pub mean: IrfMetrics,
    /// Population standard deviation over successful seeds.
    pub std: IrfMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentOutcome {
    pub results: Vec<IrfResult>,
    pub summary: IrfSummary,
}

fn summarize(results: &[IrfResult], failed: Vec<(u64, String)>) -> IrfSummary {
    let n = results.len();
    if n == 0 {
        return IrfSummary {
            failed,
            ..IrfSummary::default()
        };
    }
    let get = |f: fn(&IrfMetrics) -> f64| -> (f64, f64) {
        let vals: Vec<f64> = results.iter().map(|r| f(&r.metrics)).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        (mean, var.sqrt())
    };
    let (mse, mae, sign, corr) = (get(|m| m.mse), get(|m| m.mae), get(|m| m.sign_acc), get(|m| m.corr));
    IrfSummary {
        n_ok: n,
        failed,
        mean: IrfMetrics {
            mse: mse.0,
            mae: mae.0,
            sign_acc: sign.0,
            corr: corr.0,
        },
        std: IrfMetrics {
            mse: mse.1,
            mae: mae.1,
            sign_acc: sign.1,
            corr: corr.1,
        },
    }
}

/// One seed: simulate, fit (or use the oracle), align, intervene, score.
pub fn run_intervention_seed(
    spec: &ScmSpec,
    t_len: usize,
    seed: u64,
    cfg: &InterventionConfig,
    oracle: bool,
) -> Result<IrfResult> {
    if cfg.k >= spec.r {
        return invalid(format!("shocked component {} out of range for r = {}", cfg.k, spec.r));
    }
    let t0 = cfg.t0.unwrap_or(t_len / 2);
    let data = gen_scm(spec, t_len, seed)?;
    let irf_true = if spec.nonlinear {
        simulated_irf(spec, &data.shocks, cfg.k, cfg.c, cfg.horizon, t0)?
    } else {
        true_irf(spec, cfg.k, cfg.c, cfg.horizon, t0)?
    };
    let u = context_matrix(cfg.context, 0, t_len, t_len as f64);

    let (irf_hat, alignment) = if oracle {
        let model = OracleScmModel::new(spec)?;
        let eta = model.infer_innovations(&data.y, &u)?;
        let al = align_shock_component(&eta, &data.shocks)?;
        let (j, sign, _) = al.component(cfg.k)?;
        let irf = model_irf(&model, &data.y, &u, t0, j, sign * cfg.c, cfg.horizon, cfg.baseline)?;
        (irf, al)
    } else {
        let (means, stds) = column_stats(&data.y.to_dmatrix());
        let stds: Vec<f64> = stds.iter().map(|&s| if s > 1e-12 { s } else { 1.0 }).collect();
        let mut ys = data.y.clone();
        for t in 0..t_len {
            for (j, v) in ys.row_mut(t).iter_mut().enumerate() {
                *v = (*v - means[j]) / stds[j];
            }
        }
        let mcfg = ModelConfig {
            r: cfg.fitted_r.unwrap_or(spec.r),
            ..cfg.model.clone()
        };
        let mut model = VIModel::new(mcfg, spec.n, seed)?;
        model.train(
            &ys,
            &u,
            &TrainConfig {
                seed,
                ..cfg.train.clone()
            },
        )?;
        let eta = model.infer_innovations(&ys, &u)?;
        let al = align_shock_component(&eta, &data.shocks)?;
        let (j, sign, _) = al.component(cfg.k)?;
        let mut irf = model_irf(&model, &ys, &u, t0, j, sign * cfg.c, cfg.horizon, cfg.baseline)?;
        for h in 0..=cfg.horizon {
            for (j, v) in irf.row_mut(h).iter_mut().enumerate() {
                *v *= stds[j];
            }
        }
        (irf, al)
    };
    let (matched, sign, corr) = alignment.component(cfg.k)?;
    Ok(IrfResult {
        seed,
        metrics: irf_metrics(&irf_true, &irf_hat)?,
        irf_true,
        irf_hat,
        matched_component: matched,
        sign,
        alignment_corr: corr,
        t0,
        k: cfg.k,
        c: cfg.c,
        horizon: cfg.horizon,
    })
}

/// Seeds run in parallel; failed seeds are reported and excluded.
pub fn run_intervention_experiment(
    spec: &ScmSpec,
    t_len: usize,
    seeds: &[u64],
    cfg: &InterventionConfig,
    oracle: bool,
) -> Result<ExperimentOutcome> {
    if seeds.is_empty() {
        return invalid("need at least one seed");
    }
    let runs: Vec<(u64, Result<IrfResult>)> = seeds
        .par_iter()
        .map(|&s| (s, run_intervention_seed(spec, t_len, s, cfg, oracle)))
        .collect();
    let mut results = Vec::new();
    let mut failed = Vec::new();
    for (seed, run) in runs {
        match run {
            Ok(r) => results.push(r),
            Err(e) => {
                warn!("intervention seed {seed} failed: {e}");
                failed.push((seed, e.to_string()));
            }
        }
    }
    let summary = summarize(&results, failed);
    Ok(ExperimentOutcome { results, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::ScmVariant;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn brute_force(corr: &[Vec<f64>]) -> Vec<usize> {
        let n = corr.len();
        let mut best = (f64::NEG_INFINITY, Vec::new());
        let mut perm: Vec<usize> = (0..n).collect();
        fn heap(k: usize, perm: &mut Vec<usize>, corr: &[Vec<f64>], best: &mut (f64, Vec<usize>)) {
            if k == 1 {
                let s: f64 = perm.iter().enumerate().map(|(i, &j)| corr[i][j].abs()).sum();
                if s > best.0 {
                    *best = (s, perm.clone());
                }
                return;
            }
            for i in 0..k {
                heap(k - 1, perm, corr, best);
                let j = if k.is_multiple_of(2) { i } else { 0 };
                perm.swap(j, k - 1);
            }
        }
        heap(n, &mut perm, corr, &mut best);
        best.1
    }

    #[test]
    fn oracle_irf_is_exact_for_every_variant() {
        for variant in ScmVariant::ALL {
            let spec = ScmSpec::new(variant);
            let data = gen_scm(&spec, 200, 3).unwrap();
            let model = OracleScmModel::new(&spec).unwrap();
            let u = Tensor::zeros(200, 1);
            let eta = model.infer_innovations(&data.y, &u).unwrap();
            assert!(eta.max_abs_diff(&data.shocks) < 1e-10);
            for (k, t0) in [(0, 100), (2, 57)] {
                let irf = model_irf(&model, &data.y, &u, t0, k, 2.0, 10, BaselineShock::PriorMean).unwrap();
                let truth = true_irf(&spec, k, 2.0, 10, t0).unwrap();
                assert!(irf.max_abs_diff(&truth) < 1e-10, "{variant:?}");
            }
        }
    }

    #[test]
    fn null_intervention_and_linearity() {
        let spec = ScmSpec::default();
        let mut data = gen_scm(&spec, 120, 4).unwrap();
        data.shocks.set(60, 1, 0.0);
        let data = simulate_scm(&spec, &data.shocks).unwrap();
        let model = OracleScmModel::new(&spec).unwrap();
        let u = Tensor::zeros(120, 1);
        let z = model_irf(&model, &data.y, &u, 60, 1, 0.0, 10, BaselineShock::Inferred).unwrap();
        assert!(z.data().iter().all(|v| v.abs() < 1e-12));

        let base = gen_scm(&spec, 120, 5).unwrap();
        let eta = model.infer_innovations(&base.y, &u).unwrap();
        let b = eta.get(60, 0);
        let one = model_irf(&model, &base.y, &u, 60, 0, b + 1.5, 10, BaselineShock::Inferred).unwrap();
        let two = model_irf(&model, &base.y, &u, 60, 0, b + 3.0, 10, BaselineShock::Inferred).unwrap();
        assert!(two.max_abs_diff(&one.map(|v| 2.0 * v)) < 1e-10);
    }

    #[test]
    fn swapping_do_value_and_baseline_flips_sign() {
        let spec = ScmSpec::new(ScmVariant::Chain);
        let data = gen_scm(&spec, 100, 6).unwrap();
        let model = OracleScmModel::new(&spec).unwrap();
        let u = Tensor::zeros(100, 1);
        let eta = model.infer_innovations(&data.y, &u).unwrap();
        let (t0, k, c) = (40, 1, 1.7);
        let fwd = model_irf(&model, &data.y, &u, t0, k, c, 8, BaselineShock::Inferred).unwrap();
        let mut swapped = eta.clone();
        swapped.set(t0, k, c);
        let sim = simulate_scm(&spec, &swapped).unwrap();
        let back = model_irf(&model, &sim.y, &u, t0, k, eta.get(t0, k), 8, BaselineShock::Inferred).unwrap();
        assert!(fwd.max_abs_diff(&back.map(|v| -v)) < 1e-10);
    }

    #[test]
    fn alignment_recovers_equivalence_class() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let eps = Tensor::matrix(300, 3, (0..900).map(|_| StandardNormal.sample(&mut rng)).collect());
        let al = align_shock_component(&eps, &eps).unwrap();
        assert_eq!(al.learned, vec![Some(0), Some(1), Some(2)]);
        assert_eq!(al.signs, vec![1.0; 3]);

        let mut moved = Tensor::zeros(300, 3);
        for t in 0..300 {
            moved.set(t, 0, eps.get(t, 2));
            moved.set(t, 1, -eps.get(t, 1));
            moved.set(t, 2, eps.get(t, 0));
        }
        let al = align_shock_component(&moved, &eps).unwrap();
        assert_eq!(al.learned, vec![Some(2), Some(1), Some(0)]);
        assert_eq!(al.signs, vec![1.0, -1.0, 1.0]);
        assert_eq!(al, align_shock_component(&moved, &eps).unwrap());
    }

    #[test]
    fn noisy_alignment_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let eps = Tensor::matrix(200, 4, (0..800).map(|_| StandardNormal.sample(&mut rng)).collect());
            let mut noisy = eps.clone();
            for v in noisy.data_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v += 0.5 * z;
            }
            let al = align_shock_component(&noisy, &eps).unwrap();
            let corr = cross_correlations(&eps, &noisy).unwrap();
            let bf = brute_force(&corr);
            assert_eq!(al.learned, bf.into_iter().map(Some).collect::<Vec<_>>());
        }
    }

    #[test]
    fn fewer_learned_components_fall_back_to_best_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let eps = Tensor::matrix(200, 3, (0..600).map(|_| StandardNormal.sample(&mut rng)).collect());
        let learned = Tensor::matrix(
            200,
            2,
            (0..200)
                .flat_map(|t| [eps.get(t, 1), eps.get(t, 0) + 0.5 * eps.get(t, 2)])
                .collect(),
        );
        let al = align_shock_component(&learned, &eps).unwrap();
        assert_eq!(al.learned[0], Some(1));
        assert_eq!(al.learned[1], Some(0));
        assert!(al.learned[2].is_some());
    }

    #[test]
    fn oracle_experiment_has_zero_error() {
        let cfg = InterventionConfig::default();
        for variant in ScmVariant::ALL {
            let out = run_intervention_experiment(&ScmSpec::new(variant), 200, &[0, 1, 2], &cfg, true).unwrap();
            assert_eq!(out.summary.n_ok, 3);
            assert!(out.results.iter().all(|r| r.metrics.mse < 1e-20));
            assert_eq!(out.summary.mean.sign_acc, 1.0);
        }
    }

    #[test]
    fn rejects_bad_requests() {
        let spec = ScmSpec::default();
        let data = gen_scm(&spec, 50, 0).unwrap();
        let model = OracleScmModel::new(&spec).unwrap();
        let u = Tensor::zeros(50, 1);
        assert!(model_irf(&model, &data.y, &u, 10, 3, 1.0, 5, BaselineShock::PriorMean).is_err());
        assert!(model_irf(&model, &data.y, &u, 45, 0, 1.0, 5, BaselineShock::PriorMean).is_err());
        assert!(OracleScmModel::new(&ScmSpec {
            nonlinear: true,
            ..spec
        })
        .is_err());
    }

    #[test]
    fn nonlinear_truth_uses_simulation() {
        let spec = ScmSpec {
            nonlinear: true,
            ..ScmSpec::default()
        };
        let data = gen_scm(&spec, 80, 1).unwrap();
        let irf = simulated_irf(&spec, &data.shocks, 0, 2.0, 5, 40).unwrap();
        assert_eq!(irf.dims(), (6, spec.n));
        assert!(irf.data().iter().any(|v| v.abs() > 1e-3));
    }
}
