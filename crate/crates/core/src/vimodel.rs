//! Variational dynamic factor model: encoder, decoder, ELBO and training.
//!
//! The encoder maps each step of a window to a diagonal Gaussian over the
//! innovations. One reparameterized innovation sample is rolled through the
//! diagonal AR dynamics and decoded; the same sample gives a Monte Carlo
//! estimate of the KL term against the conditional innovation prior.

use std::f64::consts::PI;

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{check_gradients, GradCheck, GradCheckReport, Graph, Tensor, Var};
use crate::dynamics::{ar_to_pacf, DiagonalDynamics, DynamicsParams};
use crate::error::{invalid, Error, Result};
use crate::features::CONTEXT_DIM;
use crate::linalg::{fit_ar_ols, pca, Mat};
use crate::nn::{Bound, Mlp, ParamStore};
use crate::optim::Adam;
use crate::prior::{InnovationPrior, PriorConfig, RegimeBank, RegimeOut};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Number of factors.
    pub r: usize,
    /// AR order of the factor dynamics.
    pub p: usize,
    pub prior: PriorConfig,
    pub encoder_hidden: usize,
    pub encoder_layers: usize,
    pub decoder_hidden: usize,
    pub dropout: f64,
    /// Fixed observation variance.
    pub obs_var: f64,
    pub beta_kl: f64,
    pub context_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            r: 5,
            p: 1,
            prior: PriorConfig::default(),
            encoder_hidden: 128,
            encoder_layers: 2,
            decoder_hidden: 128,
            dropout: 0.08,
            obs_var: 0.03,
            beta_kl: 1.0,
            context_dim: CONTEXT_DIM,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.prior.validate()?;
        if self.r == 0 || self.p == 0 || self.context_dim == 0 {
            return invalid("r, p and context_dim must be positive");
        }
        if self.encoder_hidden == 0 || self.encoder_layers == 0 || self.decoder_hidden == 0 {
            return invalid("network widths and depth must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return invalid(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.obs_var > 0.0 && self.obs_var.is_finite()) {
            return invalid(format!("obs_var must be positive, got {}", self.obs_var));
        }
        if !(self.beta_kl >= 0.0 && self.beta_kl.is_finite()) {
            return invalid(format!("beta_kl must be non-negative, got {}", self.beta_kl));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub window: usize,
    pub stride: usize,
    pub seed: u64,
    pub clip_norm: Option<f64>,
    /// Initialize the initial state and AR coefficients from PCA factors of
    /// the first window.
    pub pca_init: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.002,
            epochs: 200,
            window: 200,
            stride: 25,
            seed: 0,
            clip_norm: Some(100.0),
            pca_init: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return invalid(format!("learning rate must be positive, got {}", self.lr));
        }
        if self.window == 0 || self.stride == 0 {
            return invalid("window and stride must be positive");
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return invalid("clip_norm must be positive");
            }
        }
        Ok(())
    }
}

/// Observations and context for one training or evaluation window.
#[derive(Clone, Debug)]
pub struct Window {
    pub y: Tensor,
    pub u: Tensor,
}

/// Everything random in one ELBO evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseDraw {
    /// `T x r` standard normal draws for the reparameterization.
    pub eps: Tensor,
    /// Encoder dropout masks; empty means evaluation mode.
    pub masks: Vec<Tensor>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ElboParts {
    /// `-(recon - beta * kl)`.
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct ElboVars {
    pub loss: Var,
    pub recon: Var,
    pub kl: Var,
    pub mu: Var,
    pub log_sigma: Var,
    pub factors: Var,
}

/// Deterministic posterior summaries of a window.
#[derive(Clone, Debug)]
pub struct Inference {
    pub mu: Tensor,
    pub sigma: Tensor,
    /// Factors rolled out from the posterior-mean innovations.
    pub factors: Tensor,
    /// Frozen regime weights of the window.
    pub pi: Vec<f64>,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct TrainReport {
    /// Mean loss over windows, one entry per epoch.
    pub losses: Vec<f64>,
    pub steps: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VIModel {
    pub config: ModelConfig,
    pub n: usize,
    pub store: ParamStore,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub bank: RegimeBank,
    pub prior: InnovationPrior,
    pub dynamics: DynamicsParams,
}

/// `eta = mu + sigma * eps`.
pub fn reparameterize_with(mu: &Tensor, sigma: &Tensor, eps: &Tensor) -> Result<Tensor> {
    if mu.dims() != sigma.dims() || mu.dims() != eps.dims() {
        return Err(Error::ShapeMismatch {
            op: "reparameterize",
            left: mu.shape().to_vec(),
            right: sigma.shape().to_vec(),
        });
    }
    let data = mu
        .data()
        .iter()
        .zip(sigma.data())
        .zip(eps.data())
        .map(|((m, s), e)| m + s * e)
        .collect();
    Ok(Tensor::matrix(mu.rows(), mu.cols(), data))
}

pub fn reparameterize(mu: &Tensor, sigma: &Tensor, rng: &mut impl Rng) -> Result<Tensor> {
    reparameterize_with(mu, sigma, &standard_normal(mu.rows(), mu.cols(), rng))
}

fn standard_normal(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect(),
    )
}

fn check_finite(op: &str, t: &Tensor) -> Result<()> {
    match t.first_non_finite() {
        Some(i) => Err(Error::NonFinite {
            op: op.to_string(),
            index: Some(i),
        }),
        None => Ok(()),
    }
}

/// Linear-interpolation empirical quantile of sorted values.
fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl VIModel {
    pub fn new(config: ModelConfig, n: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if n == 0 {
            return invalid("need at least one observed series");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (r, p) = (config.r, config.p);
        let bank = RegimeBank::new(&mut store, &config.prior, config.context_dim, &mut rng);
        let prior = InnovationPrior::new(&mut store, &config.prior, r, config.context_dim, &mut rng);
        let dynamics = DynamicsParams::new(&mut store, r, p, config.prior.regimes, &mut rng);
        let enc_in = Self::lag_width(n, p) + config.context_dim + config.prior.embed_dim;
        let mut widths = vec![enc_in];
        widths.extend(std::iter::repeat_n(config.encoder_hidden, config.encoder_layers));
        widths.push(2 * r);
        let encoder = Mlp::new(&mut store, "encoder", &widths, true, config.dropout, &mut rng);
        let decoder = Mlp::new(
            &mut store,
            "decoder",
            &[r, config.decoder_hidden, n],
            false,
            0.0,
            &mut rng,
        );
        Ok(Self {
            config,
            n,
            store,
            encoder,
            decoder,
            bank,
            prior,
            dynamics,
        })
    }

    pub fn r(&self) -> usize {
        self.config.r
    }

    fn lag_width(n: usize, p: usize) -> usize {
        n * (p + 2)
    }

    /// Per-step `[y_t, y_{t-1}, ..., y_{t-p}, mean(y)]`, earlier lags padded
    /// with the first row.
    pub fn lag_features(&self, y: &Tensor) -> Tensor {
        let (t_len, n) = y.dims();
        let p = self.config.p;
        let width = Self::lag_width(n, p);
        let mean: Vec<f64> = (0..n)
            .map(|j| y.column(j).iter().sum::<f64>() / t_len.max(1) as f64)
            .collect();
        let mut out = Tensor::zeros(t_len, width);
        for t in 0..t_len {
            let row = out.row_mut(t);
            for l in 0..=p {
                let src = t.saturating_sub(l);
                row[l * n..(l + 1) * n].copy_from_slice(y.row(src));
            }
            row[(p + 1) * n..].copy_from_slice(&mean);
        }
        out
    }

    pub fn check_window(&self, w: &Window) -> Result<()> {
        let (t_len, n) = w.y.dims();
        if n != self.n {
            return invalid(format!("window has {n} series, model expects {}", self.n));
        }
        if w.u.dims() != (t_len, self.config.context_dim) {
            return invalid(format!(
                "context has shape {:?}, expected [{t_len}, {}]",
                w.u.shape(),
                self.config.context_dim
            ));
        }
        if t_len == 0 {
            return invalid("empty window");
        }
        check_finite("window observations", &w.y)?;
        check_finite("window context", &w.u)
    }

    /// Encoder outputs `(mu, log sigma)` and regime outputs.
    fn encode_graph(
        &self,
        g: &mut Graph,
        p: &Bound,
        w: &Window,
        masks: &[Tensor],
    ) -> Result<(Var, Var, RegimeOut, Var)> {
        let u = g.constant(w.u.clone());
        let regime = self.bank.forward(g, p, u)?;
        let lags = g.constant(self.lag_features(&w.y));
        let x = g.concat_cols(&[lags, u, regime.embedding])?;
        let out = self.encoder.forward(g, p, x, masks)?;
        let mu = g.slice_cols(out, 0, self.r())?;
        let log_sigma = g.slice_cols(out, self.r(), self.r())?;
        Ok((mu, log_sigma, regime, u))
    }

    /// Loss graph for one window under fixed noise.
    pub fn elbo_graph(&self, g: &mut Graph, p: &Bound, w: &Window, noise: &NoiseDraw) -> Result<ElboVars> {
        let (t_len, n) = w.y.dims();
        let r = self.r();
        if noise.eps.dims() != (t_len, r) {
            return invalid(format!(
                "noise has shape {:?}, expected [{t_len}, {r}]",
                noise.eps.shape()
            ));
        }
        let (mu, log_sigma, regime, u) = self.encode_graph(g, p, w, &noise.masks)?;
        let sigma = g.exp(log_sigma)?;
        let eps = g.constant(noise.eps.clone());
        let spread = g.mul(sigma, eps)?;
        let eta = g.add(mu, spread)?;

        let pi0 = g.slice_rows(regime.pi, 0, 1)?;
        let factors = self.dynamics.rollout(g, p, pi0, eta)?;
        let y_hat = self.decoder.forward(g, p, factors, &[])?;
        let y = g.constant(w.y.clone());
        let resid = g.sub(y, y_hat)?;
        let sq = g.square(resid)?;
        let sse = g.sum(sq)?;
        let s2 = self.config.obs_var;
        let recon = g.scale(sse, -0.5 / s2)?;
        let recon = g.add_scalar(recon, -0.5 * (t_len * n) as f64 * (2.0 * PI * s2).ln())?;

        // log q(eta) = sum(-0.5 log 2pi - log sigma - 0.5 eps^2) for eta = mu + sigma eps
        let eps_sq: f64 = noise.eps.data().iter().map(|e| e * e).sum();
        let sum_log_sigma = g.sum(log_sigma)?;
        let log_q = g.scale(sum_log_sigma, -1.0)?;
        let log_q = g.add_scalar(log_q, -0.5 * (t_len * r) as f64 * (2.0 * PI).ln() - 0.5 * eps_sq)?;
        let log_p_rows = self.prior.log_prob_rows(g, p, &self.bank, eta, u, &regime)?;
        let log_p = g.sum(log_p_rows)?;
        let kl = g.sub(log_q, log_p)?;

        let neg_recon = g.scale(recon, -1.0)?;
        let weighted = g.scale(kl, self.config.beta_kl)?;
        let loss = g.add(neg_recon, weighted)?;
        Ok(ElboVars {
            loss,
            recon,
            kl,
            mu,
            log_sigma,
            factors,
        })
    }

    /// Training-mode noise: Gaussian draws plus encoder dropout masks.
    pub fn sample_noise(&self, t_len: usize, rng: &mut impl Rng) -> NoiseDraw {
        NoiseDraw {
            eps: standard_normal(t_len, self.r(), rng),
            masks: self.encoder.draw_masks(t_len, rng),
        }
    }

    /// Evaluation-mode noise with the given draws (no dropout).
    pub fn eval_noise(&self, eps: Tensor) -> NoiseDraw {
        NoiseDraw { eps, masks: Vec::new() }
    }

    pub fn elbo(&self, w: &Window, noise: &NoiseDraw) -> Result<ElboParts> {
        self.check_window(w)?;
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let v = self.elbo_graph(&mut g, &p, w, noise)?;
        let parts = ElboParts {
            loss: g.value(v.loss).data()[0],
            recon: g.value(v.recon).data()[0],
            kl: g.value(v.kl).data()[0],
        };
        if !parts.loss.is_finite() {
            return Err(Error::NonFinite {
                op: "elbo".into(),
                index: None,
            });
        }
        Ok(parts)
    }

    /// Loss and gradients (in parameter order) for one window.
    pub fn loss_and_grads(&self, w: &Window, noise: &NoiseDraw) -> Result<(ElboParts, Vec<Tensor>)> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g);
        let v = self.elbo_graph(&mut g, &p, w, noise)?;
        let parts = ElboParts {
            loss: g.value(v.loss).data()[0],
            recon: g.value(v.recon).data()[0],
            kl: g.value(v.kl).data()[0],
        };
        let grads = g.backward(v.loss)?;
        let out = p
            .vars()
            .iter()
            .map(|&var| grads.get(var).cloned().expect("every parameter is a leaf"))
            .collect();
        Ok((parts, out))
    }

    /// Analytic vs finite-difference gradients of the loss for all parameters.
    pub fn elbo_gradcheck(&self, w: &Window, noise: &NoiseDraw, opts: &GradCheck) -> Result<GradCheckReport> {
        self.check_window(w)?;
        check_gradients(
            |g, vars| {
                let p = Bound::from_vars(vars.to_vec());
                Ok(self.elbo_graph(g, &p, w, noise)?.loss)
            },
            self.store.values(),
            opts,
        )
    }

    /// Posterior means and scales per step (evaluation mode).
    pub fn encode(&self, y: &Tensor, u: &Tensor) -> Result<(Tensor, Tensor)> {
        let inf = self.infer(y, u)?;
        Ok((inf.mu, inf.sigma))
    }

    pub fn infer(&self, y: &Tensor, u: &Tensor) -> Result<Inference> {
        let w = Window {
            y: y.clone(),
            u: u.clone(),
        };
        self.check_window(&w)?;
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let (mu, log_sigma, regime, _) = self.encode_graph(&mut g, &p, &w, &[])?;
        let pi0 = g.slice_rows(regime.pi, 0, 1)?;
        let factors = self.dynamics.rollout(&mut g, &p, pi0, mu)?;
        Ok(Inference {
            mu: g.value(mu).clone(),
            sigma: g.value(log_sigma).map(f64::exp),
            factors: g.value(factors).clone(),
            pi: g.value(pi0).data().to_vec(),
        })
    }

    pub fn decode(&self, f: &Tensor) -> Result<Tensor> {
        if f.cols() != self.r() {
            return invalid(format!("factors have {} columns, model has r = {}", f.cols(), self.r()));
        }
        let mut g = Graph::new();
        let p = self.store.bind_frozen(&mut g);
        let fv = g.constant(f.clone());
        let out = self.decoder.forward(&mut g, &p, fv, &[])?;
        Ok(g.value(out).clone())
    }

    /// Dynamics with the mixed coefficients for weights `pi` and initial
    /// state `s0`.
    pub fn dynamics_at(&self, s0: Option<Tensor>) -> Result<DiagonalDynamics> {
        let mut d = self.dynamics.snapshot(&self.store);
        if let Some(s0) = s0 {
            d = DiagonalDynamics::new(d.raw, d.b, s0)?;
        }
        Ok(d)
    }

    /// Mean squared error of decoding the posterior-mean factors.
    pub fn reconstruction_mse(&self, y: &Tensor, u: &Tensor) -> Result<f64> {
        let inf = self.infer(y, u)?;
        let y_hat = self.decode(&inf.factors)?;
        Ok(y_hat
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / y.len() as f64)
    }

    /// Initial state and AR coefficients from unit-variance PCA factors.
    pub fn initialize_from_pca(&mut self, y: &Tensor, rng: &mut impl Rng) -> Result<()> {
        let (t_len, n) = y.dims();
        let (r, p) = (self.r(), self.config.p);
        if r > n || t_len <= p + r {
            warn!("skipping PCA initialization: T = {t_len}, N = {n}, r = {r}, p = {p}");
            return Ok(());
        }
        let x = crate::linalg::center_columns(&y.to_dmatrix());
        let (scores, _, _) = pca(&x, r)?;
        let mut scores = scores;
        for j in 0..r {
            let sd = (scores.column(j).norm_squared() / t_len as f64).sqrt();
            if sd > 1e-12 {
                scores.column_mut(j).scale_mut(1.0 / sd);
            }
        }
        let mut phis = Vec::with_capacity(r);
        let mut scales = Vec::with_capacity(r);
        for j in 0..r {
            let series: Vec<f64> = scores.column(j).iter().cloned().collect();
            let phi = fit_ar_ols(&series, p)
                .filter(|phi| ar_to_pacf(phi).is_some_and(|k| k.iter().all(|v| v.abs() < 0.98)))
                .unwrap_or_else(|| {
                    debug!("PCA factor {j}: OLS AR fit unusable, keeping default");
                    let mut d = vec![0.0; p];
                    d[0] = 0.5;
                    d
                });
            let resid = residual_std(&series, &phi);
            phis.push(phi);
            scales.push(resid.max(1e-3));
        }
        let s0 = Tensor::from_dmatrix(&Mat::from_fn(p, r, |_, j| scores[(0, j)]));
        self.dynamics.initialize(&mut self.store, &phis, &scales, s0, 0.01, rng)
    }

    /// Windows of `cfg.window` rows every `cfg.stride` rows, the last one
    /// flush with the end of the series.
    pub fn window_starts(t_len: usize, cfg: &TrainConfig) -> Vec<usize> {
        if t_len <= cfg.window {
            return vec![0];
        }
        let last = t_len - cfg.window;
        let mut starts: Vec<usize> = (0..=last).step_by(cfg.stride).collect();
        if *starts.last().unwrap() != last {
            starts.push(last);
        }
        starts
    }

    /// Adam on every window, every epoch. Regime weights are taken from the
    /// first step of each window.
    pub fn train(&mut self, y: &Tensor, u: &Tensor, cfg: &TrainConfig) -> Result<TrainReport> {
        cfg.validate()?;
        let full = Window {
            y: y.clone(),
            u: u.clone(),
        };
        self.check_window(&full)?;
        let t_len = y.rows();
        if t_len < self.config.p + 1 {
            return invalid(format!("T = {t_len} must exceed the AR order {}", self.config.p));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let starts = Self::window_starts(t_len, cfg);
        let len = cfg.window.min(t_len);
        let windows: Vec<Window> = starts
            .iter()
            .map(|&s| Window {
                y: y.slice_rows(s, len),
                u: u.slice_rows(s, len),
            })
            .collect();
        if cfg.pca_init && cfg.epochs > 0 {
            self.initialize_from_pca(&windows[0].y, &mut rng)?;
        }
        let mut opt = Adam::new(cfg.lr).with_clip(cfg.clip_norm);
        let mut report = TrainReport::default();
        let mut last_finite = None;
        for epoch in 0..cfg.epochs {
            let mut total = 0.0;
            for w in &windows {
                let noise = self.sample_noise(len, &mut rng);
                let (parts, grads) = self.loss_and_grads(w, &noise)?;
                if !parts.loss.is_finite() {
                    return Err(Error::Diverged { epoch, last_finite });
                }
                opt.step(&mut self.store, &grads)
                    .map_err(|_| Error::Diverged { epoch, last_finite })?;
                total += parts.loss;
            }
            let mean = total / windows.len() as f64;
            last_finite = Some(mean);
            report.losses.push(mean);
            if epoch % 50 == 0 {
                debug!("epoch {epoch}: loss {mean:.4}");
            }
        }
        report.steps = opt.steps();
        Ok(report)
    }

    /// Simulate `n_paths` futures of length `u_future.rows()` after the
    /// context window and return one `H x N` tensor per quantile level.
    pub fn predict_quantiles(
        &self,
        y_ctx: &Tensor,
        u_ctx: &Tensor,
        u_future: &Tensor,
        n_paths: usize,
        quantiles: &[f64],
        rng: &mut impl Rng,
    ) -> Result<Vec<Tensor>> {
        let paths = self.sample_paths(y_ctx, u_ctx, u_future, n_paths, rng)?;
        if quantiles.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return invalid("quantile levels must lie in [0, 1]");
        }
        let (h_len, n) = (u_future.rows(), self.n);
        let mut out = vec![Tensor::zeros(h_len, n); quantiles.len()];
        let mut buf = vec![0.0; n_paths];
        for h in 0..h_len {
            for j in 0..n {
                for (s, path) in paths.iter().enumerate() {
                    buf[s] = path.get(h, j);
                }
                buf.sort_by(|a, b| a.total_cmp(b));
                for (qi, &q) in quantiles.iter().enumerate() {
                    out[qi].set(h, j, sorted_quantile(&buf, q));
                }
            }
        }
        Ok(out)
    }

    /// Predictive sample paths (`H x N` each), including observation noise.
    pub fn sample_paths(
        &self,
        y_ctx: &Tensor,
        u_ctx: &Tensor,
        u_future: &Tensor,
        n_paths: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<Tensor>> {
        let h_len = u_future.rows();
        if h_len == 0 {
            return invalid("forecast horizon must be positive");
        }
        if n_paths < 2 {
            return invalid(format!("need at least 2 sample paths, got {n_paths}"));
        }
        if u_future.cols() != self.config.context_dim {
            return invalid("future context width does not match the model");
        }
        check_finite("future context", u_future)?;
        let (r, p) = (self.r(), self.config.p);
        let inf = self.infer(y_ctx, u_ctx)?;
        let t_len = inf.factors.rows();
        let mut s0 = Tensor::zeros(p, r);
        let init = self.store.get(self.dynamics.s0);
        for m in 0..p {
            let row = if t_len > m {
                inf.factors.row(t_len - 1 - m)
            } else {
                init.row(m - t_len)
            };
            s0.row_mut(m).copy_from_slice(row);
        }
        let dyn_future = self.dynamics_at(Some(s0))?;

        let family = self.prior.family;
        let emb = self.store.get(self.bank.embeddings);
        let mixture = self.prior.mixture && self.bank.regimes > 1;
        let mut laws = Vec::with_capacity(h_len);
        for h in 0..h_len {
            let u = u_future.row(h);
            let (pi, e) = self.bank.regime_embedding(&self.store, u)?;
            if mixture {
                let comps = (0..self.bank.regimes)
                    .map(|k| self.prior.location_scale(&self.store, u, emb.row(k)))
                    .collect::<Result<Vec<_>>>()?;
                laws.push((pi, comps));
            } else {
                laws.push((vec![1.0], vec![self.prior.location_scale(&self.store, u, &e)?]));
            }
        }
        let noise_sd = self.config.obs_var.sqrt();
        let mut paths = Vec::with_capacity(n_paths);
        for _ in 0..n_paths {
            let mut eta = Tensor::zeros(h_len, r);
            for (h, (pi, comps)) in laws.iter().enumerate() {
                let k = if comps.len() == 1 { 0 } else { draw_index(pi, rng) };
                let (m, b) = &comps[k];
                for i in 0..r {
                    eta.set(h, i, family.sample(m[i], b[i], rng));
                }
            }
            let f = dyn_future.rollout(&eta, &inf.pi)?;
            let mut y = self.decode(&f)?;
            for v in y.data_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v += noise_sd * z;
            }
            paths.push(y);
        }
        Ok(paths)
    }

    /// Rank of natural-parameter differences across context probes.
    pub fn lambda_rank(&self, probes: &[Vec<f64>]) -> Result<usize> {
        self.prior.lambda_rank(&self.store, &self.bank, probes)
    }
}

fn residual_std(series: &[f64], phi: &[f64]) -> f64 {
    let p = phi.len();
    let resid: Vec<f64> = (p..series.len())
        .map(|t| series[t] - phi.iter().enumerate().map(|(j, c)| c * series[t - 1 - j]).sum::<f64>())
        .collect();
    (resid.iter().map(|e| e * e).sum::<f64>() / resid.len().max(1) as f64).sqrt()
}

fn draw_index(weights: &[f64], rng: &mut impl Rng) -> usize {
    let x: f64 = rng.random();
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if x < acc {
            return k;
        }
    }
    weights.len() - 1
}
