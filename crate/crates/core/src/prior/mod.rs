//! Conditional innovation prior `p(eta_t | u_t, e_t)` and the regime bank
//! producing the expected embedding `e_t`.

mod degeneracy;
mod family;

pub use degeneracy::{
    demo_rotation, distance_to_signed_permutation, gaussian_degeneracy_demo, gaussian_degeneracy_with_rotation,
    laplace_rotation_demo, noiseless_rotation_loglik, DegeneracyResult,
};
pub use family::Family;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{invalid, Error, Result};
use crate::linalg::{numerical_rank, Mat};
use crate::nn::{Bound, Mlp, ParamId, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub family: Family,
    /// Number of regimes `K`.
    pub regimes: usize,
    /// Embedding width `d`.
    pub embed_dim: usize,
    pub temperature: f64,
    pub regime_hidden: usize,
    pub prior_hidden: usize,
    /// Evaluate the prior as `sum_k pi_k p_k` instead of at the expected
    /// embedding.
    pub mixture: bool,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            family: Family::Laplace,
            regimes: 7,
            embed_dim: 8,
            temperature: 0.2,
            regime_hidden: 32,
            prior_hidden: 64,
            mixture: false,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        self.family.validate()?;
        if self.regimes == 0 {
            return invalid("at least one regime is required");
        }
        if !(self.temperature > 0.0) {
            return invalid(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.embed_dim == 0 || self.regime_hidden == 0 || self.prior_hidden == 0 {
            return invalid("prior widths must be positive");
        }
        Ok(())
    }
}

/// `softmax(logits / tau)`.
pub fn mixture_weights(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            op: "mixture_weights".into(),
            index: Some(i),
        });
    }
    let mut out = vec![0.0; logits.len()];
    crate::diffcore::softmax_into(logits, tau, &mut out);
    Ok(out)
}

/// Graph nodes produced by the regime bank for a block of contexts.
#[derive(Clone, Copy, Debug)]
pub struct RegimeOut {
    /// `T x K` mixture weights.
    pub pi: Var,
    /// `T x K` log mixture weights.
    pub log_pi: Var,
    /// `T x d` expected embeddings.
    pub embedding: Var,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegimeBank {
    pub regimes: usize,
    pub embed_dim: usize,
    pub temperature: f64,
    pub embeddings: ParamId,
    pub net: Mlp,
}

impl RegimeBank {
    pub fn new(store: &mut ParamStore, cfg: &PriorConfig, context_dim: usize, rng: &mut impl Rng) -> Self {
        let k = cfg.regimes;
        let e = Tensor::matrix(
            k,
            cfg.embed_dim,
            (0..k * cfg.embed_dim).map(|_| StandardNormal.sample(rng)).collect(),
        );
        let embeddings = store.add("regime.embeddings", e);
        let net = Mlp::new(
            store,
            "regime.net",
            &[context_dim, cfg.regime_hidden, k],
            false,
            0.0,
            rng,
        );
        Self {
            regimes: k,
            embed_dim: cfg.embed_dim,
            temperature: cfg.temperature,
            embeddings,
            net,
        }
    }

    /// Mixture weights and expected embeddings for each row of `u`.
    pub fn forward(&self, g: &mut Graph, p: &Bound, u: Var) -> Result<RegimeOut> {
        let logits = self.net.forward(g, p, u, &[])?;
        let z = g.scale(logits, 1.0 / self.temperature)?;
        let lse = g.logsumexp_rows(z)?;
        let ones = g.constant(Tensor::ones(1, self.regimes));
        let lse = g.matmul(lse, ones)?;
        let log_pi = g.sub(z, lse)?;
        let pi = g.softmax_rows(logits, self.temperature)?;
        let embedding = g.matmul(pi, p.var(self.embeddings))?;
        Ok(RegimeOut { pi, log_pi, embedding })
    }

    /// `(pi, e)` for a single context vector.
    pub fn regime_embedding(&self, store: &ParamStore, u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_finite("regime_embedding", u)?;
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let uv = g.constant(Tensor::row_vector(u.to_vec()));
        let out = self.forward(&mut g, &p, uv)?;
        Ok((g.value(out.pi).data().to_vec(), g.value(out.embedding).data().to_vec()))
    }
}

/// Location and log-scale network `(u, e) -> (m, log b)` with a fixed family.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InnovationPrior {
    pub family: Family,
    pub r: usize,
    pub mixture: bool,
    pub net: Mlp,
}

impl InnovationPrior {
    pub fn new(store: &mut ParamStore, cfg: &PriorConfig, r: usize, context_dim: usize, rng: &mut impl Rng) -> Self {
        let net = Mlp::new(
            store,
            "prior.net",
            &[context_dim + cfg.embed_dim, cfg.prior_hidden, 2 * r],
            false,
            0.0,
            rng,
        );
        Self {
            family: cfg.family,
            r,
            mixture: cfg.mixture,
            net,
        }
    }

    /// `(m, log b)`, each `T x r`, for rows of `u` and embeddings `e`.
    pub fn params(&self, g: &mut Graph, p: &Bound, u: Var, e: Var) -> Result<(Var, Var)> {
        let x = g.concat_cols(&[u, e])?;
        let out = self.net.forward(g, p, x, &[])?;
        let m = g.slice_cols(out, 0, self.r)?;
        let log_b = g.slice_cols(out, self.r, self.r)?;
        Ok((m, log_b))
    }

    /// Per-row log-density of `eta` (`T x 1`). Uses the regime mixture when
    /// enabled and `K > 1`, otherwise the expected embedding.
    pub fn log_prob_rows(
        &self,
        g: &mut Graph,
        p: &Bound,
        bank: &RegimeBank,
        eta: Var,
        u: Var,
        regime: &RegimeOut,
    ) -> Result<Var> {
        if !self.mixture || bank.regimes == 1 {
            let (m, log_b) = self.params(g, p, u, regime.embedding)?;
            let lp = self.family.log_density_graph(g, eta, m, log_b)?;
            return g.sum_rows(lp);
        }
        let rows = g.value(eta).rows();
        let mut cols = Vec::with_capacity(bank.regimes);
        for k in 0..bank.regimes {
            let ek = g.slice_rows(p.var(bank.embeddings), k, 1)?;
            let ek = g.repeat_row(ek, rows)?;
            let (m, log_b) = self.params(g, p, u, ek)?;
            let lp = self.family.log_density_graph(g, eta, m, log_b)?;
            cols.push(g.sum_rows(lp)?);
        }
        let comp = g.concat_cols(&cols)?;
        let joint = g.add(comp, regime.log_pi)?;
        g.logsumexp_rows(joint)
    }

    /// Location and scale vectors at a single `(u, e)`.
    pub fn location_scale(&self, store: &ParamStore, u: &[f64], e: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_finite("prior context", u)?;
        check_finite("prior embedding", e)?;
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let uv = g.constant(Tensor::row_vector(u.to_vec()));
        let ev = g.constant(Tensor::row_vector(e.to_vec()));
        let (m, log_b) = self.params(&mut g, &p, uv, ev)?;
        let b = g.value(log_b).data().iter().map(|v| v.exp()).collect();
        Ok((g.value(m).data().to_vec(), b))
    }

    /// `log p(eta | u, e)` at the given embedding.
    pub fn log_prob(&self, store: &ParamStore, eta: &[f64], u: &[f64], e: &[f64]) -> Result<f64> {
        self.family.validate()?;
        self.check_len(eta)?;
        let (m, b) = self.location_scale(store, u, e)?;
        Ok(product_log_density(self.family, eta, &m, &b))
    }

    /// `log sum_k pi_k(u) p(eta | u, e_k)`.
    pub fn log_prob_mixture(&self, store: &ParamStore, bank: &RegimeBank, eta: &[f64], u: &[f64]) -> Result<f64> {
        self.family.validate()?;
        self.check_len(eta)?;
        let (pi, _) = bank.regime_embedding(store, u)?;
        let emb = store.get(bank.embeddings);
        let mut terms = Vec::with_capacity(bank.regimes);
        for (k, w) in pi.iter().enumerate() {
            let (m, b) = self.location_scale(store, u, emb.row(k))?;
            terms.push(w.ln() + product_log_density(self.family, eta, &m, &b));
        }
        Ok(crate::diffcore::logsumexp(&terms))
    }

    pub fn sample(&self, store: &ParamStore, u: &[f64], e: &[f64], rng: &mut impl Rng) -> Result<Vec<f64>> {
        self.family.validate()?;
        let (m, b) = self.location_scale(store, u, e)?;
        Ok(m.iter().zip(&b).map(|(&m, &b)| self.family.sample(m, b, rng)).collect())
    }

    /// Monte Carlo `KL(q || p(. | u, e))` for a diagonal Gaussian `q`.
    pub fn kl_estimate(
        &self,
        store: &ParamStore,
        q_mu: &[f64],
        q_sigma: &[f64],
        u: &[f64],
        e: &[f64],
        n_samples: usize,
        rng: &mut impl Rng,
    ) -> Result<f64> {
        let (m, b) = self.location_scale(store, u, e)?;
        kl_monte_carlo(self.family, q_mu, q_sigma, &m, &b, n_samples, rng)
    }

    /// Natural-parameter vector `lambda(u, e(u))`, flattened over components.
    pub fn natural_params(&self, store: &ParamStore, bank: &RegimeBank, u: &[f64]) -> Result<Vec<f64>> {
        let (_, e) = bank.regime_embedding(store, u)?;
        let (m, b) = self.location_scale(store, u, &e)?;
        Ok(m.iter()
            .zip(&b)
            .flat_map(|(&m, &b)| self.family.natural_params(m, b))
            .collect())
    }

    /// Numerical rank of the stacked rows `lambda(u_i) - lambda(u_0)`.
    pub fn lambda_rank(&self, store: &ParamStore, bank: &RegimeBank, us: &[Vec<f64>]) -> Result<usize> {
        if us.len() < 2 {
            return invalid(format!("lambda_rank needs at least 2 contexts, got {}", us.len()));
        }
        let lambdas = us
            .iter()
            .map(|u| self.natural_params(store, bank, u))
            .collect::<Result<Vec<_>>>()?;
        Ok(numerical_rank(&lambda_differences(&lambdas), 1e-8))
    }

    fn check_len(&self, eta: &[f64]) -> Result<()> {
        if eta.len() != self.r {
            return invalid(format!(
                "innovation has {} components, prior expects {}",
                eta.len(),
                self.r
            ));
        }
        Ok(())
    }
}

/// Rows `lambda_i - lambda_0` for `i >= 1`.
pub fn lambda_differences(lambdas: &[Vec<f64>]) -> Mat {
    let width = lambdas[0].len();
    Mat::from_fn(lambdas.len() - 1, width, |i, j| lambdas[i + 1][j] - lambdas[0][j])
}

pub fn product_log_density(family: Family, eta: &[f64], m: &[f64], b: &[f64]) -> f64 {
    eta.iter()
        .zip(m.iter().zip(b))
        .map(|(&x, (&m, &b))| family.log_density(x, m, b))
        .sum()
}

/// `E_q[log q - log p]` from `n_samples` reparameterized draws, `q` a diagonal
/// Gaussian and `p` the product family with location `m` and scale `b`.
pub fn kl_monte_carlo(
    family: Family,
    q_mu: &[f64],
    q_sigma: &[f64],
    m: &[f64],
    b: &[f64],
    n_samples: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    if n_samples == 0 {
        return invalid("kl_estimate needs at least one sample");
    }
    family.validate()?;
    check_sigma(q_sigma)?;
    let mut acc = 0.0;
    for _ in 0..n_samples {
        for i in 0..q_mu.len() {
            let eps: f64 = StandardNormal.sample(rng);
            let eta = q_mu[i] + q_sigma[i] * eps;
            let log_q = Family::Gaussian.log_density(eta, q_mu[i], q_sigma[i]);
            acc += log_q - family.log_density(eta, m[i], b[i]);
        }
    }
    Ok(acc / n_samples as f64)
}

/// Closed-form `KL(N(q_mu, q_sigma^2) || N(m, b^2))`, summed over components.
pub fn kl_gaussian_exact(q_mu: &[f64], q_sigma: &[f64], m: &[f64], b: &[f64]) -> Result<f64> {
    check_sigma(q_sigma)?;
    Ok(q_mu
        .iter()
        .zip(q_sigma)
        .zip(m.iter().zip(b))
        .map(|((&qm, &qs), (&m, &b))| (b / qs).ln() + (qs * qs + (qm - m).powi(2)) / (2.0 * b * b) - 0.5)
        .sum())
}

fn check_sigma(q_sigma: &[f64]) -> Result<()> {
    if let Some(s) = q_sigma.iter().find(|s| !(**s > 0.0)) {
        return invalid(format!("posterior scale must be positive, got {s}"));
    }
    Ok(())
}

fn check_finite(what: &str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::NonFinite {
            op: what.into(),
            index: Some(i),
        }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{context_matrix, ContextKind, CONTEXT_DIM};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(cfg: &PriorConfig, r: usize, seed: u64) -> (ParamStore, RegimeBank, InnovationPrior) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let bank = RegimeBank::new(&mut store, cfg, CONTEXT_DIM, &mut rng);
        let prior = InnovationPrior::new(&mut store, cfg, r, CONTEXT_DIM, &mut rng);
        (store, bank, prior)
    }

    #[test]
    fn softmax_temperature_example() {
        let pi = mixture_weights(&[1.0, 0.0], 0.2).unwrap();
        assert!((pi[0] - 0.993307).abs() < 1e-6);
        assert!((pi[1] - 0.006693).abs() < 1e-6);
        assert!(mixture_weights(&[f64::NAN, 0.0], 0.2).is_err());
    }

    #[test]
    fn single_regime_is_its_embedding() {
        let cfg = PriorConfig {
            regimes: 1,
            ..PriorConfig::default()
        };
        let (store, bank, _) = setup(&cfg, 2, 0);
        let (pi, e) = bank.regime_embedding(&store, &[0.1, 0.2, 0.3]).unwrap();
        assert_eq!(pi, vec![1.0]);
        assert_eq!(e, store.get(bank.embeddings).row(0));
    }

    #[test]
    fn equal_logits_average_embeddings() {
        let cfg = PriorConfig {
            regimes: 4,
            ..PriorConfig::default()
        };
        let (mut store, bank, _) = setup(&cfg, 2, 1);
        let last = bank.net.layers.last().unwrap();
        let w = store.get(last.weight).clone();
        store.set(last.weight, Tensor::zeros(w.rows(), w.cols())).unwrap();
        store.set(last.bias, Tensor::zeros(1, 4)).unwrap();
        let (pi, e) = bank.regime_embedding(&store, &[0.4, -1.0, 2.0]).unwrap();
        assert!(pi.iter().all(|p| (p - 0.25).abs() < 1e-15));
        let emb = store.get(bank.embeddings);
        for j in 0..cfg.embed_dim {
            let mean = (0..4).map(|k| emb.get(k, j)).sum::<f64>() / 4.0;
            assert!((e[j] - mean).abs() < 1e-14);
        }
    }

    #[test]
    fn regime_embedding_is_deterministic() {
        let (store, bank, _) = setup(&PriorConfig::default(), 3, 2);
        let a = bank.regime_embedding(&store, &[0.3, 0.1, -0.7]).unwrap();
        let b = bank.regime_embedding(&store, &[0.3, 0.1, -0.7]).unwrap();
        assert_eq!(a, b);
        assert!((a.0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a.0.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn log_prob_factorizes() {
        let (store, bank, prior) = setup(&PriorConfig::default(), 2, 3);
        let u = [0.2, 0.5, -0.1];
        let (_, e) = bank.regime_embedding(&store, &u).unwrap();
        let (m, b) = prior.location_scale(&store, &u, &e).unwrap();
        let eta = [0.4, -1.3];
        let joint = prior.log_prob(&store, &eta, &u, &e).unwrap();
        let split = Family::Laplace.log_density(eta[0], m[0], b[0]) + Family::Laplace.log_density(eta[1], m[1], b[1]);
        assert!((joint - split).abs() < 1e-14);
        assert!(prior.log_prob(&store, &[0.0], &u, &e).is_err());
    }

    #[test]
    fn mixture_collapses_with_identical_components() {
        let cfg = PriorConfig {
            mixture: true,
            regimes: 3,
            ..PriorConfig::default()
        };
        let (mut store, bank, prior) = setup(&cfg, 2, 4);
        store
            .set(bank.embeddings, Tensor::from_rows(&vec![vec![0.3; 8]; 3]).unwrap())
            .unwrap();
        let u = [0.1, 0.9, 0.4];
        let eta = [0.2, -0.6];
        let mix = prior.log_prob_mixture(&store, &bank, &eta, &u).unwrap();
        let single = prior.log_prob(&store, &eta, &u, &[0.3; 8]).unwrap();
        assert!((mix - single).abs() < 1e-12);
    }

    #[test]
    fn graph_mixture_matches_pointwise() {
        let cfg = PriorConfig {
            mixture: true,
            regimes: 3,
            ..PriorConfig::default()
        };
        let (store, bank, prior) = setup(&cfg, 2, 5);
        let u = context_matrix(ContextKind::Timestep, 0, 4, 4.0);
        let eta = Tensor::matrix(4, 2, vec![0.1, -0.2, 0.5, 0.3, -1.0, 0.0, 2.0, 0.7]);
        let mut g = Graph::new();
        let p = store.bind_frozen(&mut g);
        let uv = g.constant(u.clone());
        let ev = g.constant(eta.clone());
        let reg = bank.forward(&mut g, &p, uv).unwrap();
        let rows = prior.log_prob_rows(&mut g, &p, &bank, ev, uv, &reg).unwrap();
        for t in 0..4 {
            let direct = prior.log_prob_mixture(&store, &bank, eta.row(t), u.row(t)).unwrap();
            assert!((g.value(rows).data()[t] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let (store, bank, prior) = setup(&PriorConfig::default(), 3, 6);
        let u = [0.0, 0.0, 1.0];
        let (_, e) = bank.regime_embedding(&store, &u).unwrap();
        let a = prior.sample(&store, &u, &e, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = prior.sample(&store, &u, &e, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_kl_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        assert_eq!(kl_gaussian_exact(&[0.3], &[1.2], &[0.3], &[1.2]).unwrap(), 0.0);
        let same = kl_monte_carlo(Family::Gaussian, &[0.3], &[1.2], &[0.3], &[1.2], 1000, &mut rng).unwrap();
        assert!(same.abs() < 1e-12);
        let exact = kl_gaussian_exact(&[0.0], &[1.0], &[1.0], &[1.0]).unwrap();
        assert!((exact - 0.5).abs() < 1e-15);
        let mc = kl_monte_carlo(Family::Gaussian, &[0.0], &[1.0], &[1.0], &[1.0], 10_000, &mut rng).unwrap();
        assert!((mc - 0.5).abs() < 0.05, "{mc}");
        assert!(kl_monte_carlo(Family::Gaussian, &[0.0], &[1.0], &[1.0], &[1.0], 0, &mut rng).is_err());
        assert!(kl_gaussian_exact(&[0.0], &[0.0], &[0.0], &[1.0]).is_err());
    }

    #[test]
    fn laplace_kl_matches_quadrature() {
        // KL(N(0,1) || Laplace(0,1)) = -H(N(0,1)) + log 2 + E|x|
        let quad = {
            let n = 400_000;
            let w = 12.0;
            let h = 2.0 * w / n as f64;
            (0..=n)
                .map(|i| {
                    let x = -w + i as f64 * h;
                    let q = Family::Gaussian.log_density(x, 0.0, 1.0);
                    let weight = if i == 0 || i == n { 0.5 } else { 1.0 };
                    weight * q.exp() * (q - Family::Laplace.log_density(x, 0.0, 1.0))
                })
                .sum::<f64>()
                * h
        };
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mc = kl_monte_carlo(Family::Laplace, &[0.0], &[1.0], &[0.0], &[1.0], 100_000, &mut rng).unwrap();
        assert!((mc - quad).abs() < 0.05, "mc {mc} quad {quad}");
    }

    #[test]
    fn lambda_rank_constant_context_is_zero() {
        let (store, bank, prior) = setup(&PriorConfig::default(), 4, 10);
        let u = context_matrix(ContextKind::Constant, 0, 5, 5.0);
        let us: Vec<Vec<f64>> = (0..5).map(|t| u.row(t).to_vec()).collect();
        assert_eq!(prior.lambda_rank(&store, &bank, &us).unwrap(), 0);
        assert!(prior.lambda_rank(&store, &bank, &us[..1]).is_err());
    }

    #[test]
    fn lambda_rank_identity_construction() {
        // hidden = u (one-hot), m = hidden, log b = 0
        let r = 3;
        let cfg = PriorConfig {
            regimes: 1,
            embed_dim: 1,
            prior_hidden: r,
            ..PriorConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let bank = RegimeBank::new(&mut store, &cfg, r, &mut rng);
        let prior = InnovationPrior::new(&mut store, &cfg, r, r, &mut rng);
        let (l0, l1) = (&prior.net.layers[0], &prior.net.layers[1]);
        let mut w0 = Tensor::zeros(r + 1, r);
        for i in 0..r {
            w0.set(i, i, 1.0);
        }
        store.set(l0.weight, w0).unwrap();
        store.set(l0.bias, Tensor::zeros(1, r)).unwrap();
        let mut w1 = Tensor::zeros(r, 2 * r);
        for i in 0..r {
            w1.set(i, i, 1.0);
        }
        store.set(l1.weight, w1).unwrap();
        store.set(l1.bias, Tensor::zeros(1, 2 * r)).unwrap();
        let mut us = vec![vec![0.0; r]];
        for i in 0..r {
            let mut u = vec![0.0; r];
            u[i] = 1.0;
            us.push(u);
        }
        assert_eq!(prior.lambda_rank(&store, &bank, &us).unwrap(), r);
    }

    /// Rank by Gaussian elimination with partial pivoting.
    fn elimination_rank(mut a: Vec<Vec<f64>>, tol: f64) -> usize {
        let cols = a.first().map_or(0, |r| r.len());
        let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut rank = 0;
        for c in 0..cols {
            let Some(piv) = (rank..a.len()).max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap()) else {
                break;
            };
            if a[piv][c].abs() <= tol * scale {
                continue;
            }
            a.swap(rank, piv);
            for i in rank + 1..a.len() {
                let f = a[i][c] / a[rank][c];
                for j in c..cols {
                    a[i][j] -= f * a[rank][j];
                }
            }
            rank += 1;
        }
        rank
    }

    #[test]
    fn lambda_rank_random_net_matches_elimination() {
        for seed in 0..5 {
            let r = 2 + seed as usize % 3;
            let (store, bank, prior) = setup(&PriorConfig::default(), r, 100 + seed);
            let u = context_matrix(ContextKind::Timestep, 0, r + 1, 50.0);
            let us: Vec<Vec<f64>> = (0..=r).map(|t| u.row(t).to_vec()).collect();
            let got = prior.lambda_rank(&store, &bank, &us).unwrap();
            let lambdas: Vec<Vec<f64>> = us
                .iter()
                .map(|u| prior.natural_params(&store, &bank, u).unwrap())
                .collect();
            let rows: Vec<Vec<f64>> = lambdas[1..]
                .iter()
                .map(|l| l.iter().zip(&lambdas[0]).map(|(a, b)| a - b).collect())
                .collect();
            assert_eq!(got, elimination_rank(rows, 1e-8));
            assert_eq!(got, r);
        }
    }
}
