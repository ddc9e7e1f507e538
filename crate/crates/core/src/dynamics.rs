//! Diagonal AR(p) factor dynamics, regime mixing, companion form and
//! impulse responses.
//!
//! Each factor follows its own AR(p) recursion
//! `f_i[t] = sum_j phi_{j,i} f_i[t-1-j] + b_i eta_i[t]`. Coefficients are
//! parameterized through partial autocorrelations `kappa = tanh(raw)`, which
//! keeps every coefficient vector inside the stationary region. Regimes are
//! mixed in partial-autocorrelation space: `kappa_bar = sum_k pi_k tanh(raw_k)`,
//! which for `p = 1` is exactly `A_bar = sum_k pi_k diag(tanh(a_k))`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Tensor, Var};
use crate::error::{invalid, Error, Result};
use crate::linalg::Mat;
use crate::nn::{Bound, ParamId, ParamStore};

/// Durbin-Levinson map from partial autocorrelations to AR coefficients.
pub fn pacf_to_ar(kappa: &[f64]) -> Vec<f64> {
    let mut phi: Vec<f64> = Vec::with_capacity(kappa.len());
    for (m, &k) in kappa.iter().enumerate() {
        let prev = phi.clone();
        for j in 0..m {
            phi[j] = prev[j] - k * prev[m - 1 - j];
        }
        phi.push(k);
    }
    phi
}

/// Inverse of [`pacf_to_ar`]; `None` when the coefficients are not stationary.
pub fn ar_to_pacf(phi: &[f64]) -> Option<Vec<f64>> {
    let p = phi.len();
    let mut cur = phi.to_vec();
    let mut kappa = vec![0.0; p];
    for m in (0..p).rev() {
        let k = cur[m];
        if !(k.abs() < 1.0) {
            return None;
        }
        kappa[m] = k;
        let denom = 1.0 - k * k;
        let prev: Vec<f64> = (0..m).map(|j| (cur[j] + k * cur[m - 1 - j]) / denom).collect();
        cur = prev;
    }
    Some(kappa)
}

/// Graph version of [`pacf_to_ar`] applied column-wise: `kappa[j]` is the
/// `1 x r` row of lag-`j+1` partial autocorrelations.
pub fn pacf_to_ar_graph(g: &mut Graph, kappa: &[Var]) -> Result<Vec<Var>> {
    let mut phi: Vec<Var> = Vec::with_capacity(kappa.len());
    for (m, &k) in kappa.iter().enumerate() {
        let mut next = Vec::with_capacity(m + 1);
        for j in 0..m {
            let t = g.mul(k, phi[m - 1 - j])?;
            next.push(g.sub(phi[j], t)?);
        }
        next.push(k);
        phi = next;
    }
    Ok(phi)
}

fn check_simplex(pi: &[f64], regimes: usize) -> Result<()> {
    if pi.len() != regimes {
        return invalid(format!("expected {regimes} mixture weights, got {}", pi.len()));
    }
    let s: f64 = pi.iter().sum();
    if !((s - 1.0).abs() <= 1e-9) || pi.iter().any(|&w| !(w >= 0.0)) {
        return invalid(format!("mixture weights are not on the simplex (sum {s})"));
    }
    Ok(())
}

/// Numeric snapshot of the dynamics parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalDynamics {
    pub r: usize,
    pub p: usize,
    pub regimes: usize,
    /// `K x (p r)`; column `j r + i` holds lag `j+1` of factor `i`.
    pub raw: Tensor,
    /// `K x r` innovation loadings.
    pub b: Tensor,
    /// `p x r` initial state; row `m` is the factor value `m+1` steps before
    /// the first output.
    pub s0: Tensor,
}

impl DiagonalDynamics {
    pub fn new(raw: Tensor, b: Tensor, s0: Tensor) -> Result<Self> {
        let (regimes, pr) = raw.dims();
        let (p, r) = s0.dims();
        if p == 0 || r == 0 || regimes == 0 {
            return invalid("dynamics need p, r and K at least 1");
        }
        if pr != p * r || b.dims() != (regimes, r) {
            return invalid(format!(
                "inconsistent dynamics shapes: raw {:?}, b {:?}, s0 {:?}",
                raw.shape(),
                b.shape(),
                s0.shape()
            ));
        }
        Ok(Self {
            r,
            p,
            regimes,
            raw,
            b,
            s0,
        })
    }

    /// Single-regime dynamics with the given per-factor AR coefficients
    /// (`phi[i]` has length `p`) and loadings.
    pub fn from_ar(phi: &[Vec<f64>], b: &[f64], s0: Tensor) -> Result<Self> {
        let r = phi.len();
        let p = phi.first().map_or(0, Vec::len);
        let mut raw = Tensor::zeros(1, p * r);
        for (i, coefs) in phi.iter().enumerate() {
            let kappa = ar_to_pacf(coefs)
                .ok_or_else(|| Error::InvalidArgument(format!("AR coefficients of factor {i} are not stationary")))?;
            for (j, k) in kappa.iter().enumerate() {
                raw.set(0, j * r + i, k.atanh());
            }
        }
        Self::new(raw, Tensor::row_vector(b.to_vec()), s0)
    }

    /// Mixed AR coefficients (`p x r`) and loadings for weights `pi`.
    pub fn effective(&self, pi: &[f64]) -> Result<(Tensor, Vec<f64>)> {
        check_simplex(pi, self.regimes)?;
        let (p, r) = (self.p, self.r);
        let mut phi = Tensor::zeros(p, r);
        let mut b = vec![0.0; r];
        for i in 0..r {
            let kappa: Vec<f64> = (0..p)
                .map(|j| {
                    (0..self.regimes)
                        .map(|k| pi[k] * self.raw.get(k, j * r + i).tanh())
                        .sum()
                })
                .collect();
            for (j, v) in pacf_to_ar(&kappa).into_iter().enumerate() {
                phi.set(j, i, v);
            }
            b[i] = (0..self.regimes).map(|k| pi[k] * self.b.get(k, i)).sum();
        }
        Ok((phi, b))
    }

    /// One step: `state` is `p x r` (row 0 most recent); returns the shifted
    /// state whose row 0 is `f_next`.
    pub fn step(&self, state: &Tensor, eta: &[f64], pi: &[f64]) -> Result<Tensor> {
        let (phi, b) = self.effective(pi)?;
        step_with(&phi, &b, state, eta)
    }

    /// Factors after consuming each row of `etas`, starting from `s0`.
    pub fn rollout(&self, etas: &Tensor, pi: &[f64]) -> Result<Tensor> {
        let (phi, b) = self.effective(pi)?;
        rollout_with(&phi, &b, &self.s0, etas)
    }

    pub fn companion(&self, pi: &[f64]) -> Result<CompanionSystem> {
        let (phi, b) = self.effective(pi)?;
        let coeffs = Mat::from_fn(self.r, self.p, |i, j| phi.get(j, i));
        let mut sys = build_companion(&coeffs, &b)?;
        sys.set_initial_state(&self.s0)?;
        Ok(sys)
    }
}

fn step_with(phi: &Tensor, b: &[f64], state: &Tensor, eta: &[f64]) -> Result<Tensor> {
    let (p, r) = phi.dims();
    if state.dims() != (p, r) || eta.len() != r {
        return invalid(format!(
            "step: state {:?} and innovation of length {} for p={p}, r={r}",
            state.shape(),
            eta.len()
        ));
    }
    let mut next = Tensor::zeros(p, r);
    for i in 0..r {
        let mut f = b[i] * eta[i];
        for j in 0..p {
            f += phi.get(j, i) * state.get(j, i);
        }
        next.set(0, i, f);
        for j in 1..p {
            next.set(j, i, state.get(j - 1, i));
        }
    }
    Ok(next)
}

fn rollout_with(phi: &Tensor, b: &[f64], s0: &Tensor, etas: &Tensor) -> Result<Tensor> {
    let (t_len, r) = etas.dims();
    if t_len == 0 {
        return invalid("rollout needs at least one innovation");
    }
    if r != phi.cols() {
        return invalid(format!(
            "rollout: innovations have {r} columns, dynamics {}",
            phi.cols()
        ));
    }
    if let Some(idx) = etas.first_non_finite() {
        return Err(Error::NonFinite {
            op: "rollout innovations".into(),
            index: Some(idx),
        });
    }
    let mut state = s0.clone();
    let mut out = Tensor::zeros(t_len, r);
    for t in 0..t_len {
        state = step_with(phi, b, &state, etas.row(t))?;
        out.row_mut(t).copy_from_slice(state.row(0));
    }
    Ok(out)
}

/// First-order stacked form of the diagonal AR(p) system. Block `i` of the
/// state holds `(f_i[t], f_i[t-1], ..., f_i[t-p+1])`.
#[derive(Clone, Debug, PartialEq)]
pub struct CompanionSystem {
    pub p: usize,
    pub r: usize,
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub s0: Mat,
}

/// `ar_coeffs` is `r x p`, `b` the per-factor innovation loadings.
pub fn build_companion(ar_coeffs: &Mat, b: &[f64]) -> Result<CompanionSystem> {
    let (r, p) = ar_coeffs.shape();
    if p == 0 {
        return invalid("companion form needs p >= 1");
    }
    if b.len() != r {
        return invalid(format!("{} loadings for {r} factors", b.len()));
    }
    let n = r * p;
    let mut a = Mat::zeros(n, n);
    let mut bm = Mat::zeros(n, r);
    let mut c = Mat::zeros(r, n);
    for i in 0..r {
        let o = i * p;
        for j in 0..p {
            a[(o, o + j)] = ar_coeffs[(i, j)];
        }
        for j in 1..p {
            a[(o + j, o + j - 1)] = 1.0;
        }
        bm[(o, i)] = b[i];
        c[(i, o)] = 1.0;
    }
    Ok(CompanionSystem {
        p,
        r,
        a,
        b: bm,
        c,
        s0: Mat::zeros(n, 1),
    })
}

impl CompanionSystem {
    /// Load a `p x r` lag state (row `m` = `m+1` steps before the first output).
    pub fn set_initial_state(&mut self, lags: &Tensor) -> Result<()> {
        if lags.dims() != (self.p, self.r) {
            return invalid(format!(
                "initial state {:?} for p={}, r={}",
                lags.shape(),
                self.p,
                self.r
            ));
        }
        for i in 0..self.r {
            for j in 0..self.p {
                self.s0[(i * self.p + j, 0)] = lags.get(j, i);
            }
        }
        Ok(())
    }

    /// `s_{t+1} = A s_t + B eta_t`, output `F[t] = C s_{t+1}`.
    pub fn unroll(&self, etas: &Tensor) -> Result<Tensor> {
        let (t_len, r) = etas.dims();
        if r != self.r {
            return invalid(format!("unroll: innovations have {r} columns, system has {}", self.r));
        }
        let mut s = self.s0.clone();
        let mut out = Tensor::zeros(t_len, r);
        for t in 0..t_len {
            let eta = Mat::from_row_slice(r, 1, etas.row(t));
            s = &self.a * s + &self.b * eta;
            let f = &self.c * &s;
            out.row_mut(t).copy_from_slice(f.as_slice());
        }
        Ok(out)
    }

    /// `H_j = C A^j B`.
    pub fn impulse_response(&self, j: usize) -> Mat {
        let mut m = self.b.clone();
        for _ in 0..j {
            m = &self.a * m;
        }
        &self.c * m
    }

    /// Spectral radius of each factor's companion block by power iteration.
    pub fn block_spectral_radii(&self, iters: usize) -> Vec<f64> {
        (0..self.r)
            .map(|i| {
                let o = i * self.p;
                let block = self.a.view((o, o), (self.p, self.p)).into_owned();
                crate::linalg::spectral_radius_power(&block, iters)
            })
            .collect()
    }
}

pub fn unroll_companion(sys: &CompanionSystem, etas: &Tensor) -> Result<Tensor> {
    sys.unroll(etas)
}

pub fn impulse_response(sys: &CompanionSystem, j: usize) -> Mat {
    sys.impulse_response(j)
}

/// Learnable dynamics parameters inside a [`ParamStore`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DynamicsParams {
    pub r: usize,
    pub p: usize,
    pub regimes: usize,
    pub raw: ParamId,
    pub b: ParamId,
    pub s0: ParamId,
}

impl DynamicsParams {
    /// Lag-1 partial autocorrelation near 0.5, higher lags near 0, unit
    /// loadings, zero initial state; small jitter separates the regimes.
    pub fn new(store: &mut ParamStore, r: usize, p: usize, regimes: usize, rng: &mut impl Rng) -> Self {
        let mut raw = Tensor::zeros(regimes, p * r);
        for k in 0..regimes {
            for j in 0..p {
                for i in 0..r {
                    let base = if j == 0 { 0.5f64.atanh() } else { 0.0 };
                    raw.set(k, j * r + i, base + rng.random_range(-0.05..0.05));
                }
            }
        }
        Self {
            r,
            p,
            regimes,
            raw: store.add("dynamics.raw", raw),
            b: store.add("dynamics.b", Tensor::ones(regimes, r)),
            s0: store.add("dynamics.s0", Tensor::zeros(p, r)),
        }
    }

    /// Overwrite every regime with the same AR coefficients (jittered by
    /// `jitter` in raw space) and set the loadings and initial state.
    pub fn initialize(
        &self,
        store: &mut ParamStore,
        phi: &[Vec<f64>],
        b: &[f64],
        s0: Tensor,
        jitter: f64,
        rng: &mut impl Rng,
    ) -> Result<()> {
        let single = DiagonalDynamics::from_ar(phi, b, s0.clone())?;
        let mut raw = Tensor::zeros(self.regimes, self.p * self.r);
        let mut bt = Tensor::zeros(self.regimes, self.r);
        for k in 0..self.regimes {
            for c in 0..self.p * self.r {
                let noise = if jitter > 0.0 {
                    rng.random_range(-jitter..jitter)
                } else {
                    0.0
                };
                raw.set(k, c, single.raw.get(0, c) + noise);
            }
            bt.row_mut(k).copy_from_slice(b);
        }
        store.set(self.raw, raw)?;
        store.set(self.b, bt)?;
        store.set(self.s0, s0)
    }

    /// Mixed AR coefficients (`p x r`) and loadings (`1 x r`) for a `1 x K`
    /// weight row.
    pub fn effective(&self, g: &mut Graph, params: &Bound, pi: Var) -> Result<(Var, Var)> {
        let kappa_k = g.tanh(params.var(self.raw))?;
        let kappa = g.matmul(pi, kappa_k)?;
        let rows = (0..self.p)
            .map(|j| g.slice_cols(kappa, j * self.r, self.r))
            .collect::<Result<Vec<_>>>()?;
        let phi_rows = pacf_to_ar_graph(g, &rows)?;
        let phi = g.concat_rows(&phi_rows)?;
        let b = g.matmul(pi, params.var(self.b))?;
        Ok((phi, b))
    }

    /// Factors `T x r` from innovations `T x r` under weights `pi` (`1 x K`).
    pub fn rollout(&self, g: &mut Graph, params: &Bound, pi: Var, eta: Var) -> Result<Var> {
        let (phi, b) = self.effective(g, params, pi)?;
        g.ar_recurrence(eta, phi, b, params.var(self.s0))
    }

    pub fn snapshot(&self, store: &ParamStore) -> DiagonalDynamics {
        DiagonalDynamics {
            r: self.r,
            p: self.p,
            regimes: self.regimes,
            raw: store.get(self.raw).clone(),
            b: store.get(self.b).clone(),
            s0: store.get(self.s0).clone(),
        }
    }
}
