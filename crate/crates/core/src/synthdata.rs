//! Synthetic data: segment-conditioned static and dynamic factor DGPs, and
//! the linear structural systems used for intervention experiments.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::dynamics::build_companion;
use crate::error::{invalid, Error, Result};
use crate::linalg::{gaussian_matrix, random_orthogonal, Mat};
use crate::prior::Family;

/// Number of contiguous auxiliary segments.
pub const SEGMENTS: usize = 5;
const LEAKY_SLOPE: f64 = 0.2;
const NOISE_STD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DgpKind {
    Static,
    Dynamic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    pub kind: DgpKind,
    /// `T x N` observations.
    pub y: Tensor,
    /// `T x r` true factors.
    pub f_true: Tensor,
    /// `T x r` innovations (dynamic DGP only).
    pub eta: Option<Tensor>,
    /// `T x SEGMENTS` one-hot segment indicator.
    pub u: Tensor,
    pub segments: Vec<usize>,
    /// Per-factor AR coefficients (dynamic DGP only).
    pub ar_coeffs: Option<Vec<Vec<f64>>>,
    pub seed: u64,
}

/// Segment of step `t` out of `t_len`.
pub fn segment_of(t: usize, t_len: usize) -> usize {
    (t * SEGMENTS / t_len.max(1)).min(SEGMENTS - 1)
}

/// Per-segment Laplace locations and log-uniform scales, one row per segment.
fn segment_laws(r: usize, rng: &mut impl Rng) -> (Mat, Mat) {
    let m = Mat::from_fn(SEGMENTS, r, |_, _| rng.random_range(-1.0..1.0));
    let b = Mat::from_fn(SEGMENTS, r, |_, _| rng.random_range(0.2f64.ln()..2.5f64.ln()).exp());
    (m, b)
}

/// Two-layer random network `y = W2 leaky(W1 f)` with orthonormal weights.
#[derive(Clone, Debug)]
pub struct Mixing {
    w1: Mat,
    w2: Mat,
}

impl Mixing {
    pub fn random(n: usize, r: usize, rng: &mut impl Rng) -> Self {
        let q = random_orthogonal(n, rng);
        Self {
            w1: q.columns(0, r).into_owned(),
            w2: random_orthogonal(n, rng),
        }
    }

    pub fn apply(&self, f: &Tensor) -> Tensor {
        let h = (f.to_dmatrix() * self.w1.transpose()).map(|v| if v >= 0.0 { v } else { LEAKY_SLOPE * v });
        Tensor::from_dmatrix(&(h * self.w2.transpose()))
    }
}

fn check_sizes(t_len: usize, n: usize, r: usize) -> Result<()> {
    if r == 0 || t_len == 0 {
        return invalid("T and r must be positive");
    }
    if r > n {
        return invalid(format!("r = {r} exceeds N = {n}"));
    }
    Ok(())
}

fn segment_indicator(t_len: usize) -> (Tensor, Vec<usize>) {
    let segments: Vec<usize> = (0..t_len).map(|t| segment_of(t, t_len)).collect();
    let mut u = Tensor::zeros(t_len, SEGMENTS);
    for (t, &s) in segments.iter().enumerate() {
        u.set(t, s, 1.0);
    }
    (u, segments)
}

fn observe(mix: &Mixing, f: &Tensor, rng: &mut impl Rng) -> Tensor {
    let mut y = mix.apply(f);
    for v in y.data_mut() {
        let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
        *v += NOISE_STD * z;
    }
    y
}

/// Latents drawn independently per step from segment-dependent Laplace laws.
pub fn gen_static_dgp(t_len: usize, n: usize, r: usize, seed: u64) -> Result<SyntheticDataset> {
    check_sizes(t_len, n, r)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, b) = segment_laws(r, &mut rng);
    let mix = Mixing::random(n, r, &mut rng);
    let (u, segments) = segment_indicator(t_len);
    let mut f = Tensor::zeros(t_len, r);
    for t in 0..t_len {
        let s = segments[t];
        for i in 0..r {
            f.set(t, i, Family::Laplace.sample(m[(s, i)], b[(s, i)], &mut rng));
        }
    }
    let y = observe(&mix, &f, &mut rng);
    Ok(SyntheticDataset {
        kind: DgpKind::Static,
        y,
        f_true: f,
        eta: None,
        u,
        segments,
        ar_coeffs: None,
        seed,
    })
}

/// Stable AR(p) coefficients for one factor: squashed draws, rejected when
/// the companion spectral radius reaches 0.98.
fn sample_ar(p: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    for _ in 0..100 {
        let phi: Vec<f64> = (0..p)
            .map(|j| {
                if j == 0 {
                    rng.random_range(0.3f64..1.2).tanh()
                } else {
                    0.5 * rng.random_range(-0.6f64..0.6).tanh()
                }
            })
            .collect();
        let sys = build_companion(&Mat::from_row_slice(1, p, &phi), &[1.0])?;
        let radius = sys.a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        if radius < 0.98 {
            return Ok(phi);
        }
    }
    Err(Error::Numerical(
        "could not draw stable AR coefficients in 100 tries".into(),
    ))
}

/// Scalar AR recursion from a zero initial state.
pub fn simulate_ar(phi: &[Vec<f64>], eta: &Tensor) -> Tensor {
    let (t_len, r) = eta.dims();
    let mut f = Tensor::zeros(t_len, r);
    for i in 0..r {
        for t in 0..t_len {
            let mut v = eta.get(t, i);
            for (j, c) in phi[i].iter().enumerate() {
                if t > j {
                    v += c * f.get(t - 1 - j, i);
                }
            }
            f.set(t, i, v);
        }
    }
    f
}

pub fn gen_dynamic_dgp(t_len: usize, n: usize, r: usize, p: usize, seed: u64) -> Result<SyntheticDataset> {
    gen_dynamic_dgp_with(t_len, n, r, p, seed, None)
}

/// [`gen_dynamic_dgp`] with optional replacement innovations.
pub fn gen_dynamic_dgp_with(
    t_len: usize,
    n: usize,
    r: usize,
    p: usize,
    seed: u64,
    eta_override: Option<&Tensor>,
) -> Result<SyntheticDataset> {
    check_sizes(t_len, n, r)?;
    if p == 0 {
        return invalid("AR order must be at least 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, b) = segment_laws(r, &mut rng);
    let mix = Mixing::random(n, r, &mut rng);
    let phi = (0..r).map(|_| sample_ar(p, &mut rng)).collect::<Result<Vec<_>>>()?;
    let (u, segments) = segment_indicator(t_len);
    let mut eta = Tensor::zeros(t_len, r);
    for t in 0..t_len {
        let s = segments[t];
        for i in 0..r {
            eta.set(t, i, Family::Laplace.sample(m[(s, i)], b[(s, i)], &mut rng));
        }
    }
    if let Some(e) = eta_override {
        if e.dims() != (t_len, r) {
            return invalid(format!("innovation override has shape {:?}", e.shape()));
        }
        eta = e.clone();
    }
    let f = simulate_ar(&phi, &eta);
    let y = observe(&mix, &f, &mut rng);
    Ok(SyntheticDataset {
        kind: DgpKind::Dynamic,
        y,
        f_true: f,
        eta: Some(eta),
        u,
        segments,
        ar_coeffs: Some(phi),
        seed,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScmVariant {
    Base,
    Regime,
    Chain,
}

impl ScmVariant {
    pub const ALL: [ScmVariant; 3] = [ScmVariant::Base, ScmVariant::Regime, ScmVariant::Chain];

    pub fn name(self) -> &'static str {
        match self {
            ScmVariant::Base => "base",
            ScmVariant::Regime => "regime",
            ScmVariant::Chain => "chain",
        }
    }
}

/// Linear structural system `f_t = A_t f_{t-1} + eps_t`, `f_0 = 0`,
/// `y_t = C f_t` (or a fixed nonlinear map of `C f_t`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScmSpec {
    pub variant: ScmVariant,
    pub r: usize,
    pub n: usize,
    /// Base: `A = rho I`.
    pub rho: f64,
    /// Chain: diagonal of `A`.
    pub chain_diag: f64,
    /// Chain: weight of factor `i` on factor `i+1`.
    pub chain_link: f64,
    /// Regime: `A = rho_k I`, alternating every `regime_period` steps.
    pub regime_rhos: [f64; 2],
    pub regime_period: usize,
    /// Laplace scale of the shocks.
    pub shock_scale: f64,
    /// Seed of the loading matrix `C`.
    pub loading_seed: u64,
    pub nonlinear: bool,
}

impl Default for ScmSpec {
    fn default() -> Self {
        Self {
            variant: ScmVariant::Base,
            r: 3,
            n: 10,
            rho: 0.7,
            chain_diag: 0.6,
            chain_link: 0.3,
            regime_rhos: [0.4, 0.8],
            regime_period: 50,
            shock_scale: 1.0,
            loading_seed: 0,
            nonlinear: false,
        }
    }
}

impl ScmSpec {
    pub fn new(variant: ScmVariant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    /// `N x r` loadings with unit-variance Gaussian entries scaled by `1/sqrt(r)`.
    pub fn loadings(&self) -> Mat {
        let mut rng = ChaCha8Rng::seed_from_u64(self.loading_seed);
        gaussian_matrix(self.n, self.r, &mut rng) / (self.r as f64).sqrt()
    }

    /// `A_t` in `f_t = A_t f_{t-1} + eps_t`.
    pub fn transition(&self, t: usize) -> Mat {
        let r = self.r;
        match self.variant {
            ScmVariant::Base => Mat::identity(r, r) * self.rho,
            ScmVariant::Regime => {
                let k = (t / self.regime_period.max(1)) % 2;
                Mat::identity(r, r) * self.regime_rhos[k]
            }
            ScmVariant::Chain => {
                let mut a = Mat::identity(r, r) * self.chain_diag;
                for i in 0..r.saturating_sub(1) {
                    a[(i + 1, i)] = self.chain_link;
                }
                a
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.r == 0 || self.n == 0 {
            return invalid("SCM dimensions must be positive");
        }
        if !(self.shock_scale > 0.0) {
            return invalid("shock scale must be positive");
        }
        let mats = match self.variant {
            ScmVariant::Regime => vec![self.transition(0), self.transition(self.regime_period.max(1))],
            _ => vec![self.transition(0)],
        };
        for a in mats {
            let radius = a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
            if !(radius < 1.0) {
                return invalid(format!("SCM transition has spectral radius {radius} >= 1"));
            }
        }
        Ok(())
    }

    fn observe(&self, c: &Mat, f: &Mat) -> Mat {
        let lin = c * f;
        if self.nonlinear {
            lin.map(|v| v + 0.5 * v.tanh())
        } else {
            lin
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScmData {
    pub y: Tensor,
    pub f: Tensor,
    pub shocks: Tensor,
}

/// Replay the system on given shocks (`T x r`).
pub fn simulate_scm(spec: &ScmSpec, shocks: &Tensor) -> Result<ScmData> {
    spec.validate()?;
    let (t_len, r) = shocks.dims();
    if r != spec.r {
        return invalid(format!("shocks have {r} columns, SCM has r = {}", spec.r));
    }
    let c = spec.loadings();
    let mut f = Mat::zeros(r, 1);
    let mut fs = Tensor::zeros(t_len, r);
    let mut ys = Tensor::zeros(t_len, spec.n);
    for t in 0..t_len {
        f = spec.transition(t) * f + Mat::from_row_slice(r, 1, shocks.row(t));
        fs.row_mut(t).copy_from_slice(f.as_slice());
        ys.row_mut(t).copy_from_slice(spec.observe(&c, &f).as_slice());
    }
    Ok(ScmData {
        y: ys,
        f: fs,
        shocks: shocks.clone(),
    })
}

pub fn gen_scm(spec: &ScmSpec, t_len: usize, seed: u64) -> Result<ScmData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shocks = Tensor::matrix(
        t_len,
        spec.r,
        (0..t_len * spec.r)
            .map(|_| Family::Laplace.sample(0.0, spec.shock_scale, &mut rng))
            .collect(),
    );
    simulate_scm(spec, &shocks)
}

/// `(H+1) x N` response of `y_{t0+h}` to setting shock `k` at `t0` to `c`
/// (relative to a zero shock): `c C A_{t0+h} ... A_{t0+1} e_k`.
pub fn true_irf(spec: &ScmSpec, k: usize, c: f64, horizon: usize, t0: usize) -> Result<Tensor> {
    spec.validate()?;
    if spec.nonlinear {
        return invalid("analytic IRF is undefined for a nonlinear observation map; use simulate_scm differences");
    }
    if k >= spec.r {
        return invalid(format!("shock component {k} out of range for r = {}", spec.r));
    }
    let cm = spec.loadings();
    let mut state = Mat::zeros(spec.r, 1);
    state[(k, 0)] = c;
    let mut out = Tensor::zeros(horizon + 1, spec.n);
    for h in 0..=horizon {
        if h > 0 {
            state = spec.transition(t0 + h) * state;
        }
        out.row_mut(h).copy_from_slice((&cm * &state).as_slice());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::pearson;

    #[test]
    fn static_shapes_and_determinism() {
        let a = gen_static_dgp(200, 20, 5, 7).unwrap();
        assert_eq!(a.y.dims(), (200, 20));
        assert_eq!(a.f_true.dims(), (200, 5));
        assert_eq!(a, gen_static_dgp(200, 20, 5, 7).unwrap());
        assert!(gen_static_dgp(10, 3, 4, 0).is_err());
    }

    #[test]
    fn static_latents_are_nearly_uncorrelated() {
        let d = gen_static_dgp(2000, 10, 4, 1).unwrap();
        for i in 0..4 {
            for j in i + 1..4 {
                let c = pearson(&d.f_true.column(i), &d.f_true.column(j)).unwrap();
                assert!(c.abs() < 0.2, "{i} {j}: {c}");
            }
        }
    }

    #[test]
    fn dynamic_coefficients_are_bounded_and_stable() {
        let d = gen_dynamic_dgp(200, 20, 5, 3, 2).unwrap();
        for phi in d.ar_coeffs.as_ref().unwrap() {
            assert!(phi.iter().all(|c| c.abs() < 1.0));
        }
        assert_eq!(d, gen_dynamic_dgp(200, 20, 5, 3, 2).unwrap());
    }

    #[test]
    fn zero_innovations_give_zero_factors() {
        let d = gen_dynamic_dgp_with(50, 6, 2, 2, 3, Some(&Tensor::zeros(50, 2))).unwrap();
        assert!(d.f_true.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dynamic_factors_match_scalar_simulator() {
        let d = gen_dynamic_dgp(120, 8, 3, 3, 4).unwrap();
        let eta = d.eta.as_ref().unwrap();
        let phi = d.ar_coeffs.as_ref().unwrap();
        for i in 0..3 {
            let mut hist = vec![0.0; 3];
            for t in 0..120 {
                let v = eta.get(t, i)
                    + phi[i][0] * hist[hist.len() - 1]
                    + phi[i][1] * hist[hist.len() - 2]
                    + phi[i][2] * hist[hist.len() - 3];
                hist.push(v);
                assert!((d.f_true.get(t, i) - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scm_null_and_memoryless() {
        let spec = ScmSpec::default();
        let d = simulate_scm(&spec, &Tensor::zeros(30, 3)).unwrap();
        assert!(d.y.data().iter().all(|&v| v == 0.0));
        let spec0 = ScmSpec {
            rho: 0.0,
            ..ScmSpec::default()
        };
        let d = gen_scm(&spec0, 40, 1).unwrap();
        assert_eq!(d.f, d.shocks);
        let bad = ScmSpec {
            rho: 1.0,
            ..ScmSpec::default()
        };
        assert!(gen_scm(&bad, 10, 0).is_err());
    }

    #[test]
    fn chain_shock_never_moves_upstream_factors() {
        let spec = ScmSpec::new(ScmVariant::Chain);
        let d = gen_scm(&spec, 60, 2).unwrap();
        let mut shocked = d.shocks.clone();
        shocked.set(20, 2, d.shocks.get(20, 2) + 3.0);
        let d2 = simulate_scm(&spec, &shocked).unwrap();
        for t in 0..60 {
            assert_eq!(d.f.get(t, 0), d2.f.get(t, 0));
            assert_eq!(d.f.get(t, 1), d2.f.get(t, 1));
        }
        let mut down = d.shocks.clone();
        down.set(20, 0, d.shocks.get(20, 0) + 3.0);
        let d3 = simulate_scm(&spec, &down).unwrap();
        assert_ne!(d.f.get(21, 1), d3.f.get(21, 1));
    }

    #[test]
    fn irf_examples() {
        let spec = ScmSpec::default();
        let c = spec.loadings();
        let irf = true_irf(&spec, 1, 2.0, 10, 100).unwrap();
        for j in 0..spec.n {
            assert_eq!(irf.get(0, j), 2.0 * c[(j, 1)]);
            for h in 0..=10 {
                let want = 2.0 * 0.7f64.powi(h as i32) * c[(j, 1)];
                assert!((irf.get(h, j) - want).abs() < 1e-12);
            }
        }
        let nl = ScmSpec {
            nonlinear: true,
            ..ScmSpec::default()
        };
        assert!(true_irf(&nl, 0, 1.0, 5, 0).is_err());
        assert!(true_irf(&spec, 3, 1.0, 5, 0).is_err());
    }

    #[test]
    fn irf_equals_paired_simulation_difference() {
        for variant in ScmVariant::ALL {
            let spec = ScmSpec::new(variant);
            let d = gen_scm(&spec, 200, 5).unwrap();
            for (k, t0) in [(0usize, 40usize), (2, 95), (1, 130)] {
                let mut base = d.shocks.clone();
                base.set(t0, k, 0.0);
                let mut doit = base.clone();
                doit.set(t0, k, 2.0);
                let (y0, y1) = (
                    simulate_scm(&spec, &base).unwrap().y,
                    simulate_scm(&spec, &doit).unwrap().y,
                );
                let irf = true_irf(&spec, k, 2.0, 10, t0).unwrap();
                for h in 0..=10 {
                    for j in 0..spec.n {
                        let diff = y1.get(t0 + h, j) - y0.get(t0 + h, j);
                        assert!((diff - irf.get(h, j)).abs() < 1e-10, "{variant:?} k={k} h={h}");
                    }
                }
            }
        }
    }

    #[test]
    fn stored_shocks_replay_exactly() {
        let spec = ScmSpec::new(ScmVariant::Regime);
        let d = gen_scm(&spec, 150, 6).unwrap();
        let replay = simulate_scm(&spec, &d.shocks).unwrap();
        assert!(replay.y.max_abs_diff(&d.y) < 1e-12);
    }
}
