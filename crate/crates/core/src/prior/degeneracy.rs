//! Rotation experiments on linear factor models.
//!
//! With Gaussian innovations, rotating the innovations (`eta -> R eta`) and
//! absorbing `R` into the dynamics and loadings leaves the data likelihood
//! unchanged. With Laplace innovations the rotated product density is a
//! different law, so the likelihood moves.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use super::Family;
use crate::error::{invalid, Error, Result};
use crate::linalg::{gaussian_matrix, random_orthogonal, Mat};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DegeneracyResult {
    pub ll_original: f64,
    pub ll_rotated: f64,
}

impl DegeneracyResult {
    pub fn abs_diff(&self) -> f64 {
        (self.ll_original - self.ll_rotated).abs()
    }
}

const DEMO_R: usize = 2;
const DEMO_N: usize = 4;
const DEMO_T: usize = 20;
const DEMO_NOISE: f64 = 0.1;
const NOISELESS_T: usize = 50;

/// Linear Gaussian state space `f_t = A f_{t-1} + eta_t`, `f_0 = 0`,
/// `eta_t ~ N(mu, S)`, `y_t = C f_t + N(0, noise I)`.
struct LinearGaussian {
    a: Mat,
    c: Mat,
    mu: Mat,
    s: Mat,
    noise: f64,
}

impl LinearGaussian {
    /// Joint mean and covariance of the stacked `y_1 .. y_T`.
    fn moments(&self, t_len: usize) -> (Mat, Mat) {
        let (n, r) = self.c.shape();
        let mut powers = vec![Mat::identity(r, r)];
        for j in 1..t_len {
            powers.push(&self.a * &powers[j - 1]);
        }
        // F = L eta with block (t, s) = A^(t-s) for s <= t
        let mut l = Mat::zeros(r * t_len, r * t_len);
        for t in 0..t_len {
            for s in 0..=t {
                l.view_mut((t * r, s * r), (r, r)).copy_from(&powers[t - s]);
            }
        }
        let mut cbig = Mat::zeros(n * t_len, r * t_len);
        let mut sbig = Mat::zeros(r * t_len, r * t_len);
        let mut mu_big = Mat::zeros(r * t_len, 1);
        for t in 0..t_len {
            cbig.view_mut((t * n, t * r), (n, r)).copy_from(&self.c);
            sbig.view_mut((t * r, t * r), (r, r)).copy_from(&self.s);
            mu_big.view_mut((t * r, 0), (r, 1)).copy_from(&self.mu);
        }
        let cl = &cbig * &l;
        let mean = &cl * mu_big;
        let cov = &cl * sbig * cl.transpose() + Mat::identity(n * t_len, n * t_len) * self.noise;
        (mean, cov)
    }

    fn log_likelihood(&self, y: &Mat) -> Result<f64> {
        let (mean, cov) = self.moments(y.nrows());
        let d = y.len();
        // stack rows of y
        let yv = Mat::from_iterator(d, 1, y.transpose().iter().cloned());
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::Numerical("observation covariance is not positive definite".into()))?;
        let resid = yv - mean;
        let z = chol
            .l()
            .solve_lower_triangular(&resid)
            .ok_or_else(|| Error::Numerical("triangular solve".into()))?;
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(-0.5 * (d as f64 * (2.0 * PI).ln() + log_det + z.norm_squared()))
    }

    fn simulate(&self, t_len: usize, rng: &mut impl Rng) -> Mat {
        let (n, r) = self.c.shape();
        let s_chol = self
            .s
            .clone()
            .cholesky()
            .expect("innovation covariance is positive definite")
            .l();
        let mut f = Mat::zeros(r, 1);
        let mut y = Mat::zeros(t_len, n);
        for t in 0..t_len {
            let z = Mat::from_fn(r, 1, |_, _| StandardNormal.sample(rng));
            f = &self.a * f + &self.mu + &s_chol * z;
            let obs = &self.c * &f;
            for i in 0..n {
                let e: f64 = StandardNormal.sample(rng);
                y[(t, i)] = obs[(i, 0)] + self.noise.sqrt() * e;
            }
        }
        y
    }

    fn rotated(&self, rot: &Mat) -> Self {
        let rt = rot.transpose();
        Self {
            a: rot * &self.a * &rt,
            c: &self.c * &rt,
            mu: rot * &self.mu,
            s: rot * &self.s * &rt,
            noise: self.noise,
        }
    }
}

fn check_orthogonal(rot: &Mat) -> Result<()> {
    if !rot.is_square() {
        return invalid(format!("rotation must be square, got {:?}", rot.shape()));
    }
    let err = (rot.transpose() * rot - Mat::identity(rot.nrows(), rot.ncols())).norm();
    if !(err <= 1e-10) {
        return invalid(format!("rotation is not orthogonal: ||R^T R - I|| = {err:e}"));
    }
    Ok(())
}

fn stable_diagonal(r: usize, rng: &mut impl Rng) -> Mat {
    Mat::from_diagonal(&nalgebra::DVector::from_fn(r, |_, _| rng.random_range(-0.8..0.8)))
}

/// Random Gaussian model and data from `seed`, evaluated under the original
/// parameters and under the `rotation`-transformed ones.
pub fn gaussian_degeneracy_with_rotation(seed: u64, rotation: &Mat) -> Result<DegeneracyResult> {
    check_orthogonal(rotation)?;
    let r = rotation.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scales = nalgebra::DVector::from_fn(r, |_, _| rng.random_range(0.5..1.5));
    let model = LinearGaussian {
        a: stable_diagonal(r, &mut rng),
        c: gaussian_matrix(DEMO_N.max(r), r, &mut rng),
        mu: gaussian_matrix(r, 1, &mut rng),
        s: Mat::from_diagonal(&scales.map(|b| b * b)),
        noise: DEMO_NOISE,
    };
    let y = model.simulate(DEMO_T, &mut rng);
    Ok(DegeneracyResult {
        ll_original: model.log_likelihood(&y)?,
        ll_rotated: model.rotated(rotation).log_likelihood(&y)?,
    })
}

/// The Haar-random 2x2 orthogonal matrix used by the demos for `seed`.
pub fn demo_rotation(seed: u64) -> Mat {
    random_orthogonal(DEMO_R, &mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0001))
}

/// Frobenius distance from `q` to the nearest signed permutation matrix.
pub fn distance_to_signed_permutation(q: &Mat) -> f64 {
    let r = q.nrows();
    let abs: Vec<Vec<f64>> = (0..r).map(|i| (0..r).map(|j| q[(i, j)].abs()).collect()).collect();
    let assign = crate::metrics::max_weight_assignment(&abs);
    let mut p = Mat::zeros(r, r);
    for (i, &j) in assign.iter().enumerate() {
        p[(i, j)] = q[(i, j)].signum();
    }
    (q - p).norm()
}

/// [`gaussian_degeneracy_with_rotation`] with [`demo_rotation`].
pub fn gaussian_degeneracy_demo(seed: u64) -> Result<DegeneracyResult> {
    gaussian_degeneracy_with_rotation(seed, &demo_rotation(seed))
}

/// Square, noiseless model `y_t = C f_t`, `f_t = A f_{t-1} + eta_t` with
/// product-`family` innovations of location `mu` and common scale `b`. The
/// exact likelihood is the innovation density at `eta_t` recovered by
/// inverting `C`, minus `T log|det C|`. The rotated model uses `R A R^T`,
/// `C R^T` and product-`family(R mu, b)`.
pub fn noiseless_rotation_loglik(family: Family, seed: u64, rotation: &Mat) -> Result<DegeneracyResult> {
    check_orthogonal(rotation)?;
    family.validate()?;
    let r = rotation.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = stable_diagonal(r, &mut rng);
    let c = gaussian_matrix(r, r, &mut rng) + Mat::identity(r, r) * 2.0;
    let mu = gaussian_matrix(r, 1, &mut rng);
    let b = 1.0;

    let mut f = Mat::zeros(r, 1);
    let mut y = Vec::with_capacity(NOISELESS_T);
    for _ in 0..NOISELESS_T {
        let eta = Mat::from_fn(r, 1, |i, _| family.sample(mu[(i, 0)], b, &mut rng));
        f = &a * f + eta;
        y.push(&c * &f);
    }

    let loglik = |a: &Mat, c: &Mat, mu: &Mat| -> Result<f64> {
        let lu = c.clone().lu();
        let det = lu.determinant();
        if det.abs() < 1e-12 {
            return Err(Error::Numerical("loading matrix is singular".into()));
        }
        let mut prev = Mat::zeros(r, 1);
        let mut ll = -(NOISELESS_T as f64) * det.abs().ln();
        for yt in &y {
            let ft = lu.solve(yt).ok_or_else(|| Error::Numerical("loading solve".into()))?;
            let eta = &ft - a * &prev;
            ll += (0..r)
                .map(|i| family.log_density(eta[(i, 0)], mu[(i, 0)], b))
                .sum::<f64>();
            prev = ft;
        }
        Ok(ll)
    };
    let rt = rotation.transpose();
    Ok(DegeneracyResult {
        ll_original: loglik(&a, &c, &mu)?,
        ll_rotated: loglik(&(rotation * &a * &rt), &(&c * &rt), &(rotation * &mu))?,
    })
}

/// Laplace counterpart of [`gaussian_degeneracy_demo`] with a random 2x2
/// rotation.
pub fn laplace_rotation_demo(seed: u64) -> Result<DegeneracyResult> {
    noiseless_rotation_loglik(Family::Laplace, seed, &demo_rotation(seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn signed_permutation_distance() {
        let swap = Mat::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert_eq!(distance_to_signed_permutation(&swap), 0.0);
        let c = std::f64::consts::FRAC_1_SQRT_2;
        let q = Mat::from_row_slice(2, 2, &[c, -c, c, c]);
        assert!((distance_to_signed_permutation(&q) - (2.0 * (1.0 - c).powi(2) + 2.0 * c * c).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn identity_rotation_is_exact() {
        let res = gaussian_degeneracy_with_rotation(3, &Mat::identity(2, 2)).unwrap();
        assert_eq!(res.ll_original, res.ll_rotated);
        let res = noiseless_rotation_loglik(Family::Laplace, 3, &Mat::identity(3, 3)).unwrap();
        assert_eq!(res.ll_original, res.ll_rotated);
    }

    #[test]
    fn gaussian_likelihood_is_rotation_invariant() {
        for seed in 0..20 {
            let res = gaussian_degeneracy_demo(seed).unwrap();
            assert!(res.ll_original.is_finite());
            assert!(res.abs_diff() < 1e-8, "seed {seed}: {res:?}");
        }
    }

    #[test]
    fn spherical_gaussian_noiseless_is_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rot = random_orthogonal(3, &mut rng);
        let res = noiseless_rotation_loglik(Family::Gaussian, 4, &rot).unwrap();
        assert!(res.abs_diff() < 1e-8, "{res:?}");
    }

    #[test]
    fn laplace_likelihood_moves() {
        let moved = (0..20)
            .filter(|&s| laplace_rotation_demo(s).unwrap().abs_diff() > 1e-3)
            .count();
        assert!(moved >= 18, "{moved}");
    }

    #[test]
    fn rejects_non_orthogonal() {
        let bad = Mat::from_row_slice(2, 2, &[1.0, 0.1, 0.0, 1.0]);
        assert!(gaussian_degeneracy_with_rotation(0, &bad).is_err());
        assert!(noiseless_rotation_loglik(Family::Laplace, 0, &bad).is_err());
    }

    #[test]
    fn likelihood_matches_direct_density_for_one_step() {
        // T = 1: y ~ N(C mu, C S C^T + noise I)
        let model = LinearGaussian {
            a: Mat::from_row_slice(1, 1, &[0.5]),
            c: Mat::from_row_slice(2, 1, &[1.0, -2.0]),
            mu: Mat::from_row_slice(1, 1, &[0.3]),
            s: Mat::from_row_slice(1, 1, &[0.8]),
            noise: 0.1,
        };
        let y = Mat::from_row_slice(1, 2, &[0.7, -0.1]);
        let ll = model.log_likelihood(&y).unwrap();
        let (m0, m1) = (0.3, -0.6);
        let (c00, c01, c11): (f64, f64, f64) = (0.8 + 0.1, -1.6, 3.2 + 0.1);
        let det = c00 * c11 - c01 * c01;
        let (d0, d1) = (0.7 - m0, -0.1 - m1);
        let quad = (c11 * d0 * d0 - 2.0 * c01 * d0 * d1 + c00 * d1 * d1) / det;
        let expect = -0.5 * (2.0 * (2.0 * PI).ln() + det.ln() + quad);
        assert!((ll - expect).abs() < 1e-12);
    }
}
