use std::f64::consts::{LN_2, PI};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Graph, Var};
use crate::error::{Error, Result};

/// Per-component innovation law, parameterized by location `m` and scale `b`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    #[default]
    Laplace,
    Gaussian,
    StudentT {
        nu: f64,
    },
}

impl Family {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Family::StudentT { nu } if !(nu > 2.0) => Err(Error::InvalidArgument(format!(
                "Student-t innovations need nu > 2 for finite variance, got {nu}"
            ))),
            _ => Ok(()),
        }
    }

    /// Closed-form log-density at `x`.
    pub fn log_density(&self, x: f64, m: f64, b: f64) -> f64 {
        let z = (x - m) / b;
        match *self {
            Family::Laplace => -LN_2 - b.ln() - z.abs(),
            Family::Gaussian => -0.5 * (2.0 * PI).ln() - b.ln() - 0.5 * z * z,
            Family::StudentT { nu } => student_t_norm(nu) - b.ln() - 0.5 * (nu + 1.0) * (z * z / nu).ln_1p(),
        }
    }

    pub fn sample(&self, m: f64, b: f64, rng: &mut impl Rng) -> f64 {
        match *self {
            Family::Laplace => {
                // inverse CDF on u in (-1/2, 1/2)
                let u: f64 = rng.random::<f64>() - 0.5;
                m - b * u.signum() * (1.0 - 2.0 * u.abs()).max(f64::MIN_POSITIVE).ln()
            }
            Family::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                m + b * z
            }
            Family::StudentT { nu } => {
                let z: f64 = StandardNormal.sample(rng);
                let chi2 = rand_distr::ChiSquared::new(nu).expect("nu > 0").sample(rng);
                m + b * z / (chi2 / nu).sqrt()
            }
        }
    }

    /// Variance of one component with scale `b`.
    pub fn variance(&self, b: f64) -> f64 {
        match *self {
            Family::Laplace => 2.0 * b * b,
            Family::Gaussian => b * b,
            Family::StudentT { nu } => b * b * nu / (nu - 2.0),
        }
    }

    /// Natural-parameter coordinates of `(m, b)` used by the rank diagnostic:
    /// Gaussian `(m/b^2, -1/(2b^2))`; Laplace `(m/b, -1/b)`; Student-t
    /// `(m/b^2, -1/b^2)`.
    pub fn natural_params(&self, m: f64, b: f64) -> [f64; 2] {
        match *self {
            Family::Gaussian => [m / (b * b), -0.5 / (b * b)],
            Family::Laplace => [m / b, -1.0 / b],
            Family::StudentT { .. } => [m / (b * b), -1.0 / (b * b)],
        }
    }

    /// Elementwise log-densities of `eta` given location `m` and log-scale
    /// `log_b`, all the same shape.
    pub fn log_density_graph(&self, g: &mut Graph, eta: Var, m: Var, log_b: Var) -> Result<Var> {
        let diff = g.sub(eta, m)?;
        let neg_log_b = g.scale(log_b, -1.0)?;
        let inv_b = g.exp(neg_log_b)?;
        let z = g.mul(diff, inv_b)?;
        match *self {
            Family::Laplace => {
                let a = g.abs(z)?;
                let s = g.add(a, log_b)?;
                let s = g.scale(s, -1.0)?;
                g.add_scalar(s, -LN_2)
            }
            Family::Gaussian => {
                let q = g.square(z)?;
                let q = g.scale(q, 0.5)?;
                let s = g.add(q, log_b)?;
                let s = g.scale(s, -1.0)?;
                g.add_scalar(s, -0.5 * (2.0 * PI).ln())
            }
            Family::StudentT { nu } => {
                let q = g.square(z)?;
                let q = g.scale(q, 1.0 / nu)?;
                let q = g.add_scalar(q, 1.0)?;
                let q = g.log(q)?;
                let q = g.scale(q, 0.5 * (nu + 1.0))?;
                let s = g.add(q, log_b)?;
                let s = g.scale(s, -1.0)?;
                g.add_scalar(s, student_t_norm(nu))
            }
        }
    }
}

fn student_t_norm(nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (nu * PI).ln()
}

/// Lanczos approximation (g = 7, n = 9), accurate to ~1e-15 for x > 0.
pub(crate) fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + 7.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}
