//! Linear dynamic factor model baseline: principal components of the
//! standardized panel with per-factor OLS AR(p) fits.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{invalid, Error, Result};
use crate::linalg::{column_stats, fit_ar_ols, pca};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaDfm {
    /// `N x r`, orthonormal columns.
    pub loadings: Tensor,
    /// Per-factor AR coefficients, lag 1 first.
    pub ar_coeffs: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub singular_values: Vec<f64>,
}

impl PcaDfm {
    fn standardize(&self, y: &Tensor) -> Result<Tensor> {
        if y.cols() != self.means.len() {
            return invalid(format!(
                "model was fit on {} series, got {}",
                self.means.len(),
                y.cols()
            ));
        }
        let mut out = y.clone();
        for t in 0..y.rows() {
            for (j, v) in out.row_mut(t).iter_mut().enumerate() {
                *v = (*v - self.means[j]) / self.stds[j];
            }
        }
        Ok(out)
    }
}

pub fn fit_pca_dfm(y: &Tensor, r: usize, p: usize) -> Result<PcaDfm> {
    let (t_len, n) = y.dims();
    if r == 0 || r > n {
        return invalid(format!("need 1 <= r <= N, got r = {r}, N = {n}"));
    }
    if t_len <= p + r {
        return invalid(format!("T = {t_len} is too short for r = {r}, p = {p}"));
    }
    let (means, raw_stds) = column_stats(&y.to_dmatrix());
    if raw_stds.iter().all(|s| *s <= 1e-12) {
        return Err(Error::Numerical(
            "degenerate covariance: every series is constant".into(),
        ));
    }
    let stds: Vec<f64> = raw_stds.iter().map(|&s| if s > 1e-12 { s } else { 1.0 }).collect();
    let mut model = PcaDfm {
        loadings: Tensor::zeros(n, r),
        ar_coeffs: Vec::new(),
        means,
        stds,
        singular_values: Vec::new(),
    };
    let x = model.standardize(y)?;
    let (scores, loadings, sv) = pca(&x.to_dmatrix(), r)?;
    model.loadings = Tensor::from_dmatrix(&loadings);
    model.singular_values = sv;
    let scores = Tensor::from_dmatrix(&scores);
    model.ar_coeffs = (0..r)
        .map(|i| {
            fit_ar_ols(&scores.column(i), p).unwrap_or_else(|| {
                warn!("OLS AR fit of factor {i} is singular; using zeros");
                vec![0.0; p]
            })
        })
        .collect();
    Ok(model)
}

/// Standardized `y` projected on the loadings.
pub fn baseline_factors(model: &PcaDfm, y: &Tensor) -> Result<Tensor> {
    let x = model.standardize(y)?;
    x.matmul(&model.loadings)
}
