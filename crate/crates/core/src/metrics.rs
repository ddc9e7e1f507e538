//! Factor-recovery, impulse-response and forecast metrics.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{invalid, Error, Result};
use crate::linalg::{center_columns, column_stats, orthonormal_basis, pearson, Mat};

/// Maximum-weight perfect matching on a square matrix (Hungarian algorithm
/// with potentials). Returns `assign[row] = col`.
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Vec<usize> {
    let n = weights.len();
    if n == 0 {
        return Vec::new();
    }
    // minimize cost = -w; 1-based arrays with a sentinel column 0
    let cost = |i: usize, j: usize| -weights[i - 1][j - 1];
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0, j) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=n {
        assign[p[j] - 1] = j - 1;
    }
    assign
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// `permutation[i]` is the recovered column matched to true column `i`.
    pub permutation: Vec<usize>,
    /// Signed correlation of each matched pair, indexed by true column.
    pub correlations: Vec<f64>,
    pub mcc: f64,
}

/// Pearson correlation matrix between the columns of `a` and `b`;
/// zero-variance columns get correlation 0.
pub fn cross_correlations(a: &Tensor, b: &Tensor) -> Result<Vec<Vec<f64>>> {
    if a.rows() != b.rows() {
        return invalid(format!("correlation inputs have {} and {} rows", a.rows(), b.rows()));
    }
    let ac: Vec<Vec<f64>> = (0..a.cols()).map(|j| a.column(j)).collect();
    let bc: Vec<Vec<f64>> = (0..b.cols()).map(|j| b.column(j)).collect();
    let mut out = vec![vec![0.0; b.cols()]; a.cols()];
    for (i, x) in ac.iter().enumerate() {
        for (j, y) in bc.iter().enumerate() {
            out[i][j] = match pearson(x, y) {
                Some(c) => c,
                None => {
                    warn!("zero-variance column in correlation ({i}, {j}); using 0");
                    0.0
                }
            };
        }
    }
    Ok(out)
}

/// Mean absolute correlation under the best one-to-one column matching.
pub fn mcc(f_true: &Tensor, f_hat: &Tensor) -> Result<MatchResult> {
    if f_true.dims() != f_hat.dims() {
        return Err(Error::ShapeMismatch {
            op: "mcc",
            left: f_true.shape().to_vec(),
            right: f_hat.shape().to_vec(),
        });
    }
    let corr = cross_correlations(f_true, f_hat)?;
    Ok(match_correlations(&corr))
}

/// Matching from a precomputed square correlation matrix.
pub fn match_correlations(corr: &[Vec<f64>]) -> MatchResult {
    let abs: Vec<Vec<f64>> = corr.iter().map(|r| r.iter().map(|v| v.abs()).collect()).collect();
    let permutation = max_weight_assignment(&abs);
    let correlations: Vec<f64> = permutation.iter().enumerate().map(|(i, &j)| corr[i][j]).collect();
    let r = correlations.len().max(1) as f64;
    let mcc = correlations.iter().map(|c| c.abs()).sum::<f64>() / r;
    MatchResult {
        permutation,
        correlations,
        mcc,
    }
}

fn to_mat(t: &Tensor) -> Mat {
    t.to_dmatrix()
}

/// Mean principal angle (radians) between the column spans.
pub fn subspace_distance(f_true: &Tensor, f_hat: &Tensor) -> Result<f64> {
    if f_true.rows() != f_hat.rows() {
        return invalid(format!(
            "subspace inputs have {} and {} rows",
            f_true.rows(),
            f_hat.rows()
        ));
    }
    let qa = orthonormal_basis(&to_mat(f_true), 1e-10);
    let qb = orthonormal_basis(&to_mat(f_hat), 1e-10);
    if qa.ncols() == 0 || qb.ncols() == 0 {
        return invalid("subspace distance needs inputs of rank at least 1");
    }
    if qa.ncols() < f_true.cols() || qb.ncols() < f_hat.cols() {
        warn!("rank-deficient input to subspace_distance; using the reduced rank");
    }
    // qa spans the larger space
    let (qa, qb) = if qa.ncols() >= qb.ncols() { (qa, qb) } else { (qb, qa) };
    let cross = qa.transpose() * &qb;
    let resid = &qb - &qa * &cross;
    let mut cosines: Vec<f64> = cross
        .svd(false, false)
        .singular_values
        .iter()
        .map(|s| s.clamp(0.0, 1.0))
        .collect();
    let mut sines: Vec<f64> = resid
        .svd(false, false)
        .singular_values
        .iter()
        .map(|s| s.clamp(0.0, 1.0))
        .collect();
    cosines.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sines.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = cosines.len();
    // atan2 of matched sine/cosine pairs is accurate for tiny and right angles alike
    Ok(cosines.iter().zip(&sines).map(|(c, s)| s.atan2(*c)).sum::<f64>() / k as f64)
}

/// Mean `l2` step size after per-column standardization (zero-variance
/// columns pass through unscaled).
pub fn smoothness(f_hat: &Tensor) -> Result<f64> {
    let t = f_hat.rows();
    if t < 2 {
        return invalid("smoothness needs at least two time steps");
    }
    let (_, stds) = column_stats(&to_mat(f_hat));
    let mut total = 0.0;
    for s in 1..t {
        let mut sq = 0.0;
        for (j, sd) in stds.iter().enumerate() {
            let scale = if *sd > 1e-12 { *sd } else { 1.0 };
            let d = (f_hat.get(s, j) - f_hat.get(s - 1, j)) / scale;
            sq += d * d;
        }
        total += sq.sqrt();
    }
    Ok(total / (t - 1) as f64)
}

/// Share of centered `f_true` variance explained by least squares on the
/// centered columns of `f_hat` (intercept included), clamped to `[0, 1]`.
pub fn trace_r2(f_true: &Tensor, f_hat: &Tensor) -> Result<f64> {
    if f_true.rows() != f_hat.rows() {
        return invalid(format!(
            "trace_r2 inputs have {} and {} rows",
            f_true.rows(),
            f_hat.rows()
        ));
    }
    if f_true.rows() <= f_hat.cols() {
        return invalid("trace_r2 needs more rows than regressors");
    }
    let y = center_columns(&to_mat(f_true));
    let x = center_columns(&to_mat(f_hat));
    let q = orthonormal_basis(&x, 1e-12);
    if q.ncols() < x.ncols() {
        warn!("singular design in trace_r2; projecting on the reduced span");
    }
    let resid = &y - &q * (q.transpose() * &y);
    let total = y.norm_squared();
    if total == 0.0 {
        return invalid("trace_r2: true factors have zero variance");
    }
    Ok((1.0 - resid.norm_squared() / total).clamp(0.0, 1.0))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IrfMetrics {
    pub mse: f64,
    pub mae: f64,
    pub sign_acc: f64,
    pub corr: f64,
}

/// `sign(x)` with `|x| < 1e-12` mapped to 0.
pub fn sign0(x: f64) -> i8 {
    if x.abs() < 1e-12 {
        0
    } else if x > 0.0 {
        1
    } else {
        -1
    }
}

pub fn irf_metrics(irf_true: &Tensor, irf_hat: &Tensor) -> Result<IrfMetrics> {
    if irf_true.dims() != irf_hat.dims() {
        return Err(Error::ShapeMismatch {
            op: "irf_metrics",
            left: irf_true.shape().to_vec(),
            right: irf_hat.shape().to_vec(),
        });
    }
    let n = irf_true.len() as f64;
    let (mut se, mut ae, mut hits) = (0.0, 0.0, 0usize);
    for (a, b) in irf_true.data().iter().zip(irf_hat.data()) {
        se += (a - b).powi(2);
        ae += (a - b).abs();
        hits += (sign0(*a) == sign0(*b)) as usize;
    }
    let corr = pearson(irf_true.data(), irf_hat.data()).unwrap_or_else(|| {
        warn!("constant IRF grid; correlation set to 0");
        0.0
    });
    Ok(IrfMetrics {
        mse: se / n,
        mae: ae / n,
        sign_acc: hits as f64 / n,
        corr,
    })
}

/// Quantile levels used by [`crps_quantile`].
pub const QUANTILE_LEVELS: [f64; 3] = [0.1, 0.5, 0.9];

pub fn pinball(tau: f64, q: f64, y: f64) -> f64 {
    let d = y - q;
    (tau * d).max((tau - 1.0) * d)
}

/// Twice the mean pinball loss over cells and the three levels.
/// `q[l]` is the `H x N` forecast at `QUANTILE_LEVELS[l]`.
pub fn crps_quantile(q: &[Tensor; 3], y: &Tensor) -> Result<f64> {
    for (l, ql) in q.iter().enumerate() {
        if ql.dims() != y.dims() {
            return Err(Error::ShapeMismatch {
                op: "crps_quantile",
                left: ql.shape().to_vec(),
                right: y.shape().to_vec(),
            });
        }
        if let Some(i) = ql.first_non_finite() {
            return Err(Error::NonFinite {
                op: format!("quantile level {l}"),
                index: Some(i),
            });
        }
    }
    let cells = y.len();
    let mut total = 0.0;
    for c in 0..cells {
        let (a, b, d) = (q[0].data()[c], q[1].data()[c], q[2].data()[c]);
        if !(a <= b && b <= d) {
            return invalid(format!("quantiles are not monotone at cell {c}: ({a}, {b}, {d})"));
        }
        for (l, tau) in QUANTILE_LEVELS.iter().enumerate() {
            total += pinball(*tau, q[l].data()[c], y.data()[c]);
        }
    }
    Ok(2.0 * total / (3 * cells) as f64)
}

pub fn mse_standardized(y_hat: &Tensor, y: &Tensor) -> Result<f64> {
    if y_hat.dims() != y.dims() {
        return Err(Error::ShapeMismatch {
            op: "mse_standardized",
            left: y_hat.shape().to_vec(),
            right: y.shape().to_vec(),
        });
    }
    Ok(y_hat
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / y.len() as f64)
}
