//! Dense helpers over `nalgebra` for the non-differentiable parts of the
//! crate (data generation, metrics, baselines, initialization).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

/// Column means and population standard deviations.
pub fn column_stats(x: &Mat) -> (Vec<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let mut means = Vec::with_capacity(x.ncols());
    let mut stds = Vec::with_capacity(x.ncols());
    for col in x.column_iter() {
        let m = col.sum() / n;
        let v = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        means.push(m);
        stds.push(v.sqrt());
    }
    (means, stds)
}

/// Columns centered and scaled to unit variance; zero-variance columns are
/// only centered.
pub fn standardize_columns(x: &Mat) -> Mat {
    let (means, stds) = column_stats(x);
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        let s = if stds[j] > 1e-12 { stds[j] } else { 1.0 };
        for v in col.iter_mut() {
            *v = (*v - means[j]) / s;
        }
    }
    out
}

pub fn center_columns(x: &Mat) -> Mat {
    let (means, _) = column_stats(x);
    let mut out = x.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        for v in col.iter_mut() {
            *v -= means[j];
        }
    }
    out
}

/// Pearson correlation; `None` when either input has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 1e-300 || sbb <= 1e-300 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Orthonormal basis of the column span via thin QR, dropping directions whose
/// `|R_ii|` falls below `tol * max |R_ii|`.
pub fn orthonormal_basis(x: &Mat, tol: f64) -> Mat {
    let qr = x.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let k = r.nrows().min(r.ncols());
    let diag: Vec<f64> = (0..k).map(|i| r[(i, i)].abs()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..k).filter(|&i| diag[i] > tol * max && max > 0.0).collect();
    let mut out = Mat::zeros(x.nrows(), keep.len());
    for (c, &i) in keep.iter().enumerate() {
        out.set_column(c, &q.column(i));
    }
    out
}

/// Singular values in descending order.
pub fn singular_values(x: &Mat) -> Vec<f64> {
    let mut s: Vec<f64> = x.clone().svd(false, false).singular_values.iter().cloned().collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s
}

/// Number of singular values above `rel_tol * sigma_max`.
pub fn numerical_rank(x: &Mat, rel_tol: f64) -> usize {
    if x.nrows() == 0 || x.ncols() == 0 {
        return 0;
    }
    let s = singular_values(x);
    let max = s.first().cloned().unwrap_or(0.0);
    if max <= 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > rel_tol * max).count()
}

/// Principal components of an already centered matrix: returns
/// `(scores T x k, loadings N x k, singular values)`, components ordered by
/// decreasing variance and signs fixed so each loading column's largest-magnitude
/// entry is positive.
pub fn pca(x: &Mat, k: usize) -> Result<(Mat, Mat, Vec<f64>)> {
    let (t, n) = x.shape();
    if k == 0 || k > n.min(t) {
        return Err(Error::InvalidArgument(format!("pca: k={k} for a {t}x{n} matrix")));
    }
    let svd = x.clone().svd(true, true);
    let u = svd.u.ok_or_else(|| Error::Numerical("svd failed".into()))?;
    let vt = svd.v_t.ok_or_else(|| Error::Numerical("svd failed".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
    let mut scores = Mat::zeros(t, k);
    let mut loadings = Mat::zeros(n, k);
    let mut sv = Vec::with_capacity(k);
    for (c, &i) in order.iter().take(k).enumerate() {
        let s = svd.singular_values[i];
        let mut load: DVector<f64> = vt.row(i).transpose().into_owned();
        let mut score: DVector<f64> = u.column(i) * s;
        let pivot = load
            .iter()
            .cloned()
            .fold(0.0, |m: f64, v| if v.abs() > m.abs() { v } else { m });
        if pivot < 0.0 {
            load = -load;
            score = -score;
        }
        loadings.set_column(c, &load);
        scores.set_column(c, &score);
        sv.push(s);
    }
    Ok((scores, loadings, sv))
}

/// Least-squares AR(p) fit with intercept; returns lag coefficients
/// `[phi_1, ..., phi_p]` or `None` if the design is singular.
pub fn fit_ar_ols(series: &[f64], p: usize) -> Option<Vec<f64>> {
    let t = series.len();
    if p == 0 || t <= 2 * p + 1 {
        return None;
    }
    let rows = t - p;
    let mut design = Mat::zeros(rows, p + 1);
    let mut target = DVector::zeros(rows);
    for i in 0..rows {
        design[(i, 0)] = 1.0;
        for j in 0..p {
            design[(i, j + 1)] = series[p + i - 1 - j];
        }
        target[i] = series[p + i];
    }
    let xtx = design.transpose() * &design;
    let xty = design.transpose() * target;
    let chol = xtx.cholesky()?;
    let beta = chol.solve(&xty);
    let coefs: Vec<f64> = beta.iter().skip(1).cloned().collect();
    coefs.iter().all(|c| c.is_finite()).then_some(coefs)
}

/// Haar-distributed random orthogonal matrix (QR of a Gaussian matrix with
/// the sign of `R`'s diagonal folded into `Q`).
pub fn random_orthogonal(n: usize, rng: &mut impl Rng) -> Mat {
    let g = Mat::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            let col = -q.column(j);
            q.set_column(j, &col);
        }
    }
    q
}

pub fn gaussian_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

/// Spectral radius estimate by power iteration on `A^T A` growth of `A^k`:
/// returns `||A^k x||^(1/k)` for a generic start vector.
pub fn spectral_radius_power(a: &Mat, iters: usize) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    // generic start vector; deterministic
    let mut x = DVector::from_fn(n, |i, _| 1.0 + 0.1 * (i as f64 + 1.0).sin());
    x /= x.norm();
    let mut log_growth = 0.0;
    let mut count = 0usize;
    for k in 0..iters {
        let y = a * &x;
        let nrm = y.norm();
        if nrm == 0.0 {
            return 0.0;
        }
        // discard the transient; accumulate growth over the second half
        if k >= iters / 2 {
            log_growth += nrm.ln();
            count += 1;
        }
        x = y / nrm;
    }
    (log_growth / count.max(1) as f64).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let q = random_orthogonal(5, &mut rng);
        let err = (q.transpose() * &q - Mat::identity(5, 5)).abs().max();
        assert!(err < 1e-12);
    }

    #[test]
    fn pearson_basic() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&[1.0, 1.0], &[1.0, 2.0]).is_none());
    }

    #[test]
    fn ols_recovers_ar1() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut x = vec![0.0];
        for _ in 0..5000 {
            let e: f64 = StandardNormal.sample(&mut rng);
            x.push(0.7 * x.last().unwrap() + e);
        }
        let phi = fit_ar_ols(&x, 1).unwrap();
        assert!((phi[0] - 0.7).abs() < 0.03);
    }

    #[test]
    fn power_iteration_spectral_radius() {
        let a = Mat::from_row_slice(2, 2, &[0.5, 0.25, 1.0, 0.0]);
        // roots of z^2 - 0.5 z - 0.25
        let root = (0.5 + (0.25f64 + 1.0).sqrt()) / 2.0;
        assert!((spectral_radius_power(&a, 400) - root).abs() < 1e-6);
    }

    #[test]
    fn rank_of_low_rank_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = gaussian_matrix(10, 3, &mut rng) * gaussian_matrix(3, 6, &mut rng);
        assert_eq!(numerical_rank(&a, 1e-8), 3);
        assert_eq!(numerical_rank(&Mat::zeros(4, 4), 1e-8), 0);
    }
}
