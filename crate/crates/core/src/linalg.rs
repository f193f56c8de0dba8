use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{FusionError, Result};

/// Relative eigenvalue floor below which a covariance counts as singular.
pub(crate) const SPD_RELATIVE_FLOOR: f64 = 1e-12;

/// Inputs whose asymmetry exceeds this fraction of their largest entry are rejected.
const ASYMMETRY_LIMIT: f64 = 1e-8;

pub(crate) fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub(crate) fn check_square(m: &DMatrix<f64>, context: &'static str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(FusionError::dim(context, m.nrows(), m.ncols()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(FusionError::InvalidArgument(format!(
            "{context}: non-finite matrix entry"
        )));
    }
    Ok(m.nrows())
}

pub(crate) fn check_vector(v: &DVector<f64>, context: &'static str) -> Result<()> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(FusionError::InvalidArgument(format!(
            "{context}: non-finite vector entry"
        )));
    }
    Ok(())
}

/// Symmetrizes `m` and checks that it is positive definite relative to its
/// largest eigenvalue.
pub(crate) fn spd_checked(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    check_square(m, context)?;
    let scale = max_abs(m);
    let asym = max_abs(&(m - m.transpose()));
    if asym > ASYMMETRY_LIMIT * scale.max(f64::MIN_POSITIVE) {
        return Err(FusionError::NotPositiveDefinite(format!(
            "{context}: asymmetry {asym:e} relative to scale {scale:e}"
        )));
    }
    let sym = symmetrize(m);
    if sym.nrows() == 0 {
        return Err(FusionError::dim(context, 1, 0));
    }
    let eig = SymmetricEigen::new(sym.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(max > 0.0) || min <= SPD_RELATIVE_FLOOR * max {
        return Err(FusionError::NotPositiveDefinite(format!(
            "{context}: eigenvalues in [{min:e}, {max:e}]"
        )));
    }
    Ok(sym)
}

/// Symmetrizes `m` and checks positive semidefiniteness up to rounding.
pub(crate) fn psd_checked(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    check_square(m, context)?;
    let scale = max_abs(m);
    let asym = max_abs(&(m - m.transpose()));
    if asym > ASYMMETRY_LIMIT * scale.max(f64::MIN_POSITIVE) {
        return Err(FusionError::NotPositiveDefinite(format!(
            "{context}: asymmetry {asym:e} relative to scale {scale:e}"
        )));
    }
    let sym = symmetrize(m);
    if sym.nrows() > 0 {
        let eig = SymmetricEigen::new(sym.clone());
        let min = eig.eigenvalues.min();
        if min < -1e-12 * scale.max(1.0) {
            return Err(FusionError::NotPositiveDefinite(format!(
                "{context}: negative eigenvalue {min:e}"
            )));
        }
    }
    Ok(sym)
}

/// Lower Cholesky factor of an SPD matrix.
pub(crate) fn cholesky_lower(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    nalgebra::Cholesky::new(m.clone())
        .map(|c| c.l())
        .ok_or_else(|| FusionError::Singular(format!("{context}: Cholesky factorization failed")))
}

/// Inverse of an SPD matrix, returned exactly symmetric.
pub(crate) fn spd_inverse(m: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let chol = nalgebra::Cholesky::new(m.clone()).ok_or_else(|| {
        FusionError::Singular(format!("{context}: Cholesky factorization failed"))
    })?;
    let inv = chol.inverse();
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(FusionError::Singular(format!(
            "{context}: non-finite inverse"
        )));
    }
    Ok(symmetrize(&inv))
}

/// Square root factor `S` with `S Sᵀ = m` for a PSD matrix (eigen decomposition,
/// tolerates singular input).
pub(crate) fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// Numerically stable `ln Σ exp(v)`. Returns `-inf` when every term is `-inf`.
pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max.is_nan() {
        return max;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes log weights onto the simplex via max subtraction. `None` when all
/// terms are `-inf` or any term is NaN.
pub(crate) fn normalize_log_weights(log_weights: &[f64]) -> Option<Vec<f64>> {
    if log_weights
        .iter()
        .any(|v| v.is_nan() || *v == f64::INFINITY)
    {
        return None;
    }
    let lse = log_sum_exp(log_weights);
    if !lse.is_finite() {
        return None;
    }
    Some(log_weights.iter().map(|v| (v - lse).exp()).collect())
}

pub(crate) fn upper_triangle_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Row-major upper triangle (including the diagonal).
pub(crate) fn pack_upper(m: &DMatrix<f64>, out: &mut Vec<f64>) {
    let n = m.nrows();
    for r in 0..n {
        for c in r..n {
            out.push(m[(r, c)]);
        }
    }
}

pub(crate) fn unpack_upper(values: &[f64], n: usize) -> DMatrix<f64> {
    debug_assert_eq!(values.len(), upper_triangle_len(n));
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for r in 0..n {
        for c in r..n {
            m[(r, c)] = values[k];
            m[(c, r)] = values[k];
            k += 1;
        }
    }
    m
}
