//! Small dense linear-algebra helpers on top of `nalgebra`.
//!
//! Everything here operates on the tiny matrices that appear inside the
//! estimators (r×r, K×K, (K+1)×(K+1)) or on thin T×q bases. Large
//! N(K+1)-sized objects never pass through these routines as dense squares.

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Replace `m` by `(m + m')/2`.
pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub(crate) fn symmetrized(mut m: DMatrix<f64>) -> DMatrix<f64> {
    symmetrize(&mut m);
    m
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
pub(crate) fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrized(m.clone()));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(Ordering::Equal)
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub(crate) fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    let (vals, _) = sym_eigen_desc(m);
    vals[vals.len() - 1]
}

/// Inverse of a symmetric positive definite matrix via Cholesky.
pub(crate) fn spd_inverse(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    match m.clone().cholesky() {
        Some(ch) => Ok(symmetrized(ch.inverse())),
        None => Err(Error::Singular {
            what,
            min_eigenvalue: min_eigenvalue(m),
        }),
    }
}

/// `(inverse, log-determinant)` of a symmetric positive definite matrix.
pub(crate) fn spd_inverse_logdet(
    m: &DMatrix<f64>,
    what: &'static str,
) -> Result<(DMatrix<f64>, f64)> {
    if m.nrows() == 0 {
        return Ok((DMatrix::zeros(0, 0), 0.0));
    }
    match m.clone().cholesky() {
        Some(ch) => {
            let logdet = 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            Ok((symmetrized(ch.inverse()), logdet))
        }
        None => Err(Error::Singular {
            what,
            min_eigenvalue: min_eigenvalue(m),
        }),
    }
}

/// Symmetric matrix function `V f(Λ) V'`.
pub(crate) fn sym_apply(m: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let (vals, vecs) = sym_eigen_desc(m);
    let scaled = DMatrix::from_fn(vecs.nrows(), vecs.ncols(), |i, j| vecs[(i, j)] * f(vals[j]));
    symmetrized(&scaled * vecs.transpose())
}

pub(crate) fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    sym_apply(m, |v| v.max(0.0).sqrt())
}

pub(crate) fn sym_inv_sqrt(m: &DMatrix<f64>, what: &'static str) -> Result<DMatrix<f64>> {
    let lo = min_eigenvalue(m);
    if !(lo > 0.0) {
        return Err(Error::Singular {
            what,
            min_eigenvalue: lo,
        });
    }
    Ok(sym_apply(m, |v| 1.0 / v.sqrt()))
}

/// Clamp the eigenvalues of a symmetric matrix into `[lo, hi]`.
///
/// Returns the clamped matrix and whether any eigenvalue hit a bound.
pub(crate) fn clamp_eigenvalues(m: &DMatrix<f64>, lo: f64, hi: f64) -> (DMatrix<f64>, bool) {
    let n = m.nrows();
    if n == 0 {
        return (m.clone(), false);
    }
    if n == 1 {
        let v = m[(0, 0)];
        let c = v.clamp(lo, hi);
        return (DMatrix::from_element(1, 1, c), c != v);
    }
    let (vals, _) = sym_eigen_desc(m);
    if vals[0] <= hi && vals[n - 1] >= lo {
        return (symmetrized(m.clone()), false);
    }
    (sym_apply(m, |v| v.clamp(lo, hi)), true)
}

/// Numerical rank of a tall matrix, from the singular values of `a`.
pub(crate) fn numerical_rank(a: &DMatrix<f64>) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let top = sv.iter().cloned().fold(0.0_f64, f64::max);
    if top == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > top * 1e-8).count()
}

/// Residuals of every row of `data` (series × T) regressed on the columns
/// of `basis` (T × q): `data · M(basis)`.
pub(crate) fn project_out_rows(data: &DMatrix<f64>, basis: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if basis.ncols() == 0 {
        return Ok(data.clone());
    }
    if basis.nrows() != data.ncols() {
        return Err(Error::dim(format!(
            "projection basis has {} rows, data has {} periods",
            basis.nrows(),
            data.ncols()
        )));
    }
    let gram = basis.transpose() * basis;
    let gram_inv = spd_inverse(&gram, "projection basis Gram matrix")?;
    let coef = (data * basis) * gram_inv;
    Ok(data - coef * basis.transpose())
}

/// Orthonormal basis for the orthogonal complement of the column space of
/// `a` (n × m, full column rank), returning `n - m` columns.
pub(crate) fn orthogonal_complement(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let m = a.ncols();
    if m == 0 {
        return DMatrix::identity(n, n);
    }
    let proj = a * spd_inverse(&(a.transpose() * a), "complement Gram").unwrap_or_else(|_| {
        DMatrix::zeros(m, m)
    }) * a.transpose();
    let resid = DMatrix::identity(n, n) - proj;
    let (_, vecs) = sym_eigen_desc(&resid);
    vecs.columns(0, n - m).into_owned()
}

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub(crate) fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |acc, (x, y)| acc.max((x - y).abs()))
}
