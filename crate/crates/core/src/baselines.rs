//! Within-group and iterated principal-components estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, sym_eigen_desc};
use crate::moments::{demean_panel, Moments};
use crate::panel::PanelDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMethod {
    WithinGroup,
    IteratedPc,
}

#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub beta_hat: DVector<f64>,
    pub method: BaselineMethod,
    /// T × r, normalized so that `F'F/T = I`.
    pub pc_factors: Option<DMatrix<f64>>,
    /// N × r.
    pub pc_loadings: Option<DMatrix<f64>>,
    pub n_iters: usize,
    pub converged: bool,
    /// Sum of squared residuals after factor extraction, per iteration.
    pub ssr_trace: Vec<f64>,
}

/// Pooled least squares on time-demeaned data (unit fixed effects).
pub fn within_group(data: &PanelDataset) -> Result<BaselineResult> {
    within_group_moments(&demean_panel(data))
}

pub fn within_group_moments(m: &Moments) -> Result<BaselineResult> {
    let k = m.n_regressors();
    if k == 0 {
        return Err(Error::invalid("within-group estimator needs at least one regressor"));
    }
    let mut lhs = DMatrix::zeros(k, k);
    let mut rhs = DVector::zeros(k);
    for i in 0..m.n_units() {
        let d = m.diag_block(i);
        lhs += d.view((1, 1), (k, k));
        for j in 0..k {
            rhs[j] += d[(1 + j, 0)];
        }
    }
    let beta_hat = solve_gram(&lhs, &rhs)?;
    Ok(BaselineResult {
        beta_hat,
        method: BaselineMethod::WithinGroup,
        pc_factors: None,
        pc_loadings: None,
        n_iters: 0,
        converged: true,
        ssr_trace: Vec::new(),
    })
}

/// Alternates least squares for β given the factor component and principal
/// components of the residual `ẏ - ẋβ`, starting from the within-group fit.
pub fn iterated_pc(
    data: &PanelDataset,
    r: usize,
    max_iters: usize,
    tol: f64,
) -> Result<BaselineResult> {
    iterated_pc_moments(&demean_panel(data), r, max_iters, tol)
}

pub fn iterated_pc_moments(
    m: &Moments,
    r: usize,
    max_iters: usize,
    tol: f64,
) -> Result<BaselineResult> {
    let (n, t, k) = (m.n_units(), m.n_periods(), m.n_regressors());
    if r >= n.min(t) {
        return Err(Error::invalid(format!(
            "number of factors {r} must be below min(N, T) = {}",
            n.min(t)
        )));
    }
    let y = m.outcome();
    let x: Vec<DMatrix<f64>> = (0..k).map(|j| m.regressor(j)).collect();

    let mut beta = if k > 0 {
        within_group_moments(m)?.beta_hat
    } else {
        DVector::zeros(0)
    };
    if r == 0 {
        let resid = residual(&y, &x, &beta);
        return Ok(BaselineResult {
            beta_hat: beta,
            method: BaselineMethod::IteratedPc,
            pc_factors: Some(DMatrix::zeros(t, 0)),
            pc_loadings: Some(DMatrix::zeros(n, 0)),
            n_iters: 0,
            converged: true,
            ssr_trace: vec![resid.norm_squared()],
        });
    }

    let mut gram = DMatrix::zeros(k, k);
    for p in 0..k {
        for q in p..k {
            let v = x[p].dot(&x[q]);
            gram[(p, q)] = v;
            gram[(q, p)] = v;
        }
    }
    if k > 0 && !(min_eigenvalue(&gram) > 0.0) {
        return Err(Error::Singular {
            what: "regressor Gram matrix",
            min_eigenvalue: min_eigenvalue(&gram),
        });
    }
    let gram_chol = gram.clone().cholesky();

    let mut ssr_trace = Vec::new();
    let mut converged = false;
    let mut iters = 0;
    let (mut f, mut lam) = principal_components(&residual(&y, &x, &beta), r);
    while iters < max_iters {
        let common = &lam * f.transpose();
        ssr_trace.push((residual(&y, &x, &beta) - &common).norm_squared());
        let next = if let Some(ch) = &gram_chol {
            let target = &y - &common;
            let rhs = DVector::from_iterator(k, x.iter().map(|xp| xp.dot(&target)));
            ch.solve(&rhs)
        } else {
            DVector::zeros(0)
        };
        let change = (&next - &beta).amax();
        beta = next;
        iters += 1;
        let (f_new, lam_new) = principal_components(&residual(&y, &x, &beta), r);
        f = f_new;
        lam = lam_new;
        if change < tol {
            converged = true;
            break;
        }
    }
    let common = &lam * f.transpose();
    ssr_trace.push((residual(&y, &x, &beta) - &common).norm_squared());
    Ok(BaselineResult {
        beta_hat: beta,
        method: BaselineMethod::IteratedPc,
        pc_factors: Some(f),
        pc_loadings: Some(lam),
        n_iters: iters,
        converged,
        ssr_trace,
    })
}

fn residual(y: &DMatrix<f64>, x: &[DMatrix<f64>], beta: &DVector<f64>) -> DMatrix<f64> {
    let mut r = y.clone();
    for (xp, b) in x.iter().zip(beta.iter()) {
        r -= xp * *b;
    }
    r
}

/// Leading `r` principal components of an N × T matrix: factors `F` (T × r)
/// with `F'F/T = I` and loadings `Λ = R F / T`.
pub(crate) fn principal_components(resid: &DMatrix<f64>, r: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, t) = resid.shape();
    if r == 0 {
        return (DMatrix::zeros(t, 0), DMatrix::zeros(n, 0));
    }
    let f = if t <= n {
        let (_, vecs) = sym_eigen_desc(&(resid.transpose() * resid));
        vecs.columns(0, r).into_owned() * (t as f64).sqrt()
    } else {
        // Work with the smaller N × N problem and map back to factors.
        let (vals, vecs) = sym_eigen_desc(&(resid * resid.transpose()));
        let mut f = DMatrix::zeros(t, r);
        for c in 0..r {
            let u = vecs.column(c);
            let scale = if vals[c] > 0.0 {
                (t as f64).sqrt() / vals[c].sqrt()
            } else {
                0.0
            };
            f.set_column(c, &(resid.transpose() * u * scale));
        }
        f
    };
    let lam = resid * &f / t as f64;
    (f, lam)
}

fn solve_gram(lhs: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    match lhs.clone().cholesky() {
        Some(ch) => Ok(ch.solve(rhs)),
        None => Err(Error::Singular {
            what: "regressor Gram matrix",
            min_eigenvalue: min_eigenvalue(lhs),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel(n: usize, t: usize, f: impl Fn(usize, usize) -> (f64, f64)) -> PanelDataset {
        let y = DMatrix::from_fn(n, t, |i, s| f(i, s).0);
        let x = DMatrix::from_fn(n, t, |i, s| f(i, s).1);
        PanelDataset::new(y, vec![x]).unwrap()
    }

    #[test]
    fn within_group_recovers_exact_slope() {
        let p = panel(4, 6, |i, t| {
            let x = ((i * 7 + t * 3) % 5) as f64;
            (2.0 + i as f64 + 1.5 * x, x)
        });
        let wg = within_group(&p).unwrap();
        assert!((wg.beta_hat[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn zero_factors_is_within_group() {
        let p = panel(5, 8, |i, t| {
            let x = ((i * 3 + t * t) % 7) as f64;
            (0.3 * x + ((i + 2 * t) % 3) as f64, x)
        });
        let wg = within_group(&p).unwrap();
        let pc = iterated_pc(&p, 0, 100, 1e-10).unwrap();
        assert_eq!(wg.beta_hat, pc.beta_hat);
    }

    #[test]
    fn principal_components_are_normalized() {
        let m = DMatrix::from_fn(6, 9, |i, t| ((i * 5 + t * 7) % 11) as f64 - 5.0);
        for r in 1..3 {
            let (f, _) = principal_components(&m, r);
            let ff = f.transpose() * &f / 9.0;
            assert!(crate::linalg::max_abs_diff(&ff, &DMatrix::identity(r, r)) < 1e-10);
            let (f2, _) = principal_components(&m.transpose(), r);
            let ff2 = f2.transpose() * &f2 / 6.0;
            assert!(crate::linalg::max_abs_diff(&ff2, &DMatrix::identity(r, r)) < 1e-10);
        }
    }
}
