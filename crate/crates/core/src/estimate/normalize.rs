//! Exit normalizations that remove the rotational indeterminacy of (Γ, F).

use std::cmp::Ordering;

use nalgebra::{DMatrix, DVector};

use super::ModelVariant;
use crate::error::Result;
use crate::linalg::{spd_inverse, sym_eigen_desc, sym_inv_sqrt, sym_sqrt, symmetrized};
use crate::params::Theta;

/// Relative gap below which two eigenvalues are treated as tied.
const TIE_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Normalization {
    pub theta: Theta,
    /// Rotated factors, T × r.
    pub f: DMatrix<f64>,
    pub warnings: Vec<String>,
}

/// Basic-model normalization: `M_ff = I`, `Γ'Σ^{-1}Γ/N` diagonal with
/// descending entries, mean-zero factors, and each loading column signed so
/// its largest-magnitude entry is positive.
pub fn normalize_identification(theta: &Theta, f: &DMatrix<f64>) -> Result<Normalization> {
    normalize_variant(theta, f, ModelVariant::Basic)
}

pub fn normalize_variant(
    theta: &Theta,
    f: &DMatrix<f64>,
    variant: ModelVariant,
) -> Result<Normalization> {
    let r = theta.n_factors();
    let mut warnings = Vec::new();
    let f = demean_columns(f);
    if r == 0 {
        return Ok(Normalization {
            theta: theta.clone(),
            f,
            warnings,
        });
    }
    let n = theta.n_units() as f64;
    let inv = theta.sigma.inverse()?;
    let out = match variant {
        ModelVariant::Basic => {
            let (gamma, f) = whiten_lower(&theta.gamma, &f, &theta.m_ff)?;
            let (gamma, f) = diagonalize_block(gamma, f, 0, r, &inv, n, &mut warnings);
            let th = Theta {
                gamma,
                m_ff: DMatrix::identity(r, r),
                ..theta.clone()
            };
            (th, f)
        }
        ModelVariant::ZeroRestrictions { r1 } => {
            // A lower-triangular square root of M_ff keeps the zero block of
            // the outcome loadings intact.
            let (gamma, f) = whiten_lower(&theta.gamma, &f, &theta.m_ff)?;
            let (gamma, f) = diagonalize_block(gamma, f, 0, r1, &inv, n, &mut warnings);
            let (mut gamma, f) = diagonalize_block(gamma, f, r1, r, &inv, n, &mut warnings);
            let p = theta.n_regressors() + 1;
            for i in 0..theta.n_units() {
                for c in r1..r {
                    gamma[(i * p, c)] = 0.0;
                }
            }
            let th = Theta {
                gamma,
                m_ff: DMatrix::identity(r, r),
                ..theta.clone()
            };
            (th, f)
        }
        ModelVariant::ObservedPhi { r1 } => {
            let (th, f) = observed_transform(theta, &f, r1)?;
            let (gamma, f) = diagonalize_block(th.gamma.clone(), f, 0, r1, &inv, n, &mut warnings);
            (Theta { gamma, ..th }, f)
        }
    };
    Ok(Normalization {
        theta: out.0,
        f: out.1,
        warnings,
    })
}

fn demean_columns(f: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = f.clone();
    let t = f.nrows() as f64;
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / t;
        col.add_scalar_mut(-mean);
    }
    out
}

/// `Γ ← Γ L`, `F ← F L^{-T}` with `L L' = M_ff` (lower Cholesky factor).
fn whiten_lower(
    gamma: &DMatrix<f64>,
    f: &DMatrix<f64>,
    m: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let l = match m.clone().cholesky() {
        Some(ch) => ch.l(),
        None => {
            return Err(crate::Error::Singular {
                what: "factor second moment M_ff",
                min_eigenvalue: crate::linalg::min_eigenvalue(m),
            })
        }
    };
    let l_inv = l.clone().try_inverse().expect("Cholesky factor is invertible");
    Ok((gamma * &l, f * l_inv.transpose()))
}

/// Rotates columns `lo..hi` so that `Γ_b'Σ^{-1}Γ_b/N` is diagonal with
/// descending entries, then applies the sign convention.
fn diagonalize_block(
    mut gamma: DMatrix<f64>,
    mut f: DMatrix<f64>,
    lo: usize,
    hi: usize,
    inv: &crate::params::BlockInverse,
    n: f64,
    warnings: &mut Vec<String>,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let w = hi - lo;
    if w == 0 {
        return (gamma, f);
    }
    let gb = gamma.columns(lo, w).into_owned();
    let q = symmetrized(gb.transpose() * inv.apply(&gb) / n);
    let (vals, vecs) = sym_eigen_desc(&q);
    let mut g_new = &gb * &vecs;
    let mut f_new = f.columns(lo, w) * &vecs;
    apply_sign_convention(&mut g_new, &mut f_new);

    // Order columns inside groups of tied eigenvalues lexicographically.
    let mut start = 0;
    while start < w {
        let mut end = start + 1;
        while end < w && tied(vals[end - 1], vals[end]) {
            end += 1;
        }
        if end - start > 1 {
            warnings.push(format!(
                "loading Gram eigenvalues {}..{} tied within {TIE_TOL:e}; ordered lexicographically",
                lo + start + 1,
                lo + end
            ));
            let mut idx: Vec<usize> = (start..end).collect();
            idx.sort_by(|&a, &b| lex_desc(&g_new.column(a).into_owned(), &g_new.column(b).into_owned()));
            let g_copy = g_new.clone();
            let f_copy = f_new.clone();
            for (dst, &src) in (start..end).zip(&idx) {
                g_new.set_column(dst, &g_copy.column(src));
                f_new.set_column(dst, &f_copy.column(src));
            }
        }
        start = end;
    }
    gamma.columns_mut(lo, w).copy_from(&g_new);
    f.columns_mut(lo, w).copy_from(&f_new);
    (gamma, f)
}

fn tied(a: f64, b: f64) -> bool {
    (a - b).abs() <= TIE_TOL * a.abs().max(b.abs()).max(1.0)
}

fn lex_desc(a: &DVector<f64>, b: &DVector<f64>) -> Ordering {
    for (x, y) in a.iter().zip(b.iter()) {
        match y.partial_cmp(x) {
            Some(Ordering::Equal) | None => continue,
            Some(o) => return o,
        }
    }
    Ordering::Equal
}

/// Flips each column so its largest-magnitude loading is positive.
fn apply_sign_convention(gamma: &mut DMatrix<f64>, f: &mut DMatrix<f64>) {
    for c in 0..gamma.ncols() {
        let mut best = 0.0_f64;
        let mut sign = 1.0;
        for v in gamma.column(c).iter() {
            // Entries equal in magnitude up to rounding go to the first one.
            if v.abs() > best * (1.0 + 1e-12) {
                best = v.abs();
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            gamma.column_mut(c).neg_mut();
            f.column_mut(c).neg_mut();
        }
    }
}

/// Reparametrizes so that `M_gg = I` and `M_gh = 0` while leaving the
/// observed-loading columns untouched:
/// `Γ^g ← (Γ^g + Γ^h M_hg M_gg^{-1}) M_gg^{1/2}`,
/// `g ← M_gg^{-1/2} g`, `h ← h - M_hg M_gg^{-1} g`,
/// `M_hh ← M_hh - M_hg M_gg^{-1} M_gh`.
pub(crate) fn observed_transform(
    theta: &Theta,
    f: &DMatrix<f64>,
    r1: usize,
) -> Result<(Theta, DMatrix<f64>)> {
    if r1 == 0 {
        return Ok((theta.clone(), f.clone()));
    }
    let r2 = theta.n_factors() - r1;
    let t = ObservedReparam::new(&theta.m_ff, r1)?;
    let gamma = t.gamma(&theta.gamma);
    let mut f_new = f.clone();
    let g = f.columns(0, r1).into_owned();
    let h = f.columns(r1, r2) - &g * t.coef.transpose();
    f_new.columns_mut(0, r1).copy_from(&(&g * &t.root_inv));
    f_new.columns_mut(r1, r2).copy_from(&h);
    Ok((
        Theta {
            gamma,
            m_ff: t.m_new,
            ..theta.clone()
        },
        f_new,
    ))
}

/// Pieces of [`observed_transform`] that depend only on `M_ff`.
pub(crate) struct ObservedReparam {
    r1: usize,
    /// `M_hg M_gg^{-1}`
    coef: DMatrix<f64>,
    root: DMatrix<f64>,
    root_inv: DMatrix<f64>,
    pub m_new: DMatrix<f64>,
}

impl ObservedReparam {
    pub fn new(m: &DMatrix<f64>, r1: usize) -> Result<Self> {
        let r = m.nrows();
        let r2 = r - r1;
        let m_gg = m.view((0, 0), (r1, r1)).into_owned();
        let m_hg = m.view((r1, 0), (r2, r1)).into_owned();
        let m_hh = m.view((r1, r1), (r2, r2)).into_owned();
        let coef = &m_hg * spd_inverse(&m_gg, "factor block M_gg")?;
        let root = sym_sqrt(&m_gg);
        let root_inv = sym_inv_sqrt(&m_gg, "factor block M_gg")?;
        let mut m_new = DMatrix::identity(r, r);
        m_new
            .view_mut((r1, r1), (r2, r2))
            .copy_from(&symmetrized(m_hh - &coef * m_hg.transpose()));
        Ok(Self {
            r1,
            coef,
            root,
            root_inv,
            m_new,
        })
    }

    pub fn gamma(&self, gamma: &DMatrix<f64>) -> DMatrix<f64> {
        let r1 = self.r1;
        let r2 = gamma.ncols() - r1;
        let mut out = gamma.clone();
        let g_tilde = gamma.columns(0, r1) + gamma.columns(r1, r2) * &self.coef;
        out.columns_mut(0, r1).copy_from(&(g_tilde * &self.root));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::BlockCov;

    fn theta_with(gamma: DMatrix<f64>) -> Theta {
        let r = gamma.ncols();
        Theta::new(
            DVector::zeros(1),
            gamma,
            BlockCov::identity(3, 1),
            DMatrix::identity(r, r),
        )
        .unwrap()
    }

    #[test]
    fn single_factor_scales_to_unit_second_moment() {
        let gamma = DMatrix::from_column_slice(6, 1, &[1.0, -2.0, 0.5, 1.0, 3.0, 0.0]);
        let f = DMatrix::from_column_slice(4, 1, &[2.0, -2.0, 4.0, -4.0]);
        // Sample second moment of f is 10; fold it into M_ff first.
        let mut th = theta_with(gamma.clone());
        th.m_ff = DMatrix::from_element(1, 1, 10.0);
        let out = normalize_identification(&th, &f).unwrap();
        let s = 10f64.sqrt();
        for i in 0..6 {
            assert!((out.theta.gamma[(i, 0)] - gamma[(i, 0)] * s).abs() < 1e-12);
        }
        for t in 0..4 {
            assert!((out.f[(t, 0)] - f[(t, 0)] / s).abs() < 1e-12);
        }
        let m2 = out.f.norm_squared() / 4.0;
        assert!((m2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_is_idempotent() {
        let gamma = DMatrix::from_fn(6, 2, |i, c| ((i * 3 + c * 5) % 7) as f64 - 3.0);
        let f = DMatrix::from_fn(5, 2, |t, c| ((t * 2 + c) % 5) as f64 - 2.0);
        let once = normalize_identification(&theta_with(gamma), &f).unwrap();
        let twice = normalize_identification(&once.theta, &once.f).unwrap();
        assert!(crate::linalg::max_abs_diff(&once.theta.gamma, &twice.theta.gamma) < 1e-12);
        assert!(crate::linalg::max_abs_diff(&once.f, &twice.f) < 1e-12);
    }
}
