//! Post-estimation quantities: factor estimates, the asymptotic covariance
//! of β̂ and first-order-condition residuals.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::estimate::{ModelVariant, EIGEN_BOUND, VARIANCE_FLOOR};
use crate::linalg::{max_abs, min_eigenvalue, numerical_rank, project_out_rows, spd_inverse, symmetrized};
use crate::moments::{demean_panel, Moments};
use crate::panel::PanelDataset;
use crate::params::Theta;
use crate::woodbury::Factorized;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceMethod {
    TraceForm,
    MomentForm,
}

impl CovarianceMethod {
    pub fn label(&self) -> &'static str {
        match self {
            CovarianceMethod::TraceForm => "trace",
            CovarianceMethod::MomentForm => "moment",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    /// K × K information-type matrix Ω̂.
    pub omega_hat: DMatrix<f64>,
    /// `sqrt(diag(Ω̂^{-1}) / NT)`.
    pub se_beta: DVector<f64>,
    pub method: CovarianceMethod,
}

impl CovarianceEstimate {
    fn from_omega(omega: DMatrix<f64>, nt: f64, method: CovarianceMethod) -> Result<Self> {
        let omega = symmetrized(omega);
        let inv = spd_inverse(&omega, "covariance matrix Omega")?;
        let se_beta = DVector::from_iterator(omega.nrows(), (0..omega.nrows()).map(|j| (inv[(j, j)] / nt).sqrt()));
        Ok(Self {
            omega_hat: omega,
            se_beta,
            method,
        })
    }
}

/// GLS factor estimates `f̂_t = (Γ'Σ^{-1}Γ)^{-1} Γ'Σ^{-1} B ż_t`, T × r.
pub fn estimate_factors(theta: &Theta, data: &PanelDataset) -> Result<DMatrix<f64>> {
    factors_from_moments(theta, &demean_panel(data))
}

pub fn factors_from_moments(theta: &Theta, moments: &Moments) -> Result<DMatrix<f64>> {
    let r = theta.n_factors();
    if r == 0 {
        return Ok(DMatrix::zeros(moments.n_periods(), 0));
    }
    let fac = Factorized::new(theta)?;
    let rank = numerical_rank(&fac.h);
    if rank < r {
        return Err(Error::RankDeficient {
            what: "loading Gram matrix",
            rank,
            expected: r,
        });
    }
    let h_inv = spd_inverse(&fac.h, "loading Gram matrix")?;
    let w = moments.transformed(&theta.beta);
    let c = fac.sinv_gamma.transpose() * w;
    Ok((h_inv * c).transpose())
}

/// Projection basis for the trace-form covariance: the observed common
/// regressors (or a constant) followed by the factors whose outcome loadings
/// are estimated.
pub fn projection_basis(
    f_hat: &DMatrix<f64>,
    variant: ModelVariant,
    common: Option<&DMatrix<f64>>,
) -> DMatrix<f64> {
    let t = f_hat.nrows();
    let g = variant.free_cols(f_hat.ncols());
    let lead = match common {
        Some(d) => d.clone(),
        None => DMatrix::from_element(t, 1, 1.0),
    };
    let mut basis = DMatrix::zeros(t, lead.ncols() + g);
    basis.columns_mut(0, lead.ncols()).copy_from(&lead);
    basis.columns_mut(lead.ncols(), g).copy_from(&f_hat.columns(0, g));
    basis
}

/// Trace-form estimate: `Ω̂_pq = (1/NT) tr[M̈ X_p M(P) X_q']` with
/// `M̈ = Σ_ee^{-1} - Σ_ee^{-1}Λ(Λ'Σ_ee^{-1}Λ)^{-1}Λ'Σ_ee^{-1}`.
///
/// Λ holds the outcome loadings that are not restricted to zero and `P`
/// is the projection basis (see [`projection_basis`]).
pub fn covariance_trace_form(
    theta: &Theta,
    moments: &Moments,
    basis: &DMatrix<f64>,
    variant: ModelVariant,
) -> Result<CovarianceEstimate> {
    let (n, t, k) = (moments.n_units(), moments.n_periods(), moments.n_regressors());
    let lam_cols = match variant {
        ModelVariant::ZeroRestrictions { r1 } => r1,
        _ => theta.n_factors(),
    };
    let lambda = theta.lambda().columns(0, lam_cols).into_owned();
    let inv_e = DVector::from_iterator(n, theta.sigma.sigma_e().iter().map(|s| 1.0 / s));
    let sinv_lam = DMatrix::from_fn(n, lam_cols, |i, c| inv_e[i] * lambda[(i, c)]);
    let core = spd_inverse(&(lambda.transpose() * &sinv_lam), "outcome loading Gram")?;

    let projected: Vec<DMatrix<f64>> = (0..k)
        .map(|j| project_out_rows(&moments.regressor(j), basis))
        .collect::<Result<_>>()?;
    let applied: Vec<DMatrix<f64>> = projected
        .iter()
        .map(|y| {
            let scaled = DMatrix::from_fn(n, t, |i, s| inv_e[i] * y[(i, s)]);
            if lam_cols == 0 {
                scaled
            } else {
                let inner = &core * (sinv_lam.transpose() * y);
                scaled - &sinv_lam * inner
            }
        })
        .collect();
    let nt = (n * t) as f64;
    let omega = DMatrix::from_fn(k, k, |p, q| applied[p].dot(&projected[q]) / nt);
    CovarianceEstimate::from_omega(omega, nt, CovarianceMethod::TraceForm)
}

/// Moment-form estimate `Ω̂_pq = (1/N) Σ_i σ̂_iie^{-1} (Σ̂_iix)_pq`.
pub fn covariance_moment_form(theta: &Theta, n_periods: usize) -> Result<CovarianceEstimate> {
    let n = theta.n_units();
    let k = theta.n_regressors();
    let mut omega = DMatrix::zeros(k, k);
    for i in 0..n {
        omega += &theta.sigma.sigma_x()[i] / theta.sigma.sigma_e()[i];
    }
    omega /= n as f64;
    CovarianceEstimate::from_omega(omega, (n * n_periods) as f64, CovarianceMethod::MomentForm)
}

/// Maxima of each equation block of the first-order conditions.
#[derive(Debug, Clone, Default)]
pub struct FocReport {
    pub beta: f64,
    /// Loading conditions (whichever apply to the variant).
    pub loadings: f64,
    /// `(1/N) Γ'Σ_zz^{-1} Δ Σ_zz^{-1} Γ`.
    pub moment: f64,
    /// Idiosyncratic covariance conditions, masked to the free pattern.
    pub sigma: f64,
    /// Identity for the restricted outcome loadings.
    pub restricted: f64,
}

impl FocReport {
    pub fn max(&self) -> f64 {
        self.beta
            .max(self.loadings)
            .max(self.moment)
            .max(self.sigma)
            .max(self.restricted)
    }
}

/// Largest absolute first-order-condition residual at `theta`.
pub fn foc_residuals(theta: &Theta, moments: &Moments, variant: ModelVariant) -> Result<f64> {
    Ok(foc_report(theta, moments, variant, VARIANCE_FLOOR, EIGEN_BOUND)?.max())
}

/// Per-block residuals. Units whose variances sit on the floor or the upper
/// bound are left out of the covariance conditions (their complementary
/// slackness holds instead).
pub fn foc_report(
    theta: &Theta,
    moments: &Moments,
    variant: ModelVariant,
    floor: f64,
    bound: f64,
) -> Result<FocReport> {
    let n = moments.n_units();
    let k = moments.n_regressors();
    let p = k + 1;
    let t = moments.n_periods() as f64;
    let r = theta.n_factors();
    let nf = n as f64;

    let fac = Factorized::new(theta)?;
    let w = moments.transformed(&theta.beta);
    let a = fac.inv.apply(&w);
    let c = theta.gamma.transpose() * &a; // r × T
    let ef = &fac.g * &c;

    // Γ'Σ^{-1}Δ with Δ = S - Σ_zz, r × N(K+1).
    let e5 = &c * w.transpose() / t
        - (&fac.h * &theta.m_ff + DMatrix::identity(r, r)) * theta.gamma.transpose();
    // V = Γ'Σ^{-1}ΔΣ^{-1}.
    let v = fac.inv.apply(&e5.transpose()).transpose();

    let mut rep = FocReport::default();

    if k > 0 {
        let mut g = DVector::<f64>::zeros(k);
        for i in 0..n {
            let inv_e = 1.0 / theta.sigma.sigma_e()[i];
            let mut resid = w.row(i * p).into_owned();
            if r > 0 {
                resid -= theta.gamma.row(i * p) * &ef;
            }
            for j in 0..k {
                g[j] += inv_e * resid.dot(&moments.zdot().row(i * p + 1 + j)) / t;
            }
        }
        rep.beta = g.amax() / nf;
    }

    let mut sigma_res = 0.0_f64;
    let b = theta.b_matrix();
    for j in 0..n {
        let s_e = theta.sigma.sigma_e()[j];
        let sx = &theta.sigma.sigma_x()[j];
        let at_bound = s_e <= floor * (1.0 + 1e-9)
            || s_e >= bound * (1.0 - 1e-9)
            || (k > 0 && {
                let lo = min_eigenvalue(sx);
                let hi = crate::linalg::sym_eigen_desc(sx).0[0];
                lo <= floor * (1.0 + 1e-9) || hi >= bound * (1.0 - 1e-9)
            });
        if at_bound {
            continue;
        }
        let g_j = theta.gamma.rows(j * p, p);
        let s_jj = &b * moments.diag_block(j) * b.transpose();
        let mut d = s_jj - g_j * &theta.m_ff * g_j.transpose() - theta.sigma.block(j);
        if !matches!(variant, ModelVariant::Basic) && r > 0 {
            let vbar = e5.columns(j * p, p);
            let adj = g_j * &fac.g * vbar;
            d -= &adj + adj.transpose();
        }
        sigma_res = sigma_res.max(d[(0, 0)].abs());
        for x in 0..k {
            for y in 0..k {
                sigma_res = sigma_res.max(d[(1 + x, 1 + y)].abs());
            }
        }
    }
    rep.sigma = sigma_res;

    if r == 0 {
        return Ok(rep);
    }

    let y_cols: Vec<usize> = (0..n).map(|i| i * p).collect();
    let x_cols: Vec<usize> = (0..n).flat_map(|i| (1..p).map(move |j| i * p + j)).collect();
    let v_y = v.select_columns(&y_cols); // r × N
    let v_x = v.select_columns(&x_cols); // r × NK

    match variant {
        ModelVariant::Basic => {
            rep.loadings = max_abs(&e5) / nf;
        }
        ModelVariant::ZeroRestrictions { r1 } | ModelVariant::ObservedPhi { r1 } => {
            let r2 = r - r1;
            let g1 = fac.g.rows(0, r1);
            let g2 = fac.g.rows(r1, r2);
            rep.loadings = (max_abs(&(g1 * &v_y)) / nf).max(max_abs(&(&fac.g * &v_x)) / nf);
            // (1/N) Γ'Σ_zz^{-1} Δ Σ_zz^{-1} Γ with Σ_zz^{-1}Γ = Σ^{-1}Γ G M^{-1}.
            let gm = &fac.g * spd_inverse(&theta.m_ff, "factor second moment M_ff")?;
            rep.moment = max_abs(&(gm.transpose() * (&v * &theta.gamma) * &gm)) / nf;
            let lam = theta.lambda();
            let lam_used = match variant {
                ModelVariant::ZeroRestrictions { .. } => lam.columns(0, r1).into_owned(),
                _ => lam,
            };
            rep.restricted = max_abs(&(g2 * &v_y * lam_used)) / nf;
        }
    }
    Ok(rep)
}
