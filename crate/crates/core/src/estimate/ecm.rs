//! One ECM sweep: conditional expectations of the factor moments, then
//! conditional maximization over (Γ, Σ_εε, M_ff) followed by β.

use nalgebra::{DMatrix, DVector};

use super::normalize::ObservedReparam;
use super::{EmConfig, Structure};
use crate::error::{Error, Result};
use crate::linalg::{clamp_eigenvalues, spd_inverse, symmetrized};
use crate::moments::Moments;
use crate::params::{BlockCov, Theta};
use crate::woodbury::Factorized;

/// Conditional factor moments at the current parameters.
#[derive(Debug, Clone)]
pub struct EStep {
    /// `(1/T) Σ_t E(f_t f_t' | Z)`, r × r.
    pub eff: DMatrix<f64>,
    /// `(1/T) Σ_t E(w_t f_t' | Z)` with `w_t = (I⊗B) ż_t`, `N(K+1)` × r.
    pub ezf: DMatrix<f64>,
    /// `E(F | Z)` stored as r × T.
    pub ef: DMatrix<f64>,
    /// Log-likelihood at the parameters the expectations were taken under.
    pub loglik: f64,
}

/// Conditional expectations of the factor moments given the data.
pub fn e_step(theta: &Theta, moments: &Moments) -> Result<EStep> {
    let fac = Factorized::new(theta)?;
    let w = moments.transformed(&theta.beta);
    Ok(e_step_with(theta, &fac, &w, moments.n_units()))
}

pub(crate) fn e_step_with(theta: &Theta, fac: &Factorized, w: &DMatrix<f64>, n: usize) -> EStep {
    let t = w.ncols() as f64;
    let a = fac.inv.apply(w);
    let c = theta.gamma.transpose() * &a;
    let loglik = fac.log_likelihood_parts(w, &a, &c, n);
    let ef = &fac.g * &c;
    let eff = symmetrized(&fac.g + &ef * ef.transpose() / t);
    let ezf = w * ef.transpose() / t;
    EStep {
        eff,
        ezf,
        ef,
        loglik,
    }
}

/// Conditional maximization for the basic model (`M_ff` held fixed).
pub fn m_step(theta: &Theta, moments: &Moments, es: &EStep, cfg: &EmConfig) -> Result<Theta> {
    let structure = Structure::basic(theta.n_factors());
    Ok(m_step_structured(theta, moments, es, &structure, cfg)?.0)
}

/// Whether any bound was active in the last Σ update.
#[derive(Debug, Clone, Default)]
pub(crate) struct BoundHits {
    pub units: Vec<usize>,
}

pub(crate) fn m_step_structured(
    theta: &Theta,
    moments: &Moments,
    es: &EStep,
    structure: &Structure,
    cfg: &EmConfig,
) -> Result<(Theta, BoundHits)> {
    let n = moments.n_units();
    let k = moments.n_regressors();
    let p = k + 1;
    let r = theta.n_factors();
    let r1 = structure.r1();

    // Γ: rowwise least squares of E(w f') on E(f f'), with pinned outcome
    // entries held at their values.
    let eff_inv = spd_inverse(&es.eff, "conditional factor moment E(ff')")?;
    let mut gamma = &es.ezf * &eff_inv;
    if r1 < r {
        let eff_ff_inv = spd_inverse(
            &es.eff.view((0, 0), (r1, r1)).into_owned(),
            "free block of E(ff')",
        )?;
        let eff_pf = es.eff.view((r1, 0), (r - r1, r1)).into_owned();
        for i in 0..n {
            let row = i * p;
            let pins = DMatrix::from_fn(1, r - r1, |_, c| structure.pin(i, c));
            let rhs = es.ezf.view((row, 0), (1, r1)).into_owned() - &pins * &eff_pf;
            let free = rhs * &eff_ff_inv;
            for c in 0..r1 {
                gamma[(row, c)] = free[(0, c)];
            }
            for c in r1..r {
                gamma[(row, c)] = pins[(0, c - r1)];
            }
        }
    }

    // Σ_εε: block-pattern projection of the expected residual covariance.
    let b = theta.b_matrix();
    let mut sigma_e = Vec::with_capacity(n);
    let mut sigma_x = Vec::with_capacity(n);
    let mut hits = BoundHits::default();
    for i in 0..n {
        let s_ii = &b * moments.diag_block(i) * b.transpose();
        let ezf_i = es.ezf.rows(i * p, p);
        let g_i = gamma.rows(i * p, p);
        let cross = ezf_i * g_i.transpose();
        let a_i = symmetrized(s_ii - &cross - cross.transpose() + g_i * &es.eff * g_i.transpose());
        let e = a_i[(0, 0)];
        let e_clamped = e.clamp(cfg.variance_floor, cfg.eigen_bound);
        let mut hit = e_clamped != e;
        sigma_e.push(e_clamped);
        let (sx, hit_x) =
            clamp_eigenvalues(&a_i.view((1, 1), (k, k)).into_owned(), cfg.variance_floor, cfg.eigen_bound);
        hit |= hit_x;
        sigma_x.push(sx);
        if hit {
            hits.units.push(i);
        }
    }
    let sigma = BlockCov::new(sigma_e, sigma_x)?;

    // M_ff: only the block loading on observed-loading factors is free.
    let mut m_ff = theta.m_ff.clone();
    if structure.free_m_hh() && !cfg.parameter_expansion {
        let r2 = r - r1;
        let (hh, _) = clamp_eigenvalues(
            &es.eff.view((r1, r1), (r2, r2)).into_owned(),
            1.0 / cfg.eigen_bound,
            cfg.eigen_bound,
        );
        m_ff = DMatrix::identity(r, r);
        m_ff.view_mut((r1, r1), (r2, r2)).copy_from(&hh);
    }

    // β: weighted least squares of ẏ - λ' E(f) on ẋ, using the new
    // loadings and variances with the factors from the current E-step.
    let beta = if k == 0 {
        DVector::zeros(0)
    } else {
        let mut lhs = DMatrix::zeros(k, k);
        let mut rhs = DVector::zeros(k);
        for i in 0..n {
            let w_i = 1.0 / sigma.sigma_e()[i];
            let d = moments.diag_block(i);
            lhs += d.view((1, 1), (k, k)) * w_i;
            // (1/T) ẋ_i E(F)' λ_i equals the regressor rows of E(w f') times λ_i.
            let xf = es.ezf.view((i * p + 1, 0), (k, r));
            let lam = gamma.view((i * p, 0), (1, r)).transpose();
            let adj = xf * lam;
            for j in 0..k {
                rhs[j] += w_i * (d[(1 + j, 0)] - adj[j]);
            }
        }
        let chol = lhs.clone().cholesky().ok_or(Error::Singular {
            what: "weighted regressor Gram matrix",
            min_eigenvalue: crate::linalg::min_eigenvalue(&lhs),
        })?;
        chol.solve(&rhs)
    };

    if cfg.parameter_expansion && r > 0 {
        if let Some((g, m)) = fold_expanded(&gamma, &es.eff, structure, cfg) {
            gamma = g;
            m_ff = m;
        }
    }

    Ok((
        Theta {
            beta,
            gamma,
            sigma,
            m_ff,
        },
        hits,
    ))
}

/// With `M_ff` left free its update is `E(ff')`. Mapping `(Γ, E(ff'))` back
/// to an equivalent point with the variant's fixed `M_ff` blocks leaves the
/// likelihood unchanged and keeps the pinned outcome loadings in place.
fn fold_expanded(
    gamma: &DMatrix<f64>,
    eff: &DMatrix<f64>,
    structure: &Structure,
    cfg: &EmConfig,
) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let r = gamma.ncols();
    if structure.free_m_hh() && structure.r1() == 0 {
        let (m, _) = clamp_eigenvalues(eff, 1.0 / cfg.eigen_bound, cfg.eigen_bound);
        return Some((gamma.clone(), m));
    }
    if structure.free_m_hh() {
        let re = ObservedReparam::new(eff, structure.r1()).ok()?;
        let mut m = re.m_new.clone();
        let r1 = structure.r1();
        let r2 = r - r1;
        let (hh, _) = clamp_eigenvalues(
            &m.view((r1, r1), (r2, r2)).into_owned(),
            1.0 / cfg.eigen_bound,
            cfg.eigen_bound,
        );
        m.view_mut((r1, r1), (r2, r2)).copy_from(&hh);
        Some((re.gamma(gamma), m))
    } else {
        // A lower-triangular factor keeps structural zeros in trailing columns.
        let l = eff.clone().cholesky()?.l();
        Some((gamma * l, DMatrix::identity(r, r)))
    }
}

/// Runs the ECM iterations from `theta`, returning the last iterate, the
/// likelihood trace, the iteration count and whether the parameter change
/// fell below tolerance.
pub(crate) struct EcmRun {
    pub theta: Theta,
    pub trace: Vec<f64>,
    pub iters: usize,
    pub param_converged: bool,
    pub warnings: Vec<String>,
}

pub(crate) fn run_ecm(
    mut theta: Theta,
    moments: &Moments,
    structure: &Structure,
    cfg: &EmConfig,
) -> Result<EcmRun> {
    let n = moments.n_units();
    let mut trace = Vec::new();
    let mut warnings = Vec::new();
    let mut iters = 0;
    let mut param_converged = false;
    let mut floor_reported = false;
    while iters < cfg.max_iters {
        let fac = Factorized::new(&theta)?;
        let w = moments.transformed(&theta.beta);
        let es = e_step_with(&theta, &fac, &w, n);
        trace.push(es.loglik);
        let (next, hits) = match m_step_structured(&theta, moments, &es, structure, cfg) {
            Ok(v) => v,
            Err(e) if iters > 0 => {
                warnings.push(format!("iteration {iters} aborted: {e}"));
                return Ok(EcmRun {
                    theta,
                    trace,
                    iters,
                    param_converged: false,
                    warnings,
                });
            }
            Err(e) => return Err(e),
        };
        if !hits.units.is_empty() && !floor_reported {
            warnings.push(format!(
                "variance bound active for {} unit(s) at iteration {}",
                hits.units.len(),
                iters + 1
            ));
            floor_reported = true;
        }
        let change = next.max_change(&theta);
        theta = next;
        iters += 1;
        if !change.is_finite() {
            warnings.push("non-finite parameter update".into());
            break;
        }
        if change < cfg.tol_param {
            param_converged = true;
            break;
        }
    }
    let fac = Factorized::new(&theta)?;
    let w = moments.transformed(&theta.beta);
    let a = fac.inv.apply(&w);
    let c = theta.gamma.transpose() * &a;
    trace.push(fac.log_likelihood_parts(&w, &a, &c, n));
    Ok(EcmRun {
        theta,
        trace,
        iters,
        param_converged,
        warnings,
    })
}
