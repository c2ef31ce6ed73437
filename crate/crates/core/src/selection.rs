//! Number of factors: an information criterion on the fitted likelihood for
//! the total, and a principal-components criterion on the outcome residual
//! for the factors that reach the outcome.

use nalgebra::{DMatrix, DVector};

use crate::baselines::principal_components;
use crate::error::{Error, Result};
use crate::estimate::{fit_structured, EmConfig, FitResult, Init, Structure};
use crate::moments::{demean_panel, Moments};
use crate::panel::PanelDataset;
use crate::params::Theta;
use crate::woodbury::log_det_sigma_zz;

/// Upper bound on the number of factors searched by default.
pub const DEFAULT_R_MAX: usize = 4;

/// Penalty used by the second-step criterion on the outcome residual.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Step2Penalty {
    /// `k (N+T)/(NT) ln min(N, T)` on the N × T residual.
    #[default]
    BaiNgIcp2,
    /// The first-step penalty with `N(K+1)` in place of N.
    FullPanel,
}

#[derive(Debug, Clone)]
pub struct SelectionConfig {
    pub r_max: usize,
    pub em: EmConfig,
    /// Start the fit at m from the fit at m - 1 plus one extra column.
    pub warm_start: bool,
    pub step2: Step2Penalty,
    /// Scale each outcome residual series to unit variance before the
    /// second step, so a few very noisy units do not pass for a factor.
    pub standardize_residual: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            r_max: DEFAULT_R_MAX,
            em: EmConfig::default(),
            warm_start: true,
            step2: Step2Penalty::default(),
            standardize_residual: true,
        }
    }
}

/// Criterion values for m = 0..=r_max and the minimizer.
#[derive(Debug, Clone)]
pub struct FactorSelection {
    pub r: usize,
    pub ic: Vec<f64>,
    /// β̂ from the fit at each m.
    pub beta: Vec<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct SplitSelection {
    pub r: usize,
    pub r1: usize,
    pub r2: usize,
    pub ic: Vec<f64>,
    /// Second-step criterion for k = 0..=r.
    pub step2_ic: Vec<f64>,
}

/// `IC(m) = ln|Σ̂_zz| / (N K̄) + m (N K̄ + T)/(N K̄ T) ln min(N K̄, T)`, K̄ = K + 1.
pub fn ic_value(data: &PanelDataset, m: usize, cfg: &EmConfig) -> Result<f64> {
    let moments = demean_panel(data);
    let fit = fit_basic(&moments, m, cfg)?;
    ic_from_theta(&fit.theta_hat, moments.n_periods())
}

/// Criterion evaluated at given parameters.
pub fn ic_from_theta(theta: &Theta, t: usize) -> Result<f64> {
    let nk = theta.gamma.nrows();
    Ok(log_det_sigma_zz(theta)? / nk as f64 + theta.n_factors() as f64 * penalty(nk, t))
}

fn penalty(n: usize, t: usize) -> f64 {
    let (nf, tf) = (n as f64, t as f64);
    (nf + tf) / (nf * tf) * (n.min(t) as f64).ln()
}

fn fit_basic(moments: &Moments, m: usize, cfg: &EmConfig) -> Result<FitResult> {
    fit_structured(moments, &Structure::basic(m), cfg, None)
        .map_err(|e| Error::FitFailed { m, source: Box::new(e) })
}

/// `argmin_{0 ≤ m ≤ r_max} IC(m)`, ties going to the smaller m.
pub fn select_r(data: &PanelDataset, r_max: usize, cfg: &EmConfig) -> Result<usize> {
    let sel = SelectionConfig {
        r_max,
        em: cfg.clone(),
        ..SelectionConfig::default()
    };
    Ok(select_r_trace(&demean_panel(data), &sel)?.r)
}

pub fn select_r_trace(moments: &Moments, cfg: &SelectionConfig) -> Result<FactorSelection> {
    let (n, t) = (moments.n_units(), moments.n_periods());
    let cap = cfg.r_max.min(n.min(t).saturating_sub(1));
    let mut ic = Vec::with_capacity(cap + 1);
    let mut beta = Vec::with_capacity(cap + 1);
    let mut prev: Option<FitResult> = None;
    for m in 0..=cap {
        let em = match (&prev, cfg.warm_start) {
            (Some(p), true) if m > 0 => cfg.em.clone().with_init(Init::User(pad_theta(p, moments))),
            _ => cfg.em.clone(),
        };
        let fit = fit_basic(moments, m, &em)?;
        ic.push(ic_from_theta(&fit.theta_hat, t)?);
        beta.push(fit.theta_hat.beta.clone());
        prev = Some(fit);
    }
    Ok(FactorSelection {
        r: argmin(&ic),
        ic,
        beta,
    })
}

/// Two-step choice of (r1, r2): the total from the likelihood criterion,
/// then the outcome factors from the residual `ẏ - ẋβ̂` with at most r̂.
pub fn select_r1_r2(data: &PanelDataset, cfg: &SelectionConfig) -> Result<SplitSelection> {
    let moments = demean_panel(data);
    let first = select_r_trace(&moments, cfg)?;
    let r = first.r;
    let w = moments.transformed(&first.beta[r]);
    let mut resid = DMatrix::from_fn(moments.n_units(), moments.n_periods(), |i, s| {
        w[(i * moments.block(), s)]
    });
    if cfg.standardize_residual {
        for mut row in resid.row_iter_mut() {
            let sd = (row.norm_squared() / row.len() as f64).sqrt();
            if sd > 0.0 {
                row /= sd;
            }
        }
    }
    let step2_ic = residual_criterion(&resid, r, cfg.step2, moments.block());
    let r1 = argmin(&step2_ic);
    Ok(SplitSelection {
        r,
        r1,
        r2: r - r1,
        ic: first.ic,
        step2_ic,
    })
}

/// `ln V(k) + k · penalty` for k = 0..=k_max, with V(k) the mean squared
/// residual after removing k principal components.
fn residual_criterion(resid: &DMatrix<f64>, k_max: usize, pen: Step2Penalty, block: usize) -> Vec<f64> {
    let (n, t) = resid.shape();
    let scale = match pen {
        Step2Penalty::BaiNgIcp2 => penalty(n, t),
        Step2Penalty::FullPanel => penalty(n * block, t),
    };
    let total = (n * t) as f64;
    (0..=k_max)
        .map(|k| {
            let (f, lam) = principal_components(resid, k);
            let v = (resid - lam * f.transpose()).norm_squared() / total;
            v.max(f64::MIN_POSITIVE).ln() + k as f64 * scale
        })
        .collect()
}

fn argmin(v: &[f64]) -> usize {
    let mut best = 0;
    for (m, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = m;
        }
    }
    best
}

/// Previous fit with one more loading column taken from the leading
/// principal component of the data left unexplained.
fn pad_theta(prev: &FitResult, moments: &Moments) -> Theta {
    let th = &prev.theta_hat;
    let t = moments.n_periods() as f64;
    let w = moments.transformed(&th.beta);
    let resid = &w - &th.gamma * prev.f_hat.transpose();
    let (f, _) = principal_components(&resid, 1);
    let col = &resid * &f / t;
    let r = th.n_factors();
    let mut gamma = DMatrix::zeros(th.gamma.nrows(), r + 1);
    gamma.columns_mut(0, r).copy_from(&th.gamma);
    gamma.set_column(r, &col.column(0));
    Theta {
        beta: th.beta.clone(),
        gamma,
        sigma: th.sigma.clone(),
        m_ff: DMatrix::identity(r + 1, r + 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn penalty_increases_with_m() {
        let p = penalty(150, 75);
        assert!(p > 0.0);
        assert!((p - (225.0 / (150.0 * 75.0)) * 75f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn argmin_prefers_smaller_on_ties() {
        assert_eq!(argmin(&[1.0, 0.5, 0.5, 2.0]), 1);
        assert_eq!(argmin(&[0.0]), 0);
    }
}
