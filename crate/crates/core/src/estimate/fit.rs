use nalgebra::{DMatrix, DVector};

use super::ecm::run_ecm;
use super::init::initial_theta;
use super::{normalize_variant, EmConfig, ModelVariant, Structure};
use crate::error::{Error, Result};
use crate::inference::{
    covariance_trace_form, factors_from_moments, foc_report, projection_basis, CovarianceEstimate,
    FocReport,
};
use crate::moments::{demean_panel, Moments};
use crate::panel::PanelDataset;
use crate::params::Theta;

#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_hat: Theta,
    /// Factor estimates, T × r.
    pub f_hat: DMatrix<f64>,
    /// Log-likelihood at the start and after every ECM sweep.
    pub loglik_trace: Vec<f64>,
    /// Trace-form standard errors (NaN if the covariance was not estimable).
    pub se_beta: DVector<f64>,
    pub covariance: Option<CovarianceEstimate>,
    pub n_iters: usize,
    /// Parameter change below tolerance and FOC residual below tolerance.
    pub converged: bool,
    pub param_converged: bool,
    pub foc_residual: f64,
    pub foc: FocReport,
    pub variant: ModelVariant,
    /// Common-regressor coefficients Δ̂, `N(K+1)` × r₃, when D was observed.
    pub delta_hat: Option<DMatrix<f64>>,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().unwrap_or(&f64::NAN)
    }

    pub fn beta_hat(&self) -> &DVector<f64> {
        &self.theta_hat.beta
    }

    pub fn n_factors(&self) -> usize {
        self.theta_hat.n_factors()
    }
}

/// Maximum likelihood fit of the basic model with `r` factors.
pub fn fit_mle(data: &PanelDataset, r: usize, cfg: &EmConfig) -> Result<FitResult> {
    let moments = demean_panel(data);
    fit_structured(&moments, &Structure::basic(r), cfg, None)
}

pub(crate) fn fit_structured(
    moments: &Moments,
    structure: &Structure,
    cfg: &EmConfig,
    common: Option<&DMatrix<f64>>,
) -> Result<FitResult> {
    cfg.validate()?;
    let (n, t) = (moments.n_units(), moments.n_periods());
    let r = structure.r;
    if r >= n.min(t) {
        return Err(Error::invalid(format!(
            "number of factors {r} must be below min(N, T) = {}",
            n.min(t)
        )));
    }
    let (theta0, mut warnings) = initial_theta(moments, structure, cfg)?;
    let run = run_ecm(theta0, moments, structure, cfg)?;
    warnings.extend(run.warnings);

    let f_raw = factors_from_moments(&run.theta, moments)?;
    let norm = normalize_variant(&run.theta, &f_raw, structure.variant)?;
    warnings.extend(norm.warnings);
    let theta_hat = norm.theta;
    let f_hat = factors_from_moments(&theta_hat, moments)?;

    let foc = foc_report(
        &theta_hat,
        moments,
        structure.variant,
        cfg.variance_floor,
        cfg.eigen_bound,
    )?;
    let foc_residual = foc.max();

    let k = moments.n_regressors();
    let (covariance, se_beta) = if k == 0 {
        (None, DVector::zeros(0))
    } else {
        let basis = projection_basis(&f_hat, structure.variant, common);
        match covariance_trace_form(&theta_hat, moments, &basis, structure.variant) {
            Ok(cov) => {
                let se = cov.se_beta.clone();
                (Some(cov), se)
            }
            Err(e) => {
                warnings.push(format!("standard errors unavailable: {e}"));
                (None, DVector::from_element(k, f64::NAN))
            }
        }
    };

    if let ModelVariant::ZeroRestrictions { r1 } = structure.variant {
        let psi = theta_hat.lambda().columns(0, r1).into_owned();
        let rank = crate::linalg::numerical_rank(&psi);
        if rank < r1 {
            warnings.push(format!(
                "restricted outcome loadings have rank {rank} < {r1}; identification is doubtful"
            ));
        }
    }

    let converged = run.param_converged && foc_residual <= cfg.tol_foc;
    Ok(FitResult {
        theta_hat,
        f_hat,
        loglik_trace: run.trace,
        se_beta,
        covariance,
        n_iters: run.iters,
        converged,
        param_converged: run.param_converged,
        foc_residual,
        foc,
        variant: structure.variant,
        delta_hat: None,
        warnings,
    })
}
