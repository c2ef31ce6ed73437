//! Models with restricted outcome loadings: structural zeros, observed
//! time-invariant loadings Φ, and observed common regressors D.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimate::{fit_structured, EmConfig, FitResult, ModelVariant, Structure};
use crate::linalg::{project_out_rows, spd_inverse};
use crate::moments::demean_panel;
use crate::panel::PanelDataset;

#[derive(Debug, Clone)]
pub enum RestrictedSpec {
    /// Outcome loads on `r1` of `r1 + r2` factors.
    ZeroRestrictions { r1: usize, r2: usize },
    /// Outcome loads on `r1` latent factors plus factors with observed loadings Φ.
    ObservedPhi { r1: usize, phi: DMatrix<f64> },
    /// As `ObservedPhi`, after projecting every series off the common regressors D.
    PhiAndCommon {
        r1: usize,
        phi: Option<DMatrix<f64>>,
        d: DMatrix<f64>,
    },
}

impl RestrictedSpec {
    pub fn fit(&self, data: &PanelDataset, cfg: &EmConfig) -> Result<FitResult> {
        match self {
            RestrictedSpec::ZeroRestrictions { r1, r2 } => fit_zero_restrictions(data, *r1, *r2, cfg),
            RestrictedSpec::ObservedPhi { r1, phi } => {
                fit_observed_phi(&data.clone().with_phi(phi.clone())?, *r1, cfg)
            }
            RestrictedSpec::PhiAndCommon { r1, phi, d } => {
                let mut data = data.clone().without_observed().with_common(d.clone())?;
                if let Some(phi) = phi {
                    data = data.with_phi(phi.clone())?;
                }
                fit_phi_and_common(&data, *r1, cfg)
            }
        }
    }
}

/// Fits the model where the outcome loads only on the first `r1` of
/// `r1 + r2` factors.
pub fn fit_zero_restrictions(
    data: &PanelDataset,
    r1: usize,
    r2: usize,
    cfg: &EmConfig,
) -> Result<FitResult> {
    if r1 == 0 {
        return Err(Error::invalid("zero-restrictions model needs r1 >= 1"));
    }
    let structure = Structure {
        variant: if r2 == 0 {
            ModelVariant::Basic
        } else {
            ModelVariant::ZeroRestrictions { r1 }
        },
        r: r1 + r2,
        phi: None,
    };
    fit_structured(&demean_panel(data), &structure, cfg, None)
}

/// Fits the model whose outcome loadings on the last `r2` factors equal the
/// observed Φ carried by `data`.
pub fn fit_observed_phi(data: &PanelDataset, r1: usize, cfg: &EmConfig) -> Result<FitResult> {
    let phi = data
        .phi_observed()
        .ok_or_else(|| Error::invalid("observed loadings phi are required for this model"))?;
    fit_structured(&demean_panel(data), &phi_structure(r1, Some(phi)), cfg, None)
}

fn phi_structure(r1: usize, phi: Option<&DMatrix<f64>>) -> Structure {
    match phi {
        Some(phi) if phi.ncols() > 0 => Structure {
            variant: ModelVariant::ObservedPhi { r1 },
            r: r1 + phi.ncols(),
            phi: Some(phi.clone()),
        },
        _ => Structure::basic(r1),
    }
}

/// Replaces every series by its residual from a regression on the common
/// regressors D, `Z M(D)`. The result is flagged so that moment
/// construction does not demean it again.
pub fn concentrate_common_regressors(data: &PanelDataset) -> Result<PanelDataset> {
    let d = data
        .d_observed()
        .ok_or_else(|| Error::invalid("common regressors d are required for concentration"))?;
    if d.nrows() <= d.ncols() {
        return Err(Error::invalid(format!(
            "need T > r3 (T={}, r3={})",
            d.nrows(),
            d.ncols()
        )));
    }
    let y = project_out_rows(data.y(), d)?;
    let x = data
        .x()
        .iter()
        .map(|xk| project_out_rows(xk, d))
        .collect::<Result<Vec<_>>>()?;
    let mut out = PanelDataset::new(y, x)?;
    if let Some(phi) = data.phi_observed() {
        out = out.with_phi(phi.clone())?;
    }
    out = out.with_common(d.clone())?;
    Ok(out.into_residualized())
}

/// Fits the observed-loadings model after concentrating out D, then recovers
/// `Δ̂ = (I⊗B̂)(Σ z_s d_s')(Σ d_s d_s')^{-1}`. Without Φ the latent part is
/// the basic model with `r1` factors.
pub fn fit_phi_and_common(data: &PanelDataset, r1: usize, cfg: &EmConfig) -> Result<FitResult> {
    let d = data
        .d_observed()
        .ok_or_else(|| Error::invalid("common regressors d are required for this model"))?
        .clone();
    let conc = concentrate_common_regressors(data)?;
    let structure = phi_structure(r1, data.phi_observed());
    let mut fit = fit_structured(&demean_panel(&conc), &structure, cfg, Some(&d))?;
    fit.delta_hat = Some(delta_hat(data, &fit.theta_hat.beta, &d)?);
    Ok(fit)
}

fn delta_hat(
    data: &PanelDataset,
    beta: &nalgebra::DVector<f64>,
    d: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let (n, k) = (data.n_units(), data.n_regressors());
    let p = k + 1;
    let dd_inv = spd_inverse(&(d.transpose() * d), "common regressor Gram matrix")?;
    let mut delta = DMatrix::zeros(n * p, d.ncols());
    let project = |row: nalgebra::DMatrixView<'_, f64>| (row * d) * &dd_inv;
    for i in 0..n {
        let mut y_coef = project(data.y().rows(i, 1));
        for (j, xk) in data.x().iter().enumerate() {
            let x_coef = project(xk.rows(i, 1));
            y_coef -= &x_coef * beta[j];
            delta.row_mut(i * p + 1 + j).copy_from(&x_coef);
        }
        delta.row_mut(i * p).copy_from(&y_coef);
    }
    Ok(delta)
}
