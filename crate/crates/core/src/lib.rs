//! Maximum likelihood estimation of panel data models with interactive
//! effects, where common shocks drive both the outcome and the regressors.

pub mod baselines;
pub mod error;
pub mod estimate;
pub mod inference;
mod linalg;
pub mod moments;
pub mod panel;
pub mod params;
pub mod restricted;
pub mod selection;
pub mod sim;
pub mod woodbury;

pub use error::{Error, Result};
pub use estimate::{fit_mle, EmConfig, FitResult, Init, ModelVariant};
pub use moments::{demean_panel, Moments};
pub use panel::PanelDataset;
pub use params::{BlockCov, Theta};
pub use restricted::{
    concentrate_common_regressors, fit_observed_phi, fit_phi_and_common, fit_zero_restrictions,
    RestrictedSpec,
};
pub use selection::{ic_value, select_r, select_r1_r2};
pub use woodbury::{log_likelihood, sigma_zz_apply_inverse};
