//! ECM estimation of the interactive-effects likelihood.

mod config;
mod ecm;
mod fit;
mod init;
mod normalize;

use nalgebra::DMatrix;

pub use config::{EmConfig, Init, EIGEN_BOUND, VARIANCE_FLOOR};
pub use ecm::{e_step, m_step, EStep};
pub use fit::{fit_mle, FitResult};
pub use normalize::{normalize_identification, normalize_variant, Normalization};

pub(crate) use fit::fit_structured;

/// Which loading restrictions the likelihood is maximized under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelVariant {
    /// All r loadings free, `M_ff = I`.
    Basic,
    /// The outcome rows load only on the first `r1` factors.
    ZeroRestrictions { r1: usize },
    /// The outcome rows load on `r2 = r - r1` observed, fixed loadings Φ.
    ObservedPhi { r1: usize },
}

impl ModelVariant {
    pub fn label(&self) -> &'static str {
        match self {
            ModelVariant::Basic => "basic",
            ModelVariant::ZeroRestrictions { .. } => "zero",
            ModelVariant::ObservedPhi { .. } => "phi",
        }
    }

    /// Number of factors whose outcome loadings are estimated.
    pub fn free_cols(&self, r: usize) -> usize {
        match *self {
            ModelVariant::Basic => r,
            ModelVariant::ZeroRestrictions { r1 } | ModelVariant::ObservedPhi { r1 } => r1,
        }
    }
}

/// Variant together with the values of any pinned outcome loadings.
#[derive(Debug, Clone)]
pub(crate) struct Structure {
    pub variant: ModelVariant,
    pub r: usize,
    /// N × r2 fixed loadings for [`ModelVariant::ObservedPhi`].
    pub phi: Option<DMatrix<f64>>,
}

impl Structure {
    pub fn basic(r: usize) -> Self {
        Self {
            variant: ModelVariant::Basic,
            r,
            phi: None,
        }
    }

    pub fn r1(&self) -> usize {
        self.variant.free_cols(self.r)
    }

    pub fn r2(&self) -> usize {
        self.r - self.r1()
    }

    /// Value of the pinned outcome loading of unit `i` on pinned column `c`
    /// (counted from `r1`).
    pub fn pin(&self, i: usize, c: usize) -> f64 {
        match &self.phi {
            Some(phi) => phi[(i, c)],
            None => 0.0,
        }
    }

    /// Whether the `M_hh` block is a free parameter.
    pub fn free_m_hh(&self) -> bool {
        matches!(self.variant, ModelVariant::ObservedPhi { .. }) && self.r2() > 0
    }
}
