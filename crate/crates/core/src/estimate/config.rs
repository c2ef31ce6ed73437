use crate::error::{Error, Result};
use crate::params::Theta;

/// Floor applied to idiosyncratic variances during EM.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Upper eigenvalue bound for covariance blocks and `M_ff`.
pub const EIGEN_BOUND: f64 = 1e6;

/// Starting point of the EM iterations.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    /// Iterated principal components (falls back to random on failure).
    IteratedPc,
    /// Random loadings seeded by the given value.
    Random(u64),
    /// Caller-supplied parameters.
    User(Theta),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop once the max-norm parameter change falls below this.
    pub tol_param: f64,
    /// A fit counts as converged only if its FOC residual is below this.
    pub tol_foc: f64,
    pub init: Init,
    pub variance_floor: f64,
    pub eigen_bound: f64,
    pub pc_max_iters: usize,
    pub pc_tol: f64,
    /// Estimate `M_ff` inside each sweep and fold it back into the loadings
    /// (likelihood-preserving). Off gives the plain ECM sweep.
    pub parameter_expansion: bool,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iters: 3000,
            tol_param: 1e-8,
            tol_foc: 1e-6,
            init: Init::IteratedPc,
            variance_floor: VARIANCE_FLOOR,
            eigen_bound: EIGEN_BOUND,
            pc_max_iters: 500,
            pc_tol: 1e-9,
            parameter_expansion: true,
        }
    }
}

impl EmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be at least 1"));
        }
        if !(self.tol_param > 0.0 && self.tol_foc > 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        if !(self.variance_floor > 0.0 && self.eigen_bound > self.variance_floor) {
            return Err(Error::invalid("need 0 < variance_floor < eigen_bound"));
        }
        Ok(())
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }
}
