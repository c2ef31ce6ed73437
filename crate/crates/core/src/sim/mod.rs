//! Simulation designs and the Monte Carlo harness.

pub mod dgp;
pub mod monte_carlo;

pub use dgp::{
    gen_heteroscedasticity, generate_dgp, generate_with_rng, DgpConfig, Design, ErrorDist,
    GroundTruth, Heteroscedasticity,
};
pub use monte_carlo::{run_monte_carlo, Estimator, EstimatorSummary, Execution, McConfig, McReport};
