//! Data generating processes for the four simulation designs.
//!
//! Every design has two regressors, `β = (1, 2)` by default, and one factor
//! per factor type (`g_t`, `h_t`, `d_t`).

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal, StudentT, Uniform};

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, sym_inv_sqrt};
use crate::panel::PanelDataset;

/// Number of regressors in every design.
pub const DESIGN_REGRESSORS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Design {
    /// One factor `g_t` in every equation.
    Dgp1,
    /// `g_t` everywhere, `h_t` only in the regressors.
    Dgp2,
    /// `g_t` and `h_t` everywhere, outcome loadings on `h_t` observed.
    Dgp3,
    /// As `Dgp3` plus an observed common regressor `d_t`.
    Dgp4,
}

impl Design {
    pub fn number(&self) -> u8 {
        match self {
            Design::Dgp1 => 1,
            Design::Dgp2 => 2,
            Design::Dgp3 => 3,
            Design::Dgp4 => 4,
        }
    }

    pub fn from_number(d: u8) -> Result<Self> {
        match d {
            1 => Ok(Design::Dgp1),
            2 => Ok(Design::Dgp2),
            3 => Ok(Design::Dgp3),
            4 => Ok(Design::Dgp4),
            _ => Err(Error::invalid(format!("design must be 1, 2, 3 or 4 (got {d})"))),
        }
    }

    /// Total number of latent plus observed common factors.
    pub fn total_factors(&self) -> usize {
        match self {
            Design::Dgp1 => 1,
            Design::Dgp2 | Design::Dgp3 => 2,
            Design::Dgp4 => 3,
        }
    }

    /// Factors entering the outcome equation.
    pub fn outcome_factors(&self) -> usize {
        match self {
            Design::Dgp1 | Design::Dgp2 => 1,
            Design::Dgp3 => 2,
            Design::Dgp4 => 3,
        }
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

/// Distribution of the standardized idiosyncratic shocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ErrorDist {
    /// `(χ²₂ - 2) / 2`.
    ChiSquared2,
    Normal,
    /// Student t scaled to unit variance; requires `df > 2`.
    StudentT(f64),
}

impl ErrorDist {
    pub fn validate(&self) -> Result<()> {
        match self {
            ErrorDist::StudentT(df) if !(*df > 2.0 && df.is_finite()) => Err(Error::invalid(
                format!("t degrees of freedom must exceed 2 (got {df})"),
            )),
            _ => Ok(()),
        }
    }

    /// Draws `len` standardized shocks.
    pub fn sample_n<R: Rng + ?Sized>(&self, rng: &mut R, len: usize) -> Vec<f64> {
        match *self {
            ErrorDist::ChiSquared2 => {
                let chi = ChiSquared::new(2.0).expect("valid degrees of freedom");
                (0..len).map(|_| (chi.sample(rng) - 2.0) / 2.0).collect()
            }
            ErrorDist::Normal => (0..len).map(|_| StandardNormal.sample(rng)).collect(),
            ErrorDist::StudentT(df) => {
                let t = StudentT::new(df).expect("validated degrees of freedom");
                let scale = ((df - 2.0) / df).sqrt();
                (0..len).map(|_| t.sample(rng) * scale).collect()
            }
        }
    }
}

impl fmt::Display for ErrorDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorDist::ChiSquared2 => write!(f, "chisq"),
            ErrorDist::Normal => write!(f, "normal"),
            ErrorDist::StudentT(df) => write!(f, "t:{df}"),
        }
    }
}

impl FromStr for ErrorDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let d = match s {
            "chisq" => ErrorDist::ChiSquared2,
            "normal" => ErrorDist::Normal,
            _ => match s.strip_prefix("t:") {
                Some(df) => ErrorDist::StudentT(df.parse().map_err(|_| {
                    Error::invalid(format!("cannot parse degrees of freedom in '{s}'"))
                })?),
                None => {
                    return Err(Error::invalid(format!(
                        "unknown error distribution '{s}' (expected chisq, normal or t:<df>)"
                    )))
                }
            },
        };
        d.validate()?;
        Ok(d)
    }
}

#[derive(Debug, Clone)]
pub struct DgpConfig {
    pub design: Design,
    pub n: usize,
    pub t: usize,
    pub beta_true: DVector<f64>,
    pub error_dist: ErrorDist,
    /// Heteroscedasticity draws `η_i ~ U[u, 1 - u]`.
    pub u: f64,
    pub seed: u64,
    /// Multiplies the idiosyncratic errors; zero gives an exact factor model.
    pub noise_scale: f64,
}

impl DgpConfig {
    pub fn new(design: Design, n: usize, t: usize, seed: u64) -> Self {
        Self {
            design,
            n,
            t,
            beta_true: DVector::from_vec(vec![1.0, 2.0]),
            error_dist: ErrorDist::ChiSquared2,
            u: 0.1,
            seed,
            noise_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.t < 2 {
            return Err(Error::invalid(format!(
                "need N >= 2 and T >= 2 (got N={}, T={})",
                self.n, self.t
            )));
        }
        if !(self.u > 0.0 && self.u < 0.5) {
            return Err(Error::invalid(format!("u must lie in (0, 0.5) (got {})", self.u)));
        }
        if self.beta_true.len() != DESIGN_REGRESSORS {
            return Err(Error::dim(format!(
                "designs have {DESIGN_REGRESSORS} regressors, beta_true has {}",
                self.beta_true.len()
            )));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::invalid("noise scale must be finite and non-negative"));
        }
        self.error_dist.validate()
    }
}

/// Population quantities behind a simulated panel.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub beta: DVector<f64>,
    /// Stacked loadings `L`, `N(K+1)` × q, columns ordered (g, h, d).
    pub loadings: DMatrix<f64>,
    /// Factors ς_t as a T × q matrix.
    pub factors: DMatrix<f64>,
    /// Per-row error scale Ξ.
    pub xi: DVector<f64>,
    pub design: Design,
}

impl GroundTruth {
    /// Total number of factors `r` (latent plus observed).
    pub fn r(&self) -> usize {
        self.design.total_factors()
    }

    /// Latent factors in the outcome equation that are not observed, `r1`.
    pub fn r1(&self) -> usize {
        1
    }
}

#[derive(Debug, Clone)]
pub struct Heteroscedasticity {
    /// Ξ, one entry per stacked row.
    pub xi: DVector<f64>,
    /// Υ_i = diag(1, U_i) with `U_i` orthonormal, one block per unit.
    pub upsilon: Vec<DMatrix<f64>>,
}

/// Scales `Ξ_j = η_j/(1-η_j) ‖ι_j‖²` and the rotations Υ_i. `loadings` has
/// `N(K+1)` rows.
pub fn gen_heteroscedasticity<R: Rng + ?Sized>(
    loadings: &DMatrix<f64>,
    k: usize,
    u: f64,
    rng: &mut R,
) -> Result<Heteroscedasticity> {
    let p = k + 1;
    if loadings.nrows() % p != 0 {
        return Err(Error::dim(format!(
            "loadings have {} rows, not a multiple of K+1 = {p}",
            loadings.nrows()
        )));
    }
    let n = loadings.nrows() / p;
    let eta_dist = Uniform::new_inclusive(u, 1.0 - u)
        .map_err(|e| Error::invalid(format!("bad heteroscedasticity bound: {e}")))?;
    let xi = DVector::from_iterator(
        loadings.nrows(),
        loadings.row_iter().map(|row| {
            let eta: f64 = eta_dist.sample(rng);
            eta / (1.0 - eta) * row.norm_squared()
        }),
    );
    let mut upsilon = Vec::with_capacity(n);
    for _ in 0..n {
        let u_i = loop {
            let m = DMatrix::from_fn(k, k, |_, _| StandardNormal.sample(rng));
            let mtm = m.transpose() * &m;
            if k == 0 || min_eigenvalue(&mtm) > 1e-10 {
                break &m * sym_inv_sqrt(&mtm, "M'M")?;
            }
        };
        let mut block = DMatrix::identity(p, p);
        block.view_mut((1, 1), (k, k)).copy_from(&u_i);
        upsilon.push(block);
    }
    Ok(Heteroscedasticity { xi, upsilon })
}

/// Simulates one panel from a fresh generator seeded with `cfg.seed`.
pub fn generate_dgp(cfg: &DgpConfig) -> Result<(PanelDataset, GroundTruth)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    generate_with_rng(cfg, &mut rng)
}

pub fn generate_with_rng<R: Rng + ?Sized>(
    cfg: &DgpConfig,
    rng: &mut R,
) -> Result<(PanelDataset, GroundTruth)> {
    cfg.validate()?;
    let (n, t) = (cfg.n, cfg.t);
    let k = DESIGN_REGRESSORS;
    let p = k + 1;
    let design = cfg.design;
    let q = design.total_factors();
    let mut normal = || -> f64 { StandardNormal.sample(&mut *rng) };

    let alpha: Vec<f64> = (0..n).map(|_| normal()).collect();
    let mu = DMatrix::from_fn(n, k, |_, _| normal());
    let psi: Vec<f64> = (0..n).map(|_| normal()).collect();
    let phi: Vec<f64> = match design {
        Design::Dgp3 | Design::Dgp4 => (0..n).map(|_| normal()).collect(),
        _ => vec![0.0; n],
    };
    let kappa: Vec<f64> = match design {
        Design::Dgp4 => (0..n).map(|_| normal()).collect(),
        _ => vec![0.0; n],
    };

    let mut loadings = DMatrix::zeros(n * p, q);
    for i in 0..n {
        loadings[(i * p, 0)] = psi[i];
        if q > 1 {
            loadings[(i * p, 1)] = phi[i];
        }
        if q > 2 {
            loadings[(i * p, 2)] = kappa[i];
        }
        for j in 0..k {
            let row = i * p + 1 + j;
            loadings[(row, 0)] = psi[i] + normal();
            match design {
                Design::Dgp1 => {}
                Design::Dgp2 => loadings[(row, 1)] = normal(),
                Design::Dgp3 | Design::Dgp4 => loadings[(row, 1)] = phi[i] + normal(),
            }
            if design == Design::Dgp4 {
                loadings[(row, 2)] = kappa[i] + normal();
            }
        }
    }

    let mut factors = DMatrix::zeros(t, q);
    for s in 0..t {
        for c in 0..q {
            // d_t has mean one; g_t and h_t are standard normal.
            factors[(s, c)] = if c == 2 { 1.0 + normal() } else { normal() };
        }
    }

    let het = gen_heteroscedasticity(&loadings, k, cfg.u, rng)?;
    let shocks = cfg.error_dist.sample_n(rng, n * p * t);

    let mut y = DMatrix::zeros(n, t);
    let mut x: Vec<DMatrix<f64>> = (0..k).map(|_| DMatrix::zeros(n, t)).collect();
    let mut eps = DVector::zeros(p);
    for s in 0..t {
        let common = &loadings * factors.row(s).transpose();
        for i in 0..n {
            let base = (s * n + i) * p;
            let raw = DVector::from_column_slice(&shocks[base..base + p]);
            eps.copy_from(&(&het.upsilon[i] * raw));
            for j in 0..p {
                eps[j] *= het.xi[i * p + j].sqrt() * cfg.noise_scale;
            }
            // Forward substitution through the unit upper-triangular B.
            let mut yv = alpha[i] + common[i * p] + eps[0];
            for j in 0..k {
                let xv = mu[(i, j)] + common[i * p + 1 + j] + eps[1 + j];
                x[j][(i, s)] = xv;
                yv += cfg.beta_true[j] * xv;
            }
            y[(i, s)] = yv;
        }
    }

    let mut data = PanelDataset::new(y, x)?;
    match design {
        Design::Dgp3 => {
            data = data.with_phi(DMatrix::from_column_slice(n, 1, &phi))?;
        }
        Design::Dgp4 => {
            data = data.with_phi(DMatrix::from_column_slice(n, 1, &phi))?;
            let d = DMatrix::from_fn(t, 2, |s, c| if c == 0 { 1.0 } else { factors[(s, 2)] });
            data = data.with_common(d)?;
        }
        _ => {}
    }
    let truth = GroundTruth {
        beta: cfg.beta_true.clone(),
        loadings,
        factors,
        xi: het.xi,
        design,
    };
    Ok((data, truth))
}
