//! Parameter containers: loadings, block covariance and factor moments.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{max_abs_diff, spd_inverse_logdet, symmetrized};

/// Per-unit idiosyncratic covariance `Σ_ii = diag(σ²_iie, Σ_iix)`.
///
/// The cross-covariance between `e_it` and `v_it` is zero by construction,
/// so only the two diagonal pieces are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockCov {
    sigma_e: Vec<f64>,
    sigma_x: Vec<DMatrix<f64>>,
}

impl BlockCov {
    pub fn new(sigma_e: Vec<f64>, sigma_x: Vec<DMatrix<f64>>) -> Result<Self> {
        if sigma_e.len() != sigma_x.len() {
            return Err(Error::dim("sigma_e and sigma_x must have one entry per unit"));
        }
        let k = sigma_x.first().map_or(0, |m| m.nrows());
        for (i, (&s, m)) in sigma_e.iter().zip(&sigma_x).enumerate() {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid(format!("sigma_e of unit {i} must be positive")));
            }
            if m.shape() != (k, k) {
                return Err(Error::dim(format!("sigma_x of unit {i} is not {k}x{k}")));
            }
        }
        Ok(Self { sigma_e, sigma_x })
    }

    /// Unit variances in every position.
    pub fn identity(n: usize, k: usize) -> Self {
        Self {
            sigma_e: vec![1.0; n],
            sigma_x: vec![DMatrix::identity(k, k); n],
        }
    }

    pub fn n_units(&self) -> usize {
        self.sigma_e.len()
    }

    pub fn n_regressors(&self) -> usize {
        self.sigma_x.first().map_or(0, |m| m.nrows())
    }

    pub fn sigma_e(&self) -> &[f64] {
        &self.sigma_e
    }

    pub fn sigma_x(&self) -> &[DMatrix<f64>] {
        &self.sigma_x
    }

    /// Full `(K+1)×(K+1)` block of unit `i`.
    pub fn block(&self, i: usize) -> DMatrix<f64> {
        let k = self.n_regressors();
        let mut b = DMatrix::zeros(k + 1, k + 1);
        b[(0, 0)] = self.sigma_e[i];
        b.view_mut((1, 1), (k, k)).copy_from(&self.sigma_x[i]);
        b
    }

    /// Dense `N(K+1)` square matrix. Test and oracle use only.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let p = self.n_regressors() + 1;
        let n = self.n_units();
        let mut d = DMatrix::zeros(n * p, n * p);
        for i in 0..n {
            d.view_mut((i * p, i * p), (p, p)).copy_from(&self.block(i));
        }
        d
    }

    /// Inverse blocks and total log-determinant.
    pub(crate) fn inverse(&self) -> Result<BlockInverse> {
        let mut logdet = 0.0;
        let mut inv_x = Vec::with_capacity(self.n_units());
        for s in &self.sigma_e {
            logdet += s.ln();
        }
        for m in &self.sigma_x {
            let (inv, ld) = spd_inverse_logdet(m, "idiosyncratic covariance block")?;
            logdet += ld;
            inv_x.push(inv);
        }
        Ok(BlockInverse {
            inv_e: self.sigma_e.iter().map(|s| 1.0 / s).collect(),
            inv_x,
            logdet,
        })
    }
}

/// Inverse of a [`BlockCov`] in the same factored layout.
#[derive(Debug, Clone)]
pub(crate) struct BlockInverse {
    pub inv_e: Vec<f64>,
    pub inv_x: Vec<DMatrix<f64>>,
    pub logdet: f64,
}

impl BlockInverse {
    /// `Σ_εε^{-1} v` for stacked `v` with `N(K+1)` rows.
    pub fn apply(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.inv_e.len();
        let k = self.inv_x.first().map_or(0, |m| m.nrows());
        let p = k + 1;
        let mut out = DMatrix::zeros(v.nrows(), v.ncols());
        for i in 0..n {
            let ie = self.inv_e[i];
            for c in 0..v.ncols() {
                out[(i * p, c)] = ie * v[(i * p, c)];
            }
            if k > 0 {
                let xi = v.rows(i * p + 1, k);
                out.rows_mut(i * p + 1, k).copy_from(&(&self.inv_x[i] * xi));
            }
        }
        out
    }
}

/// Full parameter state of the interactive-effects likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct Theta {
    pub beta: DVector<f64>,
    /// Stacked loadings, `N(K+1)` × r. Row `i(K+1)` is λ_i', the next K rows
    /// are the regressor loadings of unit i.
    pub gamma: DMatrix<f64>,
    pub sigma: BlockCov,
    pub m_ff: DMatrix<f64>,
}

impl Theta {
    pub fn new(
        beta: DVector<f64>,
        gamma: DMatrix<f64>,
        sigma: BlockCov,
        m_ff: DMatrix<f64>,
    ) -> Result<Self> {
        let k = beta.len();
        let n = sigma.n_units();
        if sigma.n_regressors() != k && n > 0 && k > 0 {
            return Err(Error::dim("sigma_x blocks do not match beta length"));
        }
        if gamma.nrows() != n * (k + 1) {
            return Err(Error::dim(format!(
                "gamma has {} rows, expected N(K+1) = {}",
                gamma.nrows(),
                n * (k + 1)
            )));
        }
        if m_ff.shape() != (gamma.ncols(), gamma.ncols()) {
            return Err(Error::dim("m_ff must be r x r"));
        }
        Ok(Self {
            beta,
            gamma,
            sigma,
            m_ff: symmetrized(m_ff),
        })
    }

    pub fn n_units(&self) -> usize {
        self.sigma.n_units()
    }

    pub fn n_regressors(&self) -> usize {
        self.beta.len()
    }

    pub fn n_factors(&self) -> usize {
        self.gamma.ncols()
    }

    /// Loading block of unit `i`, `(K+1)` × r.
    pub fn gamma_block(&self, i: usize) -> DMatrix<f64> {
        let p = self.n_regressors() + 1;
        self.gamma.rows(i * p, p).into_owned()
    }

    /// Outcome-equation loadings λ, N × r.
    pub fn lambda(&self) -> DMatrix<f64> {
        let p = self.n_regressors() + 1;
        DMatrix::from_fn(self.n_units(), self.n_factors(), |i, c| self.gamma[(i * p, c)])
    }

    /// `B = [[1, -β'], [0, I_K]]`.
    pub fn b_matrix(&self) -> DMatrix<f64> {
        let k = self.n_regressors();
        let mut b = DMatrix::identity(k + 1, k + 1);
        for j in 0..k {
            b[(0, j + 1)] = -self.beta[j];
        }
        b
    }

    /// Dense `Σ_zz = Γ M_ff Γ' + Σ_εε`. Test and oracle use only.
    pub fn sigma_zz_dense(&self) -> DMatrix<f64> {
        symmetrized(&self.gamma * &self.m_ff * self.gamma.transpose() + self.sigma.to_dense())
    }

    /// Max-norm distance over every parameter block.
    pub fn max_change(&self, other: &Theta) -> f64 {
        let mut d = max_abs_diff(
            &DMatrix::from_column_slice(self.beta.len(), 1, self.beta.as_slice()),
            &DMatrix::from_column_slice(other.beta.len(), 1, other.beta.as_slice()),
        );
        d = d.max(max_abs_diff(&self.gamma, &other.gamma));
        d = d.max(max_abs_diff(&self.m_ff, &other.m_ff));
        for (a, b) in self.sigma.sigma_e.iter().zip(&other.sigma.sigma_e) {
            d = d.max((a - b).abs());
        }
        for (a, b) in self.sigma.sigma_x.iter().zip(&other.sigma.sigma_x) {
            d = d.max(max_abs_diff(a, b));
        }
        d
    }
}
