//! Inverse-apply and likelihood for `Σ_zz = Γ M_ff Γ' + Σ_εε` using the
//! block-diagonal plus low-rank structure. Nothing of size `N(K+1)` squared
//! is ever formed.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::linalg::{spd_inverse_logdet, symmetrized};
use crate::moments::Moments;
use crate::params::{BlockInverse, Theta};

/// Precomputed pieces shared by the inverse, the likelihood and the E-step.
#[derive(Debug, Clone)]
pub(crate) struct Factorized {
    pub inv: BlockInverse,
    /// `Σ_εε^{-1} Γ`
    pub sinv_gamma: DMatrix<f64>,
    /// `H = Γ' Σ_εε^{-1} Γ`
    pub h: DMatrix<f64>,
    /// `G = (M_ff^{-1} + H)^{-1}`
    pub g: DMatrix<f64>,
    pub logdet_zz: f64,
}

impl Factorized {
    pub fn new(theta: &Theta) -> Result<Self> {
        let inv = theta.sigma.inverse()?;
        let sinv_gamma = inv.apply(&theta.gamma);
        let h = symmetrized(theta.gamma.transpose() * &sinv_gamma);
        let (m_inv, logdet_m) = spd_inverse_logdet(&theta.m_ff, "factor second moment M_ff")?;
        let (g, logdet_ginv) = spd_inverse_logdet(&(m_inv + &h), "G = (M_ff^-1 + H)^-1")?;
        let logdet_zz = inv.logdet + logdet_m + logdet_ginv;
        Ok(Self {
            inv,
            sinv_gamma,
            h,
            g,
            logdet_zz,
        })
    }

    /// `Σ_zz^{-1} v = Σ_εε^{-1} v - Σ_εε^{-1} Γ G Γ' Σ_εε^{-1} v`.
    pub fn apply_inverse(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        let a = self.inv.apply(v);
        if self.g.nrows() == 0 {
            return a;
        }
        let c = self.sinv_gamma.transpose() * v;
        a - &self.sinv_gamma * (&self.g * c)
    }

    /// Likelihood from the transformed data `W = (I ⊗ B) Ż` together with
    /// `A = Σ_εε^{-1} W` and `C = Γ' A`.
    pub fn log_likelihood_parts(
        &self,
        w: &DMatrix<f64>,
        a: &DMatrix<f64>,
        c: &DMatrix<f64>,
        n: usize,
    ) -> f64 {
        let t = w.ncols() as f64;
        let mut quad = w.dot(a);
        if c.nrows() > 0 {
            quad -= c.dot(&(&self.g * c));
        }
        quad /= t;
        -(self.logdet_zz + quad) / (2.0 * n as f64)
    }
}

/// `Σ_zz^{-1} v` for a vector or matrix `v` with `N(K+1)` rows.
pub fn sigma_zz_apply_inverse(theta: &Theta, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if v.nrows() != theta.gamma.nrows() {
        return Err(crate::Error::dim(format!(
            "vector has {} rows, expected {}",
            v.nrows(),
            theta.gamma.nrows()
        )));
    }
    Ok(Factorized::new(theta)?.apply_inverse(v))
}

/// `ln|Σ_zz|` via the matrix-determinant lemma.
pub fn log_det_sigma_zz(theta: &Theta) -> Result<f64> {
    Ok(Factorized::new(theta)?.logdet_zz)
}

/// Average Gaussian log-likelihood of the demeaned panel:
/// `-(1/2N) ln|Σ_zz| - (1/2N) tr[(I⊗B) M_zz (I⊗B') Σ_zz^{-1}]`.
pub fn log_likelihood(theta: &Theta, moments: &Moments) -> Result<f64> {
    let fac = Factorized::new(theta)?;
    let w = moments.transformed(&theta.beta);
    let a = fac.inv.apply(&w);
    let c = theta.gamma.transpose() * &a;
    Ok(fac.log_likelihood_parts(&w, &a, &c, moments.n_units()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::BlockCov;
    use nalgebra::DVector;

    #[test]
    fn zero_loadings_reduce_to_block_inverse() {
        let sigma = BlockCov::new(
            vec![2.0, 4.0],
            vec![DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 1.0)],
        )
        .unwrap();
        let theta = Theta::new(
            DVector::from_vec(vec![0.0]),
            DMatrix::zeros(4, 1),
            sigma,
            DMatrix::identity(1, 1),
        )
        .unwrap();
        let v = DMatrix::from_column_slice(4, 1, &[2.0, 1.0, 4.0, 3.0]);
        let out = sigma_zz_apply_inverse(&theta, &v).unwrap();
        let expected = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 1.0, 3.0]);
        assert!(crate::linalg::max_abs_diff(&out, &expected) < 1e-14);
    }

    #[test]
    fn identity_case_likelihood() {
        // β = 0, Γ = 0, Σ_ii = I and M_zz = I give -(K+1)/2.
        let k = 2;
        let n = 3;
        let p = k + 1;
        let t = n * p;
        // Ż with Ż Ż'/T = I: scaled identity columns.
        let z = DMatrix::identity(n * p, t) * (t as f64).sqrt();
        let m = Moments::from_stacked(z, k, 100);
        let theta = Theta::new(
            DVector::zeros(k),
            DMatrix::zeros(n * p, 0),
            BlockCov::identity(n, k),
            DMatrix::zeros(0, 0),
        )
        .unwrap();
        let ll = log_likelihood(&theta, &m).unwrap();
        assert!((ll + p as f64 / 2.0).abs() < 1e-12);
    }
}
