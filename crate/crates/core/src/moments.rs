//! Demeaned second moments of the stacked data `z_it = (y_it, x_it')'`.
//!
//! Unit `i` occupies rows `i*(K+1)..(i+1)*(K+1)` of every stacked matrix,
//! with the outcome first and the regressors after it.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::panel::PanelDataset;

/// Largest `N(K+1)` for which the dense moment matrix is materialized.
pub const DEFAULT_DENSE_CAP: usize = 500;

#[derive(Debug, Clone)]
pub struct Moments {
    n: usize,
    k: usize,
    t: usize,
    zdot: DMatrix<f64>,
    diag_blocks: Vec<DMatrix<f64>>,
    dense: Option<DMatrix<f64>>,
}

/// Time-demeaned moments of a panel, caching the dense matrix when small.
pub fn demean_panel(data: &PanelDataset) -> Moments {
    demean_panel_with_cap(data, DEFAULT_DENSE_CAP)
}

pub fn demean_panel_with_cap(data: &PanelDataset, dense_cap: usize) -> Moments {
    let (n, t, k) = (data.n_units(), data.n_periods(), data.n_regressors());
    let p = k + 1;
    let mut zdot = DMatrix::zeros(n * p, t);
    for i in 0..n {
        zdot.set_row(i * p, &data.y().row(i));
        for (j, xk) in data.x().iter().enumerate() {
            zdot.set_row(i * p + 1 + j, &xk.row(i));
        }
    }
    if !data.is_residualized() {
        for mut row in zdot.row_iter_mut() {
            let mean = row.sum() / t as f64;
            row.add_scalar_mut(-mean);
        }
    }
    Moments::from_stacked(zdot, k, dense_cap)
}

impl Moments {
    /// Wraps already-transformed stacked data (`N(K+1)` × T).
    pub fn from_stacked(zdot: DMatrix<f64>, k: usize, dense_cap: usize) -> Self {
        let p = k + 1;
        let n = zdot.nrows() / p;
        let t = zdot.ncols();
        let inv_t = 1.0 / t as f64;
        let diag_blocks = (0..n)
            .map(|i| {
                let zi = zdot.rows(i * p, p);
                crate::linalg::symmetrized(&zi * zi.transpose() * inv_t)
            })
            .collect();
        let dense = (n * p <= dense_cap)
            .then(|| crate::linalg::symmetrized(&zdot * zdot.transpose() * inv_t));
        Self {
            n,
            k,
            t,
            zdot,
            diag_blocks,
            dense,
        }
    }

    pub fn n_units(&self) -> usize {
        self.n
    }

    pub fn n_regressors(&self) -> usize {
        self.k
    }

    pub fn n_periods(&self) -> usize {
        self.t
    }

    /// Block size `K+1`.
    pub fn block(&self) -> usize {
        self.k + 1
    }

    /// Demeaned stacked data Ż, `N(K+1)` × T.
    pub fn zdot(&self) -> &DMatrix<f64> {
        &self.zdot
    }

    /// Dense `M_zz` when it fits under the cap.
    pub fn dense(&self) -> Option<&DMatrix<f64>> {
        self.dense.as_ref()
    }

    /// Diagonal block `M_zz^{ii}`.
    pub fn diag_block(&self, i: usize) -> &DMatrix<f64> {
        &self.diag_blocks[i]
    }

    /// Block `M_zz^{ij} = (1/T) Σ_t ż_it ż_jt'`.
    pub fn m_zz_block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let p = self.block();
        if let Some(d) = &self.dense {
            return d.view((i * p, j * p), (p, p)).into_owned();
        }
        let zi = self.zdot.rows(i * p, p);
        let zj = self.zdot.rows(j * p, p);
        zi * zj.transpose() / self.t as f64
    }

    /// `(I_N ⊗ B) Ż`: the outcome row of each unit becomes `ẏ - ẋβ`.
    pub fn transformed(&self, beta: &DVector<f64>) -> DMatrix<f64> {
        let p = self.block();
        let mut w = self.zdot.clone();
        for i in 0..self.n {
            for j in 0..self.k {
                let b = beta[j];
                if b == 0.0 {
                    continue;
                }
                for t in 0..self.t {
                    w[(i * p, t)] -= b * self.zdot[(i * p + 1 + j, t)];
                }
            }
        }
        w
    }

    /// Demeaned regressor `k` as an N × T matrix.
    pub fn regressor(&self, k: usize) -> DMatrix<f64> {
        let p = self.block();
        DMatrix::from_fn(self.n, self.t, |i, t| self.zdot[(i * p + 1 + k, t)])
    }

    /// Demeaned outcome as an N × T matrix.
    pub fn outcome(&self) -> DMatrix<f64> {
        let p = self.block();
        DMatrix::from_fn(self.n, self.t, |i, t| self.zdot[(i * p, t)])
    }

    /// Rebuilds moments for a permutation of the units.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let p = self.block();
        if order.len() != self.n {
            return Err(crate::Error::dim("permutation length must equal N"));
        }
        let mut z = DMatrix::zeros(self.zdot.nrows(), self.t);
        for (dst, &src) in order.iter().enumerate() {
            z.rows_mut(dst * p, p).copy_from(&self.zdot.rows(src * p, p));
        }
        let cap = if self.dense.is_some() { usize::MAX } else { 0 };
        Ok(Self::from_stacked(z, self.k, cap))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_outcome_has_zero_blocks() {
        let y = DMatrix::from_element(3, 5, 2.5);
        let x = vec![DMatrix::from_fn(3, 5, |i, t| (i + t) as f64)];
        let m = demean_panel(&PanelDataset::new(y, x).unwrap());
        for i in 0..3 {
            for j in 0..3 {
                let b = m.m_zz_block(i, j);
                assert_eq!(b[(0, 0)], 0.0);
                assert_eq!(b[(0, 1)], 0.0);
            }
        }
    }

    #[test]
    fn two_period_variance() {
        // N = 1 is below the panel minimum, so build the stacked data directly.
        let m = Moments::from_stacked(DMatrix::from_row_slice(1, 2, &[-1.0, 1.0]), 0, 10);
        assert_eq!(m.dense().unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn transformed_outcome_row() {
        let y = DMatrix::from_fn(2, 4, |i, t| (i * 3 + t * t) as f64);
        let x = vec![DMatrix::from_fn(2, 4, |i, t| (i + 2 * t) as f64)];
        let m = demean_panel(&PanelDataset::new(y, x).unwrap());
        let w = m.transformed(&DVector::from_vec(vec![0.5]));
        for t in 0..4 {
            let expected = m.zdot()[(2, t)] - 0.5 * m.zdot()[(3, t)];
            assert_eq!(w[(2, t)], expected);
        }
    }
}
