//! Random instances and dense brute-force oracles shared by the
//! integration tests. Nothing here calls the structured code paths.

#![allow(dead_code)]

use interfx::{BlockCov, PanelDataset, Theta};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// `A A' / dim + 0.5 I`.
pub fn random_spd(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    let a = normal_matrix(rng, dim, dim);
    &a * a.transpose() / dim as f64 + DMatrix::identity(dim, dim) * 0.5
}

pub fn random_theta(rng: &mut ChaCha8Rng, n: usize, k: usize, r: usize) -> Theta {
    let beta = DVector::from_fn(k, |_, _| rng.sample(StandardNormal));
    let gamma = normal_matrix(rng, n * (k + 1), r);
    let sigma_e = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
    let sigma_x = (0..n).map(|_| random_spd(rng, k)).collect();
    let m_ff = random_spd(rng, r);
    Theta::new(beta, gamma, BlockCov::new(sigma_e, sigma_x).unwrap(), m_ff).unwrap()
}

pub fn random_panel(rng: &mut ChaCha8Rng, n: usize, k: usize, t: usize) -> PanelDataset {
    let y = normal_matrix(rng, n, t);
    let x = (0..k).map(|_| normal_matrix(rng, n, t)).collect();
    PanelDataset::new(y, x).unwrap()
}

/// Panel drawn from the model itself, so fits have something to find.
pub fn factor_panel(rng: &mut ChaCha8Rng, n: usize, k: usize, t: usize, r: usize) -> PanelDataset {
    let p = k + 1;
    let gamma = normal_matrix(rng, n * p, r);
    let f = normal_matrix(rng, r, t);
    let beta: Vec<f64> = (1..=k).map(|j| j as f64).collect();
    let mut x = vec![DMatrix::zeros(n, t); k];
    let mut y = DMatrix::zeros(n, t);
    for i in 0..n {
        let scale = rng.random_range(0.5..1.5);
        for s in 0..t {
            let mut yy = (gamma.row(i * p) * f.column(s))[0] + scale * rng.sample::<f64, _>(StandardNormal);
            for j in 0..k {
                let v = (gamma.row(i * p + 1 + j) * f.column(s))[0] + rng.sample::<f64, _>(StandardNormal);
                x[j][(i, s)] = v;
                yy += beta[j] * v;
            }
            y[(i, s)] = yy;
        }
    }
    PanelDataset::new(y, x).unwrap()
}

/// Stacked `N(K+1) × T` data with every series demeaned over time.
pub fn stacked_demeaned(data: &PanelDataset) -> DMatrix<f64> {
    let (n, t, k) = (data.n_units(), data.n_periods(), data.n_regressors());
    let p = k + 1;
    let mut z = DMatrix::zeros(n * p, t);
    for i in 0..n {
        for s in 0..t {
            z[(i * p, s)] = data.y()[(i, s)];
            for j in 0..k {
                z[(i * p + 1 + j, s)] = data.x()[j][(i, s)];
            }
        }
    }
    for row in 0..n * p {
        let mean: f64 = (0..t).map(|s| z[(row, s)]).sum::<f64>() / t as f64;
        for s in 0..t {
            z[(row, s)] -= mean;
        }
    }
    z
}

/// `(1/T) Σ_t ż_t ż_t'` by explicit loops.
pub fn brute_moments(z: &DMatrix<f64>) -> DMatrix<f64> {
    let (d, t) = z.shape();
    let mut m = DMatrix::zeros(d, d);
    for s in 0..t {
        for a in 0..d {
            for b in 0..d {
                m[(a, b)] += z[(a, s)] * z[(b, s)];
            }
        }
    }
    m / t as f64
}

pub fn dense_sigma_ee(theta: &Theta) -> DMatrix<f64> {
    let n = theta.n_units();
    let k = theta.n_regressors();
    let p = k + 1;
    let mut s = DMatrix::zeros(n * p, n * p);
    for i in 0..n {
        s[(i * p, i * p)] = theta.sigma.sigma_e()[i];
        for a in 0..k {
            for b in 0..k {
                s[(i * p + 1 + a, i * p + 1 + b)] = theta.sigma.sigma_x()[i][(a, b)];
            }
        }
    }
    s
}

pub fn dense_sigma_zz(theta: &Theta) -> DMatrix<f64> {
    &theta.gamma * &theta.m_ff * theta.gamma.transpose() + dense_sigma_ee(theta)
}

/// `I_N ⊗ B` with `B = [[1, -β'], [0, I]]`.
pub fn dense_kron_b(theta: &Theta) -> DMatrix<f64> {
    let n = theta.n_units();
    let k = theta.n_regressors();
    let p = k + 1;
    let mut out = DMatrix::identity(n * p, n * p);
    for i in 0..n {
        for j in 0..k {
            out[(i * p, i * p + 1 + j)] = -theta.beta[j];
        }
    }
    out
}

pub fn lu_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().lu().try_inverse().expect("oracle matrix is invertible")
}

pub fn lu_logdet(a: &DMatrix<f64>) -> f64 {
    a.clone().lu().determinant().abs().ln()
}

/// `-(1/2N) ln|Σ_zz| - (1/2N) tr[(I⊗B) M_zz (I⊗B)' Σ_zz^{-1}]`.
pub fn dense_loglik(theta: &Theta, data: &PanelDataset) -> f64 {
    let n = data.n_units() as f64;
    let szz = dense_sigma_zz(theta);
    let kb = dense_kron_b(theta);
    let mzz = brute_moments(&stacked_demeaned(data));
    let quad = (&kb * mzz * kb.transpose() * lu_inverse(&szz)).trace();
    -(lu_logdet(&szz) + quad) / (2.0 * n)
}

/// Conditional factor moments from the joint Gaussian of `(w_t, f_t)`:
/// returns `((1/T) Σ E[f f'|w], (1/T) Σ w E[f|w]')`.
pub fn dense_e_step(theta: &Theta, data: &PanelDataset) -> (DMatrix<f64>, DMatrix<f64>) {
    let szz_inv = lu_inverse(&dense_sigma_zz(theta));
    let w = dense_kron_b(theta) * stacked_demeaned(data);
    let t = w.ncols() as f64;
    let m = &theta.m_ff;
    let gain = m * theta.gamma.transpose() * &szz_inv;
    let cond_var = m - &gain * &theta.gamma * m;
    let ef = &gain * &w;
    let eff = cond_var + &ef * ef.transpose() / t;
    let ezf = &w * ef.transpose() / t;
    (eff, ezf)
}

/// `I - P (P'P)^{-1} P'`.
pub fn annihilator(p: &DMatrix<f64>) -> DMatrix<f64> {
    let t = p.nrows();
    DMatrix::identity(t, t) - p * lu_inverse(&(p.transpose() * p)) * p.transpose()
}

/// `Ω_pq = (1/NT) tr[M̈ X_p M(P) X_q']` with the outcome loadings in the
/// first `lam_cols` columns and `M̈` assembled from dense inverses.
pub fn dense_trace_omega(
    theta: &Theta,
    data: &PanelDataset,
    basis: &DMatrix<f64>,
    lam_cols: usize,
) -> DMatrix<f64> {
    let (n, t, k) = (data.n_units(), data.n_periods(), data.n_regressors());
    let see_inv = DMatrix::from_diagonal(&DVector::from_iterator(
        n,
        theta.sigma.sigma_e().iter().map(|s| 1.0 / s),
    ));
    let lam = theta.lambda().columns(0, lam_cols).into_owned();
    let mddot = if lam_cols == 0 {
        see_inv.clone()
    } else {
        let core = lu_inverse(&(lam.transpose() * &see_inv * &lam));
        &see_inv - &see_inv * &lam * core * lam.transpose() * &see_inv
    };
    let mp = annihilator(basis);
    let z = stacked_demeaned(data);
    let xs: Vec<DMatrix<f64>> = (0..k)
        .map(|j| DMatrix::from_fn(n, t, |i, s| z[(i * (k + 1) + 1 + j, s)]))
        .collect();
    DMatrix::from_fn(k, k, |a, b| {
        (&mddot * &xs[a] * &mp * xs[b].transpose()).trace() / (n * t) as f64
    })
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// Max-norm error of `a` relative to the max-norm of `b`.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    max_abs(&(a - b)) / max_abs(b).max(f64::MIN_POSITIVE)
}

pub fn rel_err_scalar(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}
