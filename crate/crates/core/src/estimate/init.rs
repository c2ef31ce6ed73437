//! Starting values for the ECM iterations.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::normalize::observed_transform;
use super::{EmConfig, Init, ModelVariant, Structure};
use crate::baselines::{iterated_pc_moments, principal_components, within_group_moments};
use crate::error::{Error, Result};
use crate::linalg::{clamp_eigenvalues, orthogonal_complement, spd_inverse, symmetrized};
use crate::moments::Moments;
use crate::params::{BlockCov, Theta};

/// Seed used when the principal-components start fails and no seed was given.
const FALLBACK_SEED: u64 = 0x5eed;

pub(crate) fn initial_theta(
    moments: &Moments,
    structure: &Structure,
    cfg: &EmConfig,
) -> Result<(Theta, Vec<String>)> {
    let mut warnings = Vec::new();
    let theta = match &cfg.init {
        Init::User(theta) => {
            check_user(theta, moments, structure)?;
            let mut th = theta.clone();
            apply_pins(&mut th, structure);
            th
        }
        Init::Random(seed) => random_theta(moments, structure, *seed, cfg)?,
        Init::IteratedPc => match pc_theta(moments, structure, cfg) {
            Ok(th) => th,
            Err(e) => {
                warnings.push(format!(
                    "principal-components start failed ({e}); using random start"
                ));
                random_theta(moments, structure, FALLBACK_SEED, cfg)?
            }
        },
    };
    Ok((theta, warnings))
}

fn check_user(theta: &Theta, moments: &Moments, structure: &Structure) -> Result<()> {
    let p = moments.block();
    if theta.n_regressors() != moments.n_regressors()
        || theta.gamma.nrows() != moments.n_units() * p
        || theta.n_factors() != structure.r
    {
        return Err(Error::dim(format!(
            "starting parameters do not match data (K={}, N={}, r={})",
            moments.n_regressors(),
            moments.n_units(),
            structure.r
        )));
    }
    Ok(())
}

/// Number of factors hitting the outcome equation.
fn outcome_factors(structure: &Structure) -> usize {
    match structure.variant {
        ModelVariant::ZeroRestrictions { r1 } => r1,
        _ => structure.r,
    }
}

fn pc_theta(moments: &Moments, structure: &Structure, cfg: &EmConfig) -> Result<Theta> {
    let r = structure.r;
    let beta = if moments.n_regressors() > 0 {
        let pc = iterated_pc_moments(
            moments,
            outcome_factors(structure),
            cfg.pc_max_iters,
            cfg.pc_tol,
        )?;
        if !pc.converged {
            return Err(Error::invalid(format!(
                "iterated PC did not converge in {} iterations",
                pc.n_iters
            )));
        }
        pc.beta_hat
    } else {
        DVector::zeros(0)
    };
    let w = moments.transformed(&beta);
    let t = moments.n_periods() as f64;
    let sd = row_sd(&w);
    let standardized = DMatrix::from_fn(w.nrows(), w.ncols(), |i, s| w[(i, s)] / sd[i]);
    let (f, _) = principal_components(&standardized, r);
    let gamma = &w * &f / t;
    let resid = &w - &gamma * f.transpose();
    let sigma = block_cov_from(&resid, moments, cfg)?;
    let mut theta = Theta {
        beta,
        gamma,
        sigma,
        m_ff: DMatrix::identity(r, r),
    };
    rotate_for_pins(&mut theta, &f, structure)?;
    apply_pins(&mut theta, structure);
    Ok(theta)
}

pub(crate) fn random_theta(
    moments: &Moments,
    structure: &Structure,
    seed: u64,
    cfg: &EmConfig,
) -> Result<Theta> {
    let r = structure.r;
    let k = moments.n_regressors();
    let p = k + 1;
    let beta = if k > 0 {
        within_group_moments(moments)?.beta_hat
    } else {
        DVector::zeros(0)
    };
    let w = moments.transformed(&beta);
    let sd = row_sd(&w);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = DMatrix::from_fn(w.nrows(), r, |i, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * sd[i]
    });
    let n = moments.n_units();
    let lo = cfg.variance_floor;
    let hi = cfg.eigen_bound;
    let sigma_e = (0..n).map(|i| (sd[i * p] * sd[i * p]).clamp(lo, hi)).collect();
    let sigma_x = (0..n)
        .map(|i| DMatrix::from_fn(k, k, |a, b| if a == b { (sd[i * p + 1 + a].powi(2)).clamp(lo, hi) } else { 0.0 }))
        .collect();
    let mut theta = Theta {
        beta,
        gamma,
        sigma: BlockCov::new(sigma_e, sigma_x)?,
        m_ff: DMatrix::identity(r, r),
    };
    apply_pins(&mut theta, structure);
    Ok(theta)
}

fn row_sd(w: &DMatrix<f64>) -> Vec<f64> {
    let t = w.ncols() as f64;
    w.row_iter()
        .map(|row| {
            let mean = row.sum() / t;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / t;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect()
}

fn block_cov_from(resid: &DMatrix<f64>, moments: &Moments, cfg: &EmConfig) -> Result<BlockCov> {
    let p = moments.block();
    let k = p - 1;
    let t = moments.n_periods() as f64;
    let mut sigma_e = Vec::new();
    let mut sigma_x = Vec::new();
    for i in 0..moments.n_units() {
        let rows = resid.rows(i * p, p);
        let c = symmetrized(&rows * rows.transpose() / t);
        sigma_e.push(c[(0, 0)].clamp(cfg.variance_floor, cfg.eigen_bound));
        let (sx, _) = clamp_eigenvalues(
            &c.view((1, 1), (k, k)).into_owned(),
            cfg.variance_floor,
            cfg.eigen_bound,
        );
        sigma_x.push(sx);
    }
    BlockCov::new(sigma_e, sigma_x)
}

/// Rotates principal-components loadings into the pinned layout.
fn rotate_for_pins(theta: &mut Theta, f: &DMatrix<f64>, structure: &Structure) -> Result<()> {
    let r = structure.r;
    let r1 = structure.r1();
    if r1 == r {
        return Ok(());
    }
    let lambda = theta.lambda();
    match structure.variant {
        ModelVariant::ZeroRestrictions { .. } => {
            // Concentrate the outcome loadings in the leading columns.
            let svd = lambda.svd(false, true);
            let v = svd.v_t.expect("requested V").transpose();
            let mut rot = DMatrix::zeros(r, r);
            rot.columns_mut(0, v.ncols()).copy_from(&v);
            if v.ncols() < r {
                let comp = orthogonal_complement(&v);
                rot.columns_mut(v.ncols(), r - v.ncols()).copy_from(&comp);
            }
            theta.gamma = &theta.gamma * rot;
        }
        ModelVariant::ObservedPhi { .. } => {
            let phi = structure.phi.as_ref().ok_or_else(|| Error::invalid("missing phi"))?;
            // Least-squares map from estimated outcome loadings to Φ.
            let gram_inv = spd_inverse(&(lambda.transpose() * &lambda), "outcome loading Gram")?;
            let x = gram_inv * lambda.transpose() * phi; // r × r2
            let mut a = DMatrix::zeros(r, r);
            if r1 > 0 {
                a.columns_mut(0, r1).copy_from(&orthogonal_complement(&x));
            }
            a.columns_mut(r1, r - r1).copy_from(&x);
            let a_inv = a.clone().try_inverse().ok_or(Error::Singular {
                what: "initial loading rotation",
                min_eigenvalue: 0.0,
            })?;
            theta.gamma = &theta.gamma * &a;
            theta.m_ff = symmetrized(&a_inv * a_inv.transpose());
            let f_rot = f * a_inv.transpose();
            let (th, _) = observed_transform(theta, &f_rot, r1)?;
            *theta = th;
            let r2 = r - r1;
            let (hh, _) = clamp_eigenvalues(
                &theta.m_ff.view((r1, r1), (r2, r2)).into_owned(),
                1.0 / crate::estimate::EIGEN_BOUND,
                crate::estimate::EIGEN_BOUND,
            );
            theta.m_ff.view_mut((r1, r1), (r2, r2)).copy_from(&hh);
        }
        ModelVariant::Basic => {}
    }
    Ok(())
}

/// Writes the pinned outcome loadings into `theta`.
pub(crate) fn apply_pins(theta: &mut Theta, structure: &Structure) {
    let r1 = structure.r1();
    let p = theta.n_regressors() + 1;
    for i in 0..theta.n_units() {
        for c in r1..structure.r {
            theta.gamma[(i * p, c)] = structure.pin(i, c - r1);
        }
    }
    if structure.free_m_hh() {
        for a in 0..structure.r {
            for b in 0..structure.r {
                if a < r1 || b < r1 {
                    theta.m_ff[(a, b)] = if a == b { 1.0 } else { 0.0 };
                }
            }
        }
    }
}
