mod common;

use common::*;
use interfx::estimate::{e_step, m_step, normalize_identification};
use interfx::{
    concentrate_common_regressors, demean_panel, log_likelihood, sigma_zz_apply_inverse, EmConfig,
    PanelDataset, Theta,
};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn random_orthogonal(g: &mut rand_chacha::ChaCha8Rng, r: usize) -> DMatrix<f64> {
    normal_matrix(g, r, r).qr().q()
}

fn rotated(theta: &Theta, f: &DMatrix<f64>, a: &DMatrix<f64>) -> (Theta, DMatrix<f64>) {
    let a_inv = a.clone().try_inverse().unwrap();
    let th = Theta {
        gamma: &theta.gamma * a,
        m_ff: &a_inv * &theta.m_ff * a_inv.transpose(),
        ..theta.clone()
    };
    (th, f * a_inv.transpose())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn inverse_round_trip(seed in any::<u64>(), n in 2usize..8, k in 1usize..3, r in 0usize..3) {
        let mut g = rng(seed);
        let theta = random_theta(&mut g, n, k, r);
        let w = normal_matrix(&mut g, n * (k + 1), 2);
        let back = sigma_zz_apply_inverse(&theta, &(dense_sigma_zz(&theta) * &w)).unwrap();
        prop_assert!(rel_err(&back, &w) < 1e-10);
    }

    #[test]
    fn normalization_is_idempotent(seed in any::<u64>(), r in 1usize..4) {
        let mut g = rng(seed);
        let theta = random_theta(&mut g, 6, 1, r);
        let f = normal_matrix(&mut g, 30, r);
        let once = normalize_identification(&theta, &f).unwrap();
        let twice = normalize_identification(&once.theta, &once.f).unwrap();
        prop_assert!(rel_err(&twice.theta.gamma, &once.theta.gamma) < 1e-10);
        prop_assert!(rel_err(&twice.f, &once.f) < 1e-10);
        prop_assert!(max_abs(&(&once.theta.m_ff - DMatrix::identity(r, r))) < 1e-12);
    }

    #[test]
    fn normalization_ignores_orthogonal_rotation(seed in any::<u64>(), r in 1usize..4) {
        let mut g = rng(seed);
        let theta = random_theta(&mut g, 6, 2, r);
        let f = normal_matrix(&mut g, 25, r);
        let base = normalize_identification(&theta, &f).unwrap();
        let (th, fr) = rotated(&theta, &f, &random_orthogonal(&mut g, r));
        let out = normalize_identification(&th, &fr).unwrap();
        prop_assert!(rel_err(&out.theta.gamma, &base.theta.gamma) < 1e-10);
        prop_assert!(rel_err(&out.f, &base.f) < 1e-10);
    }

    #[test]
    fn likelihood_ignores_factor_mixing(seed in any::<u64>(), r in 1usize..4) {
        let mut g = rng(seed);
        let data = random_panel(&mut g, 5, 1, 20);
        let theta = random_theta(&mut g, 5, 1, r);
        let a = normal_matrix(&mut g, r, r) + DMatrix::identity(r, r) * 3.0;
        let (th, _) = rotated(&theta, &DMatrix::zeros(20, r), &a);
        let m = demean_panel(&data);
        let (l0, l1) = (log_likelihood(&theta, &m).unwrap(), log_likelihood(&th, &m).unwrap());
        prop_assert!(rel_err_scalar(l1, l0) < 1e-10);
    }

    #[test]
    fn ecm_step_does_not_lower_likelihood(seed in any::<u64>()) {
        let mut g = rng(seed);
        let data = random_panel(&mut g, 3, 1, 20);
        let mut theta = random_theta(&mut g, 3, 1, 1);
        theta.m_ff = DMatrix::identity(1, 1);
        let m = demean_panel(&data);
        let es = e_step(&theta, &m).unwrap();
        let next = m_step(&theta, &m, &es, &EmConfig::default()).unwrap();
        let after = log_likelihood(&next, &m).unwrap();
        prop_assert!(after >= es.loglik - 1e-12 * es.loglik.abs().max(1.0));
    }

    #[test]
    fn moments_ignore_unit_intercepts(seed in any::<u64>(), shift in -50.0f64..50.0) {
        let mut g = rng(seed);
        let data = random_panel(&mut g, 4, 2, 15);
        let y = data.y().map(|v| v + shift);
        let x: Vec<_> = data.x().iter().map(|xk| xk.map(|v| v - 2.0 * shift)).collect();
        let shifted = PanelDataset::new(y, x).unwrap();
        let (a, b) = (demean_panel(&data), demean_panel(&shifted));
        prop_assert!(max_abs(&(a.zdot() - b.zdot())) < 1e-10);
    }

    #[test]
    fn concentration_is_idempotent(seed in any::<u64>(), r3 in 1usize..4) {
        let mut g = rng(seed);
        let data = random_panel(&mut g, 3, 1, 25);
        let d = normal_matrix(&mut g, 25, r3);
        let once = concentrate_common_regressors(&data.with_common(d.clone()).unwrap()).unwrap();
        let again = PanelDataset::new(once.y().clone(), once.x().to_vec()).unwrap().with_common(d).unwrap();
        let twice = concentrate_common_regressors(&again).unwrap();
        prop_assert!(max_abs(&(once.y() - twice.y())) < 1e-10);
    }

    #[test]
    fn csv_round_trip_is_exact(seed in any::<u64>(), n in 2usize..6, t in 2usize..9, k in 0usize..3) {
        let mut g = rng(seed);
        let data = random_panel(&mut g, n, k, t);
        let mut buf = Vec::new();
        data.to_csv_writer(&mut buf).unwrap();
        let back = PanelDataset::from_csv_reader(buf.as_slice()).unwrap();
        prop_assert_eq!(back, data);
    }
}
