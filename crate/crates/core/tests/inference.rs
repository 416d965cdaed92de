mod common;

use common::{newton_mle, random_dataset, random_theta, rng};
use nalgebra::{DMatrix, DVector};
use svydb::{
    ame, ame_functional, debias_functional, debias_theta, fit_penalized, hessian_and_info, lambda_max, score, Dataset,
    FitOptions, LinearFunctional, PenaltySpec, SurveyMle, Theta,
};

fn tight() -> FitOptions {
    FitOptions {
        tol: 1e-14,
        kkt_tol: 1e-13,
        ..FitOptions::default()
    }
}

#[test]
fn debiasing_an_mle_is_a_fixed_point() {
    let mut r = rng(31);
    let mut done = 0;
    while done < 50 {
        let p = 1 + done % 8;
        let d = random_dataset(&mut r, 200 + 10 * done, p, p / 2, 0.8);
        if newton_mle(&d).is_none() {
            continue;
        }
        let fit = fit_penalized(&d, &PenaltySpec::lasso(0.0, p), None, &tight()).unwrap();
        let s = score(&d, &fit.theta_hat).unwrap();
        let est = debias_theta(&d, &fit).unwrap();
        let shift = (&est.estimate - fit.theta_hat.as_vector()).amax();
        // the step is H⁻¹S, so it can be no larger than the residual score allows
        let (h, _) = hessian_and_info(&d, &fit.theta_hat).unwrap();
        let bound = s.amax() * (p + 1) as f64 / h.symmetric_eigenvalues().min();
        assert!(shift <= bound.max(1e-14), "instance {done}: shift {shift:e} bound {bound:e}");
        assert!(shift < 1e-10, "instance {done}: shift {shift:e}");
        if p >= 2 {
            let a = debias_functional(&d, &fit, &ame_functional(&d, 1).unwrap()).unwrap();
            let plug_in = ame(&d, &fit.theta_hat, 1).unwrap().ame_hat;
            assert!((a.estimate[0] - plug_in).abs() < 1e-10);
        }
        done += 1;
    }
}

#[test]
fn linear_functionals_commute_with_debiasing() {
    let mut r = rng(32);
    for k in 0..50 {
        let p = 2 + k % 8;
        let d = random_dataset(&mut r, 150 + 5 * k, p, p / 2, 1.0);
        let lambda = 0.05 * lambda_max(&d, &vec![1.0; p]).unwrap();
        let fit = fit_penalized(&d, &PenaltySpec::lasso(lambda, p), None, &FitOptions::default()).unwrap();
        let full = debias_theta(&d, &fit).unwrap();
        let c = DMatrix::from_fn(p + 1, 2, |_, _| {
            use rand::Rng;
            r.random_range(-1.0..1.0)
        });
        let lin = debias_functional(&d, &fit, &LinearFunctional { coefficients: c.clone() }).unwrap();
        let direct = c.tr_mul(&full.estimate);
        assert!((&lin.estimate - &direct).amax() < 1e-10, "instance {k}");
        let cov = c.tr_mul(&(&full.covariance * &c));
        assert!((&lin.covariance - &cov).amax() < 1e-10 * cov.amax().max(1.0), "instance {k}");
    }
}

#[test]
fn sandwich_is_symmetric_psd() {
    let mut r = rng(33);
    for _ in 0..20 {
        let d = random_dataset(&mut r, 200, 6, 3, 1.0);
        let lambda = 0.1 * lambda_max(&d, &[1.0; 6]).unwrap();
        let fit = fit_penalized(&d, &PenaltySpec::lasso(lambda, 6), None, &FitOptions::default()).unwrap();
        let est = debias_theta(&d, &fit).unwrap();
        assert_eq!(est.covariance, est.covariance.transpose());
        for _ in 0..10 {
            let v = random_theta(&mut r, 6, 1.0).into_vector();
            assert!(v.dot(&(&est.covariance * &v)) >= -1e-10);
        }
    }
}

fn permuted(d: &Dataset, perm: &[usize]) -> Dataset {
    let mut x = d.x().clone();
    for (to, &from) in perm.iter().enumerate() {
        x.set_column(to + 1, &d.x().column(from + 1));
    }
    let names = perm.iter().map(|&j| d.column_names()[j].clone()).collect();
    Dataset::new(d.y().clone(), x, d.w().clone(), names).unwrap()
}

#[test]
fn column_permutation_equivariance() {
    let mut r = rng(34);
    let d = random_dataset(&mut r, 300, 5, 2, 1.0);
    let perm = [3, 0, 4, 2, 1];
    let dp = permuted(&d, &perm);
    let lambda = 0.1 * lambda_max(&d, &[1.0; 5]).unwrap();
    let a = fit_penalized(&d, &PenaltySpec::lasso(lambda, 5), None, &tight()).unwrap();
    let b = fit_penalized(&dp, &PenaltySpec::lasso(lambda, 5), None, &tight()).unwrap();
    let ea = debias_theta(&d, &a).unwrap();
    let eb = debias_theta(&dp, &b).unwrap();
    let idx: Vec<usize> = std::iter::once(0).chain(perm.iter().map(|&j| j + 1)).collect();
    for (to, &from) in idx.iter().enumerate() {
        assert!((eb.estimate[to] - ea.estimate[from]).abs() < 1e-8);
        for (to2, &from2) in idx.iter().enumerate() {
            assert!((eb.covariance[(to, to2)] - ea.covariance[(from, from2)]).abs() < 1e-7);
        }
    }
}

#[test]
fn sandwich_and_model_based_errors_agree_at_large_n() {
    use rand::Rng;
    let mut r = rng(35);
    let n = 50_000;
    let theta0 = [-0.3, 0.8, -0.5, 0.4];
    let cols: Vec<Vec<f64>> = (0..3).map(|_| (0..n).map(|_| r.random_range(-1.5..1.5)).collect()).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let t = theta0[0] + (0..3).map(|j| theta0[j + 1] * cols[j][i]).sum::<f64>();
            f64::from(u8::from(r.random::<f64>() < 1.0 / (1.0 + (-t).exp())))
        })
        .collect();
    let d = Dataset::from_regressors(y, &cols, vec![1.0; n], vec!["a".into(), "b".into(), "c".into()]).unwrap();
    let mle = SurveyMle::fit(&d).unwrap();
    let (h, _) = hessian_and_info(&d, &mle.theta).unwrap();
    let model = h.try_inverse().unwrap();
    for k in 0..4 {
        let ratio = (mle.covariance()[(k, k)] / model[(k, k)]).sqrt();
        assert!((ratio - 1.0).abs() < 0.05, "component {k}: ratio {ratio}");
    }
}

#[test]
fn ame_invariant_to_split_duplication() {
    let mut r = rng(36);
    for _ in 0..10 {
        let d = random_dataset(&mut r, 80, 4, 2, 1.0);
        let t = random_theta(&mut r, 4, 1.0);
        let n = d.n();
        let rows: Vec<usize> = (0..n).chain(0..n).collect();
        let dup = d.subset(&rows);
        let halves = DVector::from_iterator(2 * n, rows.iter().map(|&i| d.w()[i] / 2.0));
        let dup = dup.with_weights(halves).unwrap();
        for j in 1..=2 {
            let a = ame(&d, &t, j).unwrap();
            let b = ame(&dup, &t, j).unwrap();
            assert!((a.ame_hat - b.ame_hat).abs() < 1e-14);
            assert!((a.jacobian_column - b.jacobian_column).amax() < 1e-14);
        }
    }
}

#[test]
fn ame_sign_and_zero_coefficient() {
    let mut r = rng(37);
    let d = random_dataset(&mut r, 100, 3, 1, 1.0);
    let mut v = random_theta(&mut r, 3, 1.0).into_vector();
    v[1] = 0.0;
    assert_eq!(ame(&d, &Theta::from_vector(v.clone()).unwrap(), 1).unwrap().ame_hat, 0.0);
    v[1] = 0.7;
    assert!(ame(&d, &Theta::from_vector(v.clone()).unwrap(), 1).unwrap().ame_hat > 0.0);
    v[1] = -0.7;
    assert!(ame(&d, &Theta::from_vector(v).unwrap(), 1).unwrap().ame_hat < 0.0);
}
