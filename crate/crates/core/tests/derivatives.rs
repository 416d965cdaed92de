mod common;

use common::{fd_gradient, fd_jacobian, loglik, random_dataset, random_theta, rel_err, rng};
use nalgebra::{DMatrix, DVector};
use svydb::{ame, hessian_and_info, score, weighted_loglik, Theta};

fn as_col(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

#[test]
fn loglik_agrees_with_independent_formula() {
    let mut r = rng(11);
    for _ in 0..20 {
        let d = random_dataset(&mut r, 60, 4, 2, 1.0);
        let t = random_theta(&mut r, 4, 1.5);
        let ours = weighted_loglik(&d, &t).unwrap();
        assert!((ours - loglik(&d, t.as_vector())).abs() < 1e-12);
    }
}

#[test]
fn score_matches_finite_differences() {
    let mut r = rng(1);
    for k in 0..100 {
        let p = 1 + k % 8;
        let d = random_dataset(&mut r, 40 + 3 * k, p, p / 2, 1.0);
        let t = random_theta(&mut r, p, 1.0);
        let s = score(&d, &t).unwrap();
        let fd = fd_gradient(|v| loglik(&d, v), t.as_vector());
        let e = rel_err(&as_col(&s), &as_col(&fd));
        assert!(e < 1e-6, "instance {k}: relative error {e:e}");
    }
}

#[test]
fn hessian_matches_jacobian_of_score() {
    let mut r = rng(2);
    for k in 0..100 {
        let p = 1 + k % 8;
        let d = random_dataset(&mut r, 40 + 3 * k, p, p / 2, 1.0);
        let t = random_theta(&mut r, p, 1.0);
        let (h, _) = hessian_and_info(&d, &t).unwrap();
        let neg_jac = -fd_jacobian(|v| score(&d, &Theta::from_vector(v.clone()).unwrap()).unwrap(), t.as_vector());
        let e = rel_err(&h, &neg_jac);
        assert!(e < 1e-6, "instance {k}: relative error {e:e}");
    }
}

#[test]
fn ame_jacobian_matches_finite_differences() {
    let mut r = rng(3);
    for k in 0..100 {
        let p = 2 + k % 7;
        let d = random_dataset(&mut r, 50 + 2 * k, p, 1 + k % p, 1.0);
        let t = random_theta(&mut r, p, 1.0);
        let j = 1 + k % (1 + k % p);
        let a = ame(&d, &t, j).unwrap();
        let fd = fd_gradient(|v| ame(&d, &Theta::from_vector(v.clone()).unwrap(), j).unwrap().ame_hat, t.as_vector());
        let e = rel_err(&as_col(&a.jacobian_column), &as_col(&fd));
        assert!(e < 1e-5, "instance {k}, column {j}: relative error {e:e}");
    }
}

#[test]
fn hessian_and_info_are_psd() {
    let mut r = rng(4);
    for _ in 0..30 {
        let d = random_dataset(&mut r, 50, 5, 2, 1.0);
        let t = random_theta(&mut r, 5, 2.0);
        let (h, i) = hessian_and_info(&d, &t).unwrap();
        assert_eq!(h, h.transpose());
        assert_eq!(i, i.transpose());
        for _ in 0..10 {
            let v = random_theta(&mut r, 5, 1.0).into_vector();
            assert!(v.dot(&(&h * &v)) >= -1e-12);
            assert!(v.dot(&(&i * &v)) >= -1e-12);
        }
    }
}

#[test]
fn weight_scaling_scales_likelihood_objects() {
    let mut r = rng(5);
    let d = random_dataset(&mut r, 80, 3, 1, 1.0);
    let t = random_theta(&mut r, 3, 1.0);
    let c = 2.5;
    let scaled = d.with_weights(d.w() * c).unwrap();
    let (h, i) = hessian_and_info(&d, &t).unwrap();
    let (hc, ic) = hessian_and_info(&scaled, &t).unwrap();
    let l = weighted_loglik(&d, &t).unwrap();
    assert!((weighted_loglik(&scaled, &t).unwrap() - c * l).abs() < 1e-12 * l.abs().max(1.0));
    assert!((score(&scaled, &t).unwrap() - score(&d, &t).unwrap() * c).amax() < 1e-12);
    assert!(rel_err(&hc, &(&h * c)) < 1e-12);
    assert!(rel_err(&ic, &(&i * (c * c))) < 1e-12);
}
