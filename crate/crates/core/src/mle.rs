//! Unpenalized survey-weighted maximum likelihood by Newton-IRLS.
//!
//! Stopping follows the usual GLM convention: relative change in deviance
//! below `tol` or `max_iter` iterations, whichever comes first. A fit that
//! hits the iteration cap is returned with `converged = false`; under
//! (quasi-)separation the coefficients keep growing and the caller decides
//! what to do with that.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::glm::{hessian_at, score_at, weighted_loglik, Dataset, Theta};
use crate::linalg::spd_factor;

#[derive(Debug, Clone, Copy)]
pub struct MleOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MleOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 25,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MleFit {
    pub theta: Theta,
    pub converged: bool,
    pub iterations: usize,
    /// `-2 n L_n(θ̂)`, the weighted deviance.
    pub deviance: f64,
}

pub fn fit_mle(data: &Dataset, opts: MleOptions) -> Result<MleFit> {
    let n = data.n() as f64;
    let mut theta = Theta::zeros(data.p());
    // start the intercept at the weighted log-odds
    let ybar = data.y().dot(data.w()) / data.weight_sum();
    let ybar = ybar.clamp(1e-6, 1.0 - 1e-6);
    let mut v = theta.as_vector().clone();
    v[0] = (ybar / (1.0 - ybar)).ln();
    theta = Theta::from_vector(v)?;

    let mut dev = -2.0 * n * weighted_loglik(data, &theta)?;
    let mut converged = false;
    let mut iterations = 0;
    for it in 1..=opts.max_iter {
        iterations = it;
        let eta = data.x() * theta.as_vector();
        let s = score_at(data, &eta);
        let h = hessian_at(data, &eta);
        let chol = spd_factor(&h, 0.0)?;
        let step: DVector<f64> = chol.solve(&s);

        let mut t = 1.0;
        let mut next;
        let mut next_dev;
        loop {
            next = Theta::from_vector(theta.as_vector() + &step * t)
                .map_err(|_| Error::NotConverged("non-finite Newton iterate".into()))?;
            next_dev = -2.0 * n * weighted_loglik(data, &next)?;
            if next_dev.is_finite() && next_dev <= dev * (1.0 + 1e-12) + 1e-300 {
                break;
            }
            t *= 0.5;
            if t < 1e-10 {
                break;
            }
        }
        let change = (next_dev - dev).abs() / (next_dev.abs() + 0.1);
        theta = next;
        dev = next_dev;
        if change < opts.tol {
            converged = true;
            break;
        }
    }
    Ok(MleFit {
        theta,
        converged,
        iterations,
        deviance: dev,
    })
}
