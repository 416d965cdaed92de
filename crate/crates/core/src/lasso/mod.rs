//! Survey-weighted ℓ₁-penalized logistic regression.
//!
//! Solves
//!
//! ```text
//! θ̂ = argmin_θ  -L_n(θ) + λ Σ_{j=1}^{p} ω_j |β_j|
//! ```
//!
//! with an unpenalized intercept. `ω ≡ 1` is the plain Lasso; data-driven
//! weights from [`adaptive_weights`] give the adaptive Lasso.

mod auc;
mod cv;
mod solver;

pub use auc::{weighted_auc, weighted_auc_random_ties, AucTies};
pub use cv::{cv_select_lambda, fit_cv, CvFit, CvOptions, LambdaPath, LambdaRule};
pub use solver::FitOptions;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{score, weighted_loglik, Dataset, Theta};
pub(crate) use solver::{Problem, State};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub lambda: f64,
    /// One weight per non-intercept regressor.
    pub weights: Vec<f64>,
}

impl PenaltySpec {
    /// Plain Lasso: unit weight on every regressor.
    pub fn lasso(lambda: f64, p: usize) -> Self {
        Self {
            lambda,
            weights: vec![1.0; p],
        }
    }

    pub fn weighted(lambda: f64, weights: Vec<f64>) -> Self {
        Self { lambda, weights }
    }

    /// The intercept is never penalized.
    pub const fn penalize_intercept(&self) -> bool {
        false
    }

    fn validate(&self, p: usize) -> Result<()> {
        if !(self.lambda >= 0.0) || self.lambda.is_infinite() {
            return Err(Error::InvalidInput(format!(
                "lambda must be finite and nonnegative, got {}",
                self.lambda
            )));
        }
        if self.weights.len() != p {
            return Err(Error::DimensionMismatch {
                context: "penalty weights",
                expected: p,
                found: self.weights.len(),
            });
        }
        if let Some(w) = self.weights.iter().find(|w| !(**w >= 0.0)) {
            return Err(Error::InvalidInput(format!(
                "penalty weights must be nonnegative, got {w}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: Theta,
    pub lambda: f64,
    pub penalty_weights: Vec<f64>,
    /// Design-column indices (1..=p) of nonzero coefficients.
    pub active_set: Vec<usize>,
    pub m0_hat: usize,
    /// Coordinate sweeps (plus proximal-gradient steps, if the fallback ran).
    pub iterations: usize,
    pub objective: f64,
    pub converged: bool,
    /// Coefficient norm exceeded 1e3: the data are (quasi-)separated.
    pub separation_warning: bool,
    pub used_fallback: bool,
    /// Columns with zero weighted variance, held at zero.
    pub dropped_columns: Vec<usize>,
    pub kkt_residual: f64,
}

impl FitResult {
    /// `m̂₀ · log p · √(p/n)`, the sparsity-rate diagnostic.
    pub fn sparsity_rate(&self, n: usize) -> f64 {
        let p = self.penalty_weights.len() as f64;
        if p <= 1.0 {
            return 0.0;
        }
        self.m0_hat as f64 * p.ln() * (p / n as f64).sqrt()
    }
}

/// Penalized objective `-L_n(θ) + λ Σ ω_j |β_j|`.
pub fn penalized_objective(data: &Dataset, theta: &Theta, penalty: &PenaltySpec) -> Result<f64> {
    penalty.validate(data.p())?;
    let l = weighted_loglik(data, theta)?;
    let pen: f64 = theta
        .beta()
        .iter()
        .zip(&penalty.weights)
        .filter(|(b, _)| **b != 0.0)
        .map(|(b, w)| w * b.abs())
        .sum();
    Ok(-l + penalty.lambda * pen)
}

pub(crate) fn finish(
    data: &Dataset,
    problem: &Problem<'_>,
    state: &State,
    penalty: &PenaltySpec,
    info: solver::SolveInfo,
) -> FitResult {
    let theta_hat = problem.theta(state);
    let active_set: Vec<usize> = (1..theta_hat.len()).filter(|&j| theta_hat[j] != 0.0).collect();
    FitResult {
        m0_hat: active_set.len(),
        active_set,
        lambda: penalty.lambda,
        penalty_weights: penalty.weights.clone(),
        iterations: info.sweeps,
        objective: penalized_objective(data, &theta_hat, penalty).unwrap_or(info.objective),
        converged: info.converged,
        separation_warning: info.separation,
        used_fallback: info.fallback,
        dropped_columns: problem.zero_variance_columns(),
        kkt_residual: info.kkt,
        theta_hat,
    }
}

/// Fits the penalized estimator. Non-convergence is reported through
/// `converged`, not as an error.
pub fn fit_penalized(
    data: &Dataset,
    penalty: &PenaltySpec,
    init: Option<&Theta>,
    opts: &FitOptions,
) -> Result<FitResult> {
    penalty.validate(data.p())?;
    if let Some(t) = init {
        data.check_theta(t)?;
    }
    let problem = Problem::new(data, &penalty.weights);
    let mut state = match init {
        Some(t) => problem.state_from_theta(t),
        None => problem.null_state(),
    };
    let info = problem.solve(penalty.lambda, &mut state, opts, None)?;
    Ok(finish(data, &problem, &state, penalty, info))
}

/// Fit with every penalized coefficient held at zero (intercept plus any
/// unpenalized regressors).
pub(crate) fn null_fit(problem: &Problem<'_>, weights: &[f64]) -> Result<State> {
    let frozen: Vec<bool> = weights.iter().map(|&w| w > 0.0).collect();
    let mut st = problem.null_state();
    let opts = FitOptions {
        kkt_tol: 1e-12,
        tol: 1e-12,
        ..FitOptions::default()
    };
    problem.solve(0.0, &mut st, &opts, Some(&frozen))?;
    Ok(st)
}

/// Smallest λ at which every penalized coefficient is zero:
/// `max_j |S_j(θ_null)| / ω_j` over `ω_j > 0`.
pub fn lambda_max(data: &Dataset, penalty_weights: &[f64]) -> Result<f64> {
    if penalty_weights.len() != data.p() {
        return Err(Error::DimensionMismatch {
            context: "penalty weights",
            expected: data.p(),
            found: penalty_weights.len(),
        });
    }
    if !penalty_weights.iter().any(|&w| w > 0.0) {
        return Err(Error::InvalidInput(
            "lambda_max needs at least one positive penalty weight".into(),
        ));
    }
    let problem = Problem::new(data, penalty_weights);
    let st = null_fit(&problem, penalty_weights)?;
    Ok(lambda_max_from(data, &problem, &st, penalty_weights))
}

pub(crate) fn lambda_max_from(data: &Dataset, problem: &Problem<'_>, null: &State, weights: &[f64]) -> f64 {
    let s = score(data, &problem.theta(null)).expect("dimensions checked");
    weights
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > 0.0 && w.is_finite())
        .map(|(j, &w)| s[j + 1].abs() / w)
        .fold(0.0, f64::max)
}

/// Adaptive-Lasso weights `ω_j = 1 / (|β̂_j|^γ + floor)`.
///
/// With `floor = 0` a zero initial coefficient gets an infinite weight and is
/// excluded from later fits.
pub fn adaptive_weights(initial_fit: &FitResult, gamma: f64, floor: f64) -> Vec<f64> {
    initial_fit
        .theta_hat
        .beta()
        .iter()
        .map(|b| 1.0 / (b.abs().powf(gamma) + floor))
        .collect()
}
