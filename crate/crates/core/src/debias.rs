//! One-step debiasing of the penalized estimate and Wald inference.
//!
//! For a smooth functional `ρ(θ) ∈ ℝʳ` with Jacobian `ρ̇(θ)` ((p+1) × r):
//!
//! ```text
//! ρ̃   = ρ(θ̂) + ρ̇(θ̂)' Ĥ(θ̂)⁻¹ S(θ̂)
//! V   = ρ̇' Ĥ⁻¹ Î Ĥ⁻¹ ρ̇          (sandwich, evaluated at θ̂)
//! se  = √(diag(V) / n)
//! ```
//!
//! Coefficient debiasing is the special case `ρ(θ) = θ`. Reference
//! distributions are standard normal (r = 1) or χ²_r, never Student t.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::glm::{hessian_and_info_at, score_at, Dataset, Theta};
use crate::lasso::FitResult;
use crate::linalg::{min_eigenvalue, spd_factor};
use crate::marginal::ame;
use crate::mle::{fit_mle, MleOptions};

/// Minimum eigenvalue below which `Ĥ` counts as singular.
pub const HESSIAN_EIGEN_FLOOR: f64 = 1e-10;
/// Minimum eigenvalue of `ρ̇'ρ̇` below which the Jacobian counts as rank deficient.
pub const JACOBIAN_EIGEN_FLOOR: f64 = 1e-10;
/// Smallest eigenvalue ratio of the MLE Hessian accepted by the survey t-test.
pub const MLE_RANK_TOL: f64 = 1e-14;

/// A differentiable map `θ ↦ ρ(θ) ∈ ℝʳ`.
pub trait SmoothFunctional {
    fn dim(&self) -> usize;
    fn evaluate(&self, theta: &Theta) -> Result<DVector<f64>>;
    /// `∂ρ(θ)'/∂θ`, shape `(p+1) × r`.
    fn jacobian(&self, theta: &Theta) -> Result<DMatrix<f64>>;
}

/// `ρ(θ) = C'θ` for a fixed `(p+1) × r` matrix `C`.
#[derive(Debug, Clone)]
pub struct LinearFunctional {
    pub coefficients: DMatrix<f64>,
}

impl SmoothFunctional for LinearFunctional {
    fn dim(&self) -> usize {
        self.coefficients.ncols()
    }

    fn evaluate(&self, theta: &Theta) -> Result<DVector<f64>> {
        if theta.len() != self.coefficients.nrows() {
            return Err(Error::DimensionMismatch {
                context: "linear functional",
                expected: self.coefficients.nrows(),
                found: theta.len(),
            });
        }
        Ok(self.coefficients.tr_mul(theta.as_vector()))
    }

    fn jacobian(&self, _theta: &Theta) -> Result<DMatrix<f64>> {
        Ok(self.coefficients.clone())
    }
}

/// Closure-backed functional.
pub struct FnFunctional<E, J> {
    pub dim: usize,
    pub evaluate: E,
    pub jacobian: J,
}

impl<E, J> SmoothFunctional for FnFunctional<E, J>
where
    E: Fn(&Theta) -> Result<DVector<f64>>,
    J: Fn(&Theta) -> Result<DMatrix<f64>>,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn evaluate(&self, theta: &Theta) -> Result<DVector<f64>> {
        (self.evaluate)(theta)
    }
    fn jacobian(&self, theta: &Theta) -> Result<DMatrix<f64>> {
        (self.jacobian)(theta)
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct DebiasOptions {
    /// On a singular `Ĥ`, add `1e-8 · tr(Ĥ)/(p+1)` to the diagonal instead of failing.
    pub allow_ridge_jitter: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DebiasDiagnostics {
    pub min_hessian_eigenvalue: f64,
    pub ridge_jitter: Option<f64>,
    pub m0_hat: usize,
    /// `m̂₀ · log p · √(p/n)`; reported, not enforced.
    pub sparsity_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DebiasedEstimate {
    pub estimate: DVector<f64>,
    /// Sandwich matrix; divide by `n` for the finite-sample covariance.
    pub covariance: DMatrix<f64>,
    pub std_errors: DVector<f64>,
    /// Per-component `estimate / se` (null value zero).
    pub wald_stats: DVector<f64>,
    pub p_values: DVector<f64>,
    pub n: usize,
    pub diagnostics: DebiasDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaldTest {
    pub statistic: f64,
    pub p_value: f64,
    pub df: usize,
}

/// Two-sided standard-normal p-value.
pub fn normal_two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    erfc(z.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Upper-tail χ²_df p-value.
pub fn chi_square_p(q: f64, df: usize) -> f64 {
    let dist = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    dist.sf(q.max(0.0)).clamp(0.0, 1.0)
}

impl DebiasedEstimate {
    /// Wald test of `H₀: component k = null`.
    pub fn component_test(&self, k: usize, null: f64) -> Result<WaldTest> {
        if k >= self.estimate.len() {
            return Err(Error::DimensionMismatch {
                context: "component index",
                expected: self.estimate.len(),
                found: k,
            });
        }
        let z = (self.estimate[k] - null) / self.std_errors[k];
        Ok(WaldTest {
            statistic: z,
            p_value: normal_two_sided_p(z),
            df: 1,
        })
    }
}

struct Sandwich {
    hinv: DMatrix<f64>,
    info: DMatrix<f64>,
    correction: DVector<f64>,
    min_eig: f64,
    jitter: Option<f64>,
}

fn sandwich_at(data: &Dataset, theta: &Theta, opts: DebiasOptions) -> Result<Sandwich> {
    data.check_theta(theta)?;
    let eta = data.x() * theta.as_vector();
    let s = score_at(data, &eta);
    let (mut h, info) = hessian_and_info_at(data, &eta);
    let min_eig = min_eigenvalue(&h);
    let mut jitter = None;
    if !(min_eig > HESSIAN_EIGEN_FLOOR) {
        if !opts.allow_ridge_jitter {
            return Err(Error::SingularHessian {
                min_eigenvalue: min_eig,
            });
        }
        let j = 1e-8 * h.trace() / h.nrows() as f64;
        for k in 0..h.nrows() {
            h[(k, k)] += j;
        }
        jitter = Some(j);
    }
    let chol = spd_factor(&h, if jitter.is_some() { 0.0 } else { HESSIAN_EIGEN_FLOOR })?;
    let correction = chol.solve(&s);
    let hinv = chol.inverse();
    let hinv = (&hinv + hinv.transpose()) * 0.5;
    Ok(Sandwich {
        hinv,
        info,
        correction,
        min_eig,
        jitter,
    })
}

fn assemble(
    estimate: DVector<f64>,
    a: &DMatrix<f64>,
    sw: &Sandwich,
    n: usize,
    fit: Option<&FitResult>,
) -> DebiasedEstimate {
    let cov = a.tr_mul(&(&sw.info * a));
    let cov = (&cov + cov.transpose()) * 0.5;
    let nf = n as f64;
    let se = DVector::from_iterator(cov.nrows(), (0..cov.nrows()).map(|k| (cov[(k, k)].max(0.0) / nf).sqrt()));
    let z = estimate.component_div(&se);
    let p = z.map(normal_two_sided_p);
    DebiasedEstimate {
        estimate,
        covariance: cov,
        std_errors: se,
        wald_stats: z,
        p_values: p,
        n,
        diagnostics: DebiasDiagnostics {
            min_hessian_eigenvalue: sw.min_eig,
            ridge_jitter: sw.jitter,
            m0_hat: fit.map_or(0, |f| f.m0_hat),
            sparsity_rate: fit.map_or(0.0, |f| f.sparsity_rate(n)),
        },
    }
}

fn require_converged(fit: &FitResult) -> Result<()> {
    if fit.converged {
        Ok(())
    } else {
        Err(Error::NotConverged(format!(
            "penalized fit at lambda {} did not converge (kkt residual {:e})",
            fit.lambda, fit.kkt_residual
        )))
    }
}

fn check_jacobian(jac: &DMatrix<f64>, p1: usize, r: usize) -> Result<()> {
    if jac.nrows() != p1 || jac.ncols() != r {
        return Err(Error::DimensionMismatch {
            context: "functional jacobian rows",
            expected: p1,
            found: jac.nrows(),
        });
    }
    let gram = jac.tr_mul(jac);
    let min_eig = min_eigenvalue(&gram);
    if !(min_eig > JACOBIAN_EIGEN_FLOOR) {
        return Err(Error::RankDeficientJacobian {
            min_eigenvalue: min_eig,
        });
    }
    Ok(())
}

/// `θ̃ = θ̂ + Ĥ(θ̂)⁻¹ S(θ̂)` with sandwich covariance `Ĥ⁻¹ Î Ĥ⁻¹`.
pub fn debias_theta(data: &Dataset, fit: &FitResult) -> Result<DebiasedEstimate> {
    debias_theta_with(data, fit, DebiasOptions::default())
}

pub fn debias_theta_with(data: &Dataset, fit: &FitResult, opts: DebiasOptions) -> Result<DebiasedEstimate> {
    require_converged(fit)?;
    let theta = &fit.theta_hat;
    let sw = sandwich_at(data, theta, opts)?;
    let estimate = theta.as_vector() + &sw.correction;
    Ok(assemble(estimate, &sw.hinv, &sw, data.n(), Some(fit)))
}

/// `ρ̃ = ρ(θ̂) + ρ̇(θ̂)' Ĥ(θ̂)⁻¹ S(θ̂)` with covariance `ρ̇' Ĥ⁻¹ Î Ĥ⁻¹ ρ̇`.
pub fn debias_functional(
    data: &Dataset,
    fit: &FitResult,
    rho: &dyn SmoothFunctional,
) -> Result<DebiasedEstimate> {
    debias_functional_with(data, fit, rho, DebiasOptions::default())
}

pub fn debias_functional_with(
    data: &Dataset,
    fit: &FitResult,
    rho: &dyn SmoothFunctional,
    opts: DebiasOptions,
) -> Result<DebiasedEstimate> {
    require_converged(fit)?;
    let theta = &fit.theta_hat;
    let jac = rho.jacobian(theta)?;
    check_jacobian(&jac, theta.len(), rho.dim())?;
    let sw = sandwich_at(data, theta, opts)?;
    let estimate = rho.evaluate(theta)? + jac.tr_mul(&sw.correction);
    let a = &sw.hinv * &jac;
    Ok(assemble(estimate, &a, &sw, data.n(), Some(fit)))
}

/// Joint Wald test of `H₀: ρ = null`. For `r = 1` the statistic is the signed
/// z-score; for `r > 1` it is the χ²_r quadratic form.
pub fn wald_test(est: &DebiasedEstimate, null_value: &[f64]) -> Result<WaldTest> {
    let r = est.estimate.len();
    if null_value.len() != r {
        return Err(Error::DimensionMismatch {
            context: "wald null value",
            expected: r,
            found: null_value.len(),
        });
    }
    if r == 1 {
        return est.component_test(0, null_value[0]);
    }
    let d = &est.estimate - DVector::from_column_slice(null_value);
    let chol = spd_factor(&est.covariance, 0.0)?;
    let q = est.n as f64 * d.dot(&chol.solve(&d));
    Ok(WaldTest {
        statistic: q,
        p_value: chi_square_p(q, r),
        df: r,
    })
}

/// Target of the unpenalized survey t-test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestTarget {
    /// Design column index (0 = intercept).
    Coefficient(usize),
    /// AME of the dummy regressor in this design column.
    Ame(usize),
}

/// Unpenalized survey-weighted logit fit with its sandwich, reusable across
/// several t-tests on the same sample.
#[derive(Debug, Clone)]
pub struct SurveyMle {
    pub theta: Theta,
    pub converged: bool,
    pub iterations: usize,
    covariance: DMatrix<f64>,
    n: usize,
}

impl SurveyMle {
    pub fn fit(data: &Dataset) -> Result<Self> {
        let mle = fit_mle(data, MleOptions::default())?;
        let eta = data.x() * mle.theta.as_vector();
        let (h, info) = hessian_and_info_at(data, &eta);
        let eig = ((&h + h.transpose()) * 0.5).symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        // relative rank test, as a GLM routine would apply to its QR factor;
        // quasi-separated fits pass it and report huge standard errors
        if !(lo > MLE_RANK_TOL * hi) {
            return Err(Error::SingularHessian { min_eigenvalue: lo });
        }
        let hinv = spd_factor(&h, 0.0)?.inverse();
        let covariance = hinv.tr_mul(&(&info * &hinv));
        Ok(Self {
            theta: mle.theta,
            converged: mle.converged,
            iterations: mle.iterations,
            covariance: (&covariance + covariance.transpose()) * 0.5,
            n: data.n(),
        })
    }

    /// Sandwich `Ĥ⁻¹ Î Ĥ⁻¹` at the MLE.
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn ttest(&self, data: &Dataset, target: TestTarget, null_value: f64) -> Result<WaldTest> {
        let nf = self.n as f64;
        let (est, var) = match target {
            TestTarget::Coefficient(k) => {
                if k >= self.theta.len() {
                    return Err(Error::DimensionMismatch {
                        context: "coefficient index",
                        expected: self.theta.len(),
                        found: k,
                    });
                }
                (self.theta[k], self.covariance[(k, k)])
            }
            TestTarget::Ame(j) => {
                let a = ame(data, &self.theta, j)?;
                let var = a.jacobian_column.dot(&(&self.covariance * &a.jacobian_column));
                (a.ame_hat, var)
            }
        };
        let z = (est - null_value) / (var.max(0.0) / nf).sqrt();
        Ok(WaldTest {
            statistic: z,
            p_value: normal_two_sided_p(z),
            df: 1,
        })
    }
}

/// The standard survey t-test: unpenalized MLE, sandwich variance, and a
/// delta-method variance for AME targets.
pub fn svy_mle_ttest(data: &Dataset, null_value: f64, target: TestTarget) -> Result<WaldTest> {
    let mle = SurveyMle::fit(data)?;
    if !mle.converged {
        return Err(Error::NotConverged(
            "unpenalized MLE did not converge; the sample may be separated".into(),
        ));
    }
    mle.ttest(data, target, null_value)
}
