//! Survey-weighted ℓ1-penalized logistic regression with one-step debiased
//! inference for coefficients, smooth functionals and average marginal
//! effects, plus a stratified-sampling Monte Carlo harness.
//!
//! ```
//! use svydb::{fit_penalized, debias_theta, Dataset, FitOptions, PenaltySpec};
//!
//! let y = vec![1.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0];
//! let x1 = vec![1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0, 0.0];
//! let data = Dataset::from_regressors(y, &[x1], vec![1.0; 8], vec!["x1".into()]).unwrap();
//! let fit = fit_penalized(&data, &PenaltySpec::lasso(0.01, 1), None, &FitOptions::default()).unwrap();
//! let est = debias_theta(&data, &fit).unwrap();
//! assert_eq!(est.estimate.len(), 2);
//! ```

// `!(x <= y)` is how NaN is routed to the failure branch throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod debias;
pub mod error;
pub mod features;
pub mod glm;
pub mod lasso;
pub mod linalg;
pub mod marginal;
pub mod mle;
pub mod simulation;

pub use debias::{
    debias_functional, debias_functional_with, debias_theta, debias_theta_with, svy_mle_ttest, wald_test,
    DebiasOptions, DebiasedEstimate, FnFunctional, LinearFunctional, SmoothFunctional, SurveyMle, TestTarget,
    WaldTest,
};
pub use error::{Error, Result};
pub use features::{expand_interactions, load_csv, ColumnSpec, ExpansionMap};
pub use glm::{hessian_and_info, likelihood_parts, score, weighted_loglik, Dataset, Family, Theta};
pub use lasso::{
    cv_select_lambda, fit_cv, fit_penalized, lambda_max, CvFit, CvOptions, FitOptions, FitResult, LambdaPath,
    PenaltySpec,
};
pub use marginal::{ame, ame_functional, marginal_effect, AmeResult};
pub use mle::{fit_mle, MleFit, MleOptions};
pub use simulation::{run_study, SimulationConfig, SimulationReport};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/fitting.md")]
    mod fitting {}
    #[doc = include_str!("../../../book/src/cross_validation.md")]
    mod cross_validation {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/marginal_effects.md")]
    mod marginal_effects {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
