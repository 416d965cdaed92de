//! Marginal effects of dummy regressors and their survey-weighted average.
//!
//! `ME_ij(θ) = Λ(x_i'θ)|_{x_ij=1} − Λ(x_i'θ)|_{x_ij=0}`, and the AME estimator
//! is the `w`-weighted mean of `ME_ij`. When the dataset carries an
//! interaction expansion, toggling `x_ij` also recomputes every product
//! column built from `j`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::debias::SmoothFunctional;
use crate::error::{Error, Result};
use crate::glm::{logistic, Dataset, Theta};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AmeResult {
    pub regressor_index: usize,
    pub ame_hat: f64,
    /// `∂AME_j/∂θ`, length p+1.
    pub jacobian_column: DVector<f64>,
}

/// Columns whose value changes when column `j` is toggled, with the factor
/// multiplying `x_j` in each (the other parent's value per row).
struct Toggle<'a> {
    data: &'a Dataset,
    j: usize,
    /// (product column, other parent column)
    dependents: Vec<(usize, usize)>,
}

impl<'a> Toggle<'a> {
    fn new(data: &'a Dataset, j: usize) -> Result<Self> {
        if j == 0 || j > data.p() {
            return Err(Error::InvalidInput(format!(
                "regressor index {j} out of range 1..={}",
                data.p()
            )));
        }
        let name = &data.column_names()[j - 1];
        if !data.is_binary_column(j) {
            return Err(Error::Domain(format!(
                "column '{name}' is not binary; marginal effects are defined for dummy regressors only"
            )));
        }
        let mut dependents = Vec::new();
        if let Some(map) = data.expansion() {
            if map.parentage.iter().any(|t| t.column == j) {
                return Err(Error::InvalidInput(format!(
                    "column '{name}' is itself a product term"
                )));
            }
            for term in &map.parentage {
                if term.left == j && term.right == j {
                    // x_j² = x_j for a dummy; not produced by the expansion but harmless
                    dependents.push((term.column, usize::MAX));
                } else if term.left == j {
                    dependents.push((term.column, term.right));
                } else if term.right == j {
                    dependents.push((term.column, term.left));
                }
            }
        }
        Ok(Self { data, j, dependents })
    }

    /// Value of column `k` in row `i` when `x_ij` is set to `a`.
    fn toggled_value(&self, i: usize, k: usize, a: f64) -> Option<f64> {
        if k == self.j {
            return Some(a);
        }
        self.dependents.iter().find(|(c, _)| *c == k).map(|&(_, other)| {
            if other == usize::MAX {
                a
            } else {
                a * self.data.x()[(i, other)]
            }
        })
    }

    /// Linear predictors with `x_ij` set to 0 and to 1.
    fn predictors(&self, theta: &Theta, eta: &DVector<f64>, i: usize) -> (f64, f64) {
        let x = self.data.x();
        let mut base = eta[i] - x[(i, self.j)] * theta[self.j];
        for &(c, _) in &self.dependents {
            base -= x[(i, c)] * theta[c];
        }
        let mut t1 = base + theta[self.j];
        for &(c, _) in &self.dependents {
            t1 += self.toggled_value(i, c, 1.0).unwrap() * theta[c];
        }
        (base, t1)
    }
}

/// Marginal effect of dummy column `j` for observation `i`.
pub fn marginal_effect(data: &Dataset, theta: &Theta, j: usize, i: usize) -> Result<f64> {
    data.check_theta(theta)?;
    if i >= data.n() {
        return Err(Error::InvalidInput(format!("observation {i} out of range")));
    }
    let toggle = Toggle::new(data, j)?;
    let eta = data.x() * theta.as_vector();
    let (t0, t1) = toggle.predictors(theta, &eta, i);
    Ok(logistic(t1) - logistic(t0))
}

/// Survey-weighted average marginal effect of dummy column `j` and its
/// analytic gradient in `θ`.
pub fn ame(data: &Dataset, theta: &Theta, j: usize) -> Result<AmeResult> {
    data.check_theta(theta)?;
    let toggle = Toggle::new(data, j)?;
    let eta = data.x() * theta.as_vector();
    let w = data.w();
    let wsum = data.weight_sum();
    let n = data.n();

    let mut total = 0.0;
    // per-row weight on x_i in the jacobian: w_i (Λ'(t¹) − Λ'(t⁰))
    let mut diff = DVector::zeros(n);
    let mut d1 = vec![0.0; n];
    let mut d0 = vec![0.0; n];
    for i in 0..n {
        let (t0, t1) = toggle.predictors(theta, &eta, i);
        let (l0, l1) = (logistic(t0), logistic(t1));
        total += w[i] * (l1 - l0);
        d1[i] = l1 * (1.0 - l1);
        d0[i] = l0 * (1.0 - l0);
        diff[i] = w[i] * (d1[i] - d0[i]);
    }
    let mut jac = data.x().tr_mul(&diff);
    let mut touched = vec![j];
    touched.extend(toggle.dependents.iter().map(|&(c, _)| c));
    for &k in &touched {
        jac[k] = (0..n)
            .map(|i| {
                let x1 = toggle.toggled_value(i, k, 1.0).unwrap();
                let x0 = toggle.toggled_value(i, k, 0.0).unwrap();
                w[i] * (d1[i] * x1 - d0[i] * x0)
            })
            .sum();
    }
    Ok(AmeResult {
        regressor_index: j,
        ame_hat: total / wsum,
        jacobian_column: jac / wsum,
    })
}

/// AME of column `j` as a scalar functional over a fixed dataset.
pub struct AmeFunctional<'a> {
    data: &'a Dataset,
    j: usize,
}

/// Validates `j` up front so later evaluations cannot fail on it.
pub fn ame_functional(data: &Dataset, j: usize) -> Result<AmeFunctional<'_>> {
    Toggle::new(data, j)?;
    Ok(AmeFunctional { data, j })
}

impl SmoothFunctional for AmeFunctional<'_> {
    fn dim(&self) -> usize {
        1
    }

    fn evaluate(&self, theta: &Theta) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, ame(self.data, theta, self.j)?.ame_hat))
    }

    fn jacobian(&self, theta: &Theta) -> Result<DMatrix<f64>> {
        let a = ame(self.data, theta, self.j)?;
        let len = a.jacobian_column.len();
        Ok(DMatrix::from_column_slice(len, 1, a.jacobian_column.as_slice()))
    }
}
