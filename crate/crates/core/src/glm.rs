//! Survey-weighted GLM objects: the negative log-density and its derivatives,
//! the weighted log-likelihood, its score, the negative Hessian and the sample
//! information matrix.
//!
//! With `g(y, t) = a(t) - y t - log c(y)` and survey weights `w_i`,
//!
//! ```text
//! L_n(θ) = -n⁻¹ Σ w_i g(y_i, x_i'θ)
//! S(θ)   = -n⁻¹ Σ w_i x_i ġ(y_i, x_i'θ)
//! Ĥ(θ)   =  n⁻¹ Σ w_i x_i x_i' g̈(y_i, x_i'θ)
//! Î(θ)   =  n⁻¹ Σ w_i² x_i x_i' ġ(y_i, x_i'θ)²
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::ExpansionMap;

/// Bounds applied to `Λ(t)` inside curvature terms only.
pub const PROB_CLAMP: f64 = 1e-12;

/// Logistic distribution function `Λ(t) = eᵗ / (1 + eᵗ)`.
#[inline]
pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + eᵗ)` without overflow for large `|t|`.
#[inline]
pub fn log1p_exp(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Value and first two `t`-derivatives of the negative log-density `g(y, t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivs {
    pub g: f64,
    pub g_dot: f64,
    pub g_ddot: f64,
}

/// Exponential-family tag. Each variant supplies `g`, `ġ` and `g̈`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    #[default]
    Logit,
}

impl Family {
    pub fn check_outcome(self, y: f64) -> Result<()> {
        match self {
            Family::Logit if y == 0.0 || y == 1.0 => Ok(()),
            Family::Logit => Err(Error::Domain(format!(
                "logit outcome must be 0 or 1, got {y}"
            ))),
        }
    }

    /// Derivatives without validating `y`; callers have already checked the dataset.
    #[inline]
    pub(crate) fn derivs_unchecked(self, y: f64, t: f64) -> Derivs {
        match self {
            Family::Logit => {
                let p = logistic(t);
                let pc = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                Derivs {
                    g: log1p_exp(t) - y * t,
                    g_dot: p - y,
                    g_ddot: pc * (1.0 - pc),
                }
            }
        }
    }

    /// Mean function; the fitted probability for the logit family.
    #[inline]
    pub fn mean(self, t: f64) -> f64 {
        match self {
            Family::Logit => logistic(t),
        }
    }
}

/// `(g, ġ, g̈)` at outcome `y` and linear predictor `t`.
pub fn neg_log_density_derivs(family: Family, y: f64, t: f64) -> Result<Derivs> {
    family.check_outcome(y)?;
    if !t.is_finite() {
        return Err(Error::Domain(format!("linear predictor must be finite, got {t}")));
    }
    Ok(family.derivs_unchecked(y, t))
}

/// Outcome, design matrix (leading intercept column) and survey weights.
///
/// Immutable once constructed; every constructor validates the invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    w: DVector<f64>,
    column_names: Vec<String>,
    family: Family,
    outcome_name: String,
    weight_name: Option<String>,
    expansion: Option<ExpansionMap>,
}

impl Dataset {
    /// `x` must be `n × (p+1)` with an all-ones first column and no other
    /// all-ones column; `column_names` labels the `p` regressors.
    pub fn new(
        y: DVector<f64>,
        x: DMatrix<f64>,
        w: DVector<f64>,
        column_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::InvalidInput("dataset needs at least one observation".into()));
        }
        if x.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: "design rows",
                expected: n,
                found: x.nrows(),
            });
        }
        if w.len() != n {
            return Err(Error::DimensionMismatch {
                context: "weight length",
                expected: n,
                found: w.len(),
            });
        }
        if x.ncols() == 0 {
            return Err(Error::InvalidInput("design matrix needs an intercept column".into()));
        }
        if column_names.len() != x.ncols() - 1 {
            return Err(Error::DimensionMismatch {
                context: "column names",
                expected: x.ncols() - 1,
                found: column_names.len(),
            });
        }
        let all_ones = |j: usize| x.column(j).iter().all(|&v| v == 1.0);
        if !all_ones(0) {
            return Err(Error::InvalidInput("first design column must be all ones".into()));
        }
        if n > 1 {
            if let Some(j) = (1..x.ncols()).find(|&j| all_ones(j)) {
                return Err(Error::InvalidInput(format!(
                    "regressor '{}' duplicates the intercept column",
                    column_names[j - 1]
                )));
            }
        }
        if let Some((i, _)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite design entry at row {}",
                i % n
            )));
        }
        for (i, &wi) in w.iter().enumerate() {
            if !(wi > 0.0 && wi.is_finite()) {
                return Err(Error::InvalidWeight { index: i, value: wi });
            }
        }
        let family = Family::Logit;
        for &yi in y.iter() {
            family.check_outcome(yi)?;
        }
        Ok(Self {
            y,
            x,
            w,
            column_names,
            family,
            outcome_name: "y".into(),
            weight_name: None,
            expansion: None,
        })
    }

    /// Builds the design from regressor columns, prepending the intercept.
    pub fn from_regressors(
        y: Vec<f64>,
        regressors: &[Vec<f64>],
        w: Vec<f64>,
        column_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        let mut x = DMatrix::from_element(n, regressors.len() + 1, 1.0);
        for (j, col) in regressors.iter().enumerate() {
            if col.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "regressor length",
                    expected: n,
                    found: col.len(),
                });
            }
            x.column_mut(j + 1).copy_from_slice(col);
        }
        Self::new(DVector::from_vec(y), x, DVector::from_vec(w), column_names)
    }

    pub fn with_names(mut self, outcome: impl Into<String>, weight: Option<String>) -> Self {
        self.outcome_name = outcome.into();
        self.weight_name = weight;
        self
    }

    pub(crate) fn with_expansion(mut self, map: ExpansionMap) -> Self {
        self.expansion = Some(map);
        self
    }

    /// Same rows and design with replacement weights.
    pub fn with_weights(&self, w: DVector<f64>) -> Result<Self> {
        let mut out = Self::new(self.y.clone(), self.x.clone(), w, self.column_names.clone())?;
        out.outcome_name = self.outcome_name.clone();
        out.weight_name = self.weight_name.clone();
        out.expansion = self.expansion.clone();
        Ok(out)
    }

    /// Rows selected by `rows`, in that order (repeats allowed).
    pub fn subset(&self, rows: &[usize]) -> Self {
        let x = self.x.select_rows(rows.iter());
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        let w = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.w[i]));
        Self {
            y,
            x,
            w,
            column_names: self.column_names.clone(),
            family: self.family,
            outcome_name: self.outcome_name.clone(),
            weight_name: self.weight_name.clone(),
            expansion: self.expansion.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of non-intercept regressors.
    pub fn p(&self) -> usize {
        self.x.ncols() - 1
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn w(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    pub fn weight_name(&self) -> Option<&str> {
        self.weight_name.as_deref()
    }

    pub fn expansion(&self) -> Option<&ExpansionMap> {
        self.expansion.as_ref()
    }

    /// Design column index (1-based among regressors) for a regressor name.
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|c| c == name).map(|j| j + 1)
    }

    /// True when design column `j` only takes values in {0, 1}.
    pub fn is_binary_column(&self, j: usize) -> bool {
        self.x.column(j).iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn weight_sum(&self) -> f64 {
        self.w.sum()
    }

    pub(crate) fn check_theta(&self, theta: &Theta) -> Result<()> {
        if theta.len() != self.x.ncols() {
            return Err(Error::DimensionMismatch {
                context: "theta length",
                expected: self.x.ncols(),
                found: theta.len(),
            });
        }
        Ok(())
    }

    pub(crate) fn linear_predictor(&self, theta: &Theta) -> DVector<f64> {
        &self.x * theta.as_vector()
    }
}

/// Parameter vector `θ = (α, β')'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theta(DVector<f64>);

impl Theta {
    pub fn new(alpha: f64, beta: &[f64]) -> Self {
        let mut v = Vec::with_capacity(beta.len() + 1);
        v.push(alpha);
        v.extend_from_slice(beta);
        Self(DVector::from_vec(v))
    }

    pub fn zeros(p: usize) -> Self {
        Self(DVector::zeros(p + 1))
    }

    pub fn from_vector(v: DVector<f64>) -> Result<Self> {
        if v.is_empty() {
            return Err(Error::InvalidInput("theta needs an intercept".into()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidInput("theta entries must be finite".into()));
        }
        Ok(Self(v))
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        Self::from_vector(DVector::from_column_slice(v))
    }

    pub fn alpha(&self) -> f64 {
        self.0[0]
    }

    pub fn beta(&self) -> &[f64] {
        &self.0.as_slice()[1..]
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for Theta {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// `L_n`, `S`, `Ĥ` and `Î` evaluated at one `θ`.
#[derive(Debug, Clone)]
pub struct LikelihoodParts {
    pub loglik: f64,
    pub score: DVector<f64>,
    pub hessian: DMatrix<f64>,
    pub info: DMatrix<f64>,
}

/// `L_n(θ) = -n⁻¹ Σ w_i g(y_i, x_i'θ)`.
pub fn weighted_loglik(data: &Dataset, theta: &Theta) -> Result<f64> {
    data.check_theta(theta)?;
    let eta = data.linear_predictor(theta);
    let fam = data.family();
    let total: f64 = (0..data.n())
        .map(|i| data.w[i] * fam.derivs_unchecked(data.y[i], eta[i]).g)
        .sum();
    Ok(-total / data.n() as f64)
}

/// `S(θ) = ∂L_n/∂θ`.
pub fn score(data: &Dataset, theta: &Theta) -> Result<DVector<f64>> {
    data.check_theta(theta)?;
    let eta = data.linear_predictor(theta);
    Ok(score_at(data, &eta))
}

pub(crate) fn score_at(data: &Dataset, eta: &DVector<f64>) -> DVector<f64> {
    let fam = data.family();
    let n = data.n() as f64;
    let r = DVector::from_iterator(
        data.n(),
        (0..data.n()).map(|i| -data.w[i] * fam.derivs_unchecked(data.y[i], eta[i]).g_dot / n),
    );
    data.x.tr_mul(&r)
}

/// `(Ĥ(θ), Î(θ))`: the negative Hessian of `L_n` and the sample information.
pub fn hessian_and_info(data: &Dataset, theta: &Theta) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    data.check_theta(theta)?;
    let eta = data.linear_predictor(theta);
    Ok(hessian_and_info_at(data, &eta))
}

pub(crate) fn hessian_and_info_at(data: &Dataset, eta: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let fam = data.family();
    let n = data.n() as f64;
    let mut xh = data.x.clone();
    let mut xi = data.x.clone();
    for i in 0..data.n() {
        let d = fam.derivs_unchecked(data.y[i], eta[i]);
        let sh = (data.w[i] * d.g_ddot / n).sqrt();
        let si = data.w[i] * d.g_dot.abs() / n.sqrt();
        xh.row_mut(i).scale_mut(sh);
        xi.row_mut(i).scale_mut(si);
    }
    (symmetrize(xh.tr_mul(&xh)), symmetrize(xi.tr_mul(&xi)))
}

/// Negative Hessian only; used where the information matrix is not needed.
pub(crate) fn hessian_at(data: &Dataset, eta: &DVector<f64>) -> DMatrix<f64> {
    let fam = data.family();
    let n = data.n() as f64;
    let mut xh = data.x.clone();
    for i in 0..data.n() {
        let d = fam.derivs_unchecked(data.y[i], eta[i]);
        xh.row_mut(i).scale_mut((data.w[i] * d.g_ddot / n).sqrt());
    }
    symmetrize(xh.tr_mul(&xh))
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// All four likelihood objects at `θ`.
pub fn likelihood_parts(data: &Dataset, theta: &Theta) -> Result<LikelihoodParts> {
    let loglik = weighted_loglik(data, theta)?;
    let eta = data.linear_predictor(theta);
    let score = score_at(data, &eta);
    let (hessian, info) = hessian_and_info_at(data, &eta);
    Ok(LikelihoodParts {
        loglik,
        score,
        hessian,
        info,
    })
}
