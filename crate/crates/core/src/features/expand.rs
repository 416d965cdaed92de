//! Degree-2 interaction expansion.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::Dataset;

/// One appended column and the design columns it multiplies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductTerm {
    pub column: usize,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionMap {
    /// Regressor names after expansion (intercept excluded).
    pub output_columns: Vec<String>,
    pub parentage: Vec<ProductTerm>,
}

/// Appends all pairwise products `x_i · x_j` (i < j), in lexicographic
/// `(i, j)` order, plus a square `x_i²` at position `(i, i)` for every
/// non-binary column.
pub fn expand_interactions(data: &Dataset, degree: usize) -> Result<(Dataset, ExpansionMap)> {
    if degree != 2 {
        return Err(Error::InvalidInput(format!(
            "only degree 2 interaction expansion is supported, got {degree}"
        )));
    }
    if data.expansion().is_some() {
        return Err(Error::InvalidInput("dataset is already expanded".into()));
    }
    let p = data.p();
    let names = data.column_names();
    let numeric: Vec<bool> = (1..=p).map(|j| !data.is_binary_column(j)).collect();

    let mut pairs = Vec::new();
    for i in 1..=p {
        for j in i..=p {
            if i < j || numeric[i - 1] {
                pairs.push((i, j));
            }
        }
    }
    let n = data.n();
    let mut x = DMatrix::zeros(n, p + 1 + pairs.len());
    x.columns_mut(0, p + 1).copy_from(data.x());
    let mut out_names = names.to_vec();
    let mut parentage = Vec::with_capacity(pairs.len());
    for (k, &(i, j)) in pairs.iter().enumerate() {
        let col = p + 1 + k;
        let prod = data.x().column(i).component_mul(&data.x().column(j));
        x.column_mut(col).copy_from(&prod);
        out_names.push(if i == j {
            format!("{}^2", names[i - 1])
        } else {
            format!("{}*{}", names[i - 1], names[j - 1])
        });
        parentage.push(ProductTerm {
            column: col,
            left: i,
            right: j,
        });
    }
    let map = ExpansionMap {
        output_columns: out_names.clone(),
        parentage,
    };
    let out = Dataset::new(data.y().clone(), x, data.w().clone(), out_names)?
        .with_names(data.outcome_name(), data.weight_name().map(String::from))
        .with_expansion(map.clone());
    Ok((out, map))
}
