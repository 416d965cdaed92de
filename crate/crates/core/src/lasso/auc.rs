use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How cross-validation scores tied predictions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucTies {
    /// A tied positive/negative pair counts one half.
    #[default]
    Half,
    /// Ties are put in a random order before counting, which is what glmnet's
    /// weighted AUC does. Sparse fits on binary regressors have few distinct
    /// scores, so this makes fold AUCs noisier.
    Random,
}

/// Weighted Mann–Whitney AUC:
///
/// ```text
/// Σ_{i∈pos, j∈neg} w_i w_j [1(s_i > s_j) + ½ 1(s_i = s_j)] / (Σ_pos w · Σ_neg w)
/// ```
///
/// Computed in `O(n log n)` by sorting and grouping tied scores.
pub fn weighted_auc(scores: &[f64], labels: &[f64], weights: &[f64]) -> Result<f64> {
    let n = scores.len();
    if labels.len() != n || weights.len() != n {
        return Err(Error::DimensionMismatch {
            context: "auc inputs",
            expected: n,
            found: if labels.len() != n { labels.len() } else { weights.len() },
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut w_pos = 0.0;
    let mut w_neg = 0.0;
    let mut concordant = 0.0;
    let mut neg_below = 0.0;
    let mut k = 0;
    while k < n {
        let mut end = k;
        let (mut gp, mut gn) = (0.0, 0.0);
        while end < n && scores[order[end]] == scores[order[k]] {
            let i = order[end];
            match labels[i] {
                1.0 => gp += weights[i],
                0.0 => gn += weights[i],
                l => return Err(Error::Domain(format!("auc labels must be 0/1, got {l}"))),
            }
            end += 1;
        }
        concordant += gp * neg_below + 0.5 * gp * gn;
        neg_below += gn;
        w_pos += gp;
        w_neg += gn;
        k = end;
    }
    if w_pos <= 0.0 || w_neg <= 0.0 {
        return Err(Error::InvalidInput("auc needs both classes present".into()));
    }
    Ok(concordant / (w_pos * w_neg))
}

/// Weighted AUC with ties broken by a uniform draw per observation.
pub fn weighted_auc_random_ties<R: Rng + ?Sized>(
    scores: &[f64],
    labels: &[f64],
    weights: &[f64],
    rng: &mut R,
) -> Result<f64> {
    let n = scores.len();
    if labels.len() != n || weights.len() != n {
        return Err(Error::DimensionMismatch {
            context: "auc inputs",
            expected: n,
            found: if labels.len() != n { labels.len() } else { weights.len() },
        });
    }
    let jitter: Vec<f64> = (0..n).map(|_| rng.random()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(jitter[a].total_cmp(&jitter[b])));
    let (mut w_pos, mut w_neg, mut concordant) = (0.0, 0.0, 0.0);
    for &i in &order {
        match labels[i] {
            1.0 => {
                concordant += weights[i] * w_neg;
                w_pos += weights[i];
            }
            0.0 => w_neg += weights[i],
            l => return Err(Error::Domain(format!("auc labels must be 0/1, got {l}"))),
        }
    }
    if w_pos <= 0.0 || w_neg <= 0.0 {
        return Err(Error::InvalidInput("auc needs both classes present".into()));
    }
    Ok(concordant / (w_pos * w_neg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separating_constant_and_small_cases() {
        let y = [1.0, 1.0, 0.0, 0.0];
        assert_eq!(weighted_auc(&[4.0, 3.0, 2.0, 1.0], &y, &[1.0; 4]).unwrap(), 1.0);
        assert_eq!(weighted_auc(&[0.7; 4], &y, &[1.0, 2.0, 3.0, 4.0]).unwrap(), 0.5);
        assert_eq!(weighted_auc(&[0.9, 0.4, 0.6], &[1.0, 0.0, 1.0], &[1.0; 3]).unwrap(), 1.0);
    }

    #[test]
    fn random_ties_average_to_half_credit() {
        use rand::SeedableRng;
        let s = [1.0, 1.0, 2.0, 2.0, 2.0, 3.0];
        let y = [0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
        let w = [0.3, 1.0, 2.0, 0.5, 1.5, 0.7];
        let exact = weighted_auc(&s, &y, &w).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let draws = 20_000;
        let mean = (0..draws)
            .map(|_| weighted_auc_random_ties(&s, &y, &w, &mut rng).unwrap())
            .sum::<f64>()
            / draws as f64;
        assert!((mean - exact).abs() < 5e-3, "{mean} vs {exact}");
        // distinct scores leave nothing to randomize
        let d = [0.1, 0.5, 0.2, 0.9, 0.4, 0.3];
        assert_eq!(
            weighted_auc_random_ties(&d, &y, &w, &mut rng).unwrap(),
            weighted_auc(&d, &y, &w).unwrap()
        );
    }

    #[test]
    fn single_class_errors() {
        assert!(weighted_auc(&[0.1, 0.2], &[1.0, 1.0], &[1.0, 1.0]).is_err());
    }
}
