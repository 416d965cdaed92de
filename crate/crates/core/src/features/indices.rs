//! Survey-index builders over binary question columns.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Number of digital-technology adoption questions summed into the BDUS.
pub const BDUS_QUESTIONS: usize = 10;

fn check_binary(responses: &DMatrix<f64>) -> Result<()> {
    for j in 0..responses.ncols() {
        for i in 0..responses.nrows() {
            let v = responses[(i, j)];
            if v != 0.0 && v != 1.0 {
                return Err(Error::Domain(format!(
                    "response at row {i}, column {j} must be 0 or 1, got {v}"
                )));
            }
        }
    }
    Ok(())
}

/// Business Digital Usage Score: the count of "yes" answers over the ten
/// adoption questions, in `0..=10`.
pub fn build_bdus(responses: &DMatrix<f64>) -> Result<Vec<u32>> {
    if responses.ncols() != BDUS_QUESTIONS {
        return Err(Error::DimensionMismatch {
            context: "bdus question columns",
            expected: BDUS_QUESTIONS,
            found: responses.ncols(),
        });
    }
    check_binary(responses)?;
    Ok(responses.row_iter().map(|r| r.sum() as u32).collect())
}

/// 1 when any incident type was reported (row-wise logical OR).
pub fn build_incidence(responses: &DMatrix<f64>) -> Result<Vec<u8>> {
    if responses.ncols() == 0 {
        return Err(Error::InvalidInput("incidence needs at least one column".into()));
    }
    check_binary(responses)?;
    Ok(responses.row_iter().map(|r| r.iter().any(|&v| v == 1.0) as u8).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bdus_counts() {
        let m = DMatrix::from_row_slice(
            3,
            10,
            &[
                1., 1., 1., 1., 1., 1., 1., 1., 1., 1., //
                0., 0., 0., 0., 0., 0., 0., 0., 0., 0., //
                1., 0., 1., 1., 0., 0., 0., 1., 0., 0.,
            ],
        );
        assert_eq!(build_bdus(&m).unwrap(), vec![10, 0, 4]);
    }

    #[test]
    fn bdus_rejects_bad_input() {
        assert!(build_bdus(&DMatrix::zeros(2, 9)).is_err());
        let mut m = DMatrix::zeros(1, 10);
        m[(0, 3)] = 2.0;
        assert!(build_bdus(&m).is_err());
    }

    #[test]
    fn incidence_is_any() {
        let m = DMatrix::from_row_slice(3, 7, &[
            0., 0., 0., 0., 0., 0., 0., //
            0., 0., 0., 1., 0., 0., 0., //
            1., 1., 0., 0., 0., 0., 1.,
        ]);
        assert_eq!(build_incidence(&m).unwrap(), vec![0, 1, 1]);
        assert!(build_incidence(&DMatrix::from_element(1, 2, 0.5)).is_err());
    }
}
