//! Information dimension from the slope of `H` against `k = log2 n`.
//!
//! For `P_X` with dimension `d` and `d`-dimensional entropy `h`,
//! `H(X̂_n) = d·log2 n + h + o(1)`, so an ordinary least-squares line
//! through `(k, H)` estimates `d` (slope) and `h` (intercept, bits).

use serde::Serialize;

use crate::entropy::EntropyCurve;
use crate::error::{Error, Result};

/// Fewest rows a line is fitted through.
pub const MIN_ROWS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DimensionFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in bits.
    pub residual: f64,
    pub rows_used: Vec<u32>,
}

/// Least-squares fit of `H` against `k`.
///
/// ```
/// use infoloss::dimension::fit_dimension;
///
/// let fit = fit_dimension(&[(4, 5.0), (5, 5.5), (6, 6.0)]).unwrap();
/// assert!((fit.slope - 0.5).abs() < 1e-12);
/// assert!((fit.intercept - 3.0).abs() < 1e-12);
/// ```
pub fn fit_dimension(column: &[(u32, f64)]) -> Result<DimensionFit> {
    if column.len() < MIN_ROWS {
        return Err(Error::InsufficientData {
            reliable: column.len(),
            needed: MIN_ROWS,
        });
    }
    if let Some((k, h)) = column.iter().find(|(_, h)| !h.is_finite()) {
        return Err(Error::data(format!("non-finite entropy {h} at k = {k}")));
    }
    let m = column.len() as f64;
    let kbar = column.iter().map(|(k, _)| *k as f64).sum::<f64>() / m;
    let hbar = column.iter().map(|(_, h)| h).sum::<f64>() / m;
    let sxx: f64 = column.iter().map(|(k, _)| (*k as f64 - kbar).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::data("all rows share the same k"));
    }
    let sxy: f64 = column.iter().map(|(k, h)| (*k as f64 - kbar) * (h - hbar)).sum();
    let slope = sxy / sxx;
    let intercept = hbar - slope * kbar;
    let ss: f64 = column
        .iter()
        .map(|(k, h)| (h - intercept - slope * *k as f64).powi(2))
        .sum();
    Ok(DimensionFit {
        slope,
        intercept,
        residual: (ss / m).sqrt(),
        rows_used: column.iter().map(|(k, _)| *k).collect(),
    })
}

/// `d(X)` from the reliable marginal rows.
pub fn marginal_dimension(curve: &EntropyCurve) -> Result<DimensionFit> {
    fit_dimension(&curve.marginal_column())
}

/// `E_Y[d(X|Y=y)]` from the reliable conditional rows.
pub fn conditional_dimension(curve: &EntropyCurve) -> Result<DimensionFit> {
    fit_dimension(&curve.conditional_column())
}

/// `d(Y)` from the rows where the output histogram is reliable.
pub fn output_dimension(curve: &EntropyCurve) -> Result<DimensionFit> {
    fit_dimension(&curve.output_column())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let col: Vec<(u32, f64)> = (4..=12).map(|k| (k, 2.0 * k as f64 - 1.0)).collect();
        let f = fit_dimension(&col).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept + 1.0).abs() < 1e-12);
        assert!(f.residual < 1e-12);
        assert_eq!(f.rows_used, (4..=12).collect::<Vec<_>>());
    }

    #[test]
    fn constant_column_has_zero_slope() {
        let f = fit_dimension(&[(4, 3.0), (5, 3.0), (6, 3.0), (7, 3.0)]).unwrap();
        assert_eq!(f.slope, 0.0);
        assert!((f.intercept - 3.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_rows() {
        assert!(matches!(
            fit_dimension(&[(4, 1.0), (5, 2.0)]),
            Err(Error::InsufficientData { reliable: 2, needed: 3 })
        ));
    }
}
