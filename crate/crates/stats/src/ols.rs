use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dist::two_sided_t_p;
use crate::error::{Result, StatsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub p_values: Vec<f64>,
    pub residual_variance: f64,
    pub df_resid: usize,
}

/// Ordinary least squares on a dense design (rows are observations).
pub fn ols(design: &DMatrix<f64>, y: &[f64]) -> Result<OlsFit> {
    let (n, p) = design.shape();
    if y.len() != n {
        return Err(StatsError::InvalidInput(format!(
            "design has {n} rows but response has {}",
            y.len()
        )));
    }
    if n <= p {
        return Err(StatsError::InsufficientData { needed: p + 1, got: n });
    }
    let yv = DVector::from_column_slice(y);
    let xtx = design.transpose() * design;
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| StatsError::Numerical("design matrix is rank deficient".into()))?;
    let beta = chol.solve(&(design.transpose() * &yv));
    let resid = &yv - design * &beta;
    let df = n - p;
    let sigma2 = resid.dot(&resid) / df as f64;
    let inv = chol.inverse();
    let std_errors: Vec<f64> = (0..p).map(|j| (sigma2 * inv[(j, j)]).sqrt()).collect();
    let p_values = beta
        .iter()
        .zip(&std_errors)
        .map(|(b, se)| if *se > 0.0 { two_sided_t_p(b / se, df as f64) } else if *b == 0.0 { 1.0 } else { 0.0 })
        .collect();
    Ok(OlsFit {
        coefficients: beta.iter().copied().collect(),
        std_errors,
        p_values,
        residual_variance: sigma2,
        df_resid: df,
    })
}

/// Straight-line fit `y = b + m x`; returns `(intercept, slope)`.
pub fn simple_line(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let design = DMatrix::from_fn(x.len(), 2, |i, j| if j == 0 { 1.0 } else { x[i] });
    let fit = ols(&design, y)?;
    Ok((fit.coefficients[0], fit.coefficients[1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_noisy_line() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, v)| 1.0 + 0.5 * v + if i % 2 == 0 { 0.1 } else { -0.1 })
            .collect();
        let (b, m) = simple_line(&x, &y).unwrap();
        assert!((m - 0.5).abs() < 0.02);
        assert!((b - 1.0).abs() < 0.1);
    }

    #[test]
    fn rank_deficient_is_reported() {
        let design = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(matches!(ols(&design, &[1.0, 2.0, 3.0]), Err(StatsError::Numerical(_))));
    }
}
