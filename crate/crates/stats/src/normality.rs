//! Shapiro-Wilk normality test (Royston's 1995 approximation, valid for
//! 3 <= n <= 5000).

use serde::{Deserialize, Serialize};

use crate::descriptive::sorted;
use crate::dist::{norm_ppf, norm_sf};
use crate::error::{require_finite, require_len, Result, StatsError};

pub const SHAPIRO_MAX_N: usize = 5000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapiroWilk {
    pub w: f64,
    pub p_value: f64,
    pub n: usize,
}

fn poly(coefs: &[f64], x: f64) -> f64 {
    coefs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// Antisymmetric coefficient vector `a` (length n, sum of squares 1).
fn coefficients(n: usize) -> Vec<f64> {
    const C1: [f64; 6] = [0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056];
    const C2: [f64; 6] = [0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633];
    let half = n / 2;
    let mut upper = vec![0.0; half];
    if n == 3 {
        upper[0] = std::f64::consts::FRAC_1_SQRT_2;
    } else {
        let an25 = n as f64 + 0.25;
        let m: Vec<f64> = (1..=half)
            .map(|i| norm_ppf((i as f64 - 0.375) / an25))
            .collect();
        let summ2 = 2.0 * m.iter().map(|v| v * v).sum::<f64>();
        let ssumm2 = summ2.sqrt();
        let rsn = 1.0 / (n as f64).sqrt();
        let a1 = poly(&C1, rsn) - m[0] / ssumm2;
        let (first, fac) = if n > 5 {
            let a2 = -m[1] / ssumm2 + poly(&C2, rsn);
            upper[1] = a2;
            let fac = ((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1])
                / (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2))
                .sqrt();
            (2, fac)
        } else {
            let fac = ((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1)).sqrt();
            (1, fac)
        };
        upper[0] = a1;
        for i in first..half {
            upper[i] = -m[i] / fac;
        }
    }
    let mut a = vec![0.0; n];
    for (i, c) in upper.iter().enumerate() {
        a[i] = -c;
        a[n - 1 - i] = *c;
    }
    a
}

pub fn shapiro_wilk(y: &[f64]) -> Result<ShapiroWilk> {
    let n = y.len();
    require_len(n, 3)?;
    require_finite(y)?;
    if n > SHAPIRO_MAX_N {
        return Err(StatsError::InvalidInput(format!(
            "Shapiro-Wilk approximation is valid up to n = {SHAPIRO_MAX_N}, got {n}"
        )));
    }
    let x = sorted(y);
    let range = x[n - 1] - x[0];
    if range <= 0.0 {
        return Err(StatsError::InvalidInput("all values are identical".into()));
    }
    // scale by the range for conditioning
    let x: Vec<f64> = x.iter().map(|v| (v - x[0]) / range).collect();
    let a = coefficients(n);
    let mean = x.iter().sum::<f64>() / n as f64;
    let ss: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
    let num: f64 = a.iter().zip(&x).map(|(c, v)| c * v).sum();
    let w = (num * num / ss).min(1.0);

    let p_value = if n == 3 {
        const SIX_OVER_PI: f64 = 6.0 / std::f64::consts::PI;
        let p = SIX_OVER_PI * (w.sqrt().asin() - (0.75f64).sqrt().asin());
        p.clamp(0.0, 1.0)
    } else {
        let w1 = 1.0 - w;
        let nf = n as f64;
        let mut yv = w1.ln();
        let (m, s) = if n <= 11 {
            let gamma = poly(&[-2.273, 0.459], nf);
            if yv >= gamma {
                return Ok(ShapiroWilk { w, p_value: 1e-99, n });
            }
            yv = -(gamma - yv).ln();
            (
                poly(&[0.544, -0.39978, 0.025054, -6.714e-4], nf),
                poly(&[1.3822, -0.77857, 0.062767, -0.0020322], nf).exp(),
            )
        } else {
            let ln_n = nf.ln();
            (
                poly(&[-1.5861, -0.31082, -0.083751, 0.0038915], ln_n),
                poly(&[-0.4803, -0.082676, 0.0030302], ln_n).exp(),
            )
        };
        norm_sf((yv - m) / s)
    };
    Ok(ShapiroWilk { w, p_value, n })
}
