use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScored {
    pub values: Vec<f64>,
    /// Set when the input had zero spread; values are then all zero.
    pub degenerate: bool,
}

/// `(x - mean) / sd` with the population standard deviation.
pub fn zscore(values: &[f64]) -> ZScored {
    let n = values.len();
    if n == 0 {
        return ZScored { values: Vec::new(), degenerate: true };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let sd = var.sqrt();
    if sd <= f64::EPSILON * mean.abs().max(1.0) {
        return ZScored { values: vec![0.0; n], degenerate: true };
    }
    ZScored { values: values.iter().map(|v| (v - mean) / sd).collect(), degenerate: false }
}

/// Z-scores each participant's series independently.
pub fn zscore_per_participant(series: &BTreeMap<String, Vec<f64>>) -> BTreeMap<String, ZScored> {
    series.iter().map(|(k, v)| (k.clone(), zscore(v))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_variance_zero_mean() {
        let z = zscore(&[1.0, 2.0, 3.0, 4.0, 10.0]);
        assert!(!z.degenerate);
        let m: f64 = z.values.iter().sum::<f64>() / 5.0;
        let v: f64 = z.values.iter().map(|x| x * x).sum::<f64>() / 5.0;
        assert!(m.abs() < 1e-12);
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_series_flags() {
        let z = zscore(&[2.5; 4]);
        assert!(z.degenerate);
        assert_eq!(z.values, vec![0.0; 4]);
    }

    #[test]
    fn per_participant_is_independent() {
        let mut s = BTreeMap::new();
        s.insert("a".to_string(), vec![1.0, 3.0]);
        s.insert("b".to_string(), vec![100.0, 300.0]);
        let z = zscore_per_participant(&s);
        assert_eq!(z["a"].values, z["b"].values);
    }
}
