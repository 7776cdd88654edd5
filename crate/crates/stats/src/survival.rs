//! Participant retention (the fraction still active after a number of days).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionCurve {
    pub n: usize,
    /// `(day, fraction)` starting at `(0, 1.0)`; a new step begins at each
    /// distinct participation length, after which that many participants are gone.
    pub steps: Vec<(u32, f64)>,
}

impl RetentionCurve {
    /// Fraction of participants active for at least `day` days.
    pub fn at(&self, day: u32) -> f64 {
        self.steps
            .iter()
            .take_while(|(d, _)| *d <= day)
            .last()
            .map_or(1.0, |(_, f)| *f)
    }
}

/// `days_active[i]` is the number of days participant `i` stayed in the study.
/// A participant active for `d` days counts as retained for every day `<= d`.
pub fn retention_curve(days_active: &[u32]) -> RetentionCurve {
    let n = days_active.len();
    let mut sorted = days_active.to_vec();
    sorted.sort_unstable();
    let mut steps = vec![(0, 1.0)];
    if n == 0 {
        return RetentionCurve { n, steps };
    }
    let mut i = 0;
    while i < n {
        let d = sorted[i];
        let mut j = i;
        while j < n && sorted[j] == d {
            j += 1;
        }
        let remaining = (n - j) as f64 / n as f64;
        steps.push((d + 1, remaining));
        i = j;
    }
    RetentionCurve { n, steps }
}
