//! Linear mixed-effects regression of a longitudinal outcome on week, with a
//! fixed intercept and slope plus a correlated random intercept and random
//! slope per participant, fitted by restricted maximum likelihood.
//!
//! The relative random-effect covariance `Sigma_b / sigma^2 = L L'` is
//! parameterised by its lower Cholesky factor `L` (three free numbers). The
//! residual variance and the fixed effects are profiled out, so the optimiser
//! only sees the REML deviance as a function of `L`. Because the random design
//! equals the fixed design (`[1, week]`) every per-participant quantity reduces
//! to 2x2 algebra through the Woodbury identity.

use std::collections::BTreeMap;

use nalgebra::{Matrix2, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::two_sided_normal_p;
use crate::error::{Result, StatsError};
use crate::optim::{bfgs, BfgsOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub participant: String,
    pub week: f64,
    pub y: f64,
}

impl Observation {
    pub fn new(participant: impl Into<String>, week: f64, y: f64) -> Self {
        Self { participant: participant.into(), week, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomEffects {
    InterceptAndSlope,
    /// Random-effect variances fixed at zero (reduces to OLS).
    None,
}

#[derive(Debug, Clone, Copy)]
pub struct LmmOptions {
    pub random_effects: RandomEffects,
    pub restarts: usize,
    pub seed: u64,
    pub tolerance: f64,
    pub max_iter: usize,
}

impl Default for LmmOptions {
    fn default() -> Self {
        Self {
            random_effects: RandomEffects::InterceptAndSlope,
            restarts: 5,
            seed: 0x1f2e_3d4c,
            tolerance: 1e-8,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEffect {
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmFit {
    pub intercept: FixedEffect,
    pub slope: FixedEffect,
    pub sd_intercept: f64,
    pub sd_slope: f64,
    pub correlation: f64,
    pub residual_sd: f64,
    pub reml_log_likelihood: f64,
    pub converged: bool,
    /// Restarts whose optimum agrees with the best deviance to 1e-4.
    pub restarts_agreeing: usize,
    pub restarts: usize,
    pub iterations: usize,
    pub n_participants: usize,
    pub n_obs: usize,
    /// Lower Cholesky factor `(l11, l21, l22)` of the relative covariance.
    pub theta: [f64; 3],
}

impl LmmFit {
    pub fn predict(&self, week: f64) -> f64 {
        self.intercept.estimate + self.slope.estimate * week
    }
}

#[derive(Debug, Clone)]
struct Group {
    xtx: Matrix2<f64>,
    xty: Vector2<f64>,
    yty: f64,
}

#[derive(Debug, Clone)]
struct Profiled {
    deviance: f64,
    beta: Vector2<f64>,
    a_inv: Matrix2<f64>,
    sigma2: f64,
}

fn chol_factor(theta: &[f64]) -> Matrix2<f64> {
    Matrix2::new(theta[0], 0.0, theta[1], theta[2])
}

fn profile(groups: &[Group], n_obs: usize, theta: &[f64]) -> Option<Profiled> {
    let l = chol_factor(theta);
    let lt = l.transpose();
    let mut a = Matrix2::zeros();
    let mut c = Vector2::zeros();
    let mut q = 0.0;
    let mut logdet_m = 0.0;
    for g in groups {
        let m = Matrix2::identity() + lt * g.xtx * l;
        let chol = m.cholesky()?;
        let lm = chol.l();
        logdet_m += 2.0 * (lm[(0, 0)].ln() + lm[(1, 1)].ln());
        let m_inv = chol.inverse();
        let k = g.xtx * l;
        let u = lt * g.xty;
        a += g.xtx - k * m_inv * k.transpose();
        c += g.xty - k * (m_inv * u);
        q += g.yty - u.dot(&(m_inv * u));
    }
    let chol_a = a.cholesky()?;
    let la = chol_a.l();
    let logdet_a = 2.0 * (la[(0, 0)].ln() + la[(1, 1)].ln());
    let beta = chol_a.solve(&c);
    let rss = q - c.dot(&beta);
    let dof = (n_obs - 2) as f64;
    if !(rss > 0.0) {
        return None;
    }
    let sigma2 = rss / dof;
    let deviance =
        logdet_m + logdet_a + dof * (1.0 + (2.0 * std::f64::consts::PI * sigma2).ln());
    Some(Profiled { deviance, beta, a_inv: chol_a.inverse(), sigma2 })
}

fn build_groups(obs: &[Observation]) -> BTreeMap<&str, Group> {
    let mut groups: BTreeMap<&str, Group> = BTreeMap::new();
    for o in obs {
        let g = groups.entry(o.participant.as_str()).or_insert_with(|| Group {
            xtx: Matrix2::zeros(),
            xty: Vector2::zeros(),
            yty: 0.0,
        });
        let x = Vector2::new(1.0, o.week);
        g.xtx += x * x.transpose();
        g.xty += x * o.y;
        g.yty += o.y * o.y;
    }
    groups
}

fn fixed_effect(estimate: f64, variance: f64) -> FixedEffect {
    let std_error = variance.max(0.0).sqrt();
    let z = if std_error > 0.0 { estimate / std_error } else { 0.0 };
    FixedEffect { estimate, std_error, z, p_value: two_sided_normal_p(z) }
}

/// REML deviance (-2 x restricted log-likelihood) at a given relative
/// Cholesky factor. Exposed for optimality probes.
pub fn reml_deviance(obs: &[Observation], theta: [f64; 3]) -> Option<f64> {
    let groups: Vec<Group> = build_groups(obs).into_values().collect();
    profile(&groups, obs.len(), &theta).map(|p| p.deviance)
}

pub fn fit_lmm(obs: &[Observation], opts: &LmmOptions) -> Result<LmmFit> {
    if obs.iter().any(|o| !o.week.is_finite() || !o.y.is_finite()) {
        return Err(StatsError::InvalidInput("non-finite observation".into()));
    }
    let groups: Vec<Group> = build_groups(obs).into_values().collect();
    let n_obs = obs.len();
    if n_obs < 4 {
        return Err(StatsError::InsufficientData { needed: 4, got: n_obs });
    }

    let zero = [0.0, 0.0, 0.0];
    let (theta, converged, restarts_agreeing, restarts, iterations) = match opts.random_effects {
        RandomEffects::None => (zero, true, 1, 0, 0),
        RandomEffects::InterceptAndSlope => {
            if groups.len() < 2 {
                return Err(StatsError::InsufficientData { needed: 2, got: groups.len() });
            }
            let objective = |t: &[f64]| {
                profile(&groups, n_obs, t).map_or(f64::INFINITY, |p| p.deviance)
            };
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let restarts = opts.restarts.max(1);
            let bfgs_opts = BfgsOptions {
                max_iter: opts.max_iter,
                f_tol: opts.tolerance,
                grad_tol: 1e-6,
            };
            let mut results = Vec::with_capacity(restarts);
            for r in 0..restarts {
                let start = if r == 0 {
                    [1.0, 0.0, 0.1]
                } else {
                    [
                        (rng.random::<f64>() * 4.0 - 3.0).exp(),
                        rng.random::<f64>() * 0.2 - 0.1,
                        (rng.random::<f64>() * 4.0 - 5.0).exp(),
                    ]
                };
                results.push(bfgs(objective, &start, bfgs_opts));
            }
            let best = results
                .iter()
                .filter(|m| m.value.is_finite())
                .min_by(|a, b| a.value.total_cmp(&b.value))
                .ok_or_else(|| StatsError::Numerical("every REML restart failed".into()))?;
            let agreeing = results
                .iter()
                .filter(|m| (m.value - best.value).abs() < 1e-4)
                .count();
            let iterations = results.iter().map(|m| m.iterations).sum();
            ([best.x[0], best.x[1], best.x[2]], best.converged, agreeing, restarts, iterations)
        }
    };

    let prof = profile(&groups, n_obs, &theta)
        .ok_or_else(|| StatsError::Numerical("fixed-effect system is singular".into()))?;
    let cov_beta = prof.a_inv * prof.sigma2;
    let sigma = prof.sigma2.sqrt();
    let l = chol_factor(&theta);
    let rel = l * l.transpose();
    let sd_intercept = sigma * rel[(0, 0)].max(0.0).sqrt();
    let sd_slope = sigma * rel[(1, 1)].max(0.0).sqrt();
    let correlation = if rel[(0, 0)] > 0.0 && rel[(1, 1)] > 0.0 {
        (rel[(0, 1)] / (rel[(0, 0)] * rel[(1, 1)]).sqrt()).clamp(-1.0, 1.0)
    } else {
        0.0
    };

    Ok(LmmFit {
        intercept: fixed_effect(prof.beta[0], cov_beta[(0, 0)]),
        slope: fixed_effect(prof.beta[1], cov_beta[(1, 1)]),
        sd_intercept,
        sd_slope,
        correlation,
        residual_sd: sigma,
        reml_log_likelihood: -0.5 * prof.deviance,
        converged,
        restarts_agreeing,
        restarts,
        iterations,
        n_participants: groups.len(),
        n_obs,
        theta,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantFilter {
    pub kept: Vec<Observation>,
    pub too_few_weeks: Vec<String>,
    pub no_variability: Vec<String>,
}

/// Drops participants with fewer than `min_weeks` distinct weeks and those
/// whose responses never vary.
pub fn filter_participants(obs: &[Observation], min_weeks: usize) -> ParticipantFilter {
    let mut by_participant: BTreeMap<&str, Vec<&Observation>> = BTreeMap::new();
    for o in obs {
        by_participant.entry(o.participant.as_str()).or_default().push(o);
    }
    let mut out = ParticipantFilter { kept: Vec::new(), too_few_weeks: Vec::new(), no_variability: Vec::new() };
    for (id, rows) in by_participant {
        let mut weeks: Vec<f64> = rows.iter().map(|o| o.week).collect();
        weeks.sort_by(f64::total_cmp);
        weeks.dedup();
        if weeks.len() < min_weeks {
            out.too_few_weeks.push(id.to_string());
            continue;
        }
        let first = rows[0].y;
        if rows.iter().all(|o| o.y == first) {
            out.no_variability.push(id.to_string());
            continue;
        }
        out.kept.extend(rows.into_iter().cloned());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ols::simple_line;

    fn toy() -> Vec<Observation> {
        let mut v = Vec::new();
        let offsets = [0.5, -0.3, 0.1, -0.6, 0.4, 0.0];
        let slopes = [0.02, -0.05, 0.0, 0.03, -0.01, 0.01];
        for (p, (o, s)) in offsets.iter().zip(&slopes).enumerate() {
            for w in 0..8 {
                let noise = ((p * 7 + w * 3) % 5) as f64 * 0.05 - 0.1;
                v.push(Observation::new(format!("p{p}"), w as f64, 1.7 + o + (-0.03 + s) * w as f64 + noise));
            }
        }
        v
    }

    #[test]
    fn zero_random_effects_equal_ols() {
        let mut obs = toy();
        obs.retain(|o| !(o.participant == "p2" && o.week > 4.0));
        let fit = fit_lmm(&obs, &LmmOptions { random_effects: RandomEffects::None, ..Default::default() }).unwrap();
        let x: Vec<f64> = obs.iter().map(|o| o.week).collect();
        let y: Vec<f64> = obs.iter().map(|o| o.y).collect();
        let (b, m) = simple_line(&x, &y).unwrap();
        assert!((fit.intercept.estimate - b).abs() < 1e-9);
        assert!((fit.slope.estimate - m).abs() < 1e-9);
        assert_eq!(fit.sd_intercept, 0.0);
    }

    #[test]
    fn fit_is_a_local_optimum() {
        let obs = toy();
        let fit = fit_lmm(&obs, &LmmOptions::default()).unwrap();
        assert!(fit.converged);
        let best = reml_deviance(&obs, fit.theta).unwrap();
        for k in 0..3 {
            for d in [-1e-2, 1e-2] {
                let mut t = fit.theta;
                t[k] += d;
                assert!(reml_deviance(&obs, t).unwrap() >= best - 1e-9);
            }
        }
        assert!(fit.sd_intercept > 0.0);
        assert!((-1.0..=1.0).contains(&fit.correlation));
    }

    #[test]
    fn filter_rules() {
        let mut obs = toy();
        for w in 0..3 {
            obs.push(Observation::new("short", w as f64, 1.0 + w as f64));
        }
        for w in 0..6 {
            obs.push(Observation::new("flat", w as f64, 2.0));
        }
        let f = filter_participants(&obs, 5);
        assert_eq!(f.too_few_weeks, vec!["short".to_string()]);
        assert_eq!(f.no_variability, vec!["flat".to_string()]);
        assert_eq!(f.kept.len(), toy().len());
    }

    #[test]
    fn needs_two_participants() {
        let obs: Vec<Observation> = (0..6).map(|w| Observation::new("a", w as f64, w as f64 * 0.1 + (w % 2) as f64)).collect();
        assert!(matches!(fit_lmm(&obs, &LmmOptions::default()), Err(StatsError::InsufficientData { .. })));
    }
}
