//! Simulation-based checks of the estimators against known generating values.

use moods_stats::{
    bootstrap_band, fit_lmm, interrupted_time_series, lmm::reml_deviance, BootstrapOptions,
    DailyIntensity, LmmOptions, Observation, RandomEffects,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeMap;

fn cohort(rng: &mut ChaCha8Rng, n: usize, weeks: usize, sd0: f64, sd1: f64, resid: f64) -> Vec<Observation> {
    let mut obs = Vec::new();
    for p in 0..n {
        let b0 = Normal::new(0.0, sd0).unwrap().sample(rng);
        let b1 = Normal::new(0.0, sd1).unwrap().sample(rng);
        for w in 0..weeks {
            let e = Normal::new(0.0, resid).unwrap().sample(rng);
            obs.push(Observation::new(format!("p{p}"), w as f64, 1.76 + b0 + (-0.03 + b1) * w as f64 + e));
        }
    }
    obs
}

#[test]
fn balanced_zero_variance_data_collapses_to_ols() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let obs = cohort(&mut rng, 30, 10, 0.0, 0.0, 0.5);
    let full = fit_lmm(&obs, &LmmOptions::default()).unwrap();
    let ols = fit_lmm(&obs, &LmmOptions { random_effects: RandomEffects::None, ..Default::default() }).unwrap();
    assert!((full.intercept.estimate - ols.intercept.estimate).abs() < 1e-6);
    assert!((full.slope.estimate - ols.slope.estimate).abs() < 1e-6);
}

#[test]
fn reml_optimum_beats_random_perturbations() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let obs = cohort(&mut rng, 25, 12, 0.76, 0.062, 0.5);
    let fit = fit_lmm(&obs, &LmmOptions::default()).unwrap();
    assert!(fit.converged);
    let best = reml_deviance(&obs, fit.theta).unwrap();
    for _ in 0..20 {
        let mut t = fit.theta;
        for v in t.iter_mut() {
            *v += rng.random_range(-0.05..0.05) * v.abs().max(0.05);
        }
        assert!(reml_deviance(&obs, t).unwrap() >= best - 1e-9);
    }
}

#[test]
fn its_null_and_step_recovery() {
    // 100 null cohorts: mean level change close to zero
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let run = |step: f64, rng: &mut ChaCha8Rng| {
        let mut days = Vec::new();
        let mut actions = BTreeMap::new();
        for p in 0..17 {
            let id = format!("p{p}");
            let action = rng.random_range(4..=8u32);
            actions.insert(id.clone(), action);
            for day in 0..98i64 {
                let week = (day / 7 + 1) as u32;
                let shift = if week > action { step } else { 0.0 };
                days.push(DailyIntensity { participant: id.clone(), day, week, intensity: 1.8 + shift + 0.6 * noise.sample(rng) });
            }
        }
        interrupted_time_series(&days, &actions, 20).unwrap()
    };
    let mean_null: f64 = (0..100).map(|_| run(0.0, &mut rng).level_change.estimate).sum::<f64>() / 100.0;
    assert!(mean_null.abs() < 0.05, "mean null level change {mean_null}");

    let r = run(-0.5, &mut rng);
    let truth = -0.5 / (0.6f64.powi(2) + 0.25 * 0.25).sqrt();
    assert!(r.level_change.ci_low <= truth && truth <= r.level_change.ci_high, "{:?}", r.level_change);
}

#[test]
fn bootstrap_band_coverage_is_near_nominal() {
    // 90% band for the population mean line at the middle week
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let replicates = 200;
    let mut covered = 0;
    for r in 0..replicates {
        let obs = cohort(&mut rng, 40, 8, 0.76, 0.062, 0.5);
        let mut by_p: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for o in obs {
            by_p.entry(o.participant).or_default().push((o.week, o.y));
        }
        let units: Vec<Vec<(f64, f64)>> = by_p.into_values().collect();
        let fit = |c: &[Vec<(f64, f64)>]| {
            let pts: Vec<(f64, f64)> = c.iter().flatten().copied().collect();
            let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
            let (b, m) = moods_stats::ols::simple_line(&x, &y)?;
            Ok(vec![b + m * 3.5])
        };
        let opts = BootstrapOptions { resamples: 200, seed: r, lower_pct: 5.0, upper_pct: 95.0 };
        let band = bootstrap_band(&units, &opts, fit).unwrap();
        let truth = 1.76 - 0.03 * 3.5;
        if band.lower[0] <= truth && truth <= band.upper[0] {
            covered += 1;
        }
    }
    let rate = covered as f64 / replicates as f64;
    assert!((rate - 0.90).abs() <= 0.05, "coverage {rate}");
}
