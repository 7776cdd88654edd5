use moods_stats::descriptive::median;
use moods_stats::trend::{kendall_s, theil_sen};
use moods_stats::{mann_kendall, mann_whitney_u, shapiro_wilk, wilcoxon_signed_rank};
use proptest::prelude::*;

fn series() -> impl Strategy<Value = Vec<f64>> {
    // small integer grid so ties are common
    prop::collection::vec((-20i32..20).prop_map(|v| v as f64 / 4.0), 3..40)
}

proptest! {
    #[test]
    fn mk_reversal_negates(y in series()) {
        let fwd = mann_kendall(&y).unwrap();
        let rev: Vec<f64> = y.iter().rev().copied().collect();
        let back = mann_kendall(&rev).unwrap();
        prop_assert_eq!(back.s, -fwd.s);
        prop_assert_eq!(back.z, -fwd.z);
        prop_assert!((back.p_value - fwd.p_value).abs() < 1e-15);
    }

    #[test]
    fn mk_shift_invariance(y in series(), c in -5i32..5) {
        let c = c as f64;
        let a = mann_kendall(&y).unwrap();
        let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
        let b = mann_kendall(&shifted).unwrap();
        prop_assert_eq!(a.s, b.s);
        prop_assert_eq!(a.z, b.z);
        prop_assert_eq!(a.p_value, b.p_value);
        prop_assert!((a.slope - b.slope).abs() < 1e-12);
        prop_assert!((b.intercept - a.intercept - c).abs() < 1e-12);
    }

    #[test]
    fn mk_scale_equivariance(y in series(), c in 1u32..8) {
        let c = c as f64 / 2.0;
        let a = mann_kendall(&y).unwrap();
        let scaled: Vec<f64> = y.iter().map(|v| v * c).collect();
        let b = mann_kendall(&scaled).unwrap();
        prop_assert_eq!(a.s, b.s);
        prop_assert_eq!(a.p_value, b.p_value);
        prop_assert!((b.slope - a.slope * c).abs() < 1e-12);
        prop_assert!((b.intercept - a.intercept * c).abs() < 1e-12);
    }

    #[test]
    fn mk_sign_of_z_follows_s(y in series()) {
        let r = mann_kendall(&y).unwrap();
        prop_assert!((0.0..=1.0).contains(&r.p_value));
        if r.s != 0.0 && r.var_s > 0.0 && r.s.abs() > 1.0 {
            prop_assert_eq!(r.z.signum(), r.s.signum());
        }
    }

    #[test]
    fn theil_sen_matches_pairwise_median(y in series()) {
        let mut slopes = Vec::new();
        for i in 0..y.len() {
            for j in i + 1..y.len() {
                slopes.push((y[j] - y[i]) / (j - i) as f64);
            }
        }
        let (m, _) = theil_sen(&y).unwrap();
        prop_assert_eq!(m, median(&slopes));
        prop_assert_eq!(kendall_s(&y), slopes.iter().map(|s| if *s > 0.0 { 1.0 } else if *s < 0.0 { -1.0 } else { 0.0 }).sum::<f64>());
    }

    #[test]
    fn rank_test_p_values_are_probabilities(
        a in prop::collection::vec(-10i32..10, 1..30),
        b in prop::collection::vec(-10i32..10, 1..30),
    ) {
        let a: Vec<f64> = a.into_iter().map(f64::from).collect();
        let b: Vec<f64> = b.into_iter().map(f64::from).collect();
        let mw = mann_whitney_u(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&mw.p_value));
        prop_assert!(mw.statistic >= 0.0 && mw.statistic <= (a.len() * b.len()) as f64);
        let n = a.len().min(b.len());
        if let Ok(w) = wilcoxon_signed_rank(&a[..n], &b[..n]) {
            prop_assert!((0.0..=1.0).contains(&w.p_value));
        }
    }

    #[test]
    fn shapiro_w_in_unit_interval(y in prop::collection::vec(-1000i32..1000, 3..200)) {
        let y: Vec<f64> = y.into_iter().map(f64::from).collect();
        if let Ok(r) = shapiro_wilk(&y) {
            prop_assert!(r.w > 0.0 && r.w <= 1.0);
            prop_assert!((0.0..=1.0).contains(&r.p_value));
        }
    }
}
