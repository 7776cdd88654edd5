use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

pub fn norm_cdf(x: f64) -> f64 {
    std_normal().cdf(x)
}

pub fn norm_sf(x: f64) -> f64 {
    std_normal().sf(x)
}

pub fn norm_ppf(p: f64) -> f64 {
    std_normal().inverse_cdf(p)
}

/// Two-sided p-value for a standard-normal statistic.
pub fn two_sided_normal_p(z: f64) -> f64 {
    (2.0 * norm_sf(z.abs())).clamp(0.0, 1.0)
}

/// Two-sided p-value for a Student-t statistic with `df` degrees of freedom.
pub fn two_sided_t_p(t: f64, df: f64) -> f64 {
    if !df.is_finite() || df <= 0.0 {
        return two_sided_normal_p(t);
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("valid t distribution");
    (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0)
}

pub fn t_ppf(p: f64, df: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df)
        .expect("valid t distribution")
        .inverse_cdf(p)
}
