//! Central and noncentral t helpers.

use statrs::distribution::{Continuous, ContinuousCDF, Normal, StudentsT};
use statrs::function::gamma::ln_gamma;

use crate::error::{PumpError, Result};

fn student(df: f64) -> StudentsT {
    StudentsT::new(0.0, 1.0, df).expect("df must be positive")
}

/// Above this the t law is handled through its Cornish-Fisher expansion
/// around the normal; the library's incomplete beta loses accuracy further out.
const NORMAL_LIMIT_DF: f64 = 1e5;

fn cf_terms(z: f64) -> (f64, f64) {
    let z3 = z * z * z;
    ((z3 + z) / 4.0, (5.0 * z3 * z * z + 16.0 * z3 + 3.0 * z) / 96.0)
}

/// t quantile from the normal quantile `z`.
fn cf_quantile(z: f64, df: f64) -> f64 {
    let (g1, g2) = cf_terms(z);
    z + g1 / df + g2 / (df * df)
}

/// Normal deviate with the same tail as `t`.
fn cf_deviate(t: f64, df: f64) -> f64 {
    let (g1, g2) = cf_terms(t);
    let dg1 = (3.0 * t * t + 1.0) / 4.0;
    t - g1 / df + (g1 * dg1 - g2) / (df * df)
}

/// Upper tail probability `Pr(T > t)` of a central t with `df` degrees of freedom.
pub fn t_upper_tail(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if df >= NORMAL_LIMIT_DF {
        return Normal::standard().sf(cf_deviate(t, df));
    }
    student(df).sf(t)
}

/// Upper-tail critical value: the `t` with `Pr(T > t) = upper`.
///
/// Starts from the first Cornish-Fisher term and polishes with Newton steps.
pub fn t_upper_quantile(upper: f64, df: f64) -> f64 {
    if !(upper > 0.0 && upper < 1.0) {
        return if upper <= 0.0 { f64::INFINITY } else { f64::NEG_INFINITY };
    }
    let z = Normal::standard().inverse_cdf(1.0 - upper);
    if df >= NORMAL_LIMIT_DF {
        return cf_quantile(z, df);
    }
    let dist = student(df);
    let mut x = if df < 4.0 { dist.inverse_cdf(1.0 - upper) } else { cf_quantile(z, df) };
    for _ in 0..50 {
        let step = (dist.sf(x) - upper) / dist.pdf(x);
        if !step.is_finite() {
            break;
        }
        x += step;
        if step.abs() <= 1e-14 * x.abs().max(1.0) {
            break;
        }
    }
    x
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Raw p-value of a t statistic.
///
/// Two-sided tests use `2 Pr(T >= |t|)`; one-sided tests look at the upper tail only.
pub fn t_pvalue(t: f64, df: f64, two_sided: bool) -> f64 {
    if two_sided {
        (2.0 * t_upper_tail(t.abs(), df)).min(1.0)
    } else {
        t_upper_tail(t, df)
    }
}

/// Rejection probability of a single t test whose statistic is a central t
/// shifted by `shift`.
pub fn shifted_t_power(shift: f64, df: f64, alpha: f64, two_sided: bool) -> Result<f64> {
    if !(df > 0.0) {
        return Err(PumpError::Degenerate(format!("df must be positive, got {df}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PumpError::field("alpha", "alpha must be in (0,1)"));
    }
    Ok(if two_sided {
        let crit = t_upper_quantile(alpha / 2.0, df);
        t_upper_tail(crit - shift, df) + t_upper_tail(crit + shift, df)
    } else {
        t_upper_tail(t_upper_quantile(alpha, df) - shift, df)
    })
}

/// Exact rejection probability of a single t test whose statistic is
/// noncentral t with noncentrality `shift`.
///
/// Integrates the normal tail over the distribution of the scale factor
/// `s = sqrt(W / df)`, `W ~ chi-square(df)`, with composite Simpson.
pub fn noncentral_t_power(shift: f64, df: f64, alpha: f64, two_sided: bool) -> Result<f64> {
    if !(df > 0.0) {
        return Err(PumpError::Degenerate(format!("df must be positive, got {df}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(PumpError::field("alpha", "alpha must be in (0,1)"));
    }
    let crit = if two_sided {
        t_upper_quantile(alpha / 2.0, df)
    } else {
        t_upper_quantile(alpha, df)
    };
    let half = df / 2.0;
    let log_norm = std::f64::consts::LN_2 + half * half.ln() - ln_gamma(half);
    let density = |s: f64| -> f64 {
        if s <= 0.0 {
            return if (df - 1.0).abs() < 1e-12 { log_norm.exp() } else { 0.0 };
        }
        (log_norm + (df - 1.0) * s.ln() - df * s * s / 2.0).exp()
    };
    let reject = |s: f64| -> f64 {
        let upper = 1.0 - normal_cdf(crit * s - shift);
        if two_sided {
            upper + normal_cdf(-crit * s - shift)
        } else {
            upper
        }
    };
    let spread = 12.0 / (2.0 * df).sqrt();
    let lo = (1.0 - spread).max(0.0);
    let hi = 1.0 + spread.max(1.0) * if df < 3.0 { 1.5 } else { 1.0 };
    let panels = 4096;
    let h = (hi - lo) / panels as f64;
    let (mut mass, mut acc) = (0.0, 0.0);
    for i in 0..=panels {
        let s = lo + h * i as f64;
        let w = if i == 0 || i == panels {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        let f = density(s);
        mass += w * f;
        acc += w * f * reject(s);
    }
    Ok((acc / mass).clamp(0.0, 1.0))
}
