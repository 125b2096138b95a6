use crate::error::{Error, Result};

/// Kernel support in seconds; samples at or beyond it are dropped.
pub const HRF_SUPPORT_SECONDS: f64 = 30.0;

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Gamma density with integer shape `a` and scale `b`.
fn gamma_density(t: f64, a: u32, b: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    t.powi(a as i32 - 1) * (-t / b).exp() / (b.powi(a as i32) * factorial(a - 1))
}

/// Canonical double-gamma hemodynamic response: a peak with shape 6 minus a
/// sixth of an undershoot with shape 16 (both with unit scale).
pub fn hrf(t_seconds: f64) -> Result<f64> {
    if !(t_seconds >= 0.0) {
        return Err(Error::usage(format!("hrf time must be non-negative, got {t_seconds}")));
    }
    Ok(gamma_density(t_seconds, 6, 1.0) - gamma_density(t_seconds, 16, 1.0) / 6.0)
}

/// `hrf` sampled every `tr_seconds` from 0 up to the kernel support.
pub fn hrf_kernel(tr_seconds: f64) -> Result<Vec<f64>> {
    if !(tr_seconds > 0.0) {
        return Err(Error::usage(format!("TR must be positive, got {tr_seconds}")));
    }
    let n = (HRF_SUPPORT_SECONDS / tr_seconds).ceil() as usize;
    (0..n).map(|m| hrf(m as f64 * tr_seconds)).collect()
}
