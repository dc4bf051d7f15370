//! Standard normal helpers.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x - LN_SQRT_2PI).exp()
}

pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `ln Φ(x)`, accurate far into the lower tail.
pub fn ln_cdf(x: f64) -> f64 {
    if x > -30.0 {
        return cdf(x).ln();
    }
    // Mills-ratio asymptotic series.
    let x2 = x * x;
    let series = 1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2);
    -0.5 * x2 - (-x).ln() - LN_SQRT_2PI + series.ln()
}

pub fn quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// `Z_a`, the upper-`a` critical value (the `1-a` quantile).
pub fn upper_critical(a: f64) -> f64 {
    quantile(1.0 - a)
}
