//! The mixture statistic `Λ_k`.
//!
//! `Λ_k = ∫ ψ(R_k; aΔ, 1) / ψ(R_k; 0, 1) · π(Δ) dΔ` with `a = S_k/√k`,
//! `S_k = Σ_j σ̂_j⁻¹` and `π` the half-normal density with variance
//! parameter `τ²` on `Δ > 0`. Completing the square gives, with `T = τ·S_k`,
//!
//! `Λ_k = 2·sqrt(k/(k+T²))·exp{(T·R_k)²/(2(T²+k))}·(1 − F(0))`
//!
//! where `F` is the normal CDF with mean `√k·S_k·R_k·τ²/(τ²S_k² + k)` and
//! variance `kτ²/(τ²S_k² + k)`. [`lambda_quadrature`] evaluates the defining
//! integral directly and serves as the reference for [`lambda_closed_form`].

use crate::error::{Error, Result};
use crate::normal;
use crate::quadrature::{integrate, integrate_to_infinity, QuadOptions};

const LN_2: f64 = std::f64::consts::LN_2;

fn check(k: f64, sum_inv_sigma: f64, r_k: f64, tau2: f64) -> Result<()> {
    if !(k >= 1.0 && k.is_finite()) {
        return Err(Error::InvalidInput(format!("k must be at least 1, got {k}")));
    }
    if !(sum_inv_sigma > 0.0 && sum_inv_sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("sum of inverse sigmas must be positive, got {sum_inv_sigma}")));
    }
    if !(tau2 > 0.0 && tau2.is_finite()) {
        return Err(Error::InvalidInput(format!("tau2 must be positive, got {tau2}")));
    }
    if !r_k.is_finite() {
        return Err(Error::InvalidInput("R_k must be finite".into()));
    }
    Ok(())
}

/// Half-normal mixture density on `Δ > 0`.
pub fn mixture_density(delta: f64, tau2: f64) -> f64 {
    if delta <= 0.0 {
        return 0.0;
    }
    2.0 / (2.0 * std::f64::consts::PI * tau2).sqrt() * (-delta * delta / (2.0 * tau2)).exp()
}

/// `ln ψ(R; aΔ, 1) − ln ψ(R; 0, 1)`, evaluated from the two log densities.
pub fn ln_probability_ratio(k: f64, sum_inv_sigma: f64, r_k: f64, delta: f64) -> f64 {
    let mean = sum_inv_sigma / k.sqrt() * delta;
    let ln_alt = -0.5 * (r_k - mean).powi(2);
    let ln_null = -0.5 * r_k * r_k;
    ln_alt - ln_null
}

/// Posterior mean and variance of `Δ` before truncation.
fn posterior(k: f64, sum_inv_sigma: f64, r_k: f64, tau2: f64) -> (f64, f64) {
    let denom = tau2 * sum_inv_sigma * sum_inv_sigma + k;
    (k.sqrt() * sum_inv_sigma * r_k * tau2 / denom, k * tau2 / denom)
}

pub fn ln_lambda_closed_form(k: usize, sum_inv_sigma: f64, r_k: f64, tau2: f64) -> Result<f64> {
    let kf = k as f64;
    check(kf, sum_inv_sigma, r_k, tau2)?;
    let t2 = tau2 * sum_inv_sigma * sum_inv_sigma;
    let (mean, var) = posterior(kf, sum_inv_sigma, r_k, tau2);
    // 1 - F(0) = Φ(mean / sd)
    let ln_tail = normal::ln_cdf(mean / var.sqrt());
    // ln(k/(k+T²)) written to stay accurate when T² ≫ k.
    let ln_shrink = -(t2 / kf).ln_1p();
    Ok(LN_2 + 0.5 * ln_shrink + t2 * r_k * r_k / (2.0 * (t2 + kf)) + ln_tail)
}

pub fn lambda_closed_form(k: usize, sum_inv_sigma: f64, r_k: f64, tau2: f64) -> Result<f64> {
    Ok(ln_lambda_closed_form(k, sum_inv_sigma, r_k, tau2)?.exp())
}

/// Evaluates the defining mixture integral numerically. The integrand is
/// rescaled by its largest value before integration; the piece to the
/// right of the mode is mapped onto `[0, 1)`.
pub fn lambda_quadrature(k: usize, sum_inv_sigma: f64, r_k: f64, tau2: f64) -> Result<f64> {
    let kf = k as f64;
    check(kf, sum_inv_sigma, r_k, tau2)?;
    let ln_integrand =
        |d: f64| ln_probability_ratio(kf, sum_inv_sigma, r_k, d) + mixture_density(d, tau2).ln();

    // Mode and curvature of the log integrand set the scale only.
    let a = sum_inv_sigma / kf.sqrt();
    let precision = a * a + 1.0 / tau2;
    let mode = (a * r_k / precision).max(0.0);
    let width = precision.sqrt().recip();
    let shift = ln_integrand(mode.max(f64::MIN_POSITIVE));
    let f = |d: f64| if d <= 0.0 { 0.0 } else { (ln_integrand(d) - shift).exp() };

    let opts = QuadOptions { rel_tol: 1e-11, abs_tol: 0.0, max_intervals: 4000 };
    let mut total = integrate_to_infinity(f, mode, width, opts)?.value;
    if mode > 0.0 {
        total += integrate(f, 0.0, mode, opts)?.value;
    }
    let out = total * shift.exp();
    if !out.is_finite() {
        return Err(Error::Quadrature(format!("mixture integral overflowed (ln scale {shift})")));
    }
    Ok(out)
}
