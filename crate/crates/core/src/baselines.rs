//! Comparators: the mixture SPRT on paired streams and the fixed-horizon
//! version of the subgroup test.
//!
//! For pair differences `Z_i ~ N(θ, v)` and the mixture `θ ~ N(0, τ²)`,
//!
//! `Λ_n = sqrt(v/(v+nτ²))·exp{τ²S_n²/(2v(v+nτ²))}`, `S_n = Σ Z_i`.
//!
//! Bernoulli pairs use the same expression with the pooled plug-in variance
//! `v̂ = 2p̄(1−p̄)`, `p̄` the success rate over both arms, which is the
//! variance of a pair difference under the null. The statistic is undefined
//! while `v̂ = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normal;
use crate::quadrature::{integrate_to_infinity, QuadOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MsprtState {
    pub n: usize,
    pub sum: f64,
    pub sum_sq: f64,
    pub successes0: usize,
    pub successes1: usize,
    pub tau2: f64,
    pub alpha: f64,
    /// `None` while the statistic is undefined (no pairs, or zero plug-in variance).
    pub lambda: Option<f64>,
}

impl MsprtState {
    pub fn new(tau2: f64, alpha: f64) -> Result<Self> {
        if !(tau2 > 0.0 && tau2.is_finite()) {
            return Err(Error::InvalidInput(format!("tau2 must be positive, got {tau2}")));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidInput(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        Ok(Self { n: 0, sum: 0.0, sum_sq: 0.0, successes0: 0, successes1: 0, tau2, alpha, lambda: None })
    }

    /// `Λ_n ≥ 1/α`.
    pub fn crossed(&self) -> bool {
        self.lambda.is_some_and(|l| l >= 1.0 / self.alpha)
    }

    /// Pooled plug-in variance of a Bernoulli pair difference.
    pub fn bernoulli_variance(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let p = (self.successes0 + self.successes1) as f64 / (2 * self.n) as f64;
        2.0 * p * (1.0 - p)
    }

    fn push(&mut self, y0: f64, y1: f64) {
        let z = y1 - y0;
        self.n += 1;
        self.sum += z;
        self.sum_sq += z * z;
    }
}

pub fn ln_msprt_normal_lambda(n: usize, sum: f64, v: f64, tau2: f64) -> f64 {
    let nf = n as f64;
    let denom = v + nf * tau2;
    0.5 * (v / denom).ln() + tau2 * sum * sum / (2.0 * v * denom)
}

pub fn msprt_normal_lambda(n: usize, sum: f64, v: f64, tau2: f64) -> f64 {
    ln_msprt_normal_lambda(n, sum, v, tau2).exp()
}

/// `∫ exp{θS/v − nθ²/(2v)} φ(θ; 0, τ²) dθ` evaluated numerically.
pub fn msprt_quadrature(n: usize, sum: f64, v: f64, tau2: f64) -> Result<f64> {
    let nf = n as f64;
    let ln_f = |t: f64| t * sum / v - nf * t * t / (2.0 * v) - t * t / (2.0 * tau2);
    let precision = nf / v + 1.0 / tau2;
    let mode = (sum / v) / precision;
    let width = precision.sqrt().recip();
    let shift = ln_f(mode);
    let opts = QuadOptions { rel_tol: 1e-11, abs_tol: 0.0, max_intervals: 4000 };
    let right = integrate_to_infinity(|t| (ln_f(t) - shift).exp(), mode, width, opts)?.value;
    let left = integrate_to_infinity(|t| (ln_f(2.0 * mode - t) - shift).exp(), mode, width, opts)?.value;
    let norm = (2.0 * std::f64::consts::PI * tau2).sqrt();
    let out = (left + right) / norm * shift.exp();
    if !out.is_finite() {
        return Err(Error::Quadrature("mSPRT mixture integral overflowed".into()));
    }
    Ok(out)
}

/// Adds one pair with normal outcomes of known per-arm variance.
pub fn msprt_step_normal(state: &MsprtState, pair: (f64, f64), known_var: f64) -> Result<MsprtState> {
    if !(known_var > 0.0 && known_var.is_finite()) {
        return Err(Error::InvalidInput(format!("known variance must be positive, got {known_var}")));
    }
    if !(pair.0.is_finite() && pair.1.is_finite()) {
        return Err(Error::InvalidInput("pair values must be finite".into()));
    }
    let mut s = *state;
    s.push(pair.0, pair.1);
    s.lambda = Some(msprt_normal_lambda(s.n, s.sum, 2.0 * known_var, s.tau2));
    Ok(s)
}

/// Adds one pair of 0/1 outcomes.
pub fn msprt_step_bernoulli(state: &MsprtState, pair: (u8, u8)) -> Result<MsprtState> {
    if pair.0 > 1 || pair.1 > 1 {
        return Err(Error::InvalidInput(format!("Bernoulli pair must be 0/1, got {pair:?}")));
    }
    let mut s = *state;
    s.push(f64::from(pair.0), f64::from(pair.1));
    s.successes0 += usize::from(pair.0);
    s.successes1 += usize::from(pair.1);
    let v = s.bernoulli_variance();
    s.lambda = (v > 0.0).then(|| msprt_normal_lambda(s.n, s.sum, v, s.tau2));
    Ok(s)
}

/// Real-valued horizon `σ²(Z_α + Z_{1−power})²/Δ²` in batches.
pub fn fixed_horizon_batches(sigma: f64, delta: f64, alpha: f64, power: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidInput(format!("sigma must be positive, got {sigma}")));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidInput(format!("delta must be positive, got {delta}")));
    }
    for (name, v) in [("alpha", alpha), ("power", power)] {
        if !(v > 0.0 && v < 1.0) {
            return Err(Error::InvalidInput(format!("{name} must lie in (0, 1), got {v}")));
        }
    }
    let z = normal::upper_critical(alpha) + normal::upper_critical(1.0 - power);
    Ok(sigma * sigma * z * z / (delta * delta))
}

pub fn fixed_horizon_k(sigma: f64, delta: f64, alpha: f64, power: f64) -> Result<usize> {
    let k = fixed_horizon_batches(sigma, delta, alpha, power)?;
    if k > 1e15 {
        return Err(Error::InvalidInput(format!("horizon of {k:e} batches is not usable")));
    }
    Ok((k.ceil() as usize).max(1))
}

/// `R_k > Z_α`.
pub fn fixed_horizon_decide(r_k: f64, alpha: f64) -> bool {
    r_k > normal::upper_critical(alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use rand::Rng as _;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn single_zero_difference() {
        let s = MsprtState::new(1.0, 0.05).unwrap();
        let s = msprt_step_normal(&s, (0.3, 0.3), 0.5).unwrap();
        assert!((s.lambda.unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!((msprt_quadrature(1, 0.0, 1.0, 1.0).unwrap() - 0.5f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn closed_form_matches_quadrature() {
        let mut rng = rng_from(5, 0);
        for _ in 0..300 {
            let n = rng.random_range(1..5000);
            let v = rng.random_range(0.01..4.0);
            let tau2 = 10f64.powf(rng.random_range(-3.0..1.0));
            let sum = rng.random_range(-4.0..4.0) * (n as f64 * v).sqrt();
            let cf = msprt_normal_lambda(n, sum, v, tau2);
            let q = msprt_quadrature(n, sum, v, tau2).unwrap();
            assert!((cf - q).abs() <= 1e-6 * cf, "n={n} sum={sum} v={v} tau2={tau2}: {cf} vs {q}");
        }
    }

    #[test]
    fn bernoulli_statistic() {
        let mut s = MsprtState::new(1.0, 0.05).unwrap();
        assert!(s.lambda.is_none());
        s = msprt_step_bernoulli(&s, (0, 0)).unwrap();
        assert!(s.lambda.is_none(), "no variation yet");
        for pair in [(1, 1), (0, 0), (1, 1), (0, 1), (1, 0)] {
            s = msprt_step_bernoulli(&s, pair).unwrap();
        }
        // equal success counts: S = 0 so Λ = sqrt(v/(v+nτ²)) < 1
        let v = s.bernoulli_variance();
        assert!((v - 2.0 * (0.5 * 0.5)).abs() < 1e-12);
        let lam = s.lambda.unwrap();
        assert!(lam < 1.0);
        assert!((lam - msprt_quadrature(s.n, 0.0, v, 1.0).unwrap()).abs() < 1e-9);
        assert!(msprt_step_bernoulli(&s, (2, 0)).is_err());
    }

    #[test]
    fn equal_proportions_never_exceed_one() {
        let mut s = MsprtState::new(0.5, 0.05).unwrap();
        for i in 0..200 {
            let y = u8::from(i % 3 == 0);
            s = msprt_step_bernoulli(&s, (y, y)).unwrap();
            if let Some(l) = s.lambda {
                assert!(l <= 1.0);
            }
        }
    }

    #[test]
    fn normal_errors() {
        let s = MsprtState::new(1.0, 0.05).unwrap();
        assert!(msprt_step_normal(&s, (0.0, 1.0), 0.0).is_err());
        assert!(msprt_step_normal(&s, (0.0, f64::NAN), 1.0).is_err());
        assert!(MsprtState::new(0.0, 0.05).is_err());
    }

    #[test]
    fn lambda_stays_positive() {
        let mut rng = rng_from(6, 0);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut s = MsprtState::new(1.0, 0.05).unwrap();
        for _ in 0..20_000 {
            s = msprt_step_normal(&s, (noise.sample(&mut rng), noise.sample(&mut rng) + 3.0), 1.0).unwrap();
            assert!(s.lambda.unwrap() > 0.0);
        }
    }

    #[test]
    fn horizon_examples() {
        assert_eq!(fixed_horizon_k(1.0, 0.5, 0.05, 0.8).unwrap(), 25);
        assert_eq!(fixed_horizon_k(1.0, 1.0, 0.05, 0.5).unwrap(), 3);
        let a = fixed_horizon_batches(1.3, 0.2, 0.05, 0.9).unwrap();
        let b = fixed_horizon_batches(1.3, 0.4, 0.05, 0.9).unwrap();
        assert!((a / b - 4.0).abs() < 1e-12);
        assert!(fixed_horizon_k(1.0, 0.0, 0.05, 0.8).is_err());
        assert!(fixed_horizon_k(1.0, 0.5, 0.0, 0.8).is_err());
    }

    #[test]
    fn horizon_decision_is_strict() {
        let z = normal::upper_critical(0.05);
        assert!((z - 1.644_853_626_951_472).abs() < 1e-12);
        assert!(!fixed_horizon_decide(z, 0.05));
        assert!(!fixed_horizon_decide(1.6448, 0.05));
        // 1.6449 lies just above Z_0.05
        assert!(fixed_horizon_decide(1.6449, 0.05));
        assert!(fixed_horizon_decide(2.0, 0.05));
        assert!(!fixed_horizon_decide(-1.0, 0.3));
    }
}
