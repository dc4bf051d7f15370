//! Globally adaptive Gauss–Kronrod (7/15) integration.

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
/// Gauss weights for the odd Kronrod abscissae `XGK[1], XGK[3], XGK[5], XGK[7]`.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-10, abs_tol: 0.0, max_intervals: 2000 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
    pub intervals: usize,
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn kronrod15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<Piece> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    let value = kronrod * half;
    let error = ((kronrod - gauss) * half).abs();
    if !value.is_finite() || !error.is_finite() {
        return Err(Error::Quadrature(format!("non-finite integrand on [{a}, {b}]")));
    }
    Ok(Piece { a, b, value, error })
}

/// Integrates `f` over `[a, b]`, bisecting the piece with the largest error
/// estimate until the summed estimate meets the tolerance.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<Integral> {
    if !(a.is_finite() && b.is_finite()) || b < a {
        return Err(Error::Quadrature(format!("invalid interval [{a}, {b}]")));
    }
    if a == b {
        return Ok(Integral { value: 0.0, error: 0.0, intervals: 0 });
    }
    let mut pieces = vec![kronrod15(&f, a, b)?];
    loop {
        let value: f64 = pieces.iter().map(|p| p.value).sum();
        let error: f64 = pieces.iter().map(|p| p.error).sum();
        if error <= opts.abs_tol.max(opts.rel_tol * value.abs()) {
            return Ok(Integral { value, error, intervals: pieces.len() });
        }
        if pieces.len() >= opts.max_intervals {
            return Err(Error::Quadrature(format!(
                "no convergence after {} intervals (estimate {value:e}, error {error:e})",
                pieces.len()
            )));
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .map(|(i, _)| i)
            .unwrap();
        let Piece { a, b, .. } = pieces.swap_remove(worst);
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            return Err(Error::Quadrature(format!("interval [{a}, {b}] cannot be bisected further")));
        }
        pieces.push(kronrod15(&f, a, mid)?);
        pieces.push(kronrod15(&f, mid, b)?);
    }
}

/// Integrates over `[a, ∞)` through `x = a + scale·t/(1-t)`, `t ∈ [0, 1)`.
pub fn integrate_to_infinity<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    scale: f64,
    opts: QuadOptions,
) -> Result<Integral> {
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Quadrature(format!("invalid scale {scale}")));
    }
    let g = |t: f64| {
        if t >= 1.0 {
            return 0.0;
        }
        let s = 1.0 - t;
        let x = a + scale * t / s;
        if !x.is_finite() {
            return 0.0;
        }
        let v = f(x) * scale / (s * s);
        if v.is_finite() { v } else { f64::NAN }
    };
    integrate(g, 0.0, 1.0, opts)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let r = integrate(|x| 3.0 * x * x, 0.0, 2.0, QuadOptions::default()).unwrap();
        assert!((r.value - 8.0).abs() < 1e-13);
        assert_eq!(r.intervals, 1);
    }

    #[test]
    fn gaussian_tail() {
        let r = integrate_to_infinity(|x| (-0.5 * x * x).exp(), 0.0, 1.0, QuadOptions::default())
            .unwrap();
        let want = (std::f64::consts::PI / 2.0).sqrt();
        assert!((r.value - want).abs() / want < 1e-10);
    }

    #[test]
    fn peaky_integrand_needs_subdivision() {
        let f = |x: f64| 1.0 / (1e-4 + (x - 0.3).powi(2));
        let r = integrate(f, 0.0, 1.0, QuadOptions::default()).unwrap();
        let want = 100.0 * ((0.7f64 / 1e-2).atan() + (0.3f64 / 1e-2).atan());
        assert!((r.value - want).abs() / want < 1e-9);
        assert!(r.intervals > 1);
    }

    #[test]
    fn non_convergence_is_reported() {
        let opts = QuadOptions { max_intervals: 3, ..QuadOptions::default() };
        let err = integrate(|x: f64| x.sqrt().recip(), 1e-300, 1.0, opts).unwrap_err();
        assert!(matches!(err, Error::Quadrature(_)));
        assert!(integrate(|x| x, 1.0, 0.0, QuadOptions::default()).is_err());
    }
}
