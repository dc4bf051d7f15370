//! Synthetic click-stream data.
//!
//! Four covariates `x1 ~ N(0,1)`, `x2 ~ U[0,1]`, `x3 ~ U[0,1.5]`,
//! `x4 ~ Ber(0.3)`, a binary click outcome with a base rate near 5% and a
//! treatment that raises the click log-odds by [`PLANTED_LIFT`] on
//! `{x3 < 0.7} ∪ {x1 ≥ 0}` and lowers it by [`PLANTED_HARM`] elsewhere.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use subtle_core::rng::rng_from;
use subtle_core::types::logistic;
use subtle_core::Observation;

pub const FIXTURE_SEED: u64 = 2;
pub const PLANTED_LIFT: f64 = 0.5;
pub const PLANTED_HARM: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum FixtureKind {
    /// Two arms with the planted subgroup.
    Planted,
    /// Two arms, no treatment effect anywhere.
    Null,
    /// Control rows only, as input for an A/A test.
    SingleArm,
}

pub fn in_planted_region(x: &[f64]) -> bool {
    x[2] < 0.7 || x[0] >= 0.0
}

fn baseline(x: &[f64]) -> f64 {
    -3.0 + 0.4 * x[1] - 0.3 * x[3]
}

/// Treatment effect on the log-odds scale.
pub fn planted_effect(x: &[f64]) -> f64 {
    effect_with(x, PLANTED_LIFT, PLANTED_HARM)
}

fn effect_with(x: &[f64], lift: f64, harm: f64) -> f64 {
    if in_planted_region(x) { lift } else { -harm }
}

pub fn generate(kind: FixtureKind, rows: usize, seed: u64) -> Vec<Observation> {
    generate_with_effects(kind, rows, seed, PLANTED_LIFT, PLANTED_HARM)
}

/// As [`generate`] with explicit log-odds lift and harm for the planted kind.
pub fn generate_with_effects(kind: FixtureKind, rows: usize, seed: u64, lift: f64, harm: f64) -> Vec<Observation> {
    let mut rng = rng_from(seed, 0);
    (0..rows)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            let x = vec![
                z,
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.5),
                f64::from(u8::from(rng.random_bool(0.3))),
            ];
            let a = match kind {
                FixtureKind::SingleArm => 0,
                _ => u8::from(rng.random_bool(0.5)),
            };
            let effect = if kind == FixtureKind::Planted { effect_with(&x, lift, harm) } else { 0.0 };
            let p = logistic(baseline(&x) + effect * f64::from(a));
            let y = f64::from(u8::from(rng.random::<f64>() < p));
            Observation::new(y, a, x)
        })
        .collect()
}
