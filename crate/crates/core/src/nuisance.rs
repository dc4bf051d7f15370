//! Nuisance estimates: outcome forests per arm and a constant propensity.
//!
//! `θ̂(x)` is the difference of the linked arm means, so the induced rule
//! `1{θ̂(x) > 0}` compares the two arm forests on the link scale.

use crate::error::{Error, Result};
use crate::forest::{fit_forest, ForestParams, RegressionForest, TrainingSet};
use crate::rng::derive_seed;
use crate::types::{LinkFunction, Observation, TestConfig};

pub const PROPENSITY_CLIP: (f64, f64) = (0.01, 0.99);

/// Everything the AIPW contrast needs at one covariate vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastInputs {
    /// Treatment assigned by the (estimated) optimal rule.
    pub rule: u8,
    /// `E[Y | A=0, x]` on the mean scale.
    pub mean0: f64,
    /// `E[Y | A=1, x]` on the mean scale.
    pub mean1: f64,
    /// `P(A=1 | x)`.
    pub propensity: f64,
}

/// Source of nuisance values for the AIPW contrast. Implemented by fitted
/// models and by the oracle nuisances of the simulation models.
pub trait Nuisance: Sync {
    fn inputs(&self, x: &[f64]) -> ContrastInputs;

    fn inputs_many(&self, xs: &[&[f64]]) -> Vec<ContrastInputs> {
        xs.iter().map(|x| self.inputs(x)).collect()
    }

    /// Inputs at the observations the nuisances were estimated from. Fitted
    /// models answer with out-of-sample values here.
    fn history_inputs(&self, history: &[Observation]) -> Vec<ContrastInputs> {
        let xs: Vec<&[f64]> = history.iter().map(|o| o.x.as_slice()).collect();
        self.inputs_many(&xs)
    }
}

#[derive(Debug, Clone)]
pub struct NuisanceModel {
    pub m0: RegressionForest,
    pub m1: RegressionForest,
    pub p_hat: f64,
    pub link: LinkFunction,
    pub clamp_eps: f64,
}

pub fn estimate_propensity(history: &[Observation]) -> Result<f64> {
    if history.is_empty() {
        return Err(Error::EmptyData("propensity needs at least one observation"));
    }
    let treated = history.iter().filter(|o| o.treated()).count();
    Ok((treated as f64 / history.len() as f64).clamp(PROPENSITY_CLIP.0, PROPENSITY_CLIP.1))
}

fn arm_set(history: &[Observation], arm: u8) -> Result<TrainingSet> {
    TrainingSet::from_rows(history.iter().filter(|o| o.a == arm).map(|o| (o.x.as_slice(), o.y)))
}

/// Fits both arm forests with seeds derived from `cfg.forest.seed`.
pub fn fit_nuisance(history: &[Observation], cfg: &TestConfig) -> Result<NuisanceModel> {
    fit_nuisance_seeded(history, cfg, cfg.forest.seed)
}

pub fn fit_nuisance_seeded(history: &[Observation], cfg: &TestConfig, seed: u64) -> Result<NuisanceModel> {
    let needed = cfg.forest.min_leaf;
    for arm in [0u8, 1] {
        let rows = history.iter().filter(|o| o.a == arm).count();
        if rows == 0 || rows < needed {
            return Err(Error::DegenerateArm { arm, rows, needed: needed.max(1) });
        }
    }
    let params = |arm: u64| ForestParams { seed: derive_seed(seed, arm), ..cfg.forest.clone() };
    let m0 = fit_forest(&arm_set(history, 0)?, &params(0))?;
    let m1 = fit_forest(&arm_set(history, 1)?, &params(1))?;
    Ok(NuisanceModel { m0, m1, p_hat: estimate_propensity(history)?, link: cfg.link, clamp_eps: cfg.clamp_eps })
}

impl NuisanceModel {
    /// Arm means, clamped for the logit link.
    pub fn arm_means(&self, x: &[f64]) -> (f64, f64) {
        let m0 = self.m0.predict_unchecked(x);
        let m1 = self.m1.predict_unchecked(x);
        (self.link.clamp_mean(m0, self.clamp_eps), self.link.clamp_mean(m1, self.clamp_eps))
    }

    pub fn theta(&self, x: &[f64]) -> f64 {
        let (m0, m1) = self.arm_means(x);
        theta_from_means(self.link, m0, m1, self.clamp_eps)
    }

    pub fn rule(&self, x: &[f64]) -> u8 {
        u8::from(self.theta(x) > 0.0)
    }

    pub fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.m0.p() {
            return Err(Error::DimensionMismatch { expected: self.m0.p(), got: x.len() });
        }
        Ok(())
    }
}

pub fn theta_from_means(link: LinkFunction, mean0: f64, mean1: f64, clamp_eps: f64) -> f64 {
    match link {
        LinkFunction::Identity => mean1 - mean0,
        LinkFunction::Logit => link.link(mean1, clamp_eps) - link.link(mean0, clamp_eps),
    }
}

pub fn estimate_theta(model: &NuisanceModel, x: &[f64]) -> Result<f64> {
    model.check_dim(x)?;
    Ok(model.theta(x))
}

/// `1{θ̂(x) > 0}`; a zero effect assigns control.
pub fn optimal_rule(model: &NuisanceModel, x: &[f64]) -> Result<u8> {
    Ok(rule_from_theta(estimate_theta(model, x)?))
}

pub fn rule_from_theta(theta: f64) -> u8 {
    u8::from(theta > 0.0)
}

impl Nuisance for NuisanceModel {
    fn inputs(&self, x: &[f64]) -> ContrastInputs {
        let (mean0, mean1) = self.arm_means(x);
        let rule = rule_from_theta(theta_from_means(self.link, mean0, mean1, self.clamp_eps));
        ContrastInputs { rule, mean0, mean1, propensity: self.p_hat }
    }

    fn inputs_many(&self, xs: &[&[f64]]) -> Vec<ContrastInputs> {
        self.assemble(self.m0.predict_rows(xs), self.m1.predict_rows(xs))
    }

    /// Each row's own-arm mean is the out-of-bag prediction of that arm's
    /// forest; the other arm's forest never saw the row. Falls back to
    /// plain predictions when `history` is not the training data.
    fn history_inputs(&self, history: &[Observation]) -> Vec<ContrastInputs> {
        let xs: Vec<&[f64]> = history.iter().map(|o| o.x.as_slice()).collect();
        let arm_rows = |arm: u8| -> Vec<&[f64]> {
            history.iter().filter(|o| o.a == arm).map(|o| o.x.as_slice()).collect()
        };
        let (Ok(oob0), Ok(oob1)) = (self.m0.predict_oob(&arm_rows(0)), self.m1.predict_oob(&arm_rows(1))) else {
            return self.inputs_many(&xs);
        };
        let mut m0 = self.m0.predict_rows(&xs);
        let mut m1 = self.m1.predict_rows(&xs);
        let (mut i0, mut i1) = (oob0.into_iter(), oob1.into_iter());
        for (o, (m0, m1)) in history.iter().zip(m0.iter_mut().zip(m1.iter_mut())) {
            match o.a {
                0 => *m0 = i0.next().unwrap_or(*m0),
                _ => *m1 = i1.next().unwrap_or(*m1),
            }
        }
        self.assemble(m0, m1)
    }
}

impl NuisanceModel {
    fn assemble(&self, m0: Vec<f64>, m1: Vec<f64>) -> Vec<ContrastInputs> {
        m0.into_iter()
            .zip(m1)
            .map(|(m0, m1)| {
                let mean0 = self.link.clamp_mean(m0, self.clamp_eps);
                let mean1 = self.link.clamp_mean(m1, self.clamp_eps);
                let rule = rule_from_theta(theta_from_means(self.link, mean0, mean1, self.clamp_eps));
                ContrastInputs { rule, mean0, mean1, propensity: self.p_hat }
            })
            .collect()
    }
}
