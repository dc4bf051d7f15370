//! Domain types shared across the crate: observations, link functions,
//! stream schemas, test configuration and verdicts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::ForestParams;

/// One experimental unit: outcome, binary treatment indicator, covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub y: f64,
    pub a: u8,
    pub x: Vec<f64>,
}

impl Observation {
    pub fn new(y: f64, a: u8, x: Vec<f64>) -> Self {
        Self { y, a, x }
    }

    pub fn treated(&self) -> bool {
        self.a == 1
    }
}

/// Link between the conditional outcome mean and the additive predictor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LinkFunction {
    Identity,
    #[default]
    Logit,
}

impl LinkFunction {
    /// Maps the linear predictor back to the mean scale.
    pub fn inverse(self, eta: f64) -> Result<f64> {
        apply_inverse_link(self, eta)
    }

    /// Maps a mean onto the link scale; logit means are clamped first.
    pub fn link(self, mu: f64, clamp_eps: f64) -> f64 {
        apply_link(self, mu, clamp_eps)
    }

    /// Clamps a mean into the range where the link is finite.
    pub fn clamp_mean(self, mu: f64, clamp_eps: f64) -> f64 {
        match self {
            LinkFunction::Identity => mu,
            LinkFunction::Logit => mu.clamp(clamp_eps, 1.0 - clamp_eps),
        }
    }
}

pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

pub fn apply_inverse_link(link: LinkFunction, eta: f64) -> Result<f64> {
    if !eta.is_finite() {
        return Err(Error::InvalidInput(format!("linear predictor must be finite, got {eta}")));
    }
    Ok(match link {
        LinkFunction::Identity => eta,
        LinkFunction::Logit => logistic(eta),
    })
}

pub fn apply_link(link: LinkFunction, mu: f64, clamp_eps: f64) -> f64 {
    match link {
        LinkFunction::Identity => mu,
        LinkFunction::Logit => {
            let mu = mu.clamp(clamp_eps, 1.0 - clamp_eps);
            (mu / (1.0 - mu)).ln()
        }
    }
}

/// Shape every observation of a stream is checked against.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamSchema {
    pub p: usize,
    pub link: LinkFunction,
}

pub fn validate_stream_header(p: usize, link: LinkFunction) -> Result<StreamSchema> {
    if p == 0 {
        return Err(Error::InvalidInput("stream must declare at least one covariate".into()));
    }
    Ok(StreamSchema { p, link })
}

impl StreamSchema {
    /// Builds a schema from a CSV header of the form `y,a,x1,...,xp`.
    pub fn from_header<S: AsRef<str>>(fields: &[S], link: LinkFunction) -> Result<Self> {
        let names: Vec<&str> = fields.iter().map(|s| s.as_ref().trim()).collect();
        let mut seen = std::collections::HashSet::new();
        for name in &names {
            if !seen.insert(*name) {
                return Err(Error::Schema { row: 1, reason: format!("duplicate header field `{name}`") });
            }
        }
        if names.len() < 2 || names[0] != "y" || names[1] != "a" {
            return Err(Error::Schema {
                row: 1,
                reason: "header must start with `y,a` followed by x1..xp".into(),
            });
        }
        for (j, name) in names[2..].iter().enumerate() {
            let want = format!("x{}", j + 1);
            if *name != want {
                return Err(Error::Schema {
                    row: 1,
                    reason: format!("expected covariate column `{want}`, found `{name}`"),
                });
            }
        }
        validate_stream_header(names.len() - 2, link)
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["y".to_string(), "a".to_string()];
        h.extend((1..=self.p).map(|j| format!("x{j}")));
        h
    }

    /// Validates one observation; `row` is only used for error reporting.
    pub fn check(&self, obs: &Observation, row: usize) -> Result<()> {
        let fail = |reason: String| Err(Error::Schema { row, reason });
        if obs.x.len() != self.p {
            return fail(format!("expected {} covariates, got {}", self.p, obs.x.len()));
        }
        if obs.a > 1 {
            return fail(format!("treatment indicator must be 0 or 1, got {}", obs.a));
        }
        if !obs.y.is_finite() {
            return fail("outcome is not finite".into());
        }
        if self.link == LinkFunction::Logit && obs.y != 0.0 && obs.y != 1.0 {
            return fail(format!("logit link requires a binary outcome, got {}", obs.y));
        }
        if let Some(j) = obs.x.iter().position(|v| !v.is_finite()) {
            return fail(format!("covariate x{} is not finite", j + 1));
        }
        Ok(())
    }
}

/// What to do with a batch whose conditional standard deviation estimate is zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ZeroVariancePolicy {
    /// Use `sigma_floor` in place of the zero estimate.
    #[default]
    Floor,
    /// Leave the accumulators untouched for this batch.
    Skip,
}

/// Constants of one sequential test run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TestConfig {
    pub alpha: f64,
    /// Batch size `m`.
    #[serde(alias = "m")]
    pub batch_size: usize,
    /// Initial batch size `l`.
    #[serde(alias = "l")]
    pub initial_batch_size: usize,
    /// Failure time `M`, in total samples.
    #[serde(alias = "M")]
    pub failure_time: usize,
    /// Variance of the truncated-normal mixture density.
    pub tau2: f64,
    pub link: LinkFunction,
    pub forest: ForestParams,
    pub seed: u64,
    pub clamp_eps: f64,
    pub sigma_floor: f64,
    pub zero_variance: ZeroVariancePolicy,
    /// Depth of the classification tree describing the subgroup.
    pub rule_tree_depth: usize,
}

impl Default for TestConfig {
    fn default() -> Self {
        Self::simulation()
    }
}

impl TestConfig {
    /// α=.05, m=20, l=300, M=2300, τ²=1.
    pub fn simulation() -> Self {
        Self {
            alpha: 0.05,
            batch_size: 20,
            initial_batch_size: 300,
            failure_time: 2300,
            tau2: 1.0,
            link: LinkFunction::Logit,
            forest: ForestParams::default(),
            seed: 0,
            clamp_eps: 1e-3,
            sigma_floor: 1e-8,
            zero_variance: ZeroVariancePolicy::Floor,
            rule_tree_depth: 3,
        }
    }

    /// α=.05, l=m=200, M=50000.
    pub fn data_workflow() -> Self {
        Self { batch_size: 200, initial_batch_size: 200, failure_time: 50_000, ..Self::simulation() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidInput(msg));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0,1), got {}", self.alpha));
        }
        if self.batch_size == 0 || self.initial_batch_size == 0 {
            return bad("batch sizes must be positive".into());
        }
        if self.failure_time <= self.initial_batch_size {
            return bad(format!(
                "failure time {} must exceed the initial batch size {}",
                self.failure_time, self.initial_batch_size
            ));
        }
        if !(self.tau2 > 0.0 && self.tau2.is_finite()) {
            return bad(format!("tau2 must be positive, got {}", self.tau2));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 0.5) {
            return bad(format!("clamp_eps must lie in (0, 0.5), got {}", self.clamp_eps));
        }
        if !(self.sigma_floor > 0.0) {
            return bad("sigma_floor must be positive".into());
        }
        if self.rule_tree_depth == 0 {
            return bad("rule_tree_depth must be at least 1".into());
        }
        self.forest.validate()
    }

    pub fn rejection_threshold(&self) -> f64 {
        1.0 / self.alpha
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    Running,
    Reject,
    AcceptAtFailureTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub decision: Decision,
    /// Total samples consumed when the decision was made.
    pub stop_sample_size: usize,
    /// Batch count at the stop.
    pub k_stop: usize,
}

impl Verdict {
    pub fn running() -> Self {
        Self { decision: Decision::Running, stop_sample_size: 0, k_stop: 0 }
    }

    pub fn rejected(&self) -> bool {
        self.decision == Decision::Reject
    }
}
