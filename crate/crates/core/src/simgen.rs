//! Simulation models I–V, oracle quantities and the replication runner.
//!
//! Every model has the form `g(E[Y | A, X]) = μ(X) + θ(X)·A` with the logit
//! link and `A ~ Ber(0.5)`. Models I–IV combine two baselines and two
//! interaction effects over the five-covariate law
//!
//! - `X1 ~ Ber(0.5)`, `X2 ~ U[−1, 1]`, `X3, X4, X5 ~ N(0, 1)`
//! - `μ1 = −2 − X1 + X3²`, `μ2 = −1.3 + X1 + 0.5·X2 − X3²`
//! - `θ1 = c·1{X1 + 2·X3 > 0}`, `θ2 = c·1{X2 > 0 or X5 < −0.5}`
//!
//! Model I keeps only `(X1, X3)`. Model V draws 20 covariates and uses
//! `μ = −0.8 + X18 + 0.5·X12 − X3²`, `θ = c·1{X14 > −0.1 and X20 = 1}`.
//!
//! Noise covariates are appended in triples `N(0,1), U[−1,1], Ber(0.5)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aipw::sample_variance;
use crate::baselines::{fixed_horizon_decide, msprt_step_bernoulli, MsprtState};
use crate::error::{Error, Result};
use crate::nuisance::{ContrastInputs, Nuisance};
use crate::rng::{derive_seed, rng_from, Rng};
use crate::sequential::{init_test, TestState};
use crate::types::{logistic, Decision, Observation, TestConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelId {
    I,
    II,
    III,
    IV,
    V,
}

impl ModelId {
    pub const ALL: [ModelId; 5] = [ModelId::I, ModelId::II, ModelId::III, ModelId::IV, ModelId::V];
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelId::I => "I",
            ModelId::II => "II",
            ModelId::III => "III",
            ModelId::IV => "IV",
            ModelId::V => "V",
        };
        f.write_str(s)
    }
}

impl FromStr for ModelId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "I" | "1" => Ok(ModelId::I),
            "II" | "2" => Ok(ModelId::II),
            "III" | "3" => Ok(ModelId::III),
            "IV" | "4" => Ok(ModelId::IV),
            "V" | "5" => Ok(ModelId::V),
            other => Err(Error::InvalidInput(format!("unknown model '{other}' (expected I..V)"))),
        }
    }
}

/// The effect intensities used across the simulation tables.
pub const C_GRID: [f64; 5] = [-1.0, 0.0, 0.6, 0.8, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimModel {
    pub id: ModelId,
    pub c: f64,
    /// Number of appended noise triples.
    pub noise_triples: usize,
}

/// An observation together with both counterfactual means.
#[derive(Debug, Clone, PartialEq)]
pub struct SimObservation {
    pub obs: Observation,
    /// `E[Y*(0) | X]`
    pub mean0: f64,
    /// `E[Y*(1) | X]`
    pub mean1: f64,
}

fn mu1(x1: f64, x3: f64) -> f64 {
    -2.0 - x1 + x3 * x3
}

fn mu2(x1: f64, x2: f64, x3: f64) -> f64 {
    -1.3 + x1 + 0.5 * x2 - x3 * x3
}

fn theta1(c: f64, x1: f64, x3: f64) -> f64 {
    if x1 + 2.0 * x3 > 0.0 { c } else { 0.0 }
}

fn theta2(c: f64, x2: f64, x5: f64) -> f64 {
    if x2 > 0.0 || x5 < -0.5 { c } else { 0.0 }
}

impl SimModel {
    pub fn new(id: ModelId, c: f64) -> Self {
        Self { id, c, noise_triples: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.c.is_finite() {
            return Err(Error::InvalidInput(format!("effect intensity must be finite, got {}", self.c)));
        }
        Ok(())
    }

    pub fn add_noise_covariates(self, triples: usize) -> Self {
        Self { noise_triples: self.noise_triples + triples, ..self }
    }

    /// Covariates entering `μ` or `θ` (plus Model II–IV's inert `X4`).
    pub fn base_p(&self) -> usize {
        match self.id {
            ModelId::I => 2,
            ModelId::II | ModelId::III | ModelId::IV => 5,
            ModelId::V => 20,
        }
    }

    pub fn p(&self) -> usize {
        self.base_p() + 3 * self.noise_triples
    }

    /// Baseline effect on the link scale.
    pub fn mu(&self, x: &[f64]) -> f64 {
        match self.id {
            ModelId::I => mu1(x[0], x[1]),
            ModelId::III => mu1(x[0], x[2]),
            ModelId::II | ModelId::IV => mu2(x[0], x[1], x[2]),
            ModelId::V => -0.8 + x[17] + 0.5 * x[11] - x[2] * x[2],
        }
    }

    /// Interaction effect on the link scale.
    pub fn theta(&self, x: &[f64]) -> f64 {
        let c = self.c;
        match self.id {
            ModelId::I => theta1(c, x[0], x[1]),
            ModelId::IV => theta1(c, x[0], x[2]),
            ModelId::II | ModelId::III => theta2(c, x[1], x[4]),
            ModelId::V => {
                if x[13] > -0.1 && x[19] == 1.0 {
                    c
                } else {
                    0.0
                }
            }
        }
    }

    /// `E[Y | A = a, X = x]`.
    pub fn mean(&self, x: &[f64], a: u8) -> f64 {
        logistic(self.mu(x) + self.theta(x) * f64::from(a))
    }

    pub fn draw_x(&self, rng: &mut Rng) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.p());
        let normal = |rng: &mut Rng| -> f64 { rng.sample(StandardNormal) };
        let bern = |rng: &mut Rng, p: f64| -> f64 { f64::from(u8::from(rng.random_bool(p))) };
        match self.id {
            ModelId::I => {
                x.push(bern(rng, 0.5));
                x.push(normal(rng));
            }
            ModelId::II | ModelId::III | ModelId::IV => {
                x.push(bern(rng, 0.5));
                x.push(rng.random_range(-1.0..=1.0));
                for _ in 0..3 {
                    x.push(normal(rng));
                }
            }
            ModelId::V => {
                for r in 1..=5 {
                    x.push(0.2 * r as f64 - 0.6 + normal(rng));
                }
                // second parameter read as a variance
                for r in 6..=10 {
                    x.push(0.2 * r as f64 - 1.6 + std::f64::consts::SQRT_2 * normal(rng));
                }
                for r in 11..=13 {
                    let half = 0.5 * r as f64 - 5.0;
                    x.push(rng.random_range(-half..=half));
                }
                x.push(rng.random_range(-0.5..=1.5));
                x.push(rng.random_range(-1.5..=0.5));
                for r in 16..=20 {
                    x.push(bern(rng, 0.2 * r as f64 - 3.1));
                }
            }
        }
        for _ in 0..self.noise_triples {
            x.push(normal(rng));
            x.push(rng.random_range(-1.0..=1.0));
            x.push(bern(rng, 0.5));
        }
        x
    }

    pub fn draw_one(&self, rng: &mut Rng) -> SimObservation {
        let x = self.draw_x(rng);
        let a = u8::from(rng.random_bool(0.5));
        let mean0 = self.mean(&x, 0);
        let mean1 = self.mean(&x, 1);
        let p = if a == 1 { mean1 } else { mean0 };
        let y = f64::from(u8::from(rng.random::<f64>() < p));
        SimObservation { obs: Observation::new(y, a, x), mean0, mean1 }
    }

    pub fn draw_batch(&self, m: usize, rng: &mut Rng) -> Vec<SimObservation> {
        (0..m).map(|_| self.draw_one(rng)).collect()
    }

    pub fn draw_observations(&self, m: usize, rng: &mut Rng) -> Vec<Observation> {
        (0..m).map(|_| self.draw_one(rng).obs).collect()
    }

    /// True nuisances: arm means, propensity 0.5 and the rule `1{θ > 0}`.
    pub fn oracle(&self) -> OracleNuisance {
        OracleNuisance { model: *self, propensity: 0.5, outcome: OracleOutcome::True }
    }
}

/// Outcome model handed to the contrast by [`OracleNuisance`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OracleOutcome {
    True,
    /// Both arm means replaced by a constant.
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleNuisance {
    pub model: SimModel,
    pub propensity: f64,
    pub outcome: OracleOutcome,
}

impl Nuisance for OracleNuisance {
    fn inputs(&self, x: &[f64]) -> ContrastInputs {
        let rule = u8::from(self.model.theta(x) > 0.0);
        let (mean0, mean1) = match self.outcome {
            OracleOutcome::True => (self.model.mean(x, 0), self.model.mean(x, 1)),
            OracleOutcome::Constant(v) => (v, v),
        };
        ContrastInputs { rule, mean0, mean1, propensity: self.propensity }
    }
}

/// True arm means and propensity with a rule estimated from data: the sign
/// of the treated-minus-control outcome difference within cells formed by
/// the first covariate's sign and quartile bins of the second.
#[derive(Debug, Clone)]
pub struct CellRuleNuisance {
    pub model: SimModel,
    rules: [u8; 8],
}

const CELL_CUTS: [f64; 3] = [-0.674_489_750_196_081_7, 0.0, 0.674_489_750_196_081_7];

fn cell_of(x: &[f64]) -> usize {
    let bin = CELL_CUTS.iter().filter(|&&c| x[1] >= c).count();
    usize::from(x[0] > 0.5) * 4 + bin
}

impl CellRuleNuisance {
    pub fn fit(model: SimModel, history: &[Observation]) -> Result<Self> {
        if model.p() < 2 {
            return Err(Error::InvalidInput("cell rule needs at least two covariates".into()));
        }
        let mut sums = [[0.0f64; 2]; 8];
        let mut counts = [[0usize; 2]; 8];
        for o in history {
            let cell = cell_of(&o.x);
            sums[cell][o.a as usize] += o.y;
            counts[cell][o.a as usize] += 1;
        }
        let mut rules = [0u8; 8];
        for (cell, rule) in rules.iter_mut().enumerate() {
            let [n0, n1] = counts[cell];
            if n0 > 0 && n1 > 0 {
                let diff = sums[cell][1] / n1 as f64 - sums[cell][0] / n0 as f64;
                *rule = u8::from(diff > 0.0);
            }
        }
        Ok(Self { model, rules })
    }
}

impl Nuisance for CellRuleNuisance {
    fn inputs(&self, x: &[f64]) -> ContrastInputs {
        ContrastInputs {
            rule: self.rules[cell_of(x)],
            mean0: self.model.mean(x, 0),
            mean1: self.model.mean(x, 1),
            propensity: 0.5,
        }
    }
}

/// Monte-Carlo estimate of `Δ = E[g⁻¹(μ + θ·1{θ>0}) − g⁻¹(μ)]` and its
/// standard error.
pub fn oracle_delta_with_se(model: &SimModel, n_mc: usize, rng: &mut Rng) -> Result<(f64, f64)> {
    if n_mc < 100_000 {
        return Err(Error::InvalidInput(format!("oracle Δ needs at least 100000 draws, got {n_mc}")));
    }
    model.validate()?;
    let values: Vec<f64> = (0..n_mc)
        .map(|_| {
            let x = model.draw_x(rng);
            let mu = model.mu(&x);
            let theta = model.theta(&x);
            if theta > 0.0 { logistic(mu + theta) - logistic(mu) } else { 0.0 }
        })
        .collect();
    let mean = values.iter().sum::<f64>() / n_mc as f64;
    let se = (sample_variance(&values) / n_mc as f64).sqrt();
    Ok((mean, se))
}

pub fn oracle_delta(model: &SimModel, n_mc: usize, rng: &mut Rng) -> Result<f64> {
    Ok(oracle_delta_with_se(model, n_mc, rng)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    Subtle,
    Msprt,
    Fixed,
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Engine::Subtle => "subtle",
            Engine::Msprt => "msprt",
            Engine::Fixed => "fixed",
        })
    }
}

impl FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "subtle" => Ok(Engine::Subtle),
            "msprt" => Ok(Engine::Msprt),
            "fixed" => Ok(Engine::Fixed),
            other => Err(Error::InvalidInput(format!("unknown engine '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOptions {
    pub n_reps: usize,
    pub engine: Engine,
    /// Batch horizon of the fixed engine.
    pub fixed_k: Option<usize>,
    pub master_seed: u64,
    /// Worker threads; `None` uses the global pool.
    #[serde(skip)]
    pub threads: Option<usize>,
}

impl ReplicationOptions {
    pub fn new(n_reps: usize, engine: Engine, master_seed: u64) -> Self {
        Self { n_reps, engine, fixed_k: None, master_seed, threads: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRow {
    pub index: usize,
    pub seed: u64,
    pub decision: Decision,
    pub rejected: bool,
    pub stop_sample_size: usize,
    pub k_stop: usize,
    pub r_k: f64,
    pub delta_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationReport {
    pub model: SimModel,
    pub engine: Engine,
    pub n_reps: usize,
    pub master_seed: u64,
    pub config: TestConfig,
    pub fixed_k: Option<usize>,
    pub rejection_rate: f64,
    /// Binomial standard error of the rejection rate.
    pub rejection_se: f64,
    pub stop_mean: f64,
    pub stop_median: f64,
    /// `(probability, stopping sample size)` pairs.
    pub stop_quantiles: Vec<(f64, f64)>,
    pub rows: Vec<ReplicateRow>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

impl ReplicationReport {
    /// `(bin start, count)` for stopping sample sizes in bins of `width`.
    pub fn stopping_histogram(&self, width: usize) -> Vec<(usize, usize)> {
        let width = width.max(1);
        let mut bins: std::collections::BTreeMap<usize, usize> = Default::default();
        for r in &self.rows {
            *bins.entry(r.stop_sample_size / width * width).or_default() += 1;
        }
        bins.into_iter().collect()
    }
}

fn run_subtle(model: &SimModel, cfg: &TestConfig, rng: &mut Rng, fixed_k: Option<usize>) -> Result<TestState> {
    let mut state = init_test(cfg, model.draw_observations(cfg.initial_batch_size, rng))?;
    if let Some(k) = fixed_k {
        state = state.into_open_ended();
        for _ in 0..k {
            state.step_batch(model.draw_observations(cfg.batch_size, rng))?;
        }
    } else {
        while state.is_running() {
            state.step_batch(model.draw_observations(cfg.batch_size, rng))?;
        }
    }
    Ok(state)
}

/// Draws one control and one treated unit per pair and applies the
/// Bernoulli mSPRT until it crosses `1/α` or consumes more than `M` units.
fn run_msprt(model: &SimModel, cfg: &TestConfig, rng: &mut Rng) -> Result<ReplicateRow> {
    let mut s = MsprtState::new(cfg.tau2, cfg.alpha)?;
    loop {
        let draw = |rng: &mut Rng, a: u8| {
            let x = model.draw_x(rng);
            u8::from(rng.random::<f64>() < model.mean(&x, a))
        };
        let y0 = draw(rng, 0);
        let y1 = draw(rng, 1);
        s = msprt_step_bernoulli(&s, (y0, y1))?;
        let n = 2 * s.n;
        let decision = if s.crossed() {
            Decision::Reject
        } else if n > cfg.failure_time {
            Decision::AcceptAtFailureTime
        } else {
            continue;
        };
        let v = s.bernoulli_variance();
        let r = if v > 0.0 { s.sum / (s.n as f64 * v).sqrt() } else { 0.0 };
        return Ok(ReplicateRow {
            index: 0,
            seed: 0,
            decision,
            rejected: decision == Decision::Reject,
            stop_sample_size: n,
            k_stop: s.n,
            r_k: r,
            delta_hat: Some(s.sum / s.n as f64),
        });
    }
}

fn run_one(model: &SimModel, cfg: &TestConfig, opts: &ReplicationOptions, index: usize) -> Result<ReplicateRow> {
    let seed = derive_seed(opts.master_seed, index as u64);
    let mut rng = rng_from(seed, 0);
    let cfg = TestConfig { seed, ..cfg.clone() };
    let mut row = match opts.engine {
        Engine::Subtle => {
            let s = run_subtle(model, &cfg, &mut rng, None)?;
            ReplicateRow {
                index,
                seed,
                decision: s.verdict.decision,
                rejected: s.verdict.rejected(),
                stop_sample_size: s.verdict.stop_sample_size,
                k_stop: s.verdict.k_stop,
                r_k: s.r_k,
                delta_hat: s.delta_hat(),
            }
        }
        Engine::Fixed => {
            let k = opts
                .fixed_k
                .ok_or_else(|| Error::InvalidInput("the fixed engine needs a batch horizon".into()))?;
            let s = run_subtle(model, &cfg, &mut rng, Some(k))?;
            let rejected = fixed_horizon_decide(s.r_k, cfg.alpha);
            ReplicateRow {
                index,
                seed,
                decision: if rejected { Decision::Reject } else { Decision::AcceptAtFailureTime },
                rejected,
                stop_sample_size: s.n_consumed(),
                k_stop: s.k,
                r_k: s.r_k,
                delta_hat: s.delta_hat(),
            }
        }
        Engine::Msprt => run_msprt(model, &cfg, &mut rng)?,
    };
    row.index = index;
    row.seed = seed;
    Ok(row)
}

/// Runs `f` on a dedicated pool when a thread count is given.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::InvalidInput(format!("cannot build thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Independent replicates with seeds derived from `(master_seed, index)`;
/// results do not depend on the number of threads.
pub fn run_replications(model: &SimModel, cfg: &TestConfig, opts: &ReplicationOptions) -> Result<ReplicationReport> {
    if opts.n_reps == 0 {
        return Err(Error::InvalidInput("n_reps must be at least 1".into()));
    }
    model.validate()?;
    cfg.validate()?;
    let rows = with_threads(opts.threads, || {
        (0..opts.n_reps).into_par_iter().map(|i| run_one(model, cfg, opts, i)).collect::<Result<Vec<_>>>()
    })??;

    let n = rows.len() as f64;
    let rate = rows.iter().filter(|r| r.rejected).count() as f64 / n;
    let mut stops: Vec<f64> = rows.iter().map(|r| r.stop_sample_size as f64).collect();
    stops.sort_by(f64::total_cmp);
    let stop_quantiles = [0.05, 0.25, 0.5, 0.75, 0.95].iter().map(|&q| (q, quantile_sorted(&stops, q))).collect();
    Ok(ReplicationReport {
        model: *model,
        engine: opts.engine,
        n_reps: opts.n_reps,
        master_seed: opts.master_seed,
        config: cfg.clone(),
        fixed_k: opts.fixed_k,
        rejection_rate: rate,
        rejection_se: (rate * (1.0 - rate) / n).sqrt(),
        stop_mean: stops.iter().sum::<f64>() / n,
        stop_median: quantile_sorted(&stops, 0.5),
        stop_quantiles,
        rows,
    })
}

/// `sqrt(k'·Var(Δ̂_{k'}))` over `n_reps` paths truncated at batch `k'`.
pub fn sigma_for_fixed_horizon(
    model: &SimModel,
    cfg: &TestConfig,
    k_prime: usize,
    n_reps: usize,
    master_seed: u64,
) -> Result<f64> {
    if k_prime < 10 {
        return Err(Error::InvalidInput(format!("k' must be at least 10, got {k_prime}")));
    }
    if n_reps < 2 {
        return Err(Error::InvalidInput("need at least two paths to estimate a variance".into()));
    }
    let opts = ReplicationOptions { fixed_k: Some(k_prime), ..ReplicationOptions::new(n_reps, Engine::Fixed, master_seed) };
    let report = run_replications(model, cfg, &opts)?;
    let deltas: Vec<f64> = report.rows.iter().filter_map(|r| r.delta_hat).collect();
    let var = sample_variance(&deltas);
    if !(var > 0.0) {
        return Err(Error::Numeric("Δ̂ has zero variance across paths; σ is undefined".into()));
    }
    Ok((k_prime as f64 * var).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aipw::contrasts;

    #[test]
    fn model_ids_parse() {
        for id in ModelId::ALL {
            assert_eq!(id.to_string().parse::<ModelId>().unwrap(), id);
        }
        assert_eq!("5".parse::<ModelId>().unwrap(), ModelId::V);
        assert!("VI".parse::<ModelId>().is_err());
        assert_eq!("Fixed".parse::<Engine>().unwrap(), Engine::Fixed);
    }

    #[test]
    fn null_models_have_equal_arm_means() {
        let mut rng = rng_from(1, 0);
        for id in ModelId::ALL {
            let m = SimModel::new(id, 0.0);
            for s in m.draw_batch(200, &mut rng) {
                assert_eq!(s.mean0, s.mean1);
            }
        }
    }

    #[test]
    fn model_one_baseline() {
        let m = SimModel::new(ModelId::I, 1.0);
        assert!((m.mean(&[0.0, 0.0], 0) - 0.119_202_922_022_117_58).abs() < 1e-15);
        assert_eq!(m.theta(&[0.0, 0.0]), 0.0);
        assert_eq!(m.theta(&[1.0, 0.0]), 1.0);
        assert_eq!(m.theta(&[0.0, -0.1]), 0.0);
    }

    #[test]
    fn model_table_wiring() {
        // x = (X1, X2, X3, X4, X5)
        let x = [1.0, 0.5, -1.0, 3.0, 0.0];
        let (m1, m2) = (-2.0 - 1.0 + 1.0, -1.3 + 1.0 + 0.25 - 1.0);
        let (t1, t2) = (0.0, 0.7);
        for (id, mu, th) in [(ModelId::II, m2, t2), (ModelId::III, m1, t2), (ModelId::IV, m2, t1)] {
            let m = SimModel::new(id, 0.7);
            assert!((m.mu(&x) - mu).abs() < 1e-15, "{id}");
            assert_eq!(m.theta(&x), th, "{id}");
        }
        let mut v = [0.0; 20];
        v[2] = 1.0;
        v[11] = 0.4;
        v[17] = 1.0;
        v[13] = -0.05;
        v[19] = 1.0;
        let m = SimModel::new(ModelId::V, 0.6);
        assert!((m.mu(&v) - (-0.8 + 1.0 + 0.2 - 1.0)).abs() < 1e-15);
        assert_eq!(m.theta(&v), 0.6);
        v[19] = 0.0;
        assert_eq!(m.theta(&v), 0.0);
    }

    #[test]
    fn model_five_marginals() {
        let m = SimModel::new(ModelId::V, 1.0);
        let mut rng = rng_from(2, 0);
        let n = 40_000;
        let xs: Vec<Vec<f64>> = (0..n).map(|_| m.draw_x(&mut rng)).collect();
        let mean = |j: usize| xs.iter().map(|x| x[j]).sum::<f64>() / n as f64;
        for (r, p) in [(16, 0.1), (17, 0.3), (18, 0.5), (19, 0.7), (20, 0.9)] {
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((mean(r - 1) - p).abs() < 4.0 * se, "X{r}");
            assert!(xs.iter().all(|x| x[r - 1] == 0.0 || x[r - 1] == 1.0));
        }
        for r in 1..=10 {
            let (mu, sd) = if r <= 5 { (0.2 * r as f64 - 0.6, 1.0) } else { (0.2 * r as f64 - 1.6, 2f64.sqrt()) };
            assert!((mean(r - 1) - mu).abs() < 4.0 * sd / (n as f64).sqrt(), "X{r}");
        }
        for (r, lo, hi) in [(11, -0.5, 0.5), (12, -1.0, 1.0), (13, -1.5, 1.5), (14, -0.5, 1.5), (15, -1.5, 0.5)] {
            assert!(xs.iter().all(|x| x[r - 1] >= lo && x[r - 1] <= hi), "X{r}");
        }
    }

    #[test]
    fn noise_triples_extend_p_only() {
        let base = SimModel::new(ModelId::I, 0.8);
        assert_eq!(base.add_noise_covariates(0), base);
        let noisy = base.add_noise_covariates(3);
        assert_eq!(noisy.p(), base.p() + 9);
        let mut rng = rng_from(3, 0);
        for _ in 0..200 {
            let x = noisy.draw_x(&mut rng);
            assert_eq!(x.len(), 11);
            assert_eq!(noisy.mean(&x, 1), base.mean(&x[..2], 1));
            for t in 0..3 {
                let b = x[2 + 3 * t + 2];
                assert!(b == 0.0 || b == 1.0);
                assert!(x[2 + 3 * t + 1].abs() <= 1.0);
            }
        }
    }

    /// Empirical `P(Y=1 | A, cell)` against the average true mean in the cell.
    #[test]
    fn outcomes_follow_the_model() {
        for (id, cell) in [
            (ModelId::I, Box::new(|x: &[f64]| (x[0] as usize) * 2 + usize::from(x[1] > 0.0)) as Box<dyn Fn(&[f64]) -> usize>),
            (ModelId::V, Box::new(|x: &[f64]| (x[19] as usize) * 2 + usize::from(x[13] > -0.1))),
        ] {
            let m = SimModel::new(id, 1.0);
            let mut rng = rng_from(4, 0);
            let draws = m.draw_batch(80_000, &mut rng);
            for a in [0u8, 1] {
                for c in 0..4 {
                    let group: Vec<_> = draws.iter().filter(|s| s.obs.a == a && cell(&s.obs.x) == c).collect();
                    let n = group.len() as f64;
                    let obs = group.iter().map(|s| s.obs.y).sum::<f64>() / n;
                    let truth =
                        group.iter().map(|s| if a == 1 { s.mean1 } else { s.mean0 }).sum::<f64>() / n;
                    let se = (truth * (1.0 - truth) / n).sqrt();
                    assert!((obs - truth).abs() < 3.0 * se.max(1e-3), "{id} a={a} cell={c}: {obs} vs {truth}");
                }
            }
        }
    }

    #[test]
    fn oracle_delta_properties() {
        let mut rng = rng_from(7, 0);
        for c in [0.0, -1.0] {
            let (d, se) = oracle_delta_with_se(&SimModel::new(ModelId::I, c), 100_000, &mut rng).unwrap();
            assert_eq!((d, se), (0.0, 0.0));
        }
        let m = SimModel::new(ModelId::I, 1.0);
        let (a, sa) = oracle_delta_with_se(&m, 1_000_000, &mut rng_from(8, 0)).unwrap();
        let (b, sb) = oracle_delta_with_se(&m, 1_000_000, &mut rng_from(9, 0)).unwrap();
        assert!(a > 0.0);
        assert!((a - b).abs() < 3.0 * (sa * sa + sb * sb).sqrt());
        assert!(oracle_delta(&m, 10, &mut rng).is_err());
    }

    #[test]
    fn oracle_contrast_is_unbiased() {
        let m = SimModel::new(ModelId::I, 1.0);
        let mut rng = rng_from(10, 0);
        let obs = m.draw_observations(100_000, &mut rng);
        let d = contrasts(&obs, &m.oracle());
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let se = (sample_variance(&d) / d.len() as f64).sqrt();
        let (delta, dse) = oracle_delta_with_se(&m, 400_000, &mut rng).unwrap();
        assert!((mean - delta).abs() < 3.0 * (se * se + dse * dse).sqrt(), "{mean} vs {delta}");
    }

    #[test]
    fn cell_rule_uses_the_data() {
        let m = SimModel::new(ModelId::I, 2.0);
        let mut rng = rng_from(11, 0);
        let obs = m.draw_observations(20_000, &mut rng);
        let n = CellRuleNuisance::fit(m, &obs).unwrap();
        // cells inside the benefit region show a clear positive difference
        assert_eq!(n.inputs(&[1.0, 1.5]).rule, 1);
        assert_eq!(n.inputs(&[0.0, 1.5]).rule, 1);
        assert_eq!(n.inputs(&[1.0, 0.3]).rule, 1);
        let empty = CellRuleNuisance::fit(m, &[]).unwrap();
        assert_eq!(empty.inputs(&[1.0, 1.5]).rule, 0);
    }

    #[test]
    fn replications_are_thread_count_invariant() {
        let m = SimModel::new(ModelId::I, 1.0);
        let cfg = TestConfig {
            forest: crate::forest::ForestParams { n_trees: 5, ..crate::forest::ForestParams::ci() },
            failure_time: 500,
            ..TestConfig::simulation()
        };
        let mut opts = ReplicationOptions::new(4, Engine::Subtle, 17);
        opts.threads = Some(1);
        let a = run_replications(&m, &cfg, &opts).unwrap();
        opts.threads = Some(3);
        let b = run_replications(&m, &cfg, &opts).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.rows.len(), 4);
        assert!((0.0..=1.0).contains(&a.rejection_rate));
        assert!(run_replications(&m, &cfg, &ReplicationOptions::new(0, Engine::Subtle, 1)).is_err());
    }

    #[test]
    fn fixed_engine_runs_to_its_horizon() {
        let m = SimModel::new(ModelId::I, 0.0);
        let cfg = TestConfig {
            forest: crate::forest::ForestParams { n_trees: 5, ..crate::forest::ForestParams::ci() },
            ..TestConfig::simulation()
        };
        let opts = ReplicationOptions { fixed_k: Some(3), ..ReplicationOptions::new(2, Engine::Fixed, 5) };
        let r = run_replications(&m, &cfg, &opts).unwrap();
        assert!(r.rows.iter().all(|row| row.k_stop == 3 && row.stop_sample_size == 360));
        let opts = ReplicationOptions::new(2, Engine::Fixed, 5);
        assert!(run_replications(&m, &cfg, &opts).is_err());
    }

    #[test]
    fn msprt_engine_stops() {
        let cfg = TestConfig::simulation();
        let r = run_replications(&SimModel::new(ModelId::II, 1.0), &cfg, &ReplicationOptions::new(10, Engine::Msprt, 3))
            .unwrap();
        assert!(r.rows.iter().all(|row| row.stop_sample_size <= cfg.failure_time + 2));
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
    }

    #[test]
    fn sigma_needs_variation() {
        let m = SimModel::new(ModelId::I, 0.0);
        assert!(sigma_for_fixed_horizon(&m, &TestConfig::simulation(), 5, 10, 1).is_err());
    }
}
