//! The batch-sequential test.
//!
//! Each batch `k` refits the nuisances on every earlier observation,
//! estimates `σ̂_k` over that history, scores the new batch with the AIPW
//! contrast and updates
//!
//! - `R_k = k^{-1/2} Σ_j σ̂_j⁻¹ D̄_j`
//! - `Δ̂_k = Σ_j σ̂_j⁻¹ D̄_j / Σ_j σ̂_j⁻¹`
//! - `Λ_k` from [`crate::mixture`].
//!
//! The null is rejected as soon as `Λ_k > 1/α`, and accepted once more than
//! the failure time `M` samples have been consumed.

use serde::{Deserialize, Serialize};

use crate::aipw::{batch_mean_d, raw_conditional_sd, ContrastBatchSummary};
use crate::error::{Error, Result};
use crate::forest::{fit_classification_tree, tree_to_rule_text, ClassificationTree, TrainingSet};
use crate::mixture::ln_lambda_closed_form;
use crate::nuisance::{fit_nuisance_seeded, Nuisance, NuisanceModel};
use crate::rng::derive_seed;
use crate::types::{Decision, Observation, TestConfig, Verdict, ZeroVariancePolicy};

/// One row of the per-batch log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchLogRow {
    pub k: usize,
    pub n_consumed: usize,
    pub d_bar: f64,
    pub sigma_hat: f64,
    pub r_k: f64,
    pub lambda_k: f64,
    pub verdict: Decision,
    /// The batch was dropped from the statistic (zero-variance `skip` policy).
    pub skipped: bool,
}

#[derive(Debug, Clone)]
pub struct TestState {
    cfg: TestConfig,
    p: usize,
    /// Batches consumed after the initial batch.
    pub k: usize,
    /// Batches contributing to the statistic; equals `k` unless batches were skipped.
    pub k_used: usize,
    pub sum_inv_sigma: f64,
    pub sum_weighted_d: f64,
    pub r_k: f64,
    pub lambda_k: f64,
    pub ln_lambda_k: f64,
    pub history: Vec<Observation>,
    pub verdict: Verdict,
    pub log: Vec<BatchLogRow>,
    pub summaries: Vec<ContrastBatchSummary>,
    open_ended: bool,
}

pub fn init_test(cfg: &TestConfig, initial_batch: Vec<Observation>) -> Result<TestState> {
    cfg.validate()?;
    if initial_batch.len() != cfg.initial_batch_size {
        return Err(Error::BatchSize { expected: cfg.initial_batch_size, got: initial_batch.len() });
    }
    let p = initial_batch[0].x.len();
    if let Some(o) = initial_batch.iter().find(|o| o.x.len() != p) {
        return Err(Error::DimensionMismatch { expected: p, got: o.x.len() });
    }
    for arm in [0u8, 1] {
        if !initial_batch.iter().any(|o| o.a == arm) {
            return Err(Error::DegenerateArm { arm, rows: 0, needed: cfg.forest.min_leaf });
        }
    }
    Ok(TestState {
        cfg: cfg.clone(),
        p,
        k: 0,
        k_used: 0,
        sum_inv_sigma: 0.0,
        sum_weighted_d: 0.0,
        r_k: 0.0,
        lambda_k: 0.0,
        ln_lambda_k: f64::NEG_INFINITY,
        history: initial_batch,
        verdict: Verdict::running(),
        log: Vec::new(),
        summaries: Vec::new(),
        open_ended: false,
    })
}

impl TestState {
    pub fn config(&self) -> &TestConfig {
        &self.cfg
    }

    pub fn n_consumed(&self) -> usize {
        self.history.len()
    }

    /// Precision-weighted estimate of the value difference.
    pub fn delta_hat(&self) -> Option<f64> {
        (self.k_used > 0).then(|| self.sum_weighted_d / self.sum_inv_sigma)
    }

    /// Keeps the state running whatever the statistics do; used for
    /// truncated paths that must reach a fixed batch count.
    pub fn into_open_ended(mut self) -> Self {
        self.open_ended = true;
        self
    }

    pub fn is_running(&self) -> bool {
        self.verdict.decision == Decision::Running
    }

    /// Runs one batch with forest nuisances refit on the full history.
    pub fn step_batch(&mut self, batch: Vec<Observation>) -> Result<Verdict> {
        let seed = derive_seed(self.cfg.seed ^ self.cfg.forest.seed, self.k as u64 + 1);
        let cfg = self.cfg.clone();
        self.step_batch_with(batch, |history| fit_nuisance_seeded(history, &cfg, seed))
    }

    /// Runs one batch with nuisances produced by `fit` from the history.
    pub fn step_batch_with<N, F>(&mut self, batch: Vec<Observation>, fit: F) -> Result<Verdict>
    where
        N: Nuisance,
        F: FnOnce(&[Observation]) -> Result<N>,
    {
        if !self.is_running() {
            return Err(Error::Terminated(self.verdict.decision));
        }
        let m = self.cfg.batch_size;
        if batch.len() != m {
            return Err(Error::BatchSize { expected: m, got: batch.len() });
        }
        if let Some(o) = batch.iter().find(|o| o.x.len() != self.p) {
            return Err(Error::DimensionMismatch { expected: self.p, got: o.x.len() });
        }

        let model = fit(&self.history)?;
        let raw_sigma = raw_conditional_sd(&self.history, &model, m)?;
        let d_bar = batch_mean_d(&batch, &model, m)?;
        self.k += 1;

        let floored = raw_sigma < self.cfg.sigma_floor;
        let skip = floored && self.cfg.zero_variance == ZeroVariancePolicy::Skip;
        let sigma_hat = raw_sigma.max(self.cfg.sigma_floor);
        if floored {
            log::warn!("batch {}: conditional sd {raw_sigma:e} below floor, using {sigma_hat:e}", self.k);
        }
        if !skip {
            self.k_used += 1;
            self.sum_inv_sigma += 1.0 / sigma_hat;
            self.sum_weighted_d += d_bar / sigma_hat;
            self.r_k = self.sum_weighted_d / (self.k_used as f64).sqrt();
            self.ln_lambda_k = ln_lambda_closed_form(self.k_used, self.sum_inv_sigma, self.r_k, self.cfg.tau2)?;
            self.lambda_k = self.ln_lambda_k.exp().min(f64::MAX);
        }
        self.history.extend(batch);

        let n = self.history.len();
        debug_assert_eq!(n, self.k * m + self.cfg.initial_batch_size);
        let decision = if self.open_ended {
            Decision::Running
        } else if self.ln_lambda_k > self.cfg.rejection_threshold().ln() {
            Decision::Reject
        } else if n > self.cfg.failure_time {
            Decision::AcceptAtFailureTime
        } else {
            Decision::Running
        };
        self.verdict = Verdict { decision, stop_sample_size: n, k_stop: self.k };
        self.summaries.push(ContrastBatchSummary { k: self.k, d_bar, sigma_hat, n_used: m, floored });
        self.log.push(BatchLogRow {
            k: self.k,
            n_consumed: n,
            d_bar,
            sigma_hat,
            r_k: self.r_k,
            lambda_k: self.lambda_k,
            verdict: decision,
            skipped: skip,
        });
        Ok(self.verdict)
    }

    /// Ends the run early because the data ran out.
    fn accept_on_exhaustion(&mut self) {
        self.verdict =
            Verdict { decision: Decision::AcceptAtFailureTime, stop_sample_size: self.history.len(), k_stop: self.k };
    }
}

/// The beneficial subgroup estimated from all data at the stop.
#[derive(Debug, Clone)]
pub struct SubgroupReport {
    pub theta_model: NuisanceModel,
    pub rule_tree: ClassificationTree,
    pub rule_text: String,
    pub fraction_beneficial: f64,
}

/// Refits the nuisances on `history`, labels each row with `1{θ̂ > 0}` and
/// summarises the labels with a depth-limited classification tree.
pub fn extract_subgroup(history: &[Observation], cfg: &TestConfig) -> Result<SubgroupReport> {
    if history.is_empty() {
        return Err(Error::EmptyData("subgroup extraction needs data"));
    }
    let model = fit_nuisance_seeded(history, cfg, derive_seed(cfg.seed ^ cfg.forest.seed, u64::MAX))?;
    let labels: Vec<f64> = history.iter().map(|o| f64::from(model.rule(&o.x))).collect();
    let fraction = labels.iter().sum::<f64>() / labels.len() as f64;
    let data = TrainingSet::from_rows(history.iter().zip(&labels).map(|(o, &l)| (o.x.as_slice(), l)))?;
    let tree = fit_classification_tree(&data, cfg.rule_tree_depth, cfg.forest.min_leaf)?;
    Ok(SubgroupReport {
        rule_text: tree_to_rule_text(&tree),
        rule_tree: tree,
        theta_model: model,
        fraction_beneficial: fraction,
    })
}

#[derive(Debug, Clone)]
pub struct StreamOutcome {
    pub verdict: Verdict,
    pub log: Vec<BatchLogRow>,
    pub subgroup: Option<SubgroupReport>,
    /// The source ran dry before a decision.
    pub stream_exhausted: bool,
    /// Rows of an incomplete trailing batch that were dropped.
    pub discarded_tail: usize,
    pub r_k: f64,
    pub delta_hat: Option<f64>,
}

/// Consumes `l` observations, then `m`-sized batches until a decision is
/// reached or the source is exhausted. A trailing partial batch is
/// discarded. On rejection the subgroup is estimated from all consumed data.
pub fn run_stream<I>(source: I, cfg: &TestConfig) -> Result<StreamOutcome>
where
    I: IntoIterator<Item = Result<Observation>>,
{
    let mut source = source.into_iter();
    let initial = take(&mut source, cfg.initial_batch_size)?;
    if initial.len() < cfg.initial_batch_size {
        return Err(Error::InvalidInput(format!(
            "stream has {} observations, fewer than the initial batch size {}",
            initial.len(),
            cfg.initial_batch_size
        )));
    }
    let mut state = init_test(cfg, initial)?;
    let mut exhausted = false;
    let mut discarded = 0;
    while state.is_running() {
        let batch = take(&mut source, cfg.batch_size)?;
        if batch.len() < cfg.batch_size {
            discarded = batch.len();
            if discarded > 0 {
                log::info!("discarding trailing partial batch of {discarded} rows");
            }
            exhausted = true;
            state.accept_on_exhaustion();
            break;
        }
        state.step_batch(batch)?;
    }
    let subgroup = if state.verdict.rejected() { Some(extract_subgroup(&state.history, cfg)?) } else { None };
    Ok(StreamOutcome {
        verdict: state.verdict,
        r_k: state.r_k,
        delta_hat: state.delta_hat(),
        log: state.log,
        subgroup,
        stream_exhausted: exhausted,
        discarded_tail: discarded,
    })
}

fn take<I: Iterator<Item = Result<Observation>>>(source: &mut I, n: usize) -> Result<Vec<Observation>> {
    let mut out = Vec::with_capacity(n);
    for item in source.by_ref().take(n) {
        out.push(item?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::ForestParams;
    use crate::mixture::lambda_closed_form;
    use crate::nuisance::ContrastInputs;

    struct Fixed(ContrastInputs);

    impl Nuisance for Fixed {
        fn inputs(&self, _x: &[f64]) -> ContrastInputs {
            self.0
        }
    }

    fn small_cfg() -> TestConfig {
        TestConfig {
            batch_size: 4,
            initial_batch_size: 6,
            failure_time: 20,
            forest: ForestParams { n_trees: 5, min_leaf: 1, ..ForestParams::default() },
            ..TestConfig::simulation()
        }
    }

    fn rows(n: usize, offset: usize) -> Vec<Observation> {
        (0..n)
            .map(|i| {
                let j = i + offset;
                Observation::new((j % 3 == 0) as u8 as f64, (j % 2) as u8, vec![j as f64 * 0.1])
            })
            .collect()
    }

    #[test]
    fn init_checks() {
        let cfg = small_cfg();
        let s = init_test(&cfg, rows(6, 0)).unwrap();
        assert_eq!((s.k, s.lambda_k), (0, 0.0));
        assert!(init_test(&cfg, rows(5, 0)).is_err());
        let one_arm: Vec<_> = rows(6, 0).into_iter().map(|o| Observation { a: 0, ..o }).collect();
        assert!(matches!(init_test(&cfg, one_arm), Err(Error::DegenerateArm { .. })));
    }

    #[test]
    fn zero_contrast_batch_keeps_r_at_zero() {
        let cfg = small_cfg();
        let mut s = init_test(&cfg, rows(6, 0)).unwrap();
        let ctrl = ContrastInputs { rule: 0, mean0: 0.2, mean1: 0.3, propensity: 0.5 };
        s.step_batch_with(rows(4, 6), |_| Ok(Fixed(ctrl))).unwrap();
        assert_eq!(s.r_k, 0.0);
        // every contrast is zero, so σ̂ is floored
        assert_eq!(s.log[0].sigma_hat, cfg.sigma_floor);
        let want = lambda_closed_form(1, 1.0 / cfg.sigma_floor, 0.0, cfg.tau2).unwrap();
        assert!((s.lambda_k - want).abs() <= 1e-12 * want);
        assert!(s.lambda_k > 0.0);
    }

    #[test]
    fn statistics_follow_their_definitions() {
        let cfg = small_cfg();
        let mut s = init_test(&cfg, rows(6, 0)).unwrap();
        let treat = ContrastInputs { rule: 1, mean0: 0.3, mean1: 0.5, propensity: 0.5 };
        for b in 0..3 {
            s.step_batch_with(rows(4, 6 + 4 * b), |_| Ok(Fixed(treat))).unwrap();
        }
        let inv: f64 = s.summaries.iter().map(|b| 1.0 / b.sigma_hat).sum();
        let wd: f64 = s.summaries.iter().map(|b| b.d_bar / b.sigma_hat).sum();
        assert!((s.sum_inv_sigma - inv).abs() < 1e-9 * inv);
        assert!((s.r_k - wd / 3f64.sqrt()).abs() < 1e-12);
        assert!((s.delta_hat().unwrap() - wd / inv).abs() < 1e-12);
        assert_eq!(s.history.len(), 18);
    }

    #[test]
    fn failure_time_and_termination() {
        let cfg = small_cfg();
        let mut s = init_test(&cfg, rows(6, 0)).unwrap();
        let ctrl = ContrastInputs { rule: 0, mean0: 0.2, mean1: 0.3, propensity: 0.5 };
        let mut k = 0;
        while s.is_running() {
            s.step_batch_with(rows(4, 6 + 4 * k), |_| Ok(Fixed(ctrl))).unwrap();
            k += 1;
        }
        // k·m + l > M first holds at k = 4 (22 > 20)
        assert_eq!(s.verdict.decision, Decision::AcceptAtFailureTime);
        assert_eq!((s.verdict.k_stop, s.verdict.stop_sample_size), (4, 22));
        let err = s.step_batch_with(rows(4, 0), |_| Ok(Fixed(ctrl))).unwrap_err();
        assert!(matches!(err, Error::Terminated(Decision::AcceptAtFailureTime)));
        assert_eq!(s.log.len(), 4);
    }

    #[test]
    fn large_effect_rejects() {
        let cfg = TestConfig { failure_time: 400, ..small_cfg() };
        let mut s = init_test(&cfg, rows(6, 0)).unwrap();
        // Treated units with y=1 and controls with y=0 under a treat-all rule.
        let obs = |i: usize| {
            let a = (i % 2) as u8;
            Observation::new(f64::from(a), a, vec![0.0])
        };
        let treat = ContrastInputs { rule: 1, mean0: 0.2, mean1: 0.8, propensity: 0.5 };
        let mut i = 0;
        while s.is_running() {
            let batch: Vec<_> = (0..4).map(|j| obs(i + j + (i / 4) % 2)).collect();
            i += 4;
            s.step_batch_with(batch, |_| Ok(Fixed(treat))).unwrap();
        }
        assert_eq!(s.verdict.decision, Decision::Reject);
        assert!(s.lambda_k > 20.0);
    }

    #[test]
    fn wrong_batch_size() {
        let cfg = small_cfg();
        let mut s = init_test(&cfg, rows(6, 0)).unwrap();
        assert!(matches!(s.step_batch(rows(3, 6)), Err(Error::BatchSize { .. })));
    }

    #[test]
    fn skip_policy_leaves_accumulators_alone() {
        let cfg = TestConfig { zero_variance: ZeroVariancePolicy::Skip, ..small_cfg() };
        let mut s = init_test(&cfg, rows(6, 0)).unwrap();
        let ctrl = ContrastInputs { rule: 0, mean0: 0.2, mean1: 0.3, propensity: 0.5 };
        s.step_batch_with(rows(4, 6), |_| Ok(Fixed(ctrl))).unwrap();
        assert_eq!((s.k, s.k_used, s.sum_inv_sigma), (1, 0, 0.0));
        assert!(s.log[0].skipped);
        assert_eq!(s.lambda_k, 0.0);
    }

    #[test]
    fn short_stream_errors_and_partial_tail_is_dropped() {
        let cfg = small_cfg();
        assert!(run_stream(rows(5, 0).into_iter().map(Ok), &cfg).is_err());
        let out = run_stream(rows(6 + 4 + 3, 0).into_iter().map(Ok), &cfg).unwrap();
        assert!(out.stream_exhausted);
        assert_eq!(out.discarded_tail, 3);
        assert_eq!(out.verdict.decision, Decision::AcceptAtFailureTime);
        assert_eq!(out.verdict.stop_sample_size, 10);
        assert!(out.subgroup.is_none());
    }

    #[test]
    fn stream_errors_propagate() {
        let cfg = small_cfg();
        let mut items: Vec<Result<Observation>> = rows(8, 0).into_iter().map(Ok).collect();
        items.push(Err(Error::Schema { row: 10, reason: "bad".into() }));
        assert!(matches!(run_stream(items, &cfg), Err(Error::Schema { row: 10, .. })));
    }

    #[test]
    fn empty_subgroup_when_no_effect() {
        let history: Vec<_> = (0..80).map(|i| Observation::new(0.0, (i % 2) as u8, vec![i as f64])).collect();
        let cfg = TestConfig { forest: ForestParams::ci(), ..TestConfig::simulation() };
        let r = extract_subgroup(&history, &cfg).unwrap();
        assert_eq!(r.fraction_beneficial, 0.0);
        assert!(r.rule_text.starts_with('∅'));
        assert!(r.rule_tree.depth() <= cfg.rule_tree_depth);
        let single: Vec<_> = history.iter().filter(|o| o.a == 0).cloned().collect();
        assert!(extract_subgroup(&single, &cfg).is_err());
    }

    /// Agreement of the summarising tree with the true region on fresh draws.
    #[test]
    fn subgroup_tree_recovers_model_one_region() {
        use crate::simgen::{ModelId, SimModel};
        let model = SimModel::new(ModelId::I, 1.0);
        let mut rng = crate::rng::rng_from(41, 0);
        let history = model.draw_observations(2300, &mut rng);
        let cfg = TestConfig { forest: ForestParams::ci(), ..TestConfig::simulation() };
        let r = extract_subgroup(&history, &cfg).unwrap();
        assert!(r.rule_tree.depth() <= 3);
        let fresh = model.draw_observations(5000, &mut rng);
        let agree = fresh
            .iter()
            .filter(|o| (r.rule_tree.predict(&o.x).unwrap() == 1) == (o.x[0] + 2.0 * o.x[1] > 0.0))
            .count();
        assert!(agree as f64 / 5000.0 >= 0.7, "agreement {agree}/5000, rule {}", r.rule_text);
    }
}
