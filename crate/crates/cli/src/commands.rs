//! Command implementations behind the `subtle` binary.
//!
//! Every command returns its report; when an output directory is given the
//! report is also written there as `report.json` next to its CSV artifacts.
//! Paths inside reports are relative to that directory, so reruns into
//! different directories produce identical files.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use subtle_core::aipw::ipw_value;
use subtle_core::forest::RuleNode;
use subtle_core::nuisance::{estimate_propensity, fit_nuisance};
use subtle_core::report::{
    open_observations, read_observations, with_file, write_batch_log, write_histogram, write_json, write_replicates, write_rows,
};
use subtle_core::rng::rng_from;
use subtle_core::sequential::{run_stream, BatchLogRow, StreamOutcome};
use subtle_core::simgen::{run_replications, with_threads, ReplicationOptions, ReplicationReport, SimModel};
use subtle_core::{Decision, Error, Observation, Result, TestConfig, Verdict};

pub const REPORT_FILE: &str = "report.json";
pub const BATCH_LOG_FILE: &str = "batch_log.csv";
pub const REPLICATES_FILE: &str = "replicates.csv";
pub const HISTOGRAM_FILE: &str = "stopping_histogram.csv";
pub const PERMUTATIONS_FILE: &str = "permutations.csv";

/// Reads a JSON config and overlays it on `base`; fields absent from the
/// file keep their `base` values.
pub fn load_config(path: Option<&Path>, base: TestConfig) -> Result<TestConfig> {
    let Some(path) = path else {
        base.validate()?;
        return Ok(base);
    };
    let text = std::fs::read_to_string(path)?;
    let overlay: serde_json::Value = serde_json::from_str(&text)?;
    if !overlay.is_object() {
        return Err(Error::InvalidInput(format!("config {} must be a JSON object", path.display())));
    }
    let mut merged = serde_json::to_value(&base)?;
    merge(&mut merged, overlay);
    let cfg: TestConfig = serde_json::from_value(merged)?;
    cfg.validate()?;
    Ok(cfg)
}

fn merge(base: &mut serde_json::Value, overlay: serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                // Aliases of the batch constants map onto their canonical keys.
                let key = match k.as_str() {
                    "m" => "batch_size".to_string(),
                    "l" => "initial_batch_size".to_string(),
                    "M" => "failure_time".to_string(),
                    _ => k,
                };
                match b.get_mut(&key) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(key, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn prepare(dir: Option<&Path>) -> Result<Option<PathBuf>> {
    match dir {
        None => Ok(None),
        Some(d) => {
            std::fs::create_dir_all(d)?;
            Ok(Some(d.to_path_buf()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub engine: String,
    pub input: String,
    /// Seed of the simulated treatment indicators (A/A test only).
    pub seed: Option<u64>,
    pub config: TestConfig,
    pub verdict: Verdict,
    pub stop_sample_size: usize,
    pub batches: usize,
    pub stream_exhausted: bool,
    pub discarded_tail: usize,
    pub r_k: f64,
    pub lambda_k: f64,
    pub delta_hat: Option<f64>,
    pub batch_log: Option<String>,
    pub rule_text: Option<String>,
    pub rule_tree: Option<RuleNode>,
    pub fraction_beneficial: Option<f64>,
    #[serde(skip)]
    pub log: Vec<BatchLogRow>,
}

impl RunReport {
    pub fn rejected(&self) -> bool {
        self.verdict.decision == Decision::Reject
    }

    fn new(command: &str, input: &Path, seed: Option<u64>, cfg: &TestConfig, out: StreamOutcome) -> Self {
        let sub = out.subgroup.as_ref();
        RunReport {
            command: command.to_string(),
            engine: "subtle".to_string(),
            input: file_name(input),
            seed,
            config: cfg.clone(),
            verdict: out.verdict,
            stop_sample_size: out.verdict.stop_sample_size,
            batches: out.verdict.k_stop,
            stream_exhausted: out.stream_exhausted,
            discarded_tail: out.discarded_tail,
            r_k: out.r_k,
            lambda_k: out.log.last().map_or(0.0, |r| r.lambda_k),
            delta_hat: out.delta_hat,
            batch_log: None,
            rule_text: sub.map(|s| s.rule_text.clone()),
            rule_tree: sub.map(|s| s.rule_tree.to_rule_node()),
            fraction_beneficial: sub.map(|s| s.fraction_beneficial),
            log: out.log,
        }
    }

    fn write(&mut self, dir: Option<&Path>) -> Result<()> {
        if let Some(dir) = prepare(dir)? {
            with_file(&dir.join(BATCH_LOG_FILE), |w| write_batch_log(w, &self.log))?;
            self.batch_log = Some(BATCH_LOG_FILE.to_string());
            write_json(&dir.join(REPORT_FILE), self)?;
        }
        Ok(())
    }
}

/// Streams `input` in file order through the sequential test.
pub fn cmd_test(input: &Path, cfg: &TestConfig, out_dir: Option<&Path>) -> Result<RunReport> {
    let reader = open_observations(input, cfg.link)?;
    let out = run_stream(reader, cfg)?;
    let mut report = RunReport::new("test", input, None, cfg, out);
    report.write(out_dir)?;
    Ok(report)
}

/// Replaces the treatment column with iid `Ber(0.5)` draws, then runs the test.
pub fn cmd_aa_test(input: &Path, cfg: &TestConfig, seed: u64, out_dir: Option<&Path>) -> Result<RunReport> {
    let (_, mut obs) = read_observations(input, cfg.link)?;
    if obs.is_empty() {
        return Err(Error::EmptyData("input has no observations"));
    }
    let mut rng = rng_from(seed, 0);
    for o in &mut obs {
        o.a = u8::from(rng.random_bool(0.5));
    }
    let out = run_stream(obs.into_iter().map(Ok), cfg)?;
    let mut report = RunReport::new("aa-test", input, Some(seed), cfg, out);
    report.write(out_dir)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationRow {
    pub index: usize,
    pub decision: Decision,
    pub rejected: bool,
    pub stop_sample_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationReport {
    pub input: String,
    pub n_perm: usize,
    pub seed: u64,
    pub config: TestConfig,
    pub rejections: usize,
    pub rejection_fraction: f64,
    /// Binomial standard error of the rejection fraction.
    pub rejection_se: f64,
    pub permutations: Option<String>,
    pub rows: Vec<PermutationRow>,
}

/// Shuffles `y` only; treatment and covariates stay in place.
pub fn permute_outcomes(obs: &[Observation], seed: u64, index: usize) -> Vec<Observation> {
    let mut ys: Vec<f64> = obs.iter().map(|o| o.y).collect();
    ys.shuffle(&mut rng_from(seed, index as u64));
    obs.iter().zip(ys).map(|(o, y)| Observation { y, ..o.clone() }).collect()
}

fn sorted_outcomes(obs: &[Observation]) -> Vec<f64> {
    let mut ys: Vec<f64> = obs.iter().map(|o| o.y).collect();
    ys.sort_by(f64::total_cmp);
    ys
}

pub fn cmd_permute(
    input: &Path,
    cfg: &TestConfig,
    n_perm: usize,
    seed: u64,
    threads: Option<usize>,
    out_dir: Option<&Path>,
) -> Result<PermutationReport> {
    if n_perm == 0 {
        return Err(Error::InvalidInput("need at least one permutation".into()));
    }
    let (_, obs) = read_observations(input, cfg.link)?;
    let original = sorted_outcomes(&obs);
    let rows = with_threads(threads, || {
        (0..n_perm)
            .into_par_iter()
            .map(|i| {
                let permuted = permute_outcomes(&obs, seed, i);
                assert_eq!(sorted_outcomes(&permuted), original, "permutation changed the outcome multiset");
                let out = run_stream(permuted.into_iter().map(Ok), cfg)?;
                Ok(PermutationRow {
                    index: i,
                    decision: out.verdict.decision,
                    rejected: out.verdict.rejected(),
                    stop_sample_size: out.verdict.stop_sample_size,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let rejections = rows.iter().filter(|r| r.rejected).count();
    let frac = rejections as f64 / n_perm as f64;
    let mut report = PermutationReport {
        input: file_name(input),
        n_perm,
        seed,
        config: cfg.clone(),
        rejections,
        rejection_fraction: frac,
        rejection_se: (frac * (1.0 - frac) / n_perm as f64).sqrt(),
        permutations: None,
        rows,
    };
    if let Some(dir) = prepare(out_dir)? {
        with_file(&dir.join(PERMUTATIONS_FILE), |w| write_rows(w, &report.rows))?;
        report.permutations = Some(PERMUTATIONS_FILE.to_string());
        write_json(&dir.join(REPORT_FILE), &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub train: String,
    pub test: String,
    pub n_train: usize,
    pub n_test: usize,
    pub config: TestConfig,
    /// `mean(y | a=1) − mean(y | a=0)` on the test data.
    pub overall_effect: f64,
    /// The same difference among test rows with `θ̂ > 0`; `None` when the
    /// subgroup is empty or lacks one arm.
    pub subgroup_effect: Option<f64>,
    pub subgroup_size: usize,
    pub subgroup_fraction: f64,
    pub propensity: f64,
    /// IPW value of the all-control rule.
    pub ipw_control: f64,
    /// IPW value of the estimated rule `1{θ̂ > 0}`.
    pub ipw_rule: f64,
}

fn arm_difference<'a>(rows: impl Iterator<Item = &'a Observation>) -> Option<f64> {
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for o in rows {
        sums[o.a as usize] += o.y;
        counts[o.a as usize] += 1;
    }
    (counts[0] > 0 && counts[1] > 0).then(|| sums[1] / counts[1] as f64 - sums[0] / counts[0] as f64)
}

/// Fits `θ̂` on `train` and compares effects and rule values on `test`.
pub fn cmd_evaluate(train: &Path, test: &Path, cfg: &TestConfig, out_dir: Option<&Path>) -> Result<EvaluationReport> {
    let (train_schema, train_obs) = read_observations(train, cfg.link)?;
    let (test_schema, test_obs) = read_observations(test, cfg.link)?;
    if train_schema.p != test_schema.p {
        return Err(Error::DimensionMismatch { expected: train_schema.p, got: test_schema.p });
    }
    if test_obs.is_empty() {
        return Err(Error::EmptyData("test file has no observations"));
    }
    let model = fit_nuisance(&train_obs, cfg)?;
    let overall = arm_difference(test_obs.iter())
        .ok_or_else(|| Error::InvalidInput("test data must contain both arms".into()))?;
    let rules: Vec<u8> = test_obs.iter().map(|o| model.rule(&o.x)).collect();
    let subgroup: Vec<&Observation> = test_obs.iter().zip(&rules).filter(|(_, &r)| r == 1).map(|(o, _)| o).collect();
    let p_hat = estimate_propensity(&test_obs)?;
    let report = EvaluationReport {
        train: file_name(train),
        test: file_name(test),
        n_train: train_obs.len(),
        n_test: test_obs.len(),
        config: cfg.clone(),
        overall_effect: overall,
        subgroup_effect: arm_difference(subgroup.iter().copied()),
        subgroup_size: subgroup.len(),
        subgroup_fraction: subgroup.len() as f64 / test_obs.len() as f64,
        propensity: p_hat,
        ipw_control: ipw_value(&test_obs, |_| 0, p_hat)?,
        ipw_rule: ipw_value(&test_obs, |x| model.rule(x), p_hat)?,
    };
    if let Some(dir) = prepare(out_dir)? {
        write_json(&dir.join(REPORT_FILE), &report)?;
    }
    Ok(report)
}

/// Runs replications and writes the report, per-replicate rows and a
/// stopping-time histogram with bins of `bin_width` samples.
pub fn cmd_simulate(
    model: &SimModel,
    cfg: &TestConfig,
    opts: &ReplicationOptions,
    bin_width: usize,
    out_dir: Option<&Path>,
) -> Result<ReplicationReport> {
    let report = run_replications(model, cfg, opts)?;
    if let Some(dir) = prepare(out_dir)? {
        write_json(&dir.join(REPORT_FILE), &report)?;
        with_file(&dir.join(REPLICATES_FILE), |w| write_replicates(w, &report.rows))?;
        with_file(&dir.join(HISTOGRAM_FILE), |w| write_histogram(w, &report.stopping_histogram(bin_width)))?;
    }
    Ok(report)
}
