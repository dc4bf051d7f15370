//! `subtle`: anytime-valid sequential testing for a beneficial subgroup.
//!
//! Exit codes: 0 on success, 1 for bad input (arguments, files, config),
//! 2 for internal numeric failures.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use subtle_cli::commands::{cmd_aa_test, cmd_evaluate, cmd_permute, cmd_simulate, cmd_test, load_config};
use subtle_cli::fixture::{generate, FixtureKind, FIXTURE_SEED};
use subtle_core::report::{to_json, write_observations_file};
use subtle_core::simgen::{Engine, ModelId, ReplicationOptions, SimModel};
use subtle_core::{Error, TestConfig};

#[derive(Parser)]
#[command(name = "subtle", version, about = "Sequential test for the existence of a beneficial subgroup")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the batch size m.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Write report.json and CSV artifacts here instead of printing the report.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sequential test over a y,a,x1..xp CSV in file order.
    Test {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Replace the treatment column with fair coin flips and run the test.
    AaTest {
        input: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        common: Common,
    },
    /// Run the test on outcome permutations of the input.
    Permute {
        input: PathBuf,
        #[arg(long, default_value_t = 100)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        threads: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit the effect model on one file and evaluate the subgroup on another.
    Evaluate {
        train: PathBuf,
        test: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Replicate the test on a simulation model.
    Simulate {
        /// I, II, III, IV or V.
        #[arg(long)]
        model: ModelId,
        /// Effect scale c.
        #[arg(long, allow_hyphen_values = true)]
        c: f64,
        #[arg(long, default_value_t = 200)]
        reps: usize,
        #[arg(long, default_value = "subtle")]
        engine: Engine,
        /// Horizon in batches for the fixed engine.
        #[arg(long)]
        fixed_k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        noise_triples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        threads: Option<usize>,
        /// Width of the stopping-time histogram bins, in samples.
        #[arg(long, default_value_t = 100)]
        bin_width: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic click-stream CSV.
    Fixture {
        #[arg(long, value_enum, default_value_t = FixtureKind::Planted)]
        kind: FixtureKind,
        #[arg(long, default_value_t = 30_000)]
        rows: usize,
        #[arg(long, default_value_t = FIXTURE_SEED)]
        seed: u64,
        output: PathBuf,
    },
}

fn config(common: &Common, base: TestConfig) -> Result<TestConfig, Error> {
    let mut cfg = load_config(common.config.as_deref(), base)?;
    if let Some(m) = common.batch_size {
        cfg.batch_size = m;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn emit<T: Serialize>(report: &T, out_dir: Option<&Path>, summary: String) -> Result<(), Error> {
    match out_dir {
        Some(dir) => println!("{summary} (written to {})", dir.display()),
        None => print!("{}", to_json(report)?),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Test { input, common } => {
            let cfg = config(&common, TestConfig::data_workflow())?;
            let out = common.out_dir.as_deref();
            let r = cmd_test(&input, &cfg, out)?;
            emit(&r, out, format!("{:?} after {} samples", r.verdict.decision, r.stop_sample_size))
        }
        Command::AaTest { input, seed, common } => {
            let cfg = config(&common, TestConfig::data_workflow())?;
            let out = common.out_dir.as_deref();
            let r = cmd_aa_test(&input, &cfg, seed, out)?;
            emit(&r, out, format!("{:?} after {} samples", r.verdict.decision, r.stop_sample_size))
        }
        Command::Permute { input, reps, seed, threads, common } => {
            let cfg = config(&common, TestConfig::data_workflow())?;
            let out = common.out_dir.as_deref();
            let r = cmd_permute(&input, &cfg, reps, seed, threads, out)?;
            emit(&r, out, format!("{}/{} permutations rejected", r.rejections, r.n_perm))
        }
        Command::Evaluate { train, test, common } => {
            let cfg = config(&common, TestConfig::data_workflow())?;
            let out = common.out_dir.as_deref();
            let r = cmd_evaluate(&train, &test, &cfg, out)?;
            emit(&r, out, format!("overall effect {:.5}, subgroup effect {:?}", r.overall_effect, r.subgroup_effect))
        }
        Command::Simulate { model, c, reps, engine, fixed_k, noise_triples, seed, threads, bin_width, common } => {
            let cfg = config(&common, TestConfig::simulation())?;
            let sim = SimModel::new(model, c).add_noise_covariates(noise_triples);
            sim.validate()?;
            let mut opts = ReplicationOptions::new(reps, engine, seed);
            opts.fixed_k = fixed_k;
            opts.threads = threads;
            let out = common.out_dir.as_deref();
            let r = cmd_simulate(&sim, &cfg, &opts, bin_width, out)?;
            emit(&r, out, format!("rejection rate {:.3} ± {:.3}", r.rejection_rate, r.rejection_se))
        }
        Command::Fixture { kind, rows, seed, output } => {
            write_observations_file(&output, &generate(kind, rows, seed))?;
            println!("wrote {rows} rows to {}", output.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 1 } else { 2 })
        }
    }
}
