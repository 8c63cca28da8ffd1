//! Command-line front end for the counterfactual-invariance audit pipeline.
//!
//! Exit codes: 0 on success, 1 on configuration or hard runtime errors,
//! 2 when a sweep or report completed but some cells carry error
//! annotations.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cfaudit::citest::{build_sample_bank, CitConfig};
use cfaudit::report::{append_jsonl, report_path};
use cfaudit::runner::sweep::claim_out_dir;
use cfaudit::runner::{
    correlation_report, prepare_bundle, prepare_classifier, prepare_data, report_csv_string,
    run_sweep, ExperimentConfig, SweepResult,
};
use cfaudit::scm::Variant;
use cfaudit::zoo::Family;
use cfaudit::{baselines, runner, Error, Result};

#[derive(Parser)]
#[command(
    name = "cfaudit",
    version,
    about = "Audit binary classifiers for counterfactual invariance on synthetic causal benchmarks"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML experiment configuration (see docs/config.md).
    #[arg(long, conflicts_with = "profile")]
    config: Option<PathBuf>,
    /// Built-in configuration: `desk` (default) or `paper`.
    #[arg(long)]
    profile: Option<String>,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the worker thread count.
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, &self.profile) {
            (Some(path), _) => ExperimentConfig::from_path(path)?,
            (None, Some(profile)) => ExperimentConfig::from_profile(profile)?,
            (None, None) => ExperimentConfig::desk(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(workers) = self.workers {
            cfg.workers = workers;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the causal specifications and train/test splits.
    GenData(Common),
    /// Generate data and train the generative bundle per dataset.
    TrainGen(Common),
    /// Generate data and train the full classifier pool per dataset.
    TrainZoo(Common),
    /// Run all three tests for a single classifier.
    Test {
        #[command(flatten)]
        common: Common,
        /// Dataset variant name, e.g. `linear`.
        #[arg(long)]
        dataset: String,
        /// Classifier family name, e.g. `logistic`.
        #[arg(long)]
        family: String,
        /// Training seed of the classifier within its family.
        #[arg(long = "zoo-seed", default_value_t = 0)]
        zoo_seed: u64,
        /// Which test(s) to run.
        #[arg(long, default_value = "all", value_parser = ["all", "cit-lr", "dp", "eo"])]
        method: String,
    },
    /// Run the full sweep: every dataset, every pool classifier, all tests.
    Sweep(Common),
    /// Correlate log p-values with the interventional ground truth.
    Report(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::GenData(common) => {
            let cfg = common.resolve()?;
            claim_out_dir(&cfg)?;
            for variant in cfg.variants()? {
                let arts = prepare_data(&cfg, variant)?;
                println!(
                    "{}: {} train rows, {} test rows under {}",
                    variant.name(),
                    arts.train.len(),
                    arts.test.len(),
                    cfg.out_dir.join("datasets").join(variant.name()).display()
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::TrainGen(common) => {
            let cfg = common.resolve()?;
            claim_out_dir(&cfg)?;
            for variant in cfg.variants()? {
                let arts = prepare_data(&cfg, variant)?;
                let bundle = prepare_bundle(&cfg, variant, &arts.train)?;
                println!(
                    "{}: bundle {} (latent dim {})",
                    variant.name(),
                    &bundle.fingerprint()[..12],
                    bundle.latent_dim()
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::TrainZoo(common) => {
            let cfg = common.resolve()?;
            claim_out_dir(&cfg)?;
            let families = cfg.family_list()?;
            for variant in cfg.variants()? {
                let arts = prepare_data(&cfg, variant)?;
                let mut count = 0usize;
                for &family in &families {
                    for &seed in &cfg.zoo_seeds {
                        prepare_classifier(&cfg, variant, &arts.train, family, seed)?;
                        count += 1;
                    }
                }
                println!("{}: {} classifiers stored", variant.name(), count);
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Test {
            common,
            dataset,
            family,
            zoo_seed,
            method,
        } => {
            let cfg = common.resolve()?;
            claim_out_dir(&cfg)?;
            run_single_test(&cfg, &dataset, &family, zoo_seed, &method)?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Sweep(common) => {
            let cfg = common.resolve()?;
            let result = run_sweep(&cfg)?;
            let errors = result.error_row_count();
            println!(
                "sweep complete: {} rows ({} with errors) -> {}",
                result.rows.len(),
                errors,
                cfg.out_dir.join("results.csv").display()
            );
            if errors > 0 {
                for row in result.rows.iter().filter(|r| !r.is_ok()) {
                    eprintln!("  {} {}: {}", row.dataset, row.classifier, row.status);
                }
                return Ok(ExitCode::from(2));
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Report(common) => {
            let cfg = common.resolve()?;
            let results_path = cfg.out_dir.join("results.csv");
            let results = SweepResult::read_csv(&results_path)?;
            let cells = correlation_report(&results.rows, cfg.cit.alpha);
            let report_csv = cfg.out_dir.join("report.csv");
            std::fs::write(&report_csv, report_csv_string(&cells))
                .map_err(Error::io_at(&report_csv))?;
            let mut failed = 0usize;
            for cell in &cells {
                match (&cell.error, cell.r) {
                    (None, Some(r)) => println!(
                        "{:<14} {:<7} n={:<4} r={:+.4} slope={:+.4} (clamped {})",
                        cell.dataset, cell.method, cell.n, r,
                        cell.slope.unwrap_or(f64::NAN),
                        cell.clamped
                    ),
                    _ => {
                        failed += 1;
                        println!(
                            "{:<14} {:<7} n={:<4} error: {}",
                            cell.dataset,
                            cell.method,
                            cell.n,
                            cell.error.as_deref().unwrap_or("missing statistics")
                        );
                    }
                }
            }
            println!("report written to {}", report_csv.display());
            let incomplete_rows = results.error_row_count();
            if failed > 0 || incomplete_rows > 0 {
                return Ok(ExitCode::from(2));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn run_single_test(
    cfg: &ExperimentConfig,
    dataset: &str,
    family: &str,
    zoo_seed: u64,
    method: &str,
) -> Result<()> {
    let variant = Variant::from_name(dataset)?;
    let family = Family::from_name(family)?;
    let arts = prepare_data(cfg, variant)?;
    let clf = prepare_classifier(cfg, variant, &arts.train, family, zoo_seed)?;
    let ds = variant.name();

    if method == "all" || method == "cit-lr" {
        let bundle = prepare_bundle(cfg, variant, &arts.train)?;
        let cit_cfg = CitConfig {
            seed: runner::derive_seed(cfg.seed, &format!("cit/{ds}")),
            ..cfg.cit.clone()
        };
        let bank = build_sample_bank(&bundle, &arts.test, &cit_cfg)?;
        let report = bank.evaluate(&clf)?;
        append_jsonl(&report_path(&cfg.out_dir, ds, &report.method), &report)?;
        println!("{}", serde_json::to_string(&report).expect("report serializes"));
    }
    if method == "all" || method == "dp" {
        let report = baselines::dp_test(&clf, &arts.test, cfg.cit.alpha)?;
        append_jsonl(&report_path(&cfg.out_dir, ds, &report.method), &report)?;
        println!("{}", serde_json::to_string(&report).expect("report serializes"));
    }
    if method == "all" || method == "eo" {
        let report = baselines::eo_test(&clf, &arts.test, cfg.cit.alpha)?;
        append_jsonl(&report_path(&cfg.out_dir, ds, &report.method), &report)?;
        println!("{}", serde_json::to_string(&report).expect("report serializes"));
    }
    Ok(())
}
