//! Command-line commands: `fit`, `simulate` and `oracle`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::estimands::{summarize_posterior, summarize_posterior_subjects};
use crate::io::{
    apply_setting, draws_csv, ingest_csv, parse_kv, parse_scenario, read_file, replications_csv, report_csv,
    sha256_hex, subjects_csv, write_file, AteRecord, FitSettings, RunManifest, SoftwareInfo,
};
use crate::mcmc::{run_chains, McmcConfig};
use crate::model::{HyperPriorConfig, OutcomeMode};
use crate::oracle::{run_check, CheckOutcome, Fault, CHECK_NAMES};
use crate::simulation::run_replications;

/// Environment variable holding the worker-thread count.
pub const WORKERS_ENV: &str = "GPCAUSAL_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "gpcausal", version, about = "Causal effects under limited overlap with Gaussian process priors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the model to a CSV file.
    Fit(FitArgs),
    /// Run a simulation scenario.
    Simulate(SimulateArgs),
    /// Run the verification suite.
    Oracle(OracleArgs),
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Input CSV with a header row.
    #[arg(long, required_unless_present = "manifest")]
    pub input: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    pub outcome: Option<String>,
    #[arg(long, required_unless_present = "manifest")]
    pub treatment: Option<String>,
    /// Covariate columns, comma separated.
    #[arg(long, value_delimiter = ',', required_unless_present = "manifest")]
    pub covariates: Vec<String>,
    /// Column used only to order the per-subject table.
    #[arg(long)]
    pub key: Option<String>,
    #[arg(long, value_enum, default_value = "continuous")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    #[arg(long, default_value_t = 10_000)]
    pub burnin: usize,
    #[arg(long, default_value_t = 20_000)]
    pub kept: usize,
    #[arg(long, default_value_t = 80)]
    pub thin: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Settings file in key = value format (sampler and hyperprior keys).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Individual overrides, e.g. `--set l_delta.shape=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Re-run exactly the fit recorded in a manifest.
    #[arg(long, conflicts_with_all = ["input", "outcome", "treatment", "covariates", "config", "overrides"])]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ModeArg {
    Continuous,
    Binary,
}

impl From<ModeArg> for OutcomeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Continuous => OutcomeMode::Continuous,
            ModeArg::Binary => OutcomeMode::Binary,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario file in key = value format.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Run only the named checks.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(CHECK_NAMES))]
    pub only: Vec<String>,
    #[arg(long, default_value_t = 20_240_601)]
    pub seed: u64,
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })
}

fn split_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s.split_once('=').ok_or_else(|| Error::Config {
        line: 0,
        reason: format!("override {s:?} is not KEY=VALUE"),
    })?;
    Ok((k.trim().to_ascii_lowercase(), v.trim().to_string()))
}

fn apply_overrides(text: &str, overrides: &[String], mcmc: &mut McmcConfig, hp: &mut HyperPriorConfig) -> Result<()> {
    let mut settings = parse_kv(text)?;
    for o in overrides {
        let (k, v) = split_override(o)?;
        settings.push((0, k, v));
    }
    for (line, k, v) in settings {
        if !apply_setting(line, &k, &v, mcmc, hp)? {
            return Err(Error::Config {
                line,
                reason: format!("unknown key '{k}'"),
            });
        }
    }
    Ok(())
}

fn fit_settings(args: &FitArgs) -> Result<(FitSettings, Option<String>)> {
    if let Some(path) = &args.manifest {
        let manifest = RunManifest::load(path)?;
        let fit = manifest
            .fit
            .ok_or_else(|| Error::Manifest(format!("{} does not describe a fit", path.display())))?;
        return Ok((fit, manifest.input_digest));
    }
    let mut mcmc = McmcConfig {
        n_burnin: args.burnin,
        n_kept_iterations: args.kept,
        thin: args.thin,
        n_chains: args.chains,
        seed: args.seed,
        ..Default::default()
    };
    let mut hp = HyperPriorConfig::default();
    let text = match &args.config {
        Some(p) => String::from_utf8_lossy(&read_file(p)?).into_owned(),
        None => String::new(),
    };
    apply_overrides(&text, &args.overrides, &mut mcmc, &mut hp)?;
    let missing = |what: &str| Error::invalid("fit", format!("--{what} is required"));
    Ok((
        FitSettings {
            input: args.input.clone().ok_or_else(|| missing("input"))?,
            outcome: args.outcome.clone().ok_or_else(|| missing("outcome"))?,
            treatment: args.treatment.clone().ok_or_else(|| missing("treatment"))?,
            covariates: args.covariates.clone(),
            key_column: args.key.clone(),
            mode: args.mode.into(),
            mcmc,
            hyperpriors: hp,
        },
        None,
    ))
}

/// Fits the model and writes draws.csv, summary.json, subjects.csv and
/// manifest.json into the output directory.
pub fn cmd_fit(args: &FitArgs) -> Result<RunManifest> {
    let started = Instant::now();
    let (settings, expected_digest) = fit_settings(args)?;
    settings.mcmc.validate()?;
    settings.hyperpriors.validate()?;
    let ingested = ingest_csv(
        &settings.input,
        &settings.outcome,
        &settings.treatment,
        &settings.covariates,
        settings.key_column.as_deref(),
        settings.mode,
    )?;
    if let Some(d) = expected_digest {
        if d != ingested.digest {
            return Err(Error::Manifest(format!(
                "input {} has changed since the manifest was written",
                settings.input.display()
            )));
        }
    }
    let draws = run_chains(&ingested.data, &settings.hyperpriors, &settings.mcmc, 0)?;
    let summary = summarize_posterior(&draws)?;
    let subjects = summarize_posterior_subjects(&draws, ingested.key.as_deref())?;

    ensure_dir(&args.out)?;
    let record = AteRecord {
        estimand: match settings.mode {
            OutcomeMode::Continuous => "average treatment effect".into(),
            OutcomeMode::Binary => "risk difference".into(),
        },
        mode: settings.mode,
        chains: settings.mcmc.n_chains,
        summary,
    };
    let summary_json = serde_json::to_string_pretty(&record).map_err(|e| Error::Manifest(e.to_string()))?;
    write_file(&args.out.join("draws.csv"), draws_csv(&draws).as_bytes())?;
    write_file(&args.out.join("summary.json"), summary_json.as_bytes())?;
    write_file(&args.out.join("subjects.csv"), subjects_csv(&subjects).as_bytes())?;
    let manifest = RunManifest {
        software: SoftwareInfo::default(),
        command: "fit".into(),
        fit: Some(settings),
        scenario: None,
        input_digest: Some(ingested.digest),
        covariate_transforms: ingested.transforms,
        chains: draws.diagnostics(),
        wall_time_secs: started.elapsed().as_secs_f64(),
        outputs: ["draws.csv", "summary.json", "subjects.csv"].map(String::from).to_vec(),
    };
    write_file(&args.out.join("manifest.json"), manifest.to_json()?.as_bytes())?;
    Ok(manifest)
}

/// Runs a scenario and writes report.csv, replications.csv and manifest.json.
pub fn cmd_simulate(args: &SimulateArgs) -> Result<RunManifest> {
    let started = Instant::now();
    let bytes = read_file(&args.spec)?;
    let mut text = String::from_utf8_lossy(&bytes).into_owned();
    for o in &args.overrides {
        let (k, v) = split_override(o)?;
        text.push_str(&format!("\n{k} = {v}"));
    }
    let spec = parse_scenario(&text)?;
    let report = run_replications(&spec)?;
    ensure_dir(&args.out)?;
    write_file(&args.out.join("report.csv"), report_csv(&report).as_bytes())?;
    write_file(&args.out.join("replications.csv"), replications_csv(&report).as_bytes())?;
    let manifest = RunManifest {
        software: SoftwareInfo::default(),
        command: "simulate".into(),
        fit: None,
        scenario: Some(spec),
        input_digest: Some(sha256_hex(&bytes)),
        covariate_transforms: Vec::new(),
        chains: Vec::new(),
        wall_time_secs: started.elapsed().as_secs_f64(),
        outputs: ["report.csv", "replications.csv"].map(String::from).to_vec(),
    };
    write_file(&args.out.join("manifest.json"), manifest.to_json()?.as_bytes())?;
    if !report.valid {
        let failed = report.rows.iter().filter(|r| r.gp.is_none()).count();
        return Err(Error::TooManyFailures {
            failed,
            total: report.rows.len(),
        });
    }
    Ok(manifest)
}

/// Runs the selected checks; all of them when `only` is empty.
pub fn cmd_oracle(args: &OracleArgs) -> Result<Vec<CheckOutcome>> {
    let fault = args.inject_fault.as_deref().map(str::parse::<Fault>).transpose()?;
    let names: Vec<&str> = if args.only.is_empty() {
        CHECK_NAMES.to_vec()
    } else {
        args.only.iter().map(String::as_str).collect()
    };
    names.into_iter().map(|n| run_check(n, args.seed, fault)).collect()
}

/// Sizes the global worker pool from the environment, if set.
pub fn configure_workers() -> Result<()> {
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| Error::invalid("workers", format!("{WORKERS_ENV}={v:?} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::invalid("workers", e.to_string()))?;
    }
    Ok(())
}
