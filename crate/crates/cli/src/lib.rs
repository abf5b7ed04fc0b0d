//! Command-line front end: optimal-energy tables, Monte-Carlo sweeps and the
//! validation suite.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use musmse::config::{db_to_linear, parse_snr_list, ConfigFile, SystemConfig};
use musmse::energy::{optimal_training_power, parse_policy_list, EnergyParams};
use musmse::montecarlo::{run_sweep, SweepPlan, SweepReport, TrialOptions};
use serde::{Deserialize, Serialize};

pub mod error;
pub mod manifest;
pub mod validate;

pub use error::{CliError, CliResult};
use manifest::{manifest_path, read_manifest, RunManifest, RunSpec};
use validate::{run_validation, Level};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "MUSMSE_WORKERS";

pub const DEFAULT_SWEEP_SNR: &str = "0,2,4,6,8,10,12,14";
pub const DEFAULT_ENERGY_SNR: &str = "-10,-8,-6,-4,-2,0,2,4,6,8,10,12,14,16,18,20";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "musmse", version, about = "Pilot/data energy allocation and robust sum-MSE precoding")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// Scenario file (TOML). Defaults to the two-user, four-antenna reference.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the block length `n`.
    #[arg(long)]
    pub block_length: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output file; a `<stem>.manifest.json` is written next to it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
    pub format: OutputFormat,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Optimal training power over block lengths and SNRs (no simulation).
    Energy {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        output: OutputArgs,
        /// Block lengths, comma separated.
        #[arg(long = "n", value_delimiter = ',', default_value = "10,100,1000")]
        block_lengths: Vec<usize>,
        /// Average transmit SNRs in dB, comma separated.
        #[arg(long, default_value = DEFAULT_ENERGY_SNR, allow_hyphen_values = true)]
        snr: String,
    },
    /// Monte-Carlo SMSE and BER over an SNR grid.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        output: OutputArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        /// Worker threads; results do not depend on it.
        #[arg(long, env = WORKERS_ENV)]
        workers: Option<usize>,
        /// Average transmit SNRs in dB, comma separated.
        #[arg(long, default_value = DEFAULT_SWEEP_SNR, allow_hyphen_values = true)]
        snr: String,
        /// Policies: optimal, equal, fixed:<E_T>; comma separated.
        #[arg(long, default_value = "optimal,equal")]
        policy: String,
        /// Simulated data vectors per block (capped at n_D).
        #[arg(long, default_value_t = musmse::montecarlo::DEFAULT_DATA_VECTORS)]
        data_vectors: usize,
        /// Rerun the sweep recorded in a manifest; scenario flags are ignored.
        #[arg(long, conflicts_with_all = ["config", "block_length"])]
        manifest: Option<PathBuf>,
    },
    /// Oracle checks of the closed form, derivatives, estimator and duality.
    Validate {
        #[arg(value_enum, default_value_t = Level::Quick)]
        level: Level,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = OutputFormat::Csv)]
        format: OutputFormat,
        /// Replace sqrt(M) by M in the closed form under test.
        #[arg(long, hide = true)]
        mutant: bool,
    },
}

fn config_error(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

pub fn load_scenario(args: &ScenarioArgs) -> CliResult<ConfigFile> {
    let mut file = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            ConfigFile::parse(&text).map_err(config_error)?
        }
        None => ConfigFile::default(),
    };
    if let Some(n) = args.block_length {
        file.block_length = n;
    }
    file.resolve().map_err(config_error)?;
    Ok(file)
}

fn resolve_with_block_length(file: &ConfigFile, n: usize) -> CliResult<SystemConfig> {
    ConfigFile { block_length: n, ..file.clone() }.resolve().map_err(config_error)
}

/// One row of the optimal-energy table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyRow {
    pub n: usize,
    pub snr_db: f64,
    #[serde(rename = "P_T_star")]
    pub p_t_star: f64,
    #[serde(rename = "E_T_star")]
    pub e_t_star: f64,
    pub below_threshold: bool,
    /// Training power when every symbol period gets the same power.
    #[serde(rename = "P_T_equal")]
    pub p_t_equal: f64,
}

pub fn energy_table(file: &ConfigFile, block_lengths: &[usize], snr_db: &[f64]) -> CliResult<Vec<EnergyRow>> {
    let mut rows = Vec::with_capacity(block_lengths.len() * snr_db.len());
    for &n in block_lengths {
        let cfg = resolve_with_block_length(file, n)?;
        for &db in snr_db {
            let cfg = cfg.with_sigma_n2(cfg.average_power() / db_to_linear(db)).map_err(config_error)?;
            let params = EnergyParams::from_config(&cfg);
            let p_t_star = optimal_training_power(&params);
            rows.push(EnergyRow {
                n,
                snr_db: db,
                p_t_star,
                e_t_star: p_t_star * cfg.antennas as f64,
                below_threshold: p_t_star == 0.0,
                p_t_equal: cfg.average_power(),
            });
        }
    }
    Ok(rows)
}

pub fn to_csv<T: Serialize>(rows: &[T]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("rows serialize");
    }
    w.into_inner().expect("in-memory writer")
}

pub fn sweep_csv(report: &SweepReport) -> Vec<u8> {
    to_csv(&report.long_rows())
}

fn write_file(path: &Path, body: &[u8]) -> CliResult<()> {
    std::fs::write(path, body).map_err(|e| CliError::io(path, e))
}

struct Emission<'a> {
    output: &'a OutputArgs,
    run: RunSpec,
    resolved_config: SystemConfig,
    started: SystemTime,
    clock: Instant,
}

impl Emission<'_> {
    fn emit(self, body: &[u8]) -> CliResult<()> {
        let mut manifest = RunManifest {
            tool: "musmse".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            run: self.run,
            resolved_config: self.resolved_config,
            format: self.output.format,
            outputs: Vec::new(),
            started_unix_seconds: self.started.duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            elapsed_seconds: 0.0,
        };
        match &self.output.out {
            Some(path) => {
                write_file(path, body)?;
                let mpath = manifest_path(path);
                manifest.outputs = vec![path.clone()];
                manifest.elapsed_seconds = self.clock.elapsed().as_secs_f64();
                write_file(&mpath, manifest.to_json().as_bytes())?;
            }
            None => {
                std::io::stdout().write_all(body).map_err(|e| CliError::io("<stdout>", e))?;
                manifest.elapsed_seconds = self.clock.elapsed().as_secs_f64();
                eprintln!("{}", manifest.to_json());
            }
        }
        Ok(())
    }
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

pub fn run(cli: Cli) -> CliResult<()> {
    let started = SystemTime::now();
    let clock = Instant::now();
    match cli.command {
        Command::Energy { scenario, output, block_lengths, snr } => {
            let file = load_scenario(&scenario)?;
            let snr_db = parse_snr_list(&snr).map_err(config_error)?;
            if block_lengths.is_empty() {
                return Err(CliError::Config("no block lengths given".into()));
            }
            let rows = energy_table(&file, &block_lengths, &snr_db)?;
            let body = match output.format {
                OutputFormat::Csv => to_csv(&rows),
                OutputFormat::Json => serde_json::to_vec_pretty(&rows).expect("rows serialize"),
            };
            let resolved_config = file.resolve().map_err(config_error)?;
            Emission { output: &output, run: RunSpec::Energy { config: file, block_lengths, snr_db }, resolved_config, started, clock }
                .emit(&body)
        }
        Command::Sweep { scenario, output, seed, trials, workers, snr, policy, data_vectors, manifest } => {
            let workers = workers.unwrap_or_else(default_workers);
            let plan = match manifest {
                Some(path) => match read_manifest(&path)?.run {
                    RunSpec::Sweep { plan, .. } => plan,
                    RunSpec::Energy { .. } => {
                        return Err(CliError::Config(format!("{} is not a sweep manifest", path.display())))
                    }
                },
                None => {
                    let file = load_scenario(&scenario)?;
                    if trials == 0 {
                        return Err(CliError::Config("--trials must be at least 1".into()));
                    }
                    if data_vectors == 0 {
                        return Err(CliError::Config("--data-vectors must be at least 1".into()));
                    }
                    SweepPlan {
                        config: file.resolve().map_err(config_error)?,
                        snr_db: parse_snr_list(&snr).map_err(config_error)?,
                        policies: parse_policy_list(&policy).map_err(config_error)?,
                        trials,
                        seed,
                        options: TrialOptions { max_data_vectors: data_vectors, ..TrialOptions::default() },
                    }
                }
            };
            let report = run_sweep(&plan, workers)?;
            let body = match output.format {
                OutputFormat::Csv => sweep_csv(&report),
                OutputFormat::Json => serde_json::to_vec_pretty(&report).expect("report serializes"),
            };
            let resolved_config = plan.config.clone();
            Emission { output: &output, run: RunSpec::Sweep { plan, workers }, resolved_config, started, clock }.emit(&body)
        }
        Command::Validate { level, seed, format, mutant } => {
            let closed_form: validate::ClosedForm =
                if mutant { validate::mutated_training_power } else { optimal_training_power };
            let report = run_validation(level, closed_form, seed);
            match format {
                OutputFormat::Csv => {
                    for c in &report.checks {
                        println!("{} {} ({:.2} s): {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.seconds, c.detail);
                    }
                }
                OutputFormat::Json => println!("{}", serde_json::to_string_pretty(&report).expect("report serializes")),
            }
            if report.passed() {
                Ok(())
            } else {
                Err(CliError::Validation(report.failures().join(", ")))
            }
        }
    }
}
