//! The `paramsync` command line.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 bad config or usage,
//! 3 deadlock or a run that did not complete, 4 divergence.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{validate_config, ExperimentConfig, Mode, Paradigm};
use crate::engine::Problem;
use crate::metrics::{
    compute_regret, reference_optimum, write_loss_csv, write_regret_csv, write_report_csv, MetricsError,
    MetricsReport,
};
use crate::runner::{deadline_guard, start_threaded, RunFailure};
use crate::simnet::{run_simulation, RunOutput, SimError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DEADLOCK: i32 = 3;
pub const EXIT_DIVERGENCE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "paramsync", version, about = "Compare parameter-server synchronization paradigms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Experiment config file (`key = value` lines).
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one experiment; writes report.csv, loss.csv and (convex models) regret.csv.
    Run {
        #[command(flatten)]
        common: Common,
        /// Also write trace.tsv.
        #[arg(long)]
        trace: bool,
        /// Wall-clock budget in seconds (threaded mode only).
        #[arg(long)]
        deadline: Option<f64>,
    },
    /// Run the same scenario under several paradigms; writes compare.csv.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "bsp,asp,ssp,dssp")]
        paradigms: Vec<Paradigm>,
    },
    /// Run SSP over a range of thresholds; writes sweep_ssp.csv.
    SweepSsp {
        #[command(flatten)]
        common: Common,
        /// Inclusive threshold range `lo..hi`.
        #[arg(long = "s", default_value = "3..15", value_parser = parse_range)]
        s: (u64, u64),
    },
    /// Validate a config without running it.
    Check { config: PathBuf },
}

fn parse_range(s: &str) -> Result<(u64, u64), String> {
    let (lo, hi) = s.split_once("..").ok_or_else(|| format!("expected lo..hi, got '{s}'"))?;
    let hi = hi.strip_prefix('=').unwrap_or(hi);
    let lo: u64 = lo.trim().parse().map_err(|_| format!("bad lower bound '{lo}'"))?;
    let hi: u64 = hi.trim().parse().map_err(|_| format!("bad upper bound '{hi}'"))?;
    if lo > hi {
        return Err(format!("empty range {lo}..{hi}"));
    }
    Ok((lo, hi))
}

/// A failure that maps to one exit code and one diagnostic line.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::new(EXIT_OTHER, format!("io error: {}: {e}", path.display()))
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(e) => Failure::new(EXIT_CONFIG, format!("bad config: {e}")),
            SimError::Deadlock { stuck, .. } => {
                Failure::new(EXIT_DEADLOCK, format!("deadlock: workers {stuck:?} never finished"))
            }
            SimError::Divergence(e) => Failure::new(EXIT_DIVERGENCE, format!("divergence: {e}")),
            SimError::Server(e) => Failure::new(EXIT_OTHER, format!("server error: {e}")),
        }
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        Failure::new(EXIT_OTHER, format!("output error: {e}"))
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    let mut config = ExperimentConfig::parse(&text).map_err(|e| Failure::new(EXIT_CONFIG, format!("bad config: {e}")))?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    validate_config(config).map_err(|e| Failure::new(EXIT_CONFIG, format!("bad config: {e}")))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|e| Failure::io(&path, e))
}

/// Runs one config in its configured mode.
fn execute(config: &ExperimentConfig, deadline: Option<f64>) -> Result<RunOutput, Failure> {
    match config.mode {
        Mode::Simulated => Ok(run_simulation(config)?),
        Mode::Threaded => {
            let handle = start_threaded(config).map_err(|e| Failure::new(EXIT_CONFIG, format!("bad config: {e}")))?;
            if let Some(budget) = deadline {
                deadline_guard(&handle, budget);
            }
            let out = handle.join();
            match out.failure {
                None => Ok(out.output),
                Some(RunFailure::Server(e)) => Err(SimError::from(e).into()),
                Some(RunFailure::Aborted) => Err(Failure::new(
                    EXIT_DEADLOCK,
                    format!("aborted: workers {:?} did not finish in time", out.stuck),
                )),
                Some(RunFailure::Panic { worker, message }) => {
                    Err(Failure::new(EXIT_OTHER, format!("worker {worker} failed: {message}")))
                }
            }
        }
    }
}

fn cmd_run(common: &Common, trace: bool, deadline: Option<f64>) -> Result<(), Failure> {
    let config = load_config(&common.config, common.seed)?;
    let mut out = execute(&config, deadline)?;
    fs::create_dir_all(&common.out).map_err(|e| Failure::io(&common.out, e))?;
    if config.model_kind.is_convex() {
        let problem = Problem::from_config(&config);
        let optimum = reference_optimum(&problem.model, &problem.dataset, &problem.initial.values)?;
        let regret = compute_regret(config.model_kind, &out.log.update_losses, optimum.loss)?;
        write_regret_csv(create(&common.out, "regret.csv")?, &regret)?;
        out.report.regret = Some(regret);
    }
    let label = config.paradigm.name().to_string();
    write_report_csv(create(&common.out, "report.csv")?, &[(label, &out.report)], true)?;
    write_loss_csv(create(&common.out, "loss.csv")?, &out.report.loss_curve)?;
    if trace {
        let path = common.out.join("trace.tsv");
        out.trace.write_tsv(create(&common.out, "trace.tsv")?).map_err(|e| Failure::io(&path, e))?;
    }
    let r = &out.report;
    println!(
        "{}: {} updates in {}s, final loss {}, max staleness {}",
        config.paradigm,
        r.updates,
        r.duration,
        r.final_loss.map_or("-".to_string(), |l| l.to_string()),
        r.max_staleness()
    );
    Ok(())
}

fn run_labelled(configs: Vec<(String, ExperimentConfig)>, out_dir: &Path, file: &str) -> Result<(), Failure> {
    let mut reports: Vec<(String, MetricsReport)> = Vec::new();
    for (label, config) in configs {
        let config = validate_config(config).map_err(|e| Failure::new(EXIT_CONFIG, format!("bad config: {e}")))?;
        let out = execute(&config, None)?;
        println!("{label}: time to target {}", out.report.time_to_target.map_or("-".to_string(), |t| t.to_string()));
        reports.push((label, out.report));
    }
    fs::create_dir_all(out_dir).map_err(|e| Failure::io(out_dir, e))?;
    let rows: Vec<(String, &MetricsReport)> = reports.iter().map(|(l, r)| (l.clone(), r)).collect();
    write_report_csv(create(out_dir, file)?, &rows, false)?;
    Ok(())
}

fn cmd_compare(common: &Common, paradigms: &[Paradigm]) -> Result<(), Failure> {
    let base = load_config(&common.config, common.seed)?;
    let configs = paradigms
        .iter()
        .map(|&p| (p.name().to_string(), ExperimentConfig { paradigm: p, ..base.clone() }))
        .collect();
    run_labelled(configs, &common.out, "compare.csv")
}

fn cmd_sweep(common: &Common, (lo, hi): (u64, u64)) -> Result<(), Failure> {
    let base = load_config(&common.config, common.seed)?;
    let configs = (lo..=hi)
        .map(|s| {
            let mut c = ExperimentConfig { paradigm: Paradigm::Ssp, ..base.clone() };
            c.staleness.s_lower = s;
            (format!("ssp-{s}"), c)
        })
        .collect();
    run_labelled(configs, &common.out, "sweep_ssp.csv")
}

fn cmd_check(path: &Path) -> Result<(), Failure> {
    let c = load_config(path, None)?;
    println!(
        "ok: {} with {} workers, s_lower={} r_max={}, {} on {} examples, {} mode",
        c.paradigm,
        c.worker_count,
        c.staleness.s_lower,
        c.staleness.r_max,
        c.model_kind,
        c.dataset_size,
        c.mode.name()
    );
    Ok(())
}

/// Entry point shared by the binary and the tests. `argv[0]` is the program
/// name.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Run { common, trace, deadline } => cmd_run(common, *trace, *deadline),
        Command::Compare { common, paradigms } => cmd_compare(common, paradigms),
        Command::SweepSsp { common, s } => cmd_sweep(common, *s),
        Command::Check { config } => cmd_check(config),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}
