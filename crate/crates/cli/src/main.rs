//! Experiment runner for the degenerate-diffusion toolkit.
//!
//! Subcommands mirror the experiment set: `check-hypo`, `kernel-table`,
//! `taylor`, `simulate`, `limits`, `ito`, `density` run one experiment each
//! and write a JSON summary; `report` merges summaries into a consolidated
//! table or, with `--all`, runs the whole battery.
//!
//! Exit codes: 0 when every check passes, 2 on a contract failure, 1 on
//! configuration or execution errors.

mod config;
mod experiments;
mod summary;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::ExperimentConfig;
use summary::{consolidate, RunSummary};

#[derive(Debug)]
pub enum CliError {
    ConfigParse(String),
    Validation(String),
    Io(String),
    SchemaMismatch(String),
    Module(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::ConfigParse(m) => write!(f, "config parse: {m}"),
            CliError::Validation(m) => write!(f, "validation: {m}"),
            CliError::Io(m) => write!(f, "io: {m}"),
            CliError::SchemaMismatch(m) => write!(f, "schema mismatch: {m}"),
            CliError::Module(m) => write!(f, "{m}"),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "kolmodiff",
    version,
    about = "Experiments on degenerate Kolmogorov diffusions: geometry checks, \
             exact kernels, intrinsic calculus, Monte Carlo limits and local densities"
)]
struct Cli {
    /// Worker threads (overrides the KOLMODIFF_THREADS environment variable).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the drift block form and the rank condition.
    CheckHypo(CommonArgs),
    /// Exact-kernel residual checks and a covariance table.
    KernelTable(CommonArgs),
    /// Intrinsic Taylor remainder-order fits and polynomial exactness.
    Taylor(CommonArgs),
    /// Generate an ensemble, export it, and check its moments.
    Simulate(CommonArgs),
    /// Short-time generator limits, tail mass and moment scaling.
    Limits(CommonArgs),
    /// Intrinsic Itô martingale and quadratic-variation checks.
    Ito(CommonArgs),
    /// Green-function estimation, localization series and exit decay.
    Density(CommonArgs),
    /// Merge run summaries into one table, or run the full battery.
    Report(ReportArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// TOML configuration file; explicit flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in model name.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    t: Option<f64>,
    /// Start point, comma separated.
    #[arg(long, value_delimiter = ',')]
    x: Option<Vec<f64>>,
    /// Elapsed time T - t.
    #[arg(long)]
    elapsed: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    n_paths: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Indicator cutoff radius; defaults to half the boundary distance.
    #[arg(long)]
    delta: Option<f64>,
    /// Exponent m in the tail-mass normalization (T-t)^m.
    #[arg(long)]
    tail_exponent: Option<f64>,
    /// Cylinder aperture in (0, 1).
    #[arg(long)]
    eps: Option<f64>,
    /// Dimensionless kernel-density bandwidth factor.
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    grid_per_axis: Option<usize>,
    /// Grid half-width in standard deviations per coordinate.
    #[arg(long)]
    grid_half_sds: Option<f64>,
    /// Localization series truncation order.
    #[arg(long)]
    n_max: Option<usize>,
    /// Domain floor of the prototype averaged model.
    #[arg(long)]
    asian_floor: Option<f64>,
    /// Injected first-order coefficient for the drifted constant model.
    #[arg(long)]
    drift_a1: Option<f64>,
    #[arg(long)]
    out_json: Option<PathBuf>,
    #[arg(long)]
    out_csv: Option<PathBuf>,
    #[arg(long)]
    out_bin: Option<PathBuf>,
}

impl CommonArgs {
    fn resolve(self, experiment: &str) -> Result<ExperimentConfig, CliError> {
        let base = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        let overlay = ExperimentConfig {
            experiment: None,
            model: self.model,
            model_inline: None,
            t: self.t,
            x: self.x,
            elapsed: self.elapsed,
            t_end: self.t_end,
            dt: self.dt,
            n_paths: self.n_paths,
            seed: self.seed,
            delta: self.delta,
            tail_exponent: self.tail_exponent,
            eps: self.eps,
            bandwidth: self.bandwidth,
            grid_per_axis: self.grid_per_axis,
            grid_half_sds: self.grid_half_sds,
            n_max: self.n_max,
            asian_floor: self.asian_floor,
            drift_a1: self.drift_a1,
            out_json: self.out_json,
            out_csv: self.out_csv,
            out_bin: self.out_bin,
        };
        let merged = base.overlay(overlay);
        merged.expect_experiment(experiment)?;
        Ok(merged)
    }
}

#[derive(Args)]
struct ReportArgs {
    /// JSON summaries to merge.
    inputs: Vec<PathBuf>,
    /// Run the default experiment battery and report on it.
    #[arg(long)]
    all: bool,
    /// Output directory for battery summaries.
    #[arg(long, default_value = "reports")]
    out_dir: PathBuf,
    #[arg(long)]
    out_csv: Option<PathBuf>,
    #[arg(long)]
    out_md: Option<PathBuf>,
}

fn run_single(name: &str, args: CommonArgs) -> Result<bool, CliError> {
    let cfg = args.resolve(name)?;
    let summary = experiments::run_named(name, &cfg)?;
    summary.print();
    if let Some(path) = &cfg.out_json {
        summary.write_json(path)?;
    }
    Ok(summary.pass)
}

fn run_report(args: ReportArgs) -> Result<bool, CliError> {
    let mut rows: Vec<(String, RunSummary)> = Vec::new();
    if args.all {
        std::fs::create_dir_all(&args.out_dir).map_err(|e| CliError::Io(e.to_string()))?;
        for (label, cfg) in experiments::default_battery() {
            let name = cfg.experiment.clone().expect("battery sets experiment");
            println!("== {label} ==");
            let summary = experiments::run_named(&name, &cfg)?;
            summary.print();
            let path = args.out_dir.join(format!("{label}.json"));
            summary.write_json(&path)?;
            rows.push((label, summary));
        }
    }
    for path in &args.inputs {
        let summary = RunSummary::read_json(path)?;
        rows.push((path.display().to_string(), summary));
    }
    let (csv, md, all_pass) = consolidate(&rows);
    if let Some(path) = &args.out_csv {
        std::fs::write(path, &csv).map_err(|e| CliError::Io(e.to_string()))?;
    } else if args.all {
        let path = args.out_dir.join("report.csv");
        std::fs::write(path, &csv).map_err(|e| CliError::Io(e.to_string()))?;
    }
    if let Some(path) = &args.out_md {
        std::fs::write(path, &md).map_err(|e| CliError::Io(e.to_string()))?;
    } else if args.all {
        let path = args.out_dir.join("report.md");
        std::fs::write(path, &md).map_err(|e| CliError::Io(e.to_string()))?;
    }
    print!("{md}");
    Ok(all_pass)
}

fn real_main() -> Result<bool, CliError> {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("KOLMODIFF_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        kolmodiff::parallel::init_global_threads(n).map_err(CliError::Validation)?;
    }
    match cli.command {
        Command::CheckHypo(args) => run_single("check-hypo", args),
        Command::KernelTable(args) => run_single("kernel-table", args),
        Command::Taylor(args) => run_single("taylor", args),
        Command::Simulate(args) => run_single("simulate", args),
        Command::Limits(args) => run_single("limits", args),
        Command::Ito(args) => run_single("ito", args),
        Command::Density(args) => run_single("density", args),
        Command::Report(args) => run_report(args),
    }
}

fn main() {
    let code = match real_main() {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    };
    std::process::exit(code);
}
