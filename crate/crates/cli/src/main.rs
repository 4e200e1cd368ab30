use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand};
use failsafe_cli::config::{self, Overrides};
use failsafe_cli::run::{execute, exit_code, resolve_out_dir, RunManifest, Selector};
use failsafe_core::dynamics::FaultVector;
use failsafe_core::scenario::{MetricsReport, ScenarioConfig};
use failsafe_core::tdm::Strategy;

#[derive(Parser)]
#[command(
    name = "failsafe",
    version,
    about = "Fail-safe parking of a faulty vehicle in an ACC string"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and export traces, plot data and a metrics summary.
    Run(RunArgs),
    /// Check a configuration file and list every violated constraint.
    Validate { config: PathBuf },
    /// Print the built-in default configuration as TOML.
    DefaultConfig,
}

#[derive(clap::Args)]
struct RunArgs {
    /// Scenario configuration (TOML). Built-in defaults when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory. Defaults to $FAILSAFE_OUTPUT_ROOT, else ./failsafe-output.
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "single")]
    suite: Selector,
    /// Override the run name.
    #[arg(long)]
    name: Option<String>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// Plant fault as `f1,f2`, e.g. `0.5,1`.
    #[arg(long, value_parser = parse_fault)]
    fault: Option<FaultVector>,
    /// Give the controller the exact plant fault.
    #[arg(long)]
    reconfigure: Option<bool>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum StrategyArg {
    Bil,
    Bol,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Bil => Strategy::BrakeInLane,
            StrategyArg::Bol => Strategy::BrakeOutOfLane,
        }
    }
}

fn parse_fault(s: &str) -> Result<FaultVector, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [f1, f2] = parts[..] else {
        return Err(format!("expected f1,f2, got {s:?}"));
    };
    let parse = |v: &str| v.parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    let f = FaultVector::new(parse(f1)?, parse(f2)?);
    f.validate().map_err(|e| e.to_string())?;
    Ok(f)
}

fn load(path: Option<&PathBuf>) -> Result<ScenarioConfig> {
    match path {
        Some(p) => config::load(p),
        None => Ok(ScenarioConfig::default()),
    }
}

fn cell(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}"))
        .unwrap_or_else(|| "-".into())
}

fn print_summary(metrics: &[&MetricsReport]) {
    println!(
        "{:<22} {:>10} {:>14} {:>15} {:>12} {:>13} {:>13}",
        "run", "stop [s]", "distance [m]", "gap close [s]", "e_tg(t_b)", "max d_y err", "max r err"
    );
    for m in metrics {
        println!(
            "{:<22} {:>10} {:>14} {:>15} {:>12} {:>13} {:>13}",
            m.name,
            cell(m.stop_time, 3),
            cell(m.stop_distance, 3),
            cell(m.tv_gap_closing_time, 3),
            cell(m.e_tg_at_t_b, 3),
            cell(m.max_d_y_error, 6),
            cell(m.max_r_error, 6),
        );
    }
}

fn run(args: RunArgs) -> Result<(), (u8, anyhow::Error)> {
    let base = load(args.config.as_ref()).map_err(|e| (1, e))?;
    let overrides = Overrides {
        name: args.name,
        strategy: args.strategy.map(Strategy::from),
        fault: args.fault,
        reconfigure: args.reconfigure,
    };
    let manifest = RunManifest {
        config: overrides.apply(base),
        out_dir: resolve_out_dir(args.out),
        selector: args.suite,
    };
    let runs = execute(&manifest).map_err(|e| (exit_code(&e), e))?;
    print_summary(&runs.iter().map(|r| &r.metrics).collect::<Vec<_>>());
    println!("outputs written to {}", manifest.out_dir.display());
    Ok(())
}

fn validate(path: PathBuf) -> Result<(), (u8, anyhow::Error)> {
    let cfg = config::load(&path).map_err(|e| (1, e))?;
    let diagnostics = cfg.diagnostics();
    if diagnostics.is_empty() {
        println!("{}: ok", path.display());
        return Ok(());
    }
    for d in &diagnostics {
        println!("{d}");
    }
    Err((
        1,
        anyhow!("{}: {} problem(s)", path.display(), diagnostics.len()),
    ))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Validate { config } => validate(config),
        Command::DefaultConfig => config::to_toml(&ScenarioConfig::default())
            .map(|t| print!("{t}"))
            .map_err(|e| (2, e)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(code)
        }
    }
}
