use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use failsafe_core::dynamics::FaultVector;
use failsafe_core::scenario::{
    error_metrics, experiment_suite, run_suite, ScenarioConfig, ScenarioError, SuiteRun,
    BASELINE_NAME,
};
use failsafe_core::tdm::Strategy;

use crate::config::to_toml;
use crate::export;

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_ENV: &str = "FAILSAFE_OUTPUT_ROOT";
pub const DEFAULT_OUTPUT_ROOT: &str = "failsafe-output";

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Selector {
    /// The configured scenario only.
    Single,
    /// Both strategies without fault plus each fault without and with
    /// reconfiguration.
    Experiments,
}

#[derive(Debug, Clone)]
pub struct RunManifest {
    pub config: ScenarioConfig,
    pub out_dir: PathBuf,
    pub selector: Selector,
}

/// Output directory from the flag, else the environment, else a default.
pub fn resolve_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

/// Exit status for an error: 1 for invalid configuration, 2 for everything
/// that goes wrong once the simulation has started.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    let invalid = err.chain().any(|c| {
        c.is::<toml::de::Error>()
            || matches!(
                c.downcast_ref::<ScenarioError>(),
                Some(ScenarioError::InvalidConfig(_))
            )
    });
    if invalid {
        1
    } else {
        2
    }
}

/// The scenarios to simulate and the names of those to export. A single
/// faulty or reconfigured brake-in-lane run brings its fault-free baseline
/// along so error metrics can be computed.
fn plan(manifest: &RunManifest) -> (Vec<ScenarioConfig>, Vec<String>) {
    let cfg = &manifest.config;
    match manifest.selector {
        Selector::Experiments => {
            let suite = experiment_suite(cfg);
            let names = suite.iter().map(|c| c.name.clone()).collect();
            (suite, names)
        }
        Selector::Single => {
            let mut configs = vec![cfg.clone()];
            let is_baseline = !cfg.reconfigure && cfg.plant_fault == FaultVector::NOMINAL;
            if cfg.strategy == Strategy::BrakeInLane && !is_baseline && cfg.name != BASELINE_NAME {
                configs.push(ScenarioConfig {
                    name: BASELINE_NAME.to_string(),
                    plant_fault: FaultVector::NOMINAL,
                    reconfigure: false,
                    ..cfg.clone()
                });
            }
            (configs, vec![cfg.name.clone()])
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_run(dir: &Path, run: &SuiteRun, baseline: Option<&SuiteRun>) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let trace = &run.trace;
    export::write_trace(trace, create(&dir.join("trace.csv"))?)?;
    export::write_plot_data(trace, create(&dir.join("plot.csv"))?)?;
    fs::write(dir.join("config.toml"), to_toml(&trace.config)?)?;
    serde_json::to_writer_pretty(create(&dir.join("events.json"))?, &trace.events)?;
    if run.metrics.max_d_y_error.is_some() {
        if let Some(b) = baseline {
            let errors = error_metrics(trace, &b.trace)?;
            export::write_errors(trace, &errors, create(&dir.join("errors.csv"))?)?;
        }
    }
    Ok(())
}

/// Validate, simulate and export. Nothing is written unless every scenario
/// is valid. Returns the exported runs.
pub fn execute(manifest: &RunManifest) -> Result<Vec<SuiteRun>> {
    let (configs, names) = plan(manifest);
    for c in &configs {
        c.validate()
            .with_context(|| format!("scenario {}", c.name))?;
    }
    let runs = run_suite(&configs)?;
    let baseline = runs.iter().find(|r| r.trace.config.name == BASELINE_NAME);
    let exported: Vec<&SuiteRun> = names
        .iter()
        .filter_map(|n| runs.iter().find(|r| &r.trace.config.name == n))
        .collect();

    let out = &manifest.out_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for run in &exported {
        write_run(&out.join(&run.trace.config.name), run, baseline)?;
    }
    let rows: Vec<_> = exported
        .iter()
        .map(|r| (&r.metrics, r.trace.config.strategy.as_str()))
        .collect();
    export::write_summary_csv(&rows, create(&out.join("summary.csv"))?)?;
    let metrics: Vec<_> = exported.iter().map(|r| &r.metrics).collect();
    export::write_summary_json(&metrics, create(&out.join("summary.json"))?)?;
    Ok(exported.into_iter().cloned().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(config: ScenarioConfig, selector: Selector) -> RunManifest {
        RunManifest {
            config,
            out_dir: PathBuf::new(),
            selector,
        }
    }

    #[test]
    fn experiment_plan_has_six_runs() {
        let (configs, names) = plan(&manifest(ScenarioConfig::default(), Selector::Experiments));
        assert_eq!(configs.len(), 6);
        assert_eq!(names.len(), 6);
    }

    #[test]
    fn faulty_single_run_brings_baseline() {
        let cfg = ScenarioConfig {
            plant_fault: FaultVector::STEERING_HALF,
            ..ScenarioConfig::default()
        };
        let (configs, names) = plan(&manifest(cfg, Selector::Single));
        assert_eq!(configs.len(), 2);
        assert_eq!(configs[1].name, BASELINE_NAME);
        assert_eq!(names, vec!["default".to_string()]);

        let (configs, _) = plan(&manifest(ScenarioConfig::default(), Selector::Single));
        assert_eq!(configs.len(), 1);
        let bol = ScenarioConfig {
            strategy: Strategy::BrakeOutOfLane,
            plant_fault: FaultVector::STEERING_HALF,
            ..ScenarioConfig::default()
        };
        assert_eq!(plan(&manifest(bol, Selector::Single)).0.len(), 1);
    }

    #[test]
    fn exit_codes() {
        let invalid = anyhow::Error::new(ScenarioError::InvalidConfig(vec!["dt".into()]));
        assert_eq!(exit_code(&invalid.context("scenario x")), 1);
        let abort = anyhow::Error::new(ScenarioError::NonFinite {
            vehicle: failsafe_core::scenario::Vehicle::Following,
            t: 1.0,
        });
        assert_eq!(exit_code(&abort), 2);
        let parse = crate::config::parse("dt = ").unwrap_err();
        assert_eq!(exit_code(&parse), 1);
    }
}
