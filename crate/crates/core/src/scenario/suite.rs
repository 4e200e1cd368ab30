use rayon::prelude::*;

use crate::dynamics::FaultVector;
use crate::tdm::Strategy;

use super::{run_scenario, MetricsReport, ScenarioConfig, ScenarioError, SimTrace};

/// Run name of the fault-free brake-in-lane reference.
pub const BASELINE_NAME: &str = "bil_nominal";

/// The six experiments: both strategies without fault, then each fault on
/// brake-in-lane without and with reconfiguration.
pub fn experiment_suite(base: &ScenarioConfig) -> Vec<ScenarioConfig> {
    let run = |name: &str, strategy, plant_fault, reconfigure| ScenarioConfig {
        name: name.to_string(),
        strategy,
        plant_fault,
        reconfigure,
        ..base.clone()
    };
    use Strategy::*;
    vec![
        run(BASELINE_NAME, BrakeInLane, FaultVector::NOMINAL, false),
        run("bol_nominal", BrakeOutOfLane, FaultVector::NOMINAL, false),
        run("bil_f1", BrakeInLane, FaultVector::STEERING_HALF, false),
        run(
            "bil_f2",
            BrakeInLane,
            FaultVector::REAR_STIFFNESS_HALF,
            false,
        ),
        run(
            "bil_f1_reconfigured",
            BrakeInLane,
            FaultVector::STEERING_HALF,
            true,
        ),
        run(
            "bil_f2_reconfigured",
            BrakeInLane,
            FaultVector::REAR_STIFFNESS_HALF,
            true,
        ),
    ]
}

#[derive(Debug, Clone)]
pub struct SuiteRun {
    pub trace: SimTrace,
    pub metrics: MetricsReport,
}

/// Run `configs` in parallel and summarize them with [`summarize`].
pub fn run_suite(configs: &[ScenarioConfig]) -> Result<Vec<SuiteRun>, ScenarioError> {
    let traces: Vec<SimTrace> = configs
        .par_iter()
        .map(run_scenario)
        .collect::<Result<_, _>>()?;
    summarize(traces)
}

/// Compute metrics for finished runs. Brake-in-lane runs are compared against
/// the run named [`BASELINE_NAME`] when it is part of the set.
pub fn summarize(traces: Vec<SimTrace>) -> Result<Vec<SuiteRun>, ScenarioError> {
    let baseline = traces.iter().find(|t| t.config.name == BASELINE_NAME);
    let metrics: Vec<MetricsReport> = traces
        .iter()
        .map(|trace| {
            let reference = baseline.filter(|b| {
                trace.config.strategy == Strategy::BrakeInLane
                    && b.records.len() == trace.records.len()
                    && b.config.dt == trace.config.dt
            });
            MetricsReport::compute(trace, reference)
        })
        .collect::<Result<_, _>>()?;
    Ok(traces
        .into_iter()
        .zip(metrics)
        .map(|(trace, metrics)| SuiteRun { trace, metrics })
        .collect())
}
