//! Three-vehicle string simulation.
//!
//! A lead vehicle (LV) cruises, a following vehicle (FV) and a trailing
//! vehicle (TV) run time-gap ACC. At the injection time the FV is declared
//! faulty: its safety channel (TDM + NMPC) takes over and parks it on the
//! shoulder, while the TV first keeps following the FV and, once the FV has
//! left the lane, retargets to the LV.

mod metrics;
mod suite;

pub use metrics::{
    error_metrics, gap_closing_time, stop_condition, stop_index, stop_metrics, ErrorSeries,
    MetricsReport, GAP_CLOSED_THRESHOLD, GAP_OPEN_THRESHOLD, SETTLE_MARGIN, STOP_LATERAL_TOL,
    STOP_VELOCITY_TOL,
};
pub use suite::{experiment_suite, run_suite, summarize, SuiteRun, BASELINE_NAME};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acc::{
    acc_longitudinal_command, cruise_command, time_gap_error, AccConfig, AccError, PdState,
};
use crate::dynamics::{
    lateral_acceleration, step_discrete, ActuationModel, ControlInput, DynamicsError, FaultVector,
    VehicleParams, VehicleState, V_X_MIN,
};
use crate::ocp::{MpcController, OcpConfig, OcpError, SolveStatus};
use crate::tdm::{fsm_step, LaneGeometry, Mode, Strategy, TdmInputs, TdmState};
use crate::trajectory::{sample_reference, QuinticPath, ReferencePoint, TrajectoryError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("invalid scenario configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("{vehicle} state became non-finite at t = {t} s")]
    NonFinite { vehicle: Vehicle, t: f64 },
    #[error("ACC failure for {vehicle} at t = {t} s: {source}")]
    Acc {
        vehicle: Vehicle,
        t: f64,
        source: AccError,
    },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Ocp(#[from] OcpError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("traces are not aligned: {0}")]
    Misaligned(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Vehicle {
    Lead,
    Following,
    Trailing,
}

impl Vehicle {
    pub const ALL: [Vehicle; 3] = [Vehicle::Lead, Vehicle::Following, Vehicle::Trailing];

    pub fn as_str(&self) -> &'static str {
        match self {
            Vehicle::Lead => "lv",
            Vehicle::Following => "fv",
            Vehicle::Trailing => "tv",
        }
    }

    fn index(&self) -> usize {
        *self as usize
    }
}

impl std::fmt::Display for Vehicle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Label used for output files.
    pub name: String,
    pub strategy: Strategy,
    /// Fault acting on the FV plant from the injection time on.
    pub plant_fault: FaultVector,
    /// Give the NMPC the exact plant fault at the start of the manoeuvre.
    pub reconfigure: bool,
    /// Time of the fault-classification event [s]; none for a fault-free run.
    pub fault_injection_time: Option<f64>,
    /// Duration of the lateral move to the shoulder [s].
    pub lane_change_duration: f64,
    /// [s]
    pub duration: f64,
    /// Simulation step [s]. The NMPC runs every `nmpc.dt / dt` steps.
    pub dt: f64,
    /// Acceleration lag of every plant [s].
    pub actuation_tau: f64,
    /// Reserved for stochastic extensions; the simulation draws no random
    /// numbers.
    pub seed: u64,
    /// ACC tuning. `v_ref` is also the initial speed of the whole string and
    /// `h_dg` its initial time gap.
    pub acc: AccConfig,
    pub vehicle: VehicleParams,
    pub geometry: LaneGeometry,
    pub nmpc: OcpConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            name: "default".to_string(),
            strategy: Strategy::BrakeInLane,
            plant_fault: FaultVector::NOMINAL,
            reconfigure: false,
            fault_injection_time: Some(1.0),
            lane_change_duration: 4.5,
            duration: 30.0,
            dt: 0.01,
            actuation_tau: 0.1,
            seed: 0,
            acc: AccConfig::default(),
            vehicle: VehicleParams::default(),
            geometry: LaneGeometry::default(),
            nmpc: OcpConfig::default(),
        }
    }
}

fn positive(name: &str, value: f64, errors: &mut Vec<String>) {
    if !(value.is_finite() && value > 0.0) {
        errors.push(format!("{name}: must be positive, got {value}"));
    }
}

impl ScenarioConfig {
    /// Number of simulation steps (records are `0..=steps`).
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    /// Simulation steps per NMPC sample.
    pub fn controller_period(&self) -> usize {
        (self.nmpc.dt / self.dt).round().max(1.0) as usize
    }

    /// Every violated constraint, as `field: message` strings.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut errors = Vec::new();
        positive("dt", self.dt, &mut errors);
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            errors.push(format!(
                "duration: must be nonnegative, got {}",
                self.duration
            ));
        }
        positive(
            "lane_change_duration",
            self.lane_change_duration,
            &mut errors,
        );
        if !(self.actuation_tau.is_finite() && self.actuation_tau >= self.dt) {
            errors.push(format!(
                "actuation_tau: must be at least dt, got {}",
                self.actuation_tau
            ));
        }
        if let Err(e) = self.plant_fault.validate() {
            errors.push(format!("plant_fault: {e}"));
        }
        if let Err(e) = self.vehicle.validate() {
            errors.push(format!("vehicle: {e}"));
        }

        let acc = &self.acc;
        positive("acc.h_dg", acc.h_dg, &mut errors);
        if !(acc.v_ref.is_finite() && acc.v_ref >= V_X_MIN) {
            errors.push(format!(
                "acc.v_ref: must be at least {V_X_MIN}, got {}",
                acc.v_ref
            ));
        }
        if !(acc.a_cmd_bounds[0] < 0.0 && acc.a_cmd_bounds[1] > 0.0) {
            errors.push(format!(
                "acc.a_cmd_bounds: expected min < 0 < max, got {:?}",
                acc.a_cmd_bounds
            ));
        }
        positive(
            "acc.derivative_filter_tau",
            acc.derivative_filter_tau,
            &mut errors,
        );

        errors.extend(self.geometry.diagnostics());
        errors.extend(
            self.nmpc
                .diagnostics()
                .into_iter()
                .map(|e| format!("nmpc.{e}")),
        );

        if self.dt > 0.0 && self.nmpc.dt > 0.0 {
            let ratio = self.nmpc.dt / self.dt;
            if ratio.round() < 1.0 || (ratio - ratio.round()).abs() > 1e-9 * ratio {
                errors.push(format!(
                    "nmpc.dt: must be an integer multiple of dt, got {} with dt = {}",
                    self.nmpc.dt, self.dt
                ));
            }
        }
        if acc.v_ref > self.nmpc.bounds.v_x[1] {
            errors.push(format!(
                "acc.v_ref: exceeds the NMPC speed bound {}",
                self.nmpc.bounds.v_x[1]
            ));
        }

        if let Some(t_inj) = self.fault_injection_time {
            if !(t_inj.is_finite() && t_inj >= 0.0) {
                errors.push(format!(
                    "fault_injection_time: must be nonnegative, got {t_inj}"
                ));
            } else if self.duration.is_finite() && self.duration > 0.0 {
                // Lane change, full braking and the settling window must fit.
                let braking = (acc.v_ref - V_X_MIN).max(0.0) / self.nmpc.bounds.a_x_c[0].abs();
                let needed = t_inj + self.lane_change_duration + braking + SETTLE_MARGIN;
                if self.duration < needed {
                    errors.push(format!(
                        "duration: {} s does not cover the manoeuvre, need at least {needed:.2} s",
                        self.duration
                    ));
                }
            }
        }
        errors
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let d = self.diagnostics();
        if d.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::InvalidConfig(d))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub state: VehicleState,
    /// Input applied from this sample to the next.
    pub input: ControlInput,
}

/// Time-gap errors `h_dg - gap / v` [s]; unset when the pair is out of order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TimeGapErrors {
    pub fv_lv: Option<f64>,
    pub tv_fv: Option<f64>,
    pub tv_lv: Option<f64>,
    /// TV against whichever vehicle it currently follows.
    pub tv_active: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverOutcome {
    Converged,
    MaxIter,
    InfeasibleSoft,
    /// The solve returned an error; the previous input was held.
    Failed,
}

impl SolverOutcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolverOutcome::Converged => "converged",
            SolverOutcome::MaxIter => "max_iter",
            SolverOutcome::InfeasibleSoft => "infeasible_soft",
            SolverOutcome::Failed => "failed",
        }
    }
}

impl From<SolveStatus> for SolverOutcome {
    fn from(s: SolveStatus) -> Self {
        match s {
            SolveStatus::Converged => SolverOutcome::Converged,
            SolveStatus::MaxIter => SolverOutcome::MaxIter,
            SolveStatus::InfeasibleSoft => SolverOutcome::InfeasibleSoft,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub outcome: SolverOutcome,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub max_gap: f64,
    pub slack: f64,
}

/// Safety-channel view of the FV at one sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyRecord {
    pub goal_velocity: f64,
    /// Reference at the current path time.
    pub reference: ReferencePoint,
    /// Lateral acceleration under the applied input, internal model.
    pub a_y_model: f64,
    /// Same with the true plant parameters.
    pub a_y_plant: f64,
    /// Steering bound currently enforced by the NMPC [rad].
    pub delta_bound: f64,
    /// Present on samples at which the NMPC was solved.
    pub solver: Option<SolverDiagnostics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: f64,
    /// Indexed by [`Vehicle`]: lead, following, trailing.
    pub vehicles: [VehicleRecord; 3],
    pub e_tg: TimeGapErrors,
    pub mode: Mode,
    pub safety: Option<SafetyRecord>,
}

impl StepRecord {
    pub fn vehicle(&self, v: Vehicle) -> &VehicleRecord {
        &self.vehicles[v.index()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Event {
    FaultInjected { fault: FaultVector },
    ModeChanged { mode: Mode },
    StrategySelected { strategy: Strategy },
    Reconfigured { fault: FaultVector },
    TvRetargeted,
    SolverFailed { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: f64,
    pub event: Event,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub config: ScenarioConfig,
    /// One record per simulation step, `t = k dt`, `k = 0..=steps`.
    pub records: Vec<StepRecord>,
    pub events: Vec<TraceEvent>,
    pub t_a: Option<f64>,
    pub t_b: Option<f64>,
}

impl SimTrace {
    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    /// Index of the record at time `t` on the uniform grid.
    pub fn index_of(&self, t: f64) -> usize {
        ((t / self.dt()).round() as usize).min(self.records.len().saturating_sub(1))
    }
}

fn pair_error(ego: &VehicleState, preceding: &VehicleState, h_dg: f64) -> Option<f64> {
    time_gap_error(preceding.d_x, ego.d_x, ego.v_x, h_dg).ok()
}

struct SafetyChannel {
    mpc: MpcController,
    path: QuinticPath,
    t_a: f64,
    fault_assumed: FaultVector,
}

/// Simulate one scenario. Aborts only on non-finite states or on invalid
/// configuration; NMPC failures are flagged in the trace and the previous
/// input is held.
pub fn run_scenario(config: &ScenarioConfig) -> Result<SimTrace, ScenarioError> {
    config.validate()?;
    let dt = config.dt;
    let steps = config.steps();
    let period = config.controller_period();
    let acc = &config.acc;
    let params = config.vehicle;
    let plant_act = ActuationModel::from_time_constant(config.actuation_tau, dt)?;
    let inject_step = config
        .fault_injection_time
        .map(|t| (t / dt).round() as usize);
    let shoulder = config.geometry.shoulder_offset();
    let shoulder_long_enough = config.strategy == Strategy::BrakeOutOfLane;

    let gap = acc.h_dg * acc.v_ref;
    let mut states = [
        VehicleState::cruising(acc.v_ref, 2.0 * gap),
        VehicleState::cruising(acc.v_ref, gap),
        VehicleState::cruising(acc.v_ref, 0.0),
    ];
    let mut pd = [PdState::settled(0.0); 3];
    let mut inputs = [ControlInput::default(); 3];
    let mut tdm = TdmState::default();
    let mut safety: Option<SafetyChannel> = None;
    let mut tv_target = Vehicle::Following;
    let mut records = Vec::with_capacity(steps + 1);
    let mut events = Vec::new();

    for k in 0..=steps {
        let t = k as f64 * dt;
        let fault_active = inject_step.is_some_and(|s| k >= s);
        if inject_step == Some(k) {
            events.push(TraceEvent {
                t,
                event: Event::FaultInjected {
                    fault: config.plant_fault,
                },
            });
        }
        let plant_fault = if fault_active {
            config.plant_fault
        } else {
            FaultVector::NOMINAL
        };

        let fv = states[Vehicle::Following.index()];
        let goal_reached = (fv.v_x - V_X_MIN).abs() <= STOP_VELOCITY_TOL
            && (fv.d_y - shoulder).abs() <= STOP_LATERAL_TOL;
        let (next_tdm, command) = fsm_step(
            &tdm,
            &TdmInputs {
                fault_classified: fault_active,
                shoulder_long_enough,
                ego: fv,
                goal_reached,
                t,
            },
            &config.geometry,
        );
        if next_tdm.mode != tdm.mode {
            events.push(TraceEvent {
                t,
                event: Event::ModeChanged {
                    mode: next_tdm.mode,
                },
            });
        }
        if let (None, Some(strategy)) = (tdm.strategy, next_tdm.strategy) {
            events.push(TraceEvent {
                t,
                event: Event::StrategySelected { strategy },
            });
        }
        tdm = next_tdm;

        if command.takeover && safety.is_none() {
            let mut nmpc = config.nmpc;
            let mut fault_assumed = nmpc.fault_assumed;
            if config.reconfigure {
                nmpc = crate::ocp::reconfigure(&nmpc, config.plant_fault)?;
                fault_assumed = config.plant_fault;
                events.push(TraceEvent {
                    t,
                    event: Event::Reconfigured {
                        fault: config.plant_fault,
                    },
                });
            }
            let prev = inputs[Vehicle::Following.index()];
            safety = Some(SafetyChannel {
                mpc: MpcController::new(params, nmpc, prev)?,
                path: QuinticPath::lane_change(0.0, shoulder, config.lane_change_duration)?,
                t_a: t,
                fault_assumed,
            });
        }
        if command.notify_tv_close_gap {
            tv_target = Vehicle::Lead;
            // The error jumps when the target changes.
            pd[Vehicle::Trailing.index()].reset_derivative();
            events.push(TraceEvent {
                t,
                event: Event::TvRetargeted,
            });
        }

        // Lead: cruise control.
        let lv_idx = Vehicle::Lead.index();
        inputs[lv_idx] = ControlInput::new(
            cruise_command(&states[lv_idx], acc, &mut pd[lv_idx], dt),
            0.0,
        );

        // Following: ACC until takeover, then the safety channel.
        let fv_idx = Vehicle::Following.index();
        let mut safety_record = None;
        match safety.as_mut() {
            None => {
                let a = acc_longitudinal_command(
                    &states[fv_idx],
                    &states[lv_idx],
                    acc,
                    &mut pd[fv_idx],
                    dt,
                )
                .map_err(|source| ScenarioError::Acc {
                    vehicle: Vehicle::Following,
                    t,
                    source,
                })?;
                inputs[fv_idx] = ControlInput::new(a, 0.0);
            }
            Some(ch) => {
                let goal_velocity = command.goal_velocity.unwrap_or(V_X_MIN);
                let tau = t - ch.t_a;
                let heading_speed = states[fv_idx].v_x.max(V_X_MIN);
                let mut solver = None;
                if (((t - ch.t_a) / dt).round() as usize).is_multiple_of(period) {
                    let cfg = *ch.mpc.config();
                    let refs = sample_reference(
                        &ch.path,
                        tau + cfg.dt,
                        goal_velocity,
                        heading_speed,
                        cfg.horizon,
                        cfg.dt,
                    );
                    solver = Some(match ch.mpc.step(&states[fv_idx], &refs) {
                        Ok((u, sol)) => {
                            inputs[fv_idx] = u;
                            SolverDiagnostics {
                                outcome: sol.status.into(),
                                iterations: sol.iterations,
                                kkt_residual: sol.kkt_residual,
                                max_gap: sol.max_gap,
                                slack: sol.slack_used,
                            }
                        }
                        Err(e) => {
                            events.push(TraceEvent {
                                t,
                                event: Event::SolverFailed {
                                    message: e.to_string(),
                                },
                            });
                            SolverDiagnostics {
                                outcome: SolverOutcome::Failed,
                                iterations: 0,
                                kkt_residual: f64::NAN,
                                max_gap: f64::NAN,
                                slack: 0.0,
                            }
                        }
                    });
                }
                let u = inputs[fv_idx];
                let reference =
                    sample_reference(&ch.path, tau, goal_velocity, heading_speed, 1, dt)[0];
                safety_record = Some(SafetyRecord {
                    goal_velocity,
                    reference,
                    a_y_model: lateral_acceleration(
                        &states[fv_idx],
                        u.delta,
                        &params,
                        &ch.fault_assumed,
                    )?,
                    a_y_plant: lateral_acceleration(
                        &states[fv_idx],
                        u.delta,
                        &params,
                        &plant_fault,
                    )?,
                    delta_bound: ch.mpc.config().bounds.delta_max,
                    solver,
                });
            }
        }

        // Trailing: ACC on its current target.
        let tv_idx = Vehicle::Trailing.index();
        let a = acc_longitudinal_command(
            &states[tv_idx],
            &states[tv_target.index()],
            acc,
            &mut pd[tv_idx],
            dt,
        )
        .map_err(|source| ScenarioError::Acc {
            vehicle: Vehicle::Trailing,
            t,
            source,
        })?;
        inputs[tv_idx] = ControlInput::new(a, 0.0);

        let h = acc.h_dg;
        let e_tg = TimeGapErrors {
            fv_lv: pair_error(&states[fv_idx], &states[lv_idx], h),
            tv_fv: pair_error(&states[tv_idx], &states[fv_idx], h),
            tv_lv: pair_error(&states[tv_idx], &states[lv_idx], h),
            tv_active: pair_error(&states[tv_idx], &states[tv_target.index()], h),
        };
        records.push(StepRecord {
            t,
            vehicles: [0, 1, 2].map(|i| VehicleRecord {
                state: states[i],
                input: inputs[i],
            }),
            e_tg,
            mode: tdm.mode,
            safety: safety_record,
        });

        if k == steps {
            break;
        }
        for v in Vehicle::ALL {
            let i = v.index();
            let fault = if v == Vehicle::Following {
                plant_fault
            } else {
                FaultVector::NOMINAL
            };
            let next = step_discrete(&states[i], &inputs[i], &params, &fault, &plant_act)?;
            if !next.is_finite() {
                return Err(ScenarioError::NonFinite {
                    vehicle: v,
                    t: t + dt,
                });
            }
            states[i] = next;
        }
    }

    Ok(SimTrace {
        config: config.clone(),
        records,
        events,
        t_a: tdm.t_a,
        t_b: tdm.t_b,
    })
}
