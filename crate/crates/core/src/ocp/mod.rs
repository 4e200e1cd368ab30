//! Safety-channel NMPC.
//!
//! The optimal control problem tracks the fallback reference with the
//! discrete single-track model, subject to input, rate, state and
//! lateral-acceleration bounds. It is solved by a multiple-shooting
//! Gauss-Newton SQP whose QP subproblems are condensed onto the control
//! moves and handed to the dual active-set solver in [`crate::qp`].

mod mpc;
mod problem;
mod sqp;

pub use mpc::MpcController;
pub use problem::{build_ocp, Ocp};
pub use sqp::solve;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{ControlInput, DynamicsError, FaultVector, VehicleState};
use crate::qp::QpError;
use crate::trajectory::ReferencePoint;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OcpError {
    #[error("invalid NMPC configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("QP subproblem failed: {0}")]
    Qp(#[from] QpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    pub w_v_x: f64,
    pub w_d_y: f64,
    pub w_theta: f64,
    pub w_a_x: f64,
    pub w_delta: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            w_v_x: 10.0,
            w_d_y: 100.0,
            w_theta: 1.0,
            w_a_x: 0.5,
            w_delta: 1.0,
        }
    }
}

impl CostWeights {
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            w_v_x: self.w_v_x * factor,
            w_d_y: self.w_d_y * factor,
            w_theta: self.w_theta * factor,
            w_a_x: self.w_a_x * factor,
            w_delta: self.w_delta * factor,
        }
    }
}

/// Constraint limits. Symmetric limits store only the magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcpBounds {
    /// |delta| [rad]
    pub delta_max: f64,
    /// |d delta / dt| [rad/s]
    pub delta_rate_max: f64,
    /// Realized acceleration [m/s^2].
    pub a_x: [f64; 2],
    /// Commanded acceleration [m/s^2].
    pub a_x_c: [f64; 2],
    /// Commanded jerk [m/s^3].
    pub a_x_c_rate: [f64; 2],
    /// Longitudinal velocity [m/s].
    pub v_x: [f64; 2],
    /// |a_y| [m/s^2]
    pub a_y_max: f64,
}

impl Default for OcpBounds {
    fn default() -> Self {
        Self {
            delta_max: 0.0873,
            delta_rate_max: 0.0818,
            a_x: [-3.5, 1.5],
            a_x_c: [-3.5, 1.5],
            a_x_c_rate: [-14.0, 6.0],
            v_x: [1.26, 33.0],
            a_y_max: 2.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcpConfig {
    /// Prediction horizon N [steps].
    pub horizon: usize,
    /// Control horizon S [steps]; the last move is held from S to N.
    pub control_horizon: usize,
    /// Controller sampling time [s].
    pub dt: f64,
    /// Time constant of the acceleration lag in the prediction model [s].
    pub actuation_tau: f64,
    pub weights: CostWeights,
    pub bounds: OcpBounds,
    /// Fault the prediction model assumes.
    pub fault_assumed: FaultVector,
    /// Quadratic penalty on the shared soft-constraint slack.
    pub slack_weight: f64,
    pub max_iterations: usize,
    pub kkt_tolerance: f64,
    pub gap_tolerance: f64,
}

impl Default for OcpConfig {
    fn default() -> Self {
        Self {
            horizon: 30,
            control_horizon: 30,
            dt: 0.01,
            actuation_tau: 0.1,
            weights: CostWeights::default(),
            bounds: OcpBounds::default(),
            fault_assumed: FaultVector::NOMINAL,
            slack_weight: 1e4,
            max_iterations: 50,
            kkt_tolerance: 1e-6,
            gap_tolerance: 1e-8,
        }
    }
}

fn ordered(name: &str, b: [f64; 2], errors: &mut Vec<String>) {
    if !(b[0].is_finite() && b[1].is_finite() && b[0] < b[1]) {
        errors.push(format!(
            "bounds.{name}: expected finite min < max, got {b:?}"
        ));
    }
}

impl OcpConfig {
    /// Every violated constraint, as `field: message` strings.
    pub fn diagnostics(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if self.horizon == 0 {
            errors.push("horizon: must be at least 1".to_string());
        }
        if self.horizon > 0 && (self.control_horizon == 0 || self.control_horizon > self.horizon) {
            errors.push(format!(
                "control_horizon: must satisfy 1 <= S <= N, got S = {} with N = {}",
                self.control_horizon, self.horizon
            ));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            errors.push(format!("dt: must be positive, got {}", self.dt));
        }
        if !(self.actuation_tau.is_finite() && self.actuation_tau >= self.dt) {
            errors.push(format!(
                "actuation_tau: must be at least dt, got {}",
                self.actuation_tau
            ));
        }
        let w = &self.weights;
        for (name, value) in [
            ("w_v_x", w.w_v_x),
            ("w_d_y", w.w_d_y),
            ("w_theta", w.w_theta),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                errors.push(format!("weights.{name}: must be nonnegative, got {value}"));
            }
        }
        for (name, value) in [("w_a_x", w.w_a_x), ("w_delta", w.w_delta)] {
            if !(value.is_finite() && value > 0.0) {
                errors.push(format!("weights.{name}: must be positive, got {value}"));
            }
        }
        let b = &self.bounds;
        for (name, value) in [
            ("delta_max", b.delta_max),
            ("delta_rate_max", b.delta_rate_max),
            ("a_y_max", b.a_y_max),
        ] {
            if !(value.is_finite() && value > 0.0) {
                errors.push(format!("bounds.{name}: must be positive, got {value}"));
            }
        }
        ordered("a_x", b.a_x, &mut errors);
        ordered("a_x_c", b.a_x_c, &mut errors);
        ordered("a_x_c_rate", b.a_x_c_rate, &mut errors);
        ordered("v_x", b.v_x, &mut errors);
        if b.a_x_c_rate[0] > 0.0 || b.a_x_c_rate[1] < 0.0 {
            errors.push("bounds.a_x_c_rate: range must contain zero".to_string());
        }
        if let Err(e) = self.fault_assumed.validate() {
            errors.push(format!("fault_assumed: {e}"));
        }
        if !(self.slack_weight.is_finite() && self.slack_weight > 0.0) {
            errors.push(format!(
                "slack_weight: must be positive, got {}",
                self.slack_weight
            ));
        }
        if self.max_iterations == 0 {
            errors.push("max_iterations: must be at least 1".to_string());
        }
        if !(self.kkt_tolerance > 0.0 && self.gap_tolerance > 0.0) {
            errors.push("kkt_tolerance/gap_tolerance: must be positive".to_string());
        }
        errors
    }

    pub fn validate(&self) -> Result<(), OcpError> {
        let d = self.diagnostics();
        if d.is_empty() {
            Ok(())
        } else {
            Err(OcpError::InvalidConfig(d.join("; ")))
        }
    }
}

/// One stage of the tracking objective.
pub fn stage_cost(x: &VehicleState, u: &ControlInput, z: &ReferencePoint, w: &CostWeights) -> f64 {
    let ev = z.z_v_x - x.v_x;
    let ey = z.z_d_y - x.d_y;
    let et = z.z_theta - x.theta;
    w.w_v_x * ev * ev
        + w.w_d_y * ey * ey
        + w.w_theta * et * et
        + w.w_a_x * u.a_x_c * u.a_x_c
        + w.w_delta * u.delta * u.delta
}

/// Update the prediction model and steering limits with a diagnosed fault.
///
/// Steering limits are rescaled by `f1_old / f1_new`, so reconfiguring an
/// already reconfigured config is consistent and `(1, 1)` on a nominal config
/// is the identity.
pub fn reconfigure(config: &OcpConfig, fault_known: FaultVector) -> Result<OcpConfig, OcpError> {
    fault_known
        .validate()
        .map_err(|e| OcpError::InvalidConfig(format!("fault_known: {e}")))?;
    let scale = config.fault_assumed.f1 / fault_known.f1;
    let mut out = *config;
    out.fault_assumed = fault_known;
    out.bounds.delta_max *= scale;
    out.bounds.delta_rate_max *= scale;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    /// Converged, but only by violating soft constraints.
    InfeasibleSoft,
}

impl SolveStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::MaxIter => "max_iter",
            SolveStatus::InfeasibleSoft => "infeasible_soft",
        }
    }
}

/// Merit values around one accepted SQP step, both at the same penalty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeritStep {
    pub before: f64,
    pub after: f64,
    pub step_length: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    /// One control per prediction step.
    pub controls: Vec<ControlInput>,
    /// `N + 1` shooting states, the first being the initial state.
    pub predicted_states: Vec<VehicleState>,
    pub status: SolveStatus,
    pub kkt_residual: f64,
    /// Largest shooting gap at the returned iterate.
    pub max_gap: f64,
    pub iterations: usize,
    pub slack_used: f64,
    pub objective: f64,
    pub merit_steps: Vec<MeritStep>,
}

impl OcpSolution {
    pub fn first_control(&self) -> ControlInput {
        self.controls[0]
    }
}
