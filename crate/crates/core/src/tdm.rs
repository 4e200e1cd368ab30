//! Tactical decision making for the faulty vehicle.
//!
//! A small state machine: on a fault-classification event it requests
//! parking, picks brake-in-lane or brake-out-of-lane, tracks the lane change
//! until the vehicle has fully left its lane and then brakes to the minimum
//! model speed. Leaving the lane is also the moment the trailing vehicle is
//! told to close the gap to the lead vehicle.

use serde::{Deserialize, Serialize};

use crate::dynamics::{VehicleState, V_X_MIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Nominal,
    ParkRequested,
    LaneChangeActive,
    BrakingToStop,
    Stopped,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Nominal => "nominal",
            Mode::ParkRequested => "park_requested",
            Mode::LaneChangeActive => "lane_change_active",
            Mode::BrakingToStop => "braking_to_stop",
            Mode::Stopped => "stopped",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Brake from the start of the manoeuvre while moving to the shoulder.
    BrakeInLane,
    /// Keep speed until the lane is left, then brake on the shoulder.
    BrakeOutOfLane,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::BrakeInLane => "bil",
            Strategy::BrakeOutOfLane => "bol",
        }
    }
}

/// Straight road with the shoulder on the right (negative `d_y`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneGeometry {
    /// [m]
    pub lane_width: f64,
    /// [m]
    pub shoulder_width: f64,
    /// Body width used for the lane-departure test [m].
    pub vehicle_width: f64,
}

impl Default for LaneGeometry {
    fn default() -> Self {
        Self {
            lane_width: 3.5,
            shoulder_width: 3.5,
            vehicle_width: 1.8,
        }
    }
}

impl LaneGeometry {
    /// Lateral offset of the shoulder centre from the lane centre [m].
    pub fn shoulder_offset(&self) -> f64 {
        -0.5 * (self.lane_width + self.shoulder_width)
    }

    pub fn diagnostics(&self) -> Vec<String> {
        let mut errors = Vec::new();
        if !(self.vehicle_width.is_finite() && self.vehicle_width > 0.0) {
            errors.push(format!(
                "geometry.vehicle_width: must be positive, got {}",
                self.vehicle_width
            ));
        }
        if !(self.lane_width.is_finite() && self.lane_width > self.vehicle_width) {
            errors.push(format!(
                "geometry.lane_width: must exceed the vehicle width, got {}",
                self.lane_width
            ));
        }
        if !(self.shoulder_width.is_finite() && self.shoulder_width > self.vehicle_width) {
            errors.push(format!(
                "geometry.shoulder_width: must exceed the vehicle width, got {}",
                self.shoulder_width
            ));
        }
        errors
    }
}

/// True once the whole body is outside the original lane.
pub fn detect_lane_departure(d_y: f64, lane_width: f64, vehicle_width: f64) -> bool {
    d_y.abs() >= 0.5 * lane_width + 0.5 * vehicle_width
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TdmState {
    pub mode: Mode,
    /// Chosen when parking is requested.
    pub strategy: Option<Strategy>,
    /// Start of the parking manoeuvre [s].
    pub t_a: Option<f64>,
    /// Lane departure [s].
    pub t_b: Option<f64>,
    pub tv_notified: bool,
    /// Speed held by brake-out-of-lane until lane departure [m/s].
    pub v_at_t_a: Option<f64>,
}

impl Default for TdmState {
    fn default() -> Self {
        Self {
            mode: Mode::Nominal,
            strategy: None,
            t_a: None,
            t_b: None,
            tv_notified: false,
            v_at_t_a: None,
        }
    }
}

/// Environment and vehicle inputs for one FSM step.
#[derive(Debug, Clone, Copy)]
pub struct TdmInputs {
    pub fault_classified: bool,
    pub shoulder_long_enough: bool,
    pub ego: VehicleState,
    /// Both stop thresholds currently hold.
    pub goal_reached: bool,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TdmCommand {
    /// Safety channel owns both longitudinal and lateral control. Latched.
    pub takeover: bool,
    /// Goal velocity for the safety channel, set while it has control [m/s].
    pub goal_velocity: Option<f64>,
    /// Fires on the single step at which the trailing vehicle is told to
    /// retarget to the lead vehicle.
    pub notify_tv_close_gap: bool,
}

/// Advance the FSM by one step.
pub fn fsm_step(
    state: &TdmState,
    inputs: &TdmInputs,
    geometry: &LaneGeometry,
) -> (TdmState, TdmCommand) {
    let mut next = *state;
    let mut notify = false;
    match state.mode {
        Mode::Nominal => {
            if inputs.fault_classified {
                next.mode = Mode::ParkRequested;
                next.strategy = Some(if inputs.shoulder_long_enough {
                    Strategy::BrakeOutOfLane
                } else {
                    Strategy::BrakeInLane
                });
                next.t_a = Some(inputs.t);
                next.v_at_t_a = Some(inputs.ego.v_x);
            }
        }
        Mode::ParkRequested | Mode::LaneChangeActive => {
            next.mode = Mode::LaneChangeActive;
            if detect_lane_departure(inputs.ego.d_y, geometry.lane_width, geometry.vehicle_width) {
                next.mode = Mode::BrakingToStop;
                next.t_b = Some(inputs.t);
                if !state.tv_notified {
                    next.tv_notified = true;
                    notify = true;
                }
            }
        }
        Mode::BrakingToStop => {
            if inputs.goal_reached {
                next.mode = Mode::Stopped;
            }
        }
        Mode::Stopped => {}
    }
    let command = TdmCommand {
        takeover: next.mode != Mode::Nominal,
        goal_velocity: goal_velocity(&next),
        notify_tv_close_gap: notify,
    };
    (next, command)
}

fn goal_velocity(state: &TdmState) -> Option<f64> {
    match (state.strategy?, state.t_b) {
        (Strategy::BrakeOutOfLane, None) => state.v_at_t_a,
        _ => Some(V_X_MIN),
    }
}
