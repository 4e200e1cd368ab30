//! Nominal-channel longitudinal control: constant time-gap ACC for followers
//! and velocity-tracking cruise control for the lead vehicle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::VehicleState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AccError {
    #[error("ego velocity must be positive, got {0} m/s")]
    NonPositiveVelocity(f64),
    #[error("preceding vehicle at {preceding} m is not ahead of ego at {ego} m")]
    Ordering { preceding: f64, ego: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdGains {
    pub k_p: f64,
    pub k_d: f64,
}

impl PdGains {
    /// Cruise controller gains acting on `v_ref - v_x`.
    pub const LEAD: Self = Self { k_p: 5.0, k_d: 0.3 };
    /// Time-gap controller gains for following and trailing vehicles.
    pub const FOLLOWER: Self = Self {
        k_p: -150.0,
        k_d: -2.5,
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccConfig {
    /// Desired time gap [s].
    pub h_dg: f64,
    /// Lead vehicle cruise speed [m/s].
    pub v_ref: f64,
    /// Command saturation `[min, max]` [m/s^2].
    pub a_cmd_bounds: [f64; 2],
    /// Time constant of the derivative filter [s].
    pub derivative_filter_tau: f64,
    pub lead_gains: PdGains,
    pub follower_gains: PdGains,
}

impl Default for AccConfig {
    fn default() -> Self {
        Self {
            h_dg: 1.2,
            v_ref: 25.0,
            a_cmd_bounds: [-3.5, 1.5],
            derivative_filter_tau: 0.05,
            lead_gains: PdGains::LEAD,
            follower_gains: PdGains::FOLLOWER,
        }
    }
}

/// `h_dg - gap / v_ego` where `gap = d_x_prec - d_x_ego`.
///
/// Positive means the ego vehicle is closer than desired.
// The negated comparisons also reject NaN.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn time_gap_error(
    d_x_prec: f64,
    d_x_ego: f64,
    v_x_ego: f64,
    h_dg: f64,
) -> Result<f64, AccError> {
    if !(v_x_ego > 0.0) {
        return Err(AccError::NonPositiveVelocity(v_x_ego));
    }
    if !(d_x_prec > d_x_ego) {
        return Err(AccError::Ordering {
            preceding: d_x_prec,
            ego: d_x_ego,
        });
    }
    Ok(h_dg - (d_x_prec - d_x_ego) / v_x_ego)
}

/// Memory of a discrete PD controller with filtered derivative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PdState {
    prev_error: Option<f64>,
    derivative: f64,
}

impl PdState {
    /// State of a controller that has been sitting at `error` indefinitely.
    pub fn settled(error: f64) -> Self {
        Self {
            prev_error: Some(error),
            derivative: 0.0,
        }
    }

    /// Forget the previous error, so the next step does not differentiate
    /// across a target switch.
    pub fn reset_derivative(&mut self) {
        self.prev_error = None;
        self.derivative = 0.0;
    }
}

/// `u = k_p e + k_d s / (tau s + 1) e`, discretized with backward Euler and
/// saturated.
///
/// A fresh [`PdState`] differentiates against a zero previous error.
pub fn pd_step(
    error: f64,
    state: &mut PdState,
    gains: &PdGains,
    filter_tau: f64,
    bounds: [f64; 2],
    dt: f64,
) -> f64 {
    debug_assert!(dt > 0.0);
    let prev = state.prev_error.unwrap_or(0.0);
    state.derivative = (filter_tau * state.derivative + (error - prev)) / (filter_tau + dt);
    state.prev_error = Some(error);
    let raw = gains.k_p * error + gains.k_d * state.derivative;
    raw.clamp(bounds[0], bounds[1])
}

/// Time-gap ACC command for `ego` following `preceding`.
pub fn acc_longitudinal_command(
    ego: &VehicleState,
    preceding: &VehicleState,
    config: &AccConfig,
    state: &mut PdState,
    dt: f64,
) -> Result<f64, AccError> {
    let e = time_gap_error(preceding.d_x, ego.d_x, ego.v_x, config.h_dg)?;
    Ok(pd_step(
        e,
        state,
        &config.follower_gains,
        config.derivative_filter_tau,
        config.a_cmd_bounds,
        dt,
    ))
}

/// Cruise command for the lead vehicle tracking `config.v_ref`.
pub fn cruise_command(ego: &VehicleState, config: &AccConfig, state: &mut PdState, dt: f64) -> f64 {
    pd_step(
        config.v_ref - ego.v_x,
        state,
        &config.lead_gains,
        config.derivative_filter_tau,
        config.a_cmd_bounds,
        dt,
    )
}
