//! Single-track (bicycle) vehicle model with fault multipliers.
//!
//! The continuous lateral dynamics are linear in the tyre slip and are
//! discretized with forward Euler. The same transition serves as the
//! simulation plant (true fault values, speed clamp) and as the NMPC
//! prediction model (assumed fault values, no clamp).
//!
//! State ordering used by the Jacobians and by [`VehicleState::to_vector`]:
//! `[a_x, v_x, v_y, d_y, r, theta, d_x]`.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lowest longitudinal speed the discrete model can represent [m/s].
///
/// The lateral eigenvalues scale with `1 / v_x`; at 0.01 s sampling this is
/// the smallest speed that keeps forward Euler stable.
pub const V_X_MIN: f64 = 1.26;

pub const STATE_DIM: usize = 7;
pub const INPUT_DIM: usize = 2;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type InputMatrix = SMatrix<f64, STATE_DIM, INPUT_DIM>;

/// Indices into [`StateVector`].
pub mod idx {
    pub const A_X: usize = 0;
    pub const V_X: usize = 1;
    pub const V_Y: usize = 2;
    pub const D_Y: usize = 3;
    pub const R: usize = 4;
    pub const THETA: usize = 5;
    pub const D_X: usize = 6;

    pub const A_X_C: usize = 0;
    pub const DELTA: usize = 1;
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("longitudinal velocity {v_x} m/s is below the model minimum {min} m/s")]
    SingularVelocity { v_x: f64, min: f64 },
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
}

pub type Result<T> = std::result::Result<T, DynamicsError>;

fn require_positive(field: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(DynamicsError::InvalidParameter {
            field,
            reason: format!("must be finite and > 0, got {value}"),
        })
    }
}

/// Physical constants of the single-track model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleParams {
    /// Front cornering stiffness [N/rad].
    pub c_alpha_f: f64,
    /// Rear cornering stiffness [N/rad].
    pub c_alpha_r: f64,
    /// Front axle to centre of gravity [m].
    pub l_f: f64,
    /// Rear axle to centre of gravity [m].
    pub l_r: f64,
    /// [kg]
    pub mass: f64,
    /// Yaw moment of inertia [kg m^2].
    pub i_z: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            c_alpha_f: 120e3,
            c_alpha_r: 220e3,
            l_f: 1.33,
            l_r: 1.47,
            mass: 1845.0,
            i_z: 3580.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        require_positive("c_alpha_f", self.c_alpha_f)?;
        require_positive("c_alpha_r", self.c_alpha_r)?;
        require_positive("l_f", self.l_f)?;
        require_positive("l_r", self.l_r)?;
        require_positive("mass", self.mass)?;
        require_positive("i_z", self.i_z)
    }
}

/// Vehicle state: the six model states plus longitudinal position.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    /// Longitudinal acceleration [m/s^2].
    pub a_x: f64,
    /// Longitudinal velocity [m/s].
    pub v_x: f64,
    /// Lateral velocity [m/s].
    pub v_y: f64,
    /// Lateral offset from the centre of the current lane [m].
    pub d_y: f64,
    /// Yaw rate [rad/s].
    pub r: f64,
    /// Heading [rad].
    pub theta: f64,
    /// Longitudinal position [m].
    pub d_x: f64,
}

impl VehicleState {
    /// Straight-line cruise at `v_x` from position `d_x`.
    pub fn cruising(v_x: f64, d_x: f64) -> Self {
        Self {
            v_x,
            d_x,
            ..Self::default()
        }
    }

    pub fn to_vector(&self) -> StateVector {
        StateVector::from([
            self.a_x, self.v_x, self.v_y, self.d_y, self.r, self.theta, self.d_x,
        ])
    }

    pub fn from_vector(v: &StateVector) -> Self {
        Self {
            a_x: v[idx::A_X],
            v_x: v[idx::V_X],
            v_y: v[idx::V_Y],
            d_y: v[idx::D_Y],
            r: v[idx::R],
            theta: v[idx::THETA],
            d_x: v[idx::D_X],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|x| x.is_finite())
    }
}

/// Fault multipliers acting on the steering angle (`f1`) and on the rear
/// cornering stiffness (`f2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultVector {
    pub f1: f64,
    pub f2: f64,
}

impl FaultVector {
    pub const NOMINAL: Self = Self { f1: 1.0, f2: 1.0 };
    /// Power steering failure: half of the commanded angle reaches the wheels.
    pub const STEERING_HALF: Self = Self { f1: 0.5, f2: 1.0 };
    /// Rear cornering stiffness halved.
    pub const REAR_STIFFNESS_HALF: Self = Self { f1: 1.0, f2: 0.5 };

    pub fn new(f1: f64, f2: f64) -> Self {
        Self { f1, f2 }
    }

    pub fn is_nominal(&self) -> bool {
        *self == Self::NOMINAL
    }

    /// Both multipliers must lie in `(0, 1]`.
    pub fn validate(&self) -> Result<()> {
        for (field, value) in [("f1", self.f1), ("f2", self.f2)] {
            if !(value.is_finite() && value > 0.0 && value <= 1.0) {
                return Err(DynamicsError::InvalidParameter {
                    field,
                    reason: format!("fault multiplier must lie in (0, 1], got {value}"),
                });
            }
        }
        Ok(())
    }
}

impl Default for FaultVector {
    fn default() -> Self {
        Self::NOMINAL
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    /// Commanded longitudinal acceleration [m/s^2].
    pub a_x_c: f64,
    /// Front wheel steering angle [rad].
    pub delta: f64,
}

impl ControlInput {
    pub fn new(a_x_c: f64, delta: f64) -> Self {
        Self { a_x_c, delta }
    }

    pub fn to_vector(&self) -> SVector<f64, INPUT_DIM> {
        SVector::<f64, INPUT_DIM>::new(self.a_x_c, self.delta)
    }
}

/// Discrete first-order lag from commanded to realized acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActuationModel {
    /// Discrete pole.
    pub s_dt: f64,
    /// Discrete gain, `1 - s_dt` for unit DC gain.
    pub g_dt: f64,
    /// Sampling time [s].
    pub dt: f64,
}

impl ActuationModel {
    /// Forward-Euler discretization of `1 / (tau s + 1)` at sampling time `dt`.
    pub fn from_time_constant(tau: f64, dt: f64) -> Result<Self> {
        require_positive("tau", tau)?;
        require_positive("dt", dt)?;
        if dt > tau {
            return Err(DynamicsError::InvalidParameter {
                field: "dt",
                reason: format!("sampling time {dt} exceeds the actuation time constant {tau}"),
            });
        }
        let g_dt = dt / tau;
        Ok(Self {
            s_dt: 1.0 - g_dt,
            g_dt,
            dt,
        })
    }

    pub fn validate(&self) -> Result<()> {
        require_positive("dt", self.dt)?;
        if !(0.0..1.0).contains(&self.s_dt) {
            return Err(DynamicsError::InvalidParameter {
                field: "s_dt",
                reason: format!("pole must lie in [0, 1), got {}", self.s_dt),
            });
        }
        if (self.g_dt - (1.0 - self.s_dt)).abs() > 1e-12 {
            return Err(DynamicsError::InvalidParameter {
                field: "g_dt",
                reason: "gain must equal 1 - s_dt (unit DC gain)".into(),
            });
        }
        Ok(())
    }
}

/// Time derivatives of lateral velocity and yaw rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LateralRates {
    pub v_y_dot: f64,
    pub r_dot: f64,
}

/// Coefficients of the lateral model after applying the fault multipliers.
#[derive(Debug, Clone, Copy)]
struct LateralCoeffs {
    /// (C_f + f2 C_r) / m
    vy_damping: f64,
    /// (l_r f2 C_r - l_f C_f) / m
    vy_coupling: f64,
    /// f1 C_f / m
    vy_steer: f64,
    /// (l_r f2 C_r - l_f C_f) / I_z
    r_coupling: f64,
    /// (l_f^2 C_f + l_r^2 f2 C_r) / I_z
    r_damping: f64,
    /// f1 l_f C_f / I_z
    r_steer: f64,
}

impl LateralCoeffs {
    fn new(p: &VehicleParams, fault: &FaultVector) -> Self {
        let c_r = p.c_alpha_r * fault.f2;
        let c_f = p.c_alpha_f;
        let moment = p.l_r * c_r - p.l_f * c_f;
        Self {
            vy_damping: (c_f + c_r) / p.mass,
            vy_coupling: moment / p.mass,
            vy_steer: fault.f1 * c_f / p.mass,
            r_coupling: moment / p.i_z,
            r_damping: (p.l_f * p.l_f * c_f + p.l_r * p.l_r * c_r) / p.i_z,
            r_steer: fault.f1 * p.l_f * c_f / p.i_z,
        }
    }

    fn rates(&self, v_x: f64, v_y: f64, r: f64, delta: f64) -> LateralRates {
        LateralRates {
            v_y_dot: -self.vy_damping / v_x * v_y
                + (self.vy_coupling / v_x - v_x) * r
                + self.vy_steer * delta,
            r_dot: self.r_coupling / v_x * v_y - self.r_damping / v_x * r + self.r_steer * delta,
        }
    }

    fn lateral_acceleration(&self, v_x: f64, v_y: f64, r: f64, delta: f64) -> f64 {
        -self.vy_damping / v_x * v_y + self.vy_coupling / v_x * r + self.vy_steer * delta
    }
}

fn check_speed(v_x: f64) -> Result<()> {
    if v_x >= V_X_MIN {
        Ok(())
    } else {
        Err(DynamicsError::SingularVelocity { v_x, min: V_X_MIN })
    }
}

/// Continuous-time lateral velocity and yaw-rate derivatives.
pub fn lateral_derivatives(
    state: &VehicleState,
    delta: f64,
    params: &VehicleParams,
    fault: &FaultVector,
) -> Result<LateralRates> {
    check_speed(state.v_x)?;
    Ok(LateralCoeffs::new(params, fault).rates(state.v_x, state.v_y, state.r, delta))
}

/// Steady-state lateral acceleration used as the comfort constraint.
///
/// `fault_assumed` enters exactly as in the prediction model: `f2` scales the
/// rear stiffness and `f1` scales the steering angle.
pub fn lateral_acceleration(
    state: &VehicleState,
    delta: f64,
    params: &VehicleParams,
    fault_assumed: &FaultVector,
) -> Result<f64> {
    check_speed(state.v_x)?;
    Ok(LateralCoeffs::new(params, fault_assumed)
        .lateral_acceleration(state.v_x, state.v_y, state.r, delta))
}

/// Gradient of [`lateral_acceleration`] with respect to `(v_x, v_y, r, delta)`.
pub(crate) fn lateral_acceleration_gradient(
    state: &VehicleState,
    params: &VehicleParams,
    fault_assumed: &FaultVector,
    speed_guard: bool,
) -> (f64, [f64; 4]) {
    let c = LateralCoeffs::new(params, fault_assumed);
    let (v_x, dv) = guarded_speed(state.v_x, speed_guard);
    let value = c.lateral_acceleration(v_x, state.v_y, state.r, 0.0);
    let d_vx = (c.vy_damping * state.v_y - c.vy_coupling * state.r) / (v_x * v_x) * dv;
    (
        value,
        [d_vx, -c.vy_damping / v_x, c.vy_coupling / v_x, c.vy_steer],
    )
}

/// Speed at which the lateral model is evaluated, and its derivative with
/// respect to the true speed.
fn guarded_speed(v_x: f64, guard: bool) -> (f64, f64) {
    if guard && v_x < V_X_MIN {
        (V_X_MIN, 0.0)
    } else {
        (v_x, 1.0)
    }
}

fn transition(
    x: &VehicleState,
    u: &ControlInput,
    coeffs: &LateralCoeffs,
    act: &ActuationModel,
    speed_guard: bool,
) -> VehicleState {
    let dt = act.dt;
    let (v_eval, _) = guarded_speed(x.v_x, speed_guard);
    let lat = coeffs.rates(v_eval, x.v_y, x.r, u.delta);
    let (sin_t, cos_t) = x.theta.sin_cos();
    VehicleState {
        a_x: act.s_dt * x.a_x + act.g_dt * u.a_x_c,
        v_x: x.v_x + x.a_x * dt,
        v_y: x.v_y + lat.v_y_dot * dt,
        d_y: x.d_y + (x.v_y * cos_t + x.v_x * sin_t) * dt,
        r: x.r + lat.r_dot * dt,
        theta: x.theta + x.r * dt,
        d_x: x.d_x + (x.v_x * cos_t - x.v_y * sin_t) * dt,
    }
}

fn transition_jacobians(
    x: &VehicleState,
    coeffs: &LateralCoeffs,
    act: &ActuationModel,
    speed_guard: bool,
) -> (StateMatrix, InputMatrix) {
    use idx::*;
    let dt = act.dt;
    let (v, dv) = guarded_speed(x.v_x, speed_guard);
    let c = coeffs;
    let (sin_t, cos_t) = x.theta.sin_cos();
    let v2 = v * v;

    let mut a = StateMatrix::identity();
    a[(A_X, A_X)] = act.s_dt;

    a[(V_X, A_X)] = dt;

    // v_y_dot = -c1 v_y / v + (c2 / v - v) r + ...
    a[(V_Y, V_X)] = (c.vy_damping * x.v_y / v2 - c.vy_coupling * x.r / v2 - x.r) * dv * dt;
    a[(V_Y, V_Y)] = 1.0 - c.vy_damping / v * dt;
    a[(V_Y, R)] = (c.vy_coupling / v - v) * dt;

    a[(D_Y, V_X)] = sin_t * dt;
    a[(D_Y, V_Y)] = cos_t * dt;
    a[(D_Y, THETA)] = (-x.v_y * sin_t + x.v_x * cos_t) * dt;

    // r_dot = c3 v_y / v - c4 r / v + ...
    a[(R, V_X)] = (-c.r_coupling * x.v_y / v2 + c.r_damping * x.r / v2) * dv * dt;
    a[(R, V_Y)] = c.r_coupling / v * dt;
    a[(R, R)] = 1.0 - c.r_damping / v * dt;

    a[(THETA, R)] = dt;

    a[(D_X, V_X)] = cos_t * dt;
    a[(D_X, V_Y)] = -sin_t * dt;
    a[(D_X, THETA)] = (-x.v_x * sin_t - x.v_y * cos_t) * dt;

    let mut b = InputMatrix::zeros();
    b[(A_X, A_X_C)] = act.g_dt;
    b[(V_Y, DELTA)] = c.vy_steer * dt;
    b[(R, DELTA)] = c.r_steer * dt;
    (a, b)
}

/// One forward-Euler step of the plant.
///
/// The speed is clamped at [`V_X_MIN`]; when the clamp engages the realized
/// acceleration is zeroed, which represents the vehicle being parked.
pub fn step_discrete(
    state: &VehicleState,
    u: &ControlInput,
    params: &VehicleParams,
    fault: &FaultVector,
    act: &ActuationModel,
) -> Result<VehicleState> {
    check_speed(state.v_x)?;
    let mut next = transition(state, u, &LateralCoeffs::new(params, fault), act, false);
    if next.v_x < V_X_MIN {
        next.v_x = V_X_MIN;
        next.a_x = 0.0;
    }
    Ok(next)
}

/// Analytical Jacobians of the unclamped [`step_discrete`] transition with
/// respect to the state and the input.
pub fn dynamics_jacobians(
    state: &VehicleState,
    _u: &ControlInput,
    params: &VehicleParams,
    fault: &FaultVector,
    act: &ActuationModel,
) -> Result<(StateMatrix, InputMatrix)> {
    check_speed(state.v_x)?;
    Ok(transition_jacobians(
        state,
        &LateralCoeffs::new(params, fault),
        act,
        false,
    ))
}

/// Prediction model used inside the optimizer.
///
/// Identical to [`step_discrete`] above [`V_X_MIN`]. Below it the state is not
/// clamped (the optimizer sees the true linear speed evolution and pays for it
/// through the soft speed bound), but the lateral terms are evaluated at
/// [`V_X_MIN`] so that intermediate iterates cannot destabilize the Euler
/// recursion.
#[derive(Debug, Clone, Copy)]
pub struct PredictionModel {
    coeffs: LateralCoeffs,
    act: ActuationModel,
}

impl PredictionModel {
    pub fn new(params: &VehicleParams, fault: &FaultVector, act: ActuationModel) -> Self {
        Self {
            coeffs: LateralCoeffs::new(params, fault),
            act,
        }
    }

    pub fn step(&self, x: &VehicleState, u: &ControlInput) -> VehicleState {
        transition(x, u, &self.coeffs, &self.act, true)
    }

    pub fn jacobians(&self, x: &VehicleState) -> (StateMatrix, InputMatrix) {
        transition_jacobians(x, &self.coeffs, &self.act, true)
    }

    pub fn actuation(&self) -> &ActuationModel {
        &self.act
    }
}
