use crate::dynamics::{
    lateral_acceleration_gradient, ActuationModel, ControlInput, PredictionModel, VehicleParams,
    VehicleState,
};
use crate::trajectory::ReferencePoint;

use super::{stage_cost, OcpConfig, OcpError};

/// A fully specified optimal control problem for one controller sample.
///
/// Control `k` drives the state from `x_k` to `x_{k+1}`; `refs[k]` is the
/// target for `x_{k+1}`. Controls are free over the first `S` steps and the
/// last free move is held for the remainder of the horizon.
#[derive(Debug, Clone)]
pub struct Ocp {
    pub x_init: VehicleState,
    pub refs: Vec<ReferencePoint>,
    /// Input applied during the previous sample; anchors the first rate
    /// constraint.
    pub u_prev: ControlInput,
    pub params: VehicleParams,
    pub config: OcpConfig,
    pub(crate) model: PredictionModel,
}

/// Assemble the problem. `refs` must hold exactly `config.horizon` points.
pub fn build_ocp(
    x_init: VehicleState,
    refs: &[ReferencePoint],
    u_prev: ControlInput,
    params: &VehicleParams,
    config: &OcpConfig,
) -> Result<Ocp, OcpError> {
    config.validate()?;
    params.validate()?;
    if refs.len() != config.horizon {
        return Err(OcpError::Dimension(format!(
            "expected {} reference points, got {}",
            config.horizon,
            refs.len()
        )));
    }
    if !x_init.is_finite() {
        return Err(OcpError::Dimension("initial state is not finite".into()));
    }
    // The model is only valid above the minimum speed.
    crate::dynamics::lateral_derivatives(&x_init, 0.0, params, &config.fault_assumed)?;
    let act = ActuationModel::from_time_constant(config.actuation_tau, config.dt)?;
    Ok(Ocp {
        x_init,
        refs: refs.to_vec(),
        u_prev,
        params: *params,
        config: *config,
        model: PredictionModel::new(params, &config.fault_assumed, act),
    })
}

impl Ocp {
    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub fn control_horizon(&self) -> usize {
        self.config.control_horizon
    }

    /// Number of free control values (two per move).
    pub fn num_control_variables(&self) -> usize {
        2 * self.control_horizon()
    }

    /// Number of shooting-state values (`x_1 .. x_N`; `x_0` is fixed).
    pub fn num_state_variables(&self) -> usize {
        crate::dynamics::STATE_DIM * self.horizon()
    }

    /// Move index driving prediction step `k`.
    pub fn block(&self, k: usize) -> usize {
        k.min(self.control_horizon() - 1)
    }

    /// How many prediction steps use move `j`.
    pub fn block_count(&self, j: usize) -> usize {
        let s = self.control_horizon();
        if j + 1 < s {
            1
        } else {
            self.horizon() - (s - 1)
        }
    }

    pub fn model(&self) -> &PredictionModel {
        &self.model
    }

    /// Expand free moves to one control per prediction step.
    pub fn expand(&self, moves: &[ControlInput]) -> Vec<ControlInput> {
        (0..self.horizon()).map(|k| moves[self.block(k)]).collect()
    }

    /// Simulate the prediction model from `x_init`.
    pub fn rollout(&self, moves: &[ControlInput]) -> Vec<VehicleState> {
        let mut xs = Vec::with_capacity(self.horizon() + 1);
        xs.push(self.x_init);
        for k in 0..self.horizon() {
            let next = self.model.step(&xs[k], &moves[self.block(k)]);
            xs.push(next);
        }
        xs
    }

    /// Tracking cost of a state/control trajectory (without slack penalty).
    pub fn tracking_cost(&self, states: &[VehicleState], moves: &[ControlInput]) -> f64 {
        (0..self.horizon())
            .map(|k| {
                stage_cost(
                    &states[k + 1],
                    &moves[self.block(k)],
                    &self.refs[k],
                    &self.config.weights,
                )
            })
            .sum()
    }

    /// Lateral acceleration of the prediction model at `(x, delta)`, and its
    /// gradient with respect to `(v_x, v_y, r, delta)`.
    pub(crate) fn lateral_acceleration(&self, x: &VehicleState, delta: f64) -> (f64, [f64; 4]) {
        let (base, grad) =
            lateral_acceleration_gradient(x, &self.params, &self.config.fault_assumed, true);
        (base + grad[3] * delta, grad)
    }
}
