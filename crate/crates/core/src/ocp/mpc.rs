use crate::dynamics::{ControlInput, VehicleParams, VehicleState};
use crate::trajectory::ReferencePoint;

use super::{build_ocp, reconfigure, solve, OcpConfig, OcpError, OcpSolution};
use crate::dynamics::FaultVector;

/// Receding-horizon wrapper: solves one OCP per sample, applies the first
/// control and keeps the solution to warm-start the next sample.
#[derive(Debug, Clone)]
pub struct MpcController {
    config: OcpConfig,
    params: VehicleParams,
    prev_input: ControlInput,
    warm: Option<OcpSolution>,
    warm_start: bool,
}

impl MpcController {
    /// `prev_input` is the input currently applied to the vehicle, which
    /// anchors the first rate constraint.
    pub fn new(
        params: VehicleParams,
        config: OcpConfig,
        prev_input: ControlInput,
    ) -> Result<Self, OcpError> {
        config.validate()?;
        params.validate()?;
        Ok(Self {
            config,
            params,
            prev_input,
            warm: None,
            warm_start: true,
        })
    }

    pub fn with_warm_start(mut self, enabled: bool) -> Self {
        self.warm_start = enabled;
        self
    }

    pub fn config(&self) -> &OcpConfig {
        &self.config
    }

    pub fn previous_input(&self) -> ControlInput {
        self.prev_input
    }

    /// Switch the prediction model to a diagnosed fault.
    pub fn reconfigure(&mut self, fault_known: FaultVector) -> Result<(), OcpError> {
        self.config = reconfigure(&self.config, fault_known)?;
        self.warm = None;
        Ok(())
    }

    /// Solve for the current sample. The returned input is the first control
    /// of the solution, also when the SQP stopped at its iteration limit,
    /// clipped onto the input box to remove QP round-off.
    pub fn step(
        &mut self,
        measured: &VehicleState,
        refs: &[ReferencePoint],
    ) -> Result<(ControlInput, OcpSolution), OcpError> {
        let ocp = build_ocp(*measured, refs, self.prev_input, &self.params, &self.config)?;
        let warm = if self.warm_start {
            self.warm.as_ref()
        } else {
            None
        };
        let sol = solve(&ocp, warm)?;
        let b = &self.config.bounds;
        let u0 = sol.first_control();
        let u = ControlInput::new(
            u0.a_x_c.clamp(b.a_x_c[0], b.a_x_c[1]),
            u0.delta.clamp(-b.delta_max, b.delta_max),
        );
        self.prev_input = u;
        self.warm = Some(sol.clone());
        Ok((u, sol))
    }
}
